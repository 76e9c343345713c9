#include <algorithm>
#include <cmath>
#include <set>

#include "analysis/analysis.hpp"
#include "common/error.hpp"

namespace lev::analysis {

DampingRegression linear_regression(const std::vector<double>& x, const std::vector<double>& y,
                                    const std::vector<double>& sigma) {
  if (x.size() != y.size() || (!sigma.empty() && sigma.size() != x.size()))
    fail(ErrorCode::invalid_argument, "regression inputs differ in length");
  const std::set<double> distinct(x.begin(), x.end());
  if (distinct.size() < 3)
    fail(ErrorCode::insufficient_data, "damping regression needs at least three distinct pressures, got " +
                                           std::to_string(distinct.size()));
  const std::size_t n = x.size();
  // Unit weights unless every point carries a positive uncertainty.
  const bool weighted = !sigma.empty() && std::all_of(sigma.begin(), sigma.end(), [](double s) { return s > 0.0; });
  std::vector<double> w(n, 1.0);
  if (weighted)
    for (std::size_t i = 0; i < n; ++i) w[i] = 1.0 / (sigma[i] * sigma[i]);

  double s = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    s += w[i];
    sx += w[i] * x[i];
    sy += w[i] * y[i];
    sxx += w[i] * x[i] * x[i];
    sxy += w[i] * x[i] * y[i];
  }
  const double det = s * sxx - sx * sx;
  if (!(det > 0.0)) fail(ErrorCode::singular, "regression design is singular");
  DampingRegression r;
  r.points = n;
  r.slope = (s * sxy - sx * sy) / det;
  r.intercept = (sxx * sy - sx * sxy) / det;

  const double ybar = sy / s;
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = y[i] - (r.intercept + r.slope * x[i]);
    ss_res += w[i] * e * e;
    ss_tot += w[i] * (y[i] - ybar) * (y[i] - ybar);
  }
  r.r_squared = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
  // Parameter covariance scaled by the reduced chi-square.
  const double red = n > 2 ? ss_res / static_cast<double>(n - 2) : 0.0;
  r.slope_sigma = std::sqrt(s / det * red);
  r.intercept_sigma = std::sqrt(sxx / det * red);
  return r;
}

DampingRegression damping_vs_pressure(const std::vector<std::pair<double, LorentzianFit>>& fits) {
  std::vector<double> x, y, sigma;
  for (const auto& [p, f] : fits) {
    if (!(p >= 0.0)) fail(ErrorCode::domain, "pressure must be >= 0");
    x.push_back(p);
    y.push_back(f.damping);
    sigma.push_back(f.damping_sigma());
  }
  return linear_regression(x, y, sigma);
}

}  // namespace lev::analysis
