#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "analysis/analysis.hpp"
#include "common/error.hpp"

namespace lev::analysis {

namespace {

using constants::pi;
using Vec4 = Eigen::Vector4d;
using Mat4 = Eigen::Matrix4d;

struct BandIndex {
  std::size_t lo = 0, hi = 0;  // inclusive
};

BandIndex band_index(const PSDEstimate& psd, FrequencyBand band) {
  if (psd.power.size() < 3) fail(ErrorCode::insufficient_data, "spectrum has fewer than three bins");
  const double high = band.high_hz > 0.0 ? band.high_hz : psd.frequencies.back();
  if (!(band.low_hz >= 0.0) || !(high > band.low_hz)) fail(ErrorCode::invalid_argument, "search band is empty");
  BandIndex b;
  b.lo = 1;  // DC carries no resonance information
  while (b.lo < psd.frequencies.size() && psd.frequencies[b.lo] < band.low_hz) ++b.lo;
  b.hi = psd.frequencies.size() - 1;
  while (b.hi > b.lo && psd.frequencies[b.hi] > high) --b.hi;
  if (b.hi < b.lo + 7) fail(ErrorCode::insufficient_data, "search band holds fewer than eight bins");
  return b;
}

double median(std::vector<double> v) {
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

// Normalized model: u = omega / omega_s, value / S_s.
// theta = (ln a, w0, ln g, b).
struct Model {
  double value;
  Vec4 grad;
};

Model evaluate(const Vec4& th, double u) {
  const double a = std::exp(th[0]), w0 = th[1], g = std::exp(th[2]), b = th[3];
  const double d0 = w0 * w0 - u * u;
  const double den = d0 * d0 + g * g * u * u;
  const double l = a * g / den;
  Model m;
  m.value = l + b;
  m.grad = Vec4(l, -l * 4.0 * w0 * d0 / den, l * (1.0 - 2.0 * g * g * u * u / den), 1.0);
  return m;
}

}  // namespace

double lorentzian(double omega, double amplitude, double omega0, double gamma, double floor) {
  const double d0 = omega0 * omega0 - omega * omega;
  return amplitude * gamma / (d0 * d0 + gamma * gamma * omega * omega) + floor;
}

double LorentzianFit::omega0() const { return 2.0 * pi * center_frequency; }
double LorentzianFit::center_sigma() const { return std::sqrt(std::max(0.0, covariance(0, 0))) / (2.0 * pi); }
double LorentzianFit::damping_sigma() const { return std::sqrt(std::max(0.0, covariance(1, 1))); }

bool has_peak(const PSDEstimate& psd, FrequencyBand band, double threshold_db) {
  const BandIndex b = band_index(psd, band);
  const std::vector<double> v(psd.power.begin() + static_cast<std::ptrdiff_t>(b.lo),
                              psd.power.begin() + static_cast<std::ptrdiff_t>(b.hi) + 1);
  const double peak = *std::max_element(v.begin(), v.end());
  if (!(peak > 0.0)) return false;
  return peak >= median(v) * std::pow(10.0, threshold_db / 10.0);
}

namespace {

struct WindowFit {
  Vec4 th;
  Mat4 jtj;
  double reduced_chi_square = 0.0;
  std::size_t n = 0;
  int iterations = 0;
};

// Weighted Levenberg-Marquardt on bins [lo, hi] with weights 1 / model^2,
// re-evaluated between passes.
WindowFit fit_window(const PSDEstimate& psd, std::size_t lo, std::size_t hi, double omega_s, double s_s, Vec4 th,
                     const FitOptions& opt) {
  const std::size_t n = hi - lo + 1;
  std::vector<double> u(n), y(n), w(n);
  for (std::size_t i = 0; i < n; ++i) {
    u[i] = 2.0 * pi * psd.frequencies[lo + i] / omega_s;
    y[i] = psd.power[lo + i] / s_s;
  }
  const double span = u.back() - u.front();
  auto admissible = [&](const Vec4& t) {
    return t.allFinite() && std::abs(t[1]) >= u.front() && std::abs(t[1]) <= u.back() && std::exp(t[2]) < 4.0 * span;
  };
  auto cost_of = [&](const Vec4& t) {
    double c = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = y[i] - evaluate(t, u[i]).value;
      c += w[i] * r * r;
    }
    return c;
  };

  WindowFit out;
  for (int pass = 0; pass < opt.reweight_passes; ++pass) {
    // Welch bins scatter in proportion to their expectation.
    for (std::size_t i = 0; i < n; ++i) {
      const double m = evaluate(th, u[i]).value;
      w[i] = 1.0 / std::max(m * m, 1e-300);
    }
    double lambda = 1e-3;
    double cost = cost_of(th);
    for (int it = 0; it < opt.max_iterations; ++it) {
      ++out.iterations;
      Mat4 jtj = Mat4::Zero();
      Vec4 jtr = Vec4::Zero();
      for (std::size_t i = 0; i < n; ++i) {
        const Model m = evaluate(th, u[i]);
        jtj.noalias() += w[i] * m.grad * m.grad.transpose();
        jtr.noalias() += w[i] * (y[i] - m.value) * m.grad;
      }
      bool improved = false;
      double new_cost = cost;
      while (lambda < 1e12) {
        Mat4 a = jtj;
        a.diagonal() += lambda * jtj.diagonal().cwiseMax(1e-300);
        const Vec4 trial = th + a.ldlt().solve(jtr);
        new_cost = admissible(trial) ? cost_of(trial) : std::numeric_limits<double>::infinity();
        if (new_cost < cost) {
          th = trial;
          lambda = std::max(lambda / 10.0, 1e-12);
          improved = true;
          break;
        }
        lambda *= 10.0;
      }
      if (!improved) break;
      const double change = (cost - new_cost) / std::max(cost, 1e-300);
      cost = new_cost;
      if (change < 1e-14 || cost < 1e-28) break;
    }
  }

  out.th = th;
  out.n = n;
  out.jtj.setZero();
  double chi2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Model m = evaluate(th, u[i]);
    const double wi = 1.0 / std::max(m.value * m.value, 1e-300);
    out.jtj.noalias() += wi * m.grad * m.grad.transpose();
    chi2 += wi * (y[i] - m.value) * (y[i] - m.value);
  }
  out.reduced_chi_square = chi2 / static_cast<double>(n - 4);
  return out;
}

// Full width at half maximum in bins around kp, by linear interpolation.
double half_width_bins(const std::vector<double>& p, std::size_t kp, std::size_t lo, std::size_t hi, double base) {
  const double half = base + 0.5 * (p[kp] - base);
  double left = static_cast<double>(lo), right = static_cast<double>(hi);
  for (std::size_t k = kp; k > lo; --k)
    if (p[k - 1] < half) {
      left = static_cast<double>(k) - (p[k] - half) / (p[k] - p[k - 1]);
      break;
    }
  for (std::size_t k = kp; k < hi; ++k)
    if (p[k + 1] < half) {
      right = static_cast<double>(k) + (p[k] - half) / (p[k] - p[k + 1]);
      break;
    }
  return std::max(1.0, right - left);
}

}  // namespace

LorentzianFit fit_lorentzian(const PSDEstimate& psd, FrequencyBand band, const FitOptions& opt) {
  const BandIndex b = band_index(psd, band);
  if (!has_peak(psd, band, opt.peak_threshold_db))
    fail(ErrorCode::no_peak, "no spectral peak " + std::to_string(opt.peak_threshold_db) +
                                 " dB above the median in the search band");
  const auto& f = psd.frequencies;
  const auto& p = psd.power;

  std::size_t kp = b.lo;
  for (std::size_t k = b.lo; k <= b.hi; ++k)
    if (p[k] > p[kp]) kp = k;
  const double base = median(std::vector<double>(p.begin() + static_cast<std::ptrdiff_t>(b.lo),
                                                 p.begin() + static_cast<std::ptrdiff_t>(b.hi) + 1));
  // Width guess: the wider of the raw and 5-bin smoothed half-maximum widths,
  // since scatter on raw bins cuts the crossing search short.
  std::vector<double> smooth(p.size(), 0.0);
  for (std::size_t k = b.lo; k <= b.hi; ++k) {
    const std::size_t a = std::max(b.lo, k >= 2 ? k - 2 : 0), z = std::min(b.hi, k + 2);
    for (std::size_t j = a; j <= z; ++j) smooth[k] += p[j];
    smooth[k] /= static_cast<double>(z - a + 1);
  }
  std::size_t ks = b.lo;
  for (std::size_t k = b.lo; k <= b.hi; ++k)
    if (smooth[k] > smooth[ks]) ks = k;
  double fwhm_bins = std::max(half_width_bins(p, kp, b.lo, b.hi, base), half_width_bins(smooth, ks, b.lo, b.hi, base));

  double f_peak = f[kp];
  if (kp > b.lo && kp < b.hi) {
    const double y0 = p[kp - 1], y1 = p[kp], y2 = p[kp + 1];
    const double den = y0 - 2.0 * y1 + y2;
    if (den < 0.0) f_peak += 0.5 * (y0 - y2) / den * psd.resolution;
  }
  const double omega_s = 2.0 * pi * f_peak;
  const double s_s = p[kp];
  if (!(omega_s > 0.0)) fail(ErrorCode::no_peak, "spectral maximum sits at zero frequency");
  const double g0 = std::max(2.0 * pi * fwhm_bins * psd.resolution / omega_s, 1e-9);
  Vec4 th(std::log(std::max(smooth[ks] - base, 1e-300 * s_s) / s_s * g0), 1.0, std::log(g0), 0.0);

  // Refit until the window matches the fitted width and center.
  WindowFit wf;
  std::size_t lo = 0, hi = 0;
  int iterations = 0;
  std::size_t center = kp;
  for (int round = 0; round < 4; ++round) {
    const auto hw = static_cast<std::size_t>(
        std::ceil(std::max(opt.window_fwhm * fwhm_bins, static_cast<double>(opt.min_window_bins))));
    const std::size_t new_lo = center > b.lo + hw ? center - hw : b.lo;
    const std::size_t new_hi = std::min(b.hi, center + hw);
    if (round > 0 && new_lo == lo && new_hi == hi) break;
    lo = new_lo;
    hi = new_hi;
    if (hi - lo + 1 < 8) fail(ErrorCode::insufficient_data, "fit window holds fewer than eight bins");
    wf = fit_window(psd, lo, hi, omega_s, s_s, th, opt);
    iterations += wf.iterations;
    th = wf.th;
    const double fc = std::abs(th[1]) * omega_s / (2.0 * pi);
    center = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(fc / psd.resolution)), b.lo, b.hi);
    fwhm_bins = std::max(1.0, std::exp(th[2]) * omega_s / (2.0 * pi * psd.resolution));
  }

  if (!th.allFinite() || !std::isfinite(wf.reduced_chi_square)) fail(ErrorCode::not_converged, "Lorentzian fit diverged");
  // Invert in correlation form; the floor column can dwarf the others.
  const Vec4 d = wf.jtj.diagonal().cwiseMax(1e-300).cwiseSqrt().cwiseInverse();
  const Mat4 scaled = d.asDiagonal() * wf.jtj * d.asDiagonal();
  Eigen::FullPivLU<Mat4> lu(scaled);
  if (!lu.isInvertible()) fail(ErrorCode::singular, "Lorentzian fit has a singular normal matrix");
  const Mat4 cov_theta = d.asDiagonal() * lu.inverse() * d.asDiagonal() * wf.reduced_chi_square;

  LorentzianFit fit;
  const double omega0 = std::abs(th[1]) * omega_s;
  fit.center_frequency = omega0 / (2.0 * pi);
  fit.damping = std::exp(th[2]) * omega_s;
  fit.amplitude = std::exp(th[0]) * s_s * omega_s * omega_s * omega_s;
  fit.noise_floor = th[3] * s_s;
  fit.reduced_chi_square = wf.reduced_chi_square;
  fit.points = wf.n;
  fit.iterations = iterations;
  // d(omega0, gamma, A, floor) / d(theta)
  Mat4 t = Mat4::Zero();
  t(0, 1) = omega_s;
  t(1, 2) = fit.damping;
  t(2, 0) = fit.amplitude;
  t(3, 3) = s_s;
  fit.covariance = t * cov_theta * t.transpose();
  if (!(omega0 > 0.0) || fit.center_frequency < f[b.lo] || fit.center_frequency > f[b.hi])
    fail(ErrorCode::not_converged, "fitted resonance left the search band");
  return fit;
}

namespace {

// Largest 5-smooth integer not above n.
std::size_t smooth_floor(std::size_t n) {
  for (std::size_t m = n; m > 1; --m) {
    std::size_t r = m;
    for (std::size_t p : {2, 3, 5})
      while (r % p == 0) r /= p;
    if (r == 1) return m;
  }
  return 1;
}

}  // namespace

ChannelFit fit_channel(const dynamics::Trajectory& t, const std::string& channel, FrequencyBand band,
                       const SegmentPolicy& policy, const FitOptions& options) {
  const std::size_t total = t.channel(channel).size();
  const std::size_t cap = static_cast<std::size_t>(
      2.0 * static_cast<double>(total) / (static_cast<double>(policy.min_segments) + 1.0));
  if (cap < policy.min_length)
    fail(ErrorCode::insufficient_data, "trajectory too short for " + std::to_string(policy.min_segments) +
                                           " segments of " + std::to_string(policy.min_length) + " samples");
  const std::size_t coarse = smooth_floor(std::max(policy.min_length, cap / 4));
  const PSDEstimate first = estimate_psd(t, channel, coarse, policy.overlap);
  const LorentzianFit rough = fit_lorentzian(first, band, options);

  const double fwhm_hz = rough.damping / (2.0 * constants::pi);
  const double target = t.sample_rate * policy.bins_per_fwhm / fwhm_hz;
  const std::size_t len = smooth_floor(std::clamp<std::size_t>(
      static_cast<std::size_t>(std::min(target, static_cast<double>(cap))), policy.min_length, cap));
  ChannelFit out;
  out.psd = estimate_psd(t, channel, len, policy.overlap);
  out.fit = fit_lorentzian(out.psd, band, options);
  return out;
}

}  // namespace lev::analysis
