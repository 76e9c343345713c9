#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "analysis/analysis.hpp"
#include "common/error.hpp"

namespace lev::analysis {

const char* to_string(ShapeVerdict v) noexcept { return v == ShapeVerdict::spherical ? "spherical" : "anisotropic"; }

ShapeReport classify_shape(const std::vector<dynamics::Trajectory>& trajectories, const ShapeOptions& options) {
  std::set<double> distinct;
  for (const auto& t : trajectories) {
    distinct.insert(t.meta.pressure_pa);
    if (t.meta.polarization != optics::Polarization::linear_x)
      fail(ErrorCode::invalid_argument, "shape classification needs linearly polarized trajectories");
    t.channel("torsion");
  }
  if (distinct.size() < 3)
    fail(ErrorCode::insufficient_data, "shape classification needs trajectories at three or more pressures, got " +
                                           std::to_string(distinct.size()));

  static const char* axes[3] = {"x", "y", "z"};
  ShapeReport rep;
  std::vector<std::pair<double, LorentzianFit>> per_axis[3];
  double torsion_sum = 0.0;
  int torsion_hits = 0;
  for (const auto& t : trajectories) {
    rep.pressures.push_back(t.meta.pressure_pa);
    std::vector<ChannelFit> row;
    for (int a = 0; a < 3; ++a) {
      row.push_back(fit_channel(t, axes[a], {}, options.segments, options.fit));
      per_axis[a].emplace_back(t.meta.pressure_pa, row.back().fit);
    }
    rep.fits.push_back(std::move(row));
    try {
      const ChannelFit tor = fit_channel(t, "torsion", {}, options.segments, options.fit);
      torsion_sum += tor.fit.center_frequency;
      ++torsion_hits;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::no_peak) throw;
    }
  }

  for (int a = 0; a < 3; ++a) {
    rep.axis[a] = damping_vs_pressure(per_axis[a]);
    double sum = 0.0;
    for (const auto& pf : per_axis[a]) sum += pf.second.center_frequency;
    rep.trap_frequencies[a] = sum / static_cast<double>(per_axis[a].size());
  }
  rep.torsional_detected = torsion_hits > 0;
  rep.torsion_frequency = torsion_hits > 0 ? torsion_sum / torsion_hits : 0.0;
  if (!(rep.axis[0].slope > 0.0)) fail(ErrorCode::not_converged, "x damping does not grow with pressure");
  // Ratios are pressure independent: inverse-variance mean of per-pressure
  // ratios, which avoids the intercept scatter of the slope regressions.
  for (int a = 1; a < 3; ++a) {
    double wsum = 0.0, rsum = 0.0;
    for (std::size_t i = 0; i < per_axis[0].size(); ++i) {
      const LorentzianFit& fx = per_axis[0][i].second;
      const LorentzianFit& fa = per_axis[a][i].second;
      if (!(fx.damping > 0.0 && fa.damping > 0.0)) continue;
      const double r = fa.damping / fx.damping;
      const double rel = std::hypot(fa.damping_sigma() / fa.damping, fx.damping_sigma() / fx.damping);
      const double w = rel > 0.0 ? 1.0 / (r * r * rel * rel) : 1.0;
      wsum += w;
      rsum += w * r;
    }
    if (!(wsum > 0.0)) fail(ErrorCode::not_converged, "no pressure gives positive damping on both axes");
    rep.gamma_ratios[a - 1] = rsum / wsum;
  }
  const double lo = 1.0 - options.ratio_threshold, hi = 1.0 + options.ratio_threshold;
  rep.ratios_spherical = rep.gamma_ratios.minCoeff() >= lo && rep.gamma_ratios.maxCoeff() <= hi;
  rep.verdict = (!rep.torsional_detected && rep.ratios_spherical) ? ShapeVerdict::spherical : ShapeVerdict::anisotropic;
  rep.criteria_agree = rep.torsional_detected != rep.ratios_spherical;

  std::ostringstream os;
  os.precision(4);
  os << to_string(rep.verdict) << ": torsion " << (rep.torsional_detected ? "detected" : "absent")
     << ", gamma_y/gamma_x = " << rep.gamma_ratios[0] << ", gamma_z/gamma_x = " << rep.gamma_ratios[1];
  if (!rep.criteria_agree) os << " (torsion and damping-ratio criteria disagree)";
  rep.summary = os.str();
  return rep;
}

void write_psd(const PSDEstimate& psd, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot write " + path);
  char buf[64];
  out << "# schema: \"levarray.psd/1\"\n";
  out << "# channel: \"" << psd.channel << "\"\n";
  std::snprintf(buf, sizeof buf, "%.17g", psd.resolution);
  out << "# resolution_hz: " << buf << '\n';
  out << "# segment_length: " << psd.segment_length << '\n';
  out << "# segment_count: " << psd.segment_count << '\n';
  std::snprintf(buf, sizeof buf, "%.17g", psd.overlap);
  out << "# overlap: " << buf << '\n';
  out << "frequency_hz,psd_per_hz\n";
  for (std::size_t k = 0; k < psd.power.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%.17g,", psd.frequencies[k]);
    out << buf;
    std::snprintf(buf, sizeof buf, "%.17g\n", psd.power[k]);
    out << buf;
  }
  if (!out) fail(ErrorCode::io, "write failed for " + path);
}

namespace {

nlohmann::json fit_json(const LorentzianFit& f) {
  return {{"center_frequency_hz", f.center_frequency},
          {"center_sigma_hz", f.center_sigma()},
          {"damping_rad_s", f.damping},
          {"damping_sigma_rad_s", f.damping_sigma()},
          {"amplitude", f.amplitude},
          {"noise_floor", f.noise_floor},
          {"reduced_chi_square", f.reduced_chi_square},
          {"points", f.points}};
}

nlohmann::json regression_json(const DampingRegression& r) {
  return {{"slope_rad_s_per_pa", r.slope},         {"slope_sigma", r.slope_sigma},
          {"intercept_rad_s", r.intercept},         {"intercept_sigma", r.intercept_sigma},
          {"r_squared", r.r_squared},               {"points", r.points},
          {"intercept_consistent_with_zero", r.intercept_consistent_with_zero()}};
}

}  // namespace

std::string report_json(const ShapeReport& rep, const std::string& label, std::uint64_t seed) {
  nlohmann::json j;
  j["schema"] = "levarray.shape_report/1";
  j["label"] = label;
  j["seed"] = seed;
  j["verdict"] = to_string(rep.verdict);
  j["torsional_detected"] = rep.torsional_detected;
  j["torsion_frequency_hz"] = rep.torsion_frequency;
  j["gamma_ratios"] = {{"y_over_x", rep.gamma_ratios[0]}, {"z_over_x", rep.gamma_ratios[1]}};
  j["ratios_spherical"] = rep.ratios_spherical;
  j["criteria_agree"] = rep.criteria_agree;
  j["trap_frequencies_hz"] = {rep.trap_frequencies[0], rep.trap_frequencies[1], rep.trap_frequencies[2]};
  j["damping_regression"] = {{"x", regression_json(rep.axis[0])},
                             {"y", regression_json(rep.axis[1])},
                             {"z", regression_json(rep.axis[2])}};
  nlohmann::json fits = nlohmann::json::array();
  for (std::size_t i = 0; i < rep.fits.size(); ++i)
    fits.push_back({{"pressure_pa", rep.pressures[i]},
                    {"x", fit_json(rep.fits[i][0].fit)},
                    {"y", fit_json(rep.fits[i][1].fit)},
                    {"z", fit_json(rep.fits[i][2].fit)}});
  j["fits"] = fits;
  j["summary"] = rep.summary;
  return j.dump(2);
}

}  // namespace lev::analysis
