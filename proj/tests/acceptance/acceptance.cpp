// Acceptance suite: one PASS/FAIL line per criterion. Optional arguments
// select criteria by number.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "analysis/analysis.hpp"
#include "assembly/assembly.hpp"
#include "common/error.hpp"
#include "dynamics/dynamics.hpp"
#include "harness/harness.hpp"

using namespace lev;
using optics::EllipsoidGeometry;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

template <class... T>
std::string cat(const T&... parts) {
  std::ostringstream ss;
  (ss << ... << parts);
  return ss.str();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

optics::TrapArray single_site(optics::Polarization pol = optics::Polarization::linear_x) {
  optics::TrapArraySpec s;
  s.rows = s.cols = 1;
  s.polarization = pol;
  return optics::TrapArray::make_grid(s);
}

gas::GasEnvironment at(double p) {
  gas::GasEnvironment e;
  e.pressure = p;
  return e;
}

// Equal-volume prolate spheroid of a sphere of radius r.
EllipsoidGeometry prolate(double r, double aspect) {
  const double r2 = r / std::cbrt(aspect);
  return EllipsoidGeometry::spheroid(aspect * r2, r2);
}

// Trajectories at three pressures with a fixed number of decay times each.
std::vector<dynamics::Trajectory> pressure_series(const EllipsoidGeometry& g, std::uint64_t seed,
                                                  double decay_times = 1500.0) {
  const auto array = single_site();
  std::vector<dynamics::Trajectory> out;
  for (double p : {2000.0, 4000.0, 8000.0}) {
    const auto env = at(p);
    const dynamics::Integrator integ(array, env, g, g.mass(), 0);
    const double f_max = std::max(integ.trap_frequencies().maxCoeff(), integ.torsional_frequencies().maxCoeff()) /
                         (2.0 * constants::pi);
    const double fs = std::max(4e6, 4.0 * f_max);
    RngStream init(seed, "init/" + std::to_string(p));
    const auto s0 = dynamics::thermal_state(g, array, 0, env, init);
    const double gmin = integ.translational_damping().minCoeff();
    out.push_back(dynamics::simulate(s0, array, env, decay_times / gmin, fs, derive_seed(seed, std::to_string(p))));
  }
  return out;
}

// ---------------------------------------------------------------------------

Outcome force_potential() {
  optics::TrapArraySpec spec;
  spec.axial_force = 2e-15;
  const auto a = optics::TrapArray::make_grid(spec);
  const auto g = prolate(85e-9, 1.5);
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> ux(-0.5e-6, 2 * spec.column_pitch + 0.5e-6),
      uy(-0.5e-6, 2 * spec.row_pitch + 0.5e-6), uz(-1e-6, 1e-6);
  const double h = 1e-11;
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Vec3 p(ux(rng), uy(rng), uz(rng));
    Vec3 fd;
    for (int k = 0; k < 3; ++k) {
      Vec3 e = Vec3::Zero();
      e[k] = h;
      fd[k] = -(optics::trap_potential(p + e, a, g) - optics::trap_potential(p - e, a, g)) / (2.0 * h);
    }
    const Vec3 f = optics::trap_force(p, a, g) - Vec3(0, 0, spec.axial_force);
    worst = std::max(worst, (f - fd).norm() / fd.norm());
  }
  return {worst < 1e-4, "max relative error " + fmt("%.2e", worst) + " over 100 points"};
}

Outcome equipartition() {
  const auto array = single_site();
  const auto env = at(2000.0);
  const auto g = EllipsoidGeometry::sphere(85e-9);
  const dynamics::Integrator integ(array, env, g, g.mass(), 0);
  const double gamma = integ.translational_damping().minCoeff();
  const Vec3 offset = integ.equilibrium() - array.sites[0].focus;
  const double half_kt = 0.5 * constants::boltzmann * env.temperature;
  Vec3 sum = Vec3::Zero();
  const int seeds = 20;
  for (int s = 0; s < seeds; ++s) {
    RngStream init(500 + static_cast<std::uint64_t>(s));
    const auto t = dynamics::simulate(dynamics::thermal_state(g, array, 0, env, init), array, env, 1000.0 / gamma, 2e6,
                                      600 + static_cast<std::uint64_t>(s));
    for (int k = 0; k < 3; ++k) {
      const auto& x = t.data[static_cast<std::size_t>(k)];
      double acc = 0.0;
      for (double v : x) acc += (v - offset[k]) * (v - offset[k]);
      const double w = integ.trap_frequencies()[k];
      sum[k] += 0.5 * g.mass() * w * w * acc / static_cast<double>(x.size()) / half_kt;
    }
  }
  const Vec3 ratio = sum / seeds;
  const bool pass = (ratio.array() - 1.0).abs().maxCoeff() < 0.05;
  return {pass, cat("<E>/(kT/2) x,y,z = ", fmt("%.4f", ratio.x()), ", ", fmt("%.4f", ratio.y()), ", ",
                    fmt("%.4f", ratio.z()))};
}

Outcome damping_linearity() {
  const auto array = single_site();
  const auto g = EllipsoidGeometry::sphere(85e-9);
  std::vector<std::pair<double, analysis::LorentzianFit>> fits;
  for (int i = 0; i < 5; ++i) {
    const double p = 500.0 * std::pow(10.0, i / 4.0);
    const auto env = at(p);
    const dynamics::Integrator integ(array, env, g, g.mass(), 0);
    RngStream init(700 + static_cast<std::uint64_t>(i));
    const auto t = dynamics::simulate(dynamics::thermal_state(g, array, 0, env, init), array, env,
                                      3000.0 / integ.translational_damping().x(), 4e6, 710 + static_cast<std::uint64_t>(i));
    fits.emplace_back(p, analysis::fit_channel(t, "x").fit);
  }
  const auto r = analysis::damping_vs_pressure(fits);
  const bool pass = r.r_squared > 0.99 && r.intercept_consistent_with_zero();
  return {pass, cat("R^2 ", fmt("%.5f", r.r_squared), ", intercept ", fmt("%.3g", r.intercept), " +- ",
                    fmt("%.3g", r.intercept_sigma), " rad/s, slope ", fmt("%.4g", r.slope), " rad/s/Pa")};
}

Outcome shape_classification() {
  struct Sample {
    EllipsoidGeometry g;
    bool anisotropic;
  };
  std::vector<Sample> samples;
  for (int i = 0; i < 20; ++i) samples.push_back({EllipsoidGeometry::sphere(85e-9 * (0.9 + 0.01 * i)), false});
  for (int i = 0; i < 20; ++i) samples.push_back({prolate(85e-9, 1.3 + 0.035 * i), true});
  const auto reports = harness::parallel_map<analysis::ShapeReport>(
      samples.size(), 0, [&](std::size_t i) { return analysis::classify_shape(pressure_series(samples[i].g, 900 + i)); });
  int spheres = 0, ellipsoids = 0, torsion = 0;
  double sphere_dev = 0.0, ellipsoid_min = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& r = reports[i];
    const bool correct = (r.verdict == analysis::ShapeVerdict::anisotropic) == samples[i].anisotropic;
    (samples[i].anisotropic ? ellipsoids : spheres) += correct;
    if (samples[i].anisotropic) {
      ellipsoid_min = std::min(ellipsoid_min, r.gamma_ratios.maxCoeff());
      torsion += r.torsional_detected;
    } else {
      sphere_dev = std::max(sphere_dev, (r.gamma_ratios.array() - 1.0).abs().maxCoeff());
    }
  }
  return {spheres == 20 && ellipsoids == 20,
          cat(spheres, "/20 spheres, ", ellipsoids, "/20 ellipsoids correct; sphere ratios within ",
              fmt("%.3f", sphere_dev), " of 1, smallest ellipsoid ratio ", fmt("%.3f", ellipsoid_min), ", torsion in ",
              torsion, "/20 ellipsoids")};
}

// Exhaustive minimum over injective maps of targets onto loaded sites.
double brute_force_cost(const assembly::GridGeometry& g, const std::vector<assembly::Site>& units,
                        const std::vector<assembly::Site>& targets) {
  std::vector<int> idx(units.size());
  std::iota(idx.begin(), idx.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) c += g.distance(targets[i], units[static_cast<std::size_t>(idx[i])]);
    best = std::min(best, c);
  } while (std::next_permutation(idx.begin(), idx.end()));
  return best;
}

assembly::GridGeometry grid(int rows, int cols) {
  assembly::GridGeometry g;
  g.rows = rows;
  g.cols = cols;
  return g;
}

assembly::Occupancy with_sites(const assembly::GridGeometry& g, const std::vector<assembly::Site>& sites) {
  assembly::Occupancy occ(g);
  for (const auto& s : sites) {
    assembly::Particle p;
    p.geometry = EllipsoidGeometry::sphere(85e-9);
    p.charge = 10 * constants::elementary_charge;
    occ.place(s, p);
  }
  return occ;
}

std::vector<assembly::Site> pattern(const std::vector<std::string>& rows) {
  std::vector<assembly::Site> out;
  for (int r = 0; r < static_cast<int>(rows.size()); ++r)
    for (int c = 0; c < static_cast<int>(rows[static_cast<std::size_t>(r)].size()); ++c)
      if (rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] == 'o') out.push_back({r, c});
  return out;
}

Outcome rearrangement_optimality() {
  const auto g = grid(3, 3);
  std::mt19937_64 rng(1234);
  std::vector<assembly::Site> all;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) all.push_back({r, c});
  int matched = 0;
  const int instances = 300;
  double worst = 0.0;
  for (int i = 0; i < instances; ++i) {
    const std::size_t k = 1 + static_cast<std::size_t>(rng() % 5);
    const std::size_t nt = 1 + static_cast<std::size_t>(rng() % k);
    auto units = all, targets = all;
    std::shuffle(units.begin(), units.end(), rng);
    std::shuffle(targets.begin(), targets.end(), rng);
    units.resize(k);
    targets.resize(nt);
    const auto plan = assembly::plan_rearrangement(with_sites(g, units), targets);
    const double best = brute_force_cost(g, units, targets);
    const double err = std::abs(plan.cost - best) / std::max(best, 1e-300);
    worst = std::max(worst, best == 0.0 ? plan.cost : err);
    if (best == 0.0 ? plan.cost == 0.0 : err < 1e-12) ++matched;
  }
  return {matched == instances, cat(matched, "/", instances, " instances optimal, worst relative gap ", fmt("%.1e", worst))};
}

// Replays the plan against an independent occupied-set model; returns false
// on any invalid or unsafe move.
bool replay_safe(const assembly::MovePlan& plan, std::set<assembly::Site> occupied, std::set<assembly::Site>& final_set) {
  const auto& g = plan.grid;
  for (const auto& mv : plan.moves) {
    if (!occupied.count(mv.source)) return false;
    if (mv.kind == assembly::MoveKind::discard) {
      occupied.erase(mv.source);
      continue;
    }
    if (occupied.count(mv.destination) || mv.path.size() < 2) return false;
    if ((mv.path.front() - g.position(mv.source)).norm() > 1e-15) return false;
    if ((mv.path.back() - g.position(mv.destination)).norm() > 1e-15) return false;
    for (const auto& s : occupied) {
      if (s == mv.source) continue;
      const Eigen::Vector2d p = g.position(s);
      for (std::size_t i = 0; i + 1 < mv.path.size(); ++i) {
        const Eigen::Vector2d a = mv.path[i], b = mv.path[i + 1];
        for (int k = 0; k <= 2000; ++k)
          if ((a + (b - a) * (k / 2000.0) - p).norm() < plan.exclusion_radius * (1.0 - 1e-6)) return false;
      }
    }
    occupied.erase(mv.source);
    occupied.insert(mv.destination);
  }
  final_set = occupied;
  return true;
}

Outcome rearrangement_reproduction() {
  const auto g = grid(4, 4);
  const auto start = pattern({".o.o", "o.o.", ".oo.", "o..o"});
  const std::vector<std::pair<std::string, std::vector<assembly::Site>>> targets = {
      {"ring", pattern({"ooo.", "o.o.", "ooo.", "...."})},
      {"cross", pattern({"o..o", ".oo.", ".oo.", "o..o"})},
      {"block", pattern({"oooo", "oooo", "....", "...."})},
  };
  const auto base = with_sites(g, start);
  bool pass = true;
  std::ostringstream detail;
  for (const auto& [name, target] : targets) {
    const auto plan = assembly::plan_rearrangement(base, target);
    std::set<assembly::Site> final_set;
    const bool safe = replay_safe(plan, {start.begin(), start.end()}, final_set) &&
                      final_set == std::set<assembly::Site>(target.begin(), target.end());

    assembly::Occupancy exact = base;
    RngStream certain_rng(derive_seed(77, name));
    assembly::ExecuteOptions certain;
    certain.transport_success_prob = 1.0;
    assembly::execute_plan(plan, exact, certain_rng, certain);
    const auto got = exact.occupied_sites();
    const bool exact_ok = std::set<assembly::Site>(got.begin(), got.end()) ==
                          std::set<assembly::Site>(target.begin(), target.end());

    assembly::ExecuteOptions lossy;
    lossy.transport_success_prob = 0.99;
    RngStream rng(derive_seed(78, name));
    const int trials = 10000;
    int ok = 0;
    for (int t = 0; t < trials; ++t) {
      assembly::Occupancy occ = base;
      if (assembly::execute_plan(plan, occ, rng, lossy).defect_free()) ++ok;
    }
    const double expected = std::pow(0.99, static_cast<double>(plan.transfer_count()));
    const double rate = static_cast<double>(ok) / trials;
    const double sigma = std::sqrt(expected * (1.0 - expected) / trials);
    const bool rate_ok = std::abs(rate - expected) <= 3.0 * sigma;
    pass = pass && safe && exact_ok && rate_ok;
    detail << name << ": " << plan.transfer_count() << " transfers, safe " << (safe ? "yes" : "no") << ", exact "
           << (exact_ok ? "yes" : "no") << ", rate " << fmt("%.4f", rate) << " vs " << fmt("%.4f", expected) << "; ";
  }
  return {pass, detail.str()};
}

Outcome merge_statistics() {
  const auto g = grid(1, 2);
  const auto base = with_sites(g, {{0, 0}, {0, 1}});
  const assembly::MergeModel model;
  RngStream rng(4242);
  const int trials = 10000;
  int dumbbells = 0;
  for (int t = 0; t < trials; ++t) {
    assembly::Occupancy occ = base;
    if (assembly::merge_particles({0, 0}, {0, 1}, occ, model, rng).kind == assembly::MergeKind::dumbbell) ++dumbbells;
  }
  const double f = static_cast<double>(dumbbells) / trials, sigma = std::sqrt(0.25 * 0.75 / trials);
  return {std::abs(f - 0.25) <= 3.0 * sigma, cat("dumbbell frequency ", fmt("%.4f", f), " (3 sigma = ", fmt("%.4f", 3 * sigma), ")")};
}

Outcome dumbbell_signatures() {
  const auto g = grid(1, 2);
  auto occ = with_sites(g, {{0, 0}, {0, 1}});
  assembly::MergeModel certain;
  certain.p_dumbbell = 1.0;
  certain.p_lost = certain.p_separated = 0.0;
  RngStream rng(3);
  const auto out = assembly::merge_particles({0, 0}, {0, 1}, occ, certain, rng);
  if (!out.dumbbell) return {false, "merge produced no dumbbell"};
  const auto before = analysis::classify_shape(pressure_series(EllipsoidGeometry::sphere(85e-9), 41));
  const auto after = analysis::classify_shape(pressure_series(out.dumbbell->geometry, 42));
  const Vec3 shift = (after.trap_frequencies.array() / before.trap_frequencies.array() - 1.0).matrix();
  const bool freq_ok = shift.cwiseAbs().maxCoeff() < 0.05;
  const bool pass = freq_ok && before.verdict == analysis::ShapeVerdict::spherical &&
                    after.verdict == analysis::ShapeVerdict::anisotropic && !after.ratios_spherical &&
                    after.torsional_detected;
  return {pass, cat("trap frequency shift x,y,z ", fmt("%+.3f", shift.x()), ", ", fmt("%+.3f", shift.y()), ", ",
                    fmt("%+.3f", shift.z()), "; gamma ratios ", fmt("%.2f", after.gamma_ratios.x()), ", ",
                    fmt("%.2f", after.gamma_ratios.y()), "; torsion ", fmt("%.0f", after.torsion_frequency), " Hz")};
}

Outcome rotation_law() {
  const auto array = single_site(optics::Polarization::circular);
  const auto& site = array.sites[0];
  const auto dumbbell = EllipsoidGeometry::dumbbell(85e-9);
  const auto rest = dynamics::ParticleState::at_rest(dumbbell, site.focus);

  std::vector<double> lp, lw, ones;
  for (int i = 0; i <= 12; ++i) {
    const double p = 0.06 * std::pow(10.0, i / 4.0);
    lp.push_back(std::log10(p));
    lw.push_back(std::log10(dynamics::terminal_rotation(rest, site, at(p))));
    ones.push_back(1.0);
  }
  const double slope = analysis::linear_regression(lp, lw, ones).slope;
  const double ghz = dynamics::terminal_rotation(rest, site, at(0.06)) / (2.0 * constants::pi) / 1e9;

  const auto env = at(20.0);
  const double target = dynamics::terminal_rotation(rest, site, env);
  const double gamma_rot = gas::rotational_damping(dumbbell, env);
  dynamics::SimulationOptions o;
  o.max_dt = 0.05 / target;
  const double fs = std::max(4.0 * target / (2.0 * constants::pi), 4e6);
  RngStream init(20);
  const auto t = dynamics::simulate(dynamics::thermal_state(dumbbell, array, 0, env, init), array, env,
                                    30.0 / gamma_rot, fs, 21, o);
  const auto& phase = t.channel("phase");
  const auto k0 = static_cast<std::size_t>(std::ceil(5.0 / gamma_rot * fs));
  const std::size_t n = phase.size();
  const double measured = (phase[n - 1] - phase[k0]) / (static_cast<double>(n - 1 - k0) / fs);
  const double spin_err = measured / target - 1.0;

  const bool pass = std::abs(slope + 1.0) <= 0.02 && std::abs(ghz - 1.75) <= 0.175 && std::abs(spin_err) < 0.01 &&
                    !t.meta.lost_at_s.has_value();
  return {pass, cat("log-log slope ", fmt("%.5f", slope), ", ", fmt("%.3f", ghz), " GHz at 0.06 Pa, spin-up at 20 Pa ",
                    fmt("%+.4f", spin_err), " of terminal")};
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "levarray_acceptance";
  int identical = 0, total = 0;
  std::string first_diff;
  for (const char* name : {"fig2_rearrangement", "fig3_characterization", "fig4_dumbbell"}) {
    std::vector<fs::path> dirs;
    for (const char* run : {"a", "b"}) {
      const fs::path dir = root / name / run;
      fs::remove_all(dir);
      fs::create_directories(dir);
      const auto r = harness::run_scenario(std::string(LEVARRAY_SCENARIO_DIR) + "/" + name + ".json", dir.string());
      if (r.exit_status != 0) return {false, cat(name, " failed: ", r.error)};
      dirs.push_back(dir);
    }
    for (const auto& entry : fs::recursive_directory_iterator(dirs[0])) {
      if (!entry.is_regular_file() || entry.path().filename() == "manifest.json") continue;
      const fs::path rel = fs::relative(entry.path(), dirs[0]);
      ++total;
      if (fs::exists(dirs[1] / rel) &&
          harness::sha256_file(entry.path().string()) == harness::sha256_file((dirs[1] / rel).string()))
        ++identical;
      else if (first_diff.empty())
        first_diff = cat(name, "/", rel.string());
    }
    const auto m0 = nlohmann::json::parse(slurp((dirs[0] / "manifest.json").string()));
    const auto m1 = nlohmann::json::parse(slurp((dirs[1] / "manifest.json").string()));
    ++total;
    if (m0["files"] == m1["files"])
      ++identical;
    else if (first_diff.empty())
      first_diff = cat(name, "/manifest.json files");
  }
  return {identical == total && total > 3,
          cat(identical, "/", total, " artifacts identical across reruns of 3 scenarios",
              first_diff.empty() ? "" : "; first difference " + first_diff)};
}

struct Criterion {
  int id;
  const char* name;
  double time_limit_s;  // 0 for none
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {1, "force-potential consistency", 5.0, force_potential},
      {2, "equipartition", 60.0, equipartition},
      {3, "damping linearity", 120.0, damping_linearity},
      {4, "shape classification", 120.0, shape_classification},
      {5, "rearrangement optimality", 30.0, rearrangement_optimality},
      {6, "rearrangement reproduction", 0.0, rearrangement_reproduction},
      {7, "merge statistics", 0.0, merge_statistics},
      {8, "dumbbell signatures", 0.0, dumbbell_signatures},
      {9, "rotation law", 0.0, rotation_law},
      {10, "determinism", 0.0, determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, cat("exception: ", e.what())};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.time_limit_s > 0.0 && secs >= c.time_limit_s) {
      o.pass = false;
      o.detail += cat("; over the ", c.time_limit_s, " s limit");
    }
    if (!o.pass) ++failed;
    std::printf("%s C%-2d %-28s %7.1f s  %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, secs, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
