#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "common/error.hpp"
#include "harness/harness.hpp"

namespace lev::harness {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Scenario file

void Scenario::validate() const {
  if (name.empty()) fail(ErrorCode::parse, source + ": scenario needs a name");
  if (stages.empty()) fail(ErrorCode::parse, source + ": scenario lists no stages");
  long last = -1;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto it = std::find(kStageOrder.begin(), kStageOrder.end(), stages[i].op);
    if (it == kStageOrder.end())
      fail(ErrorCode::parse, source + ": stage " + std::to_string(i) + " has unknown op '" + stages[i].op + "'");
    const long rank = it - kStageOrder.begin();
    if (rank <= last)
      fail(ErrorCode::parse, source + ": stage " + std::to_string(i) + " ('" + stages[i].op +
                                 "') repeats or comes after a later pipeline stage");
    last = rank;
  }
}

Scenario parse_scenario(const std::string& text, const std::string& source) {
  const json j = parse_json(text, source);
  Scenario s;
  s.source = source;
  try {
    if (j.at("schema").get<std::string>() != kScenarioSchema)
      fail(ErrorCode::parse, source + ": unsupported schema " + j.at("schema").dump());
    for (auto it = j.begin(); it != j.end(); ++it)
      if (it.key() != "schema" && it.key() != "name" && it.key() != "seed" && it.key() != "config" &&
          it.key() != "stages" && it.key() != "description")
        fail(ErrorCode::parse, source + ": unknown key '" + it.key() + "'");
    s.name = j.at("name").get<std::string>();
    s.seed = j.value("seed", std::uint64_t{1});
    if (j.contains("config")) s.overrides = j.at("config");
    for (const auto& st : j.at("stages")) {
      Stage stage;
      if (st.is_string()) {
        stage.op = st.get<std::string>();
        stage.params = json::object();
      } else {
        stage.op = st.at("op").get<std::string>();
        stage.params = st;
        stage.params.erase("op");
      }
      s.stages.push_back(std::move(stage));
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::parse, source + ": " + e.what());
  }
  s.validate();
  return s;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str(), path);
}

// ---------------------------------------------------------------------------
// Runner

namespace {

struct Subject {
  std::string label;
  assembly::Site site;
  optics::EllipsoidGeometry geometry;
  assembly::ParticleId id = 0;
  std::string truth;  // "spherical" or "anisotropic"
};

struct Context {
  const Scenario& scenario;
  Config cfg;
  std::string root;
  Manifest manifest;
  unsigned workers;
  std::optional<assembly::Occupancy> occ;
  std::optional<assembly::MovePlan> plan;
  std::optional<assembly::Particle> dumbbell;
  assembly::Site dumbbell_site;
  std::vector<Subject> subjects;
  std::vector<double> pressures;
  std::vector<std::vector<dynamics::Trajectory>> trajectories;  // [subject][pressure]
  json summary = json::object();

  std::string path(const std::string& rel) {
    const fs::path p = fs::path(root) / rel;
    fs::create_directories(p.parent_path());
    manifest.add(rel);
    return p.string();
  }
  void write_text(const std::string& rel, const std::string& text) {
    std::ofstream out(path(rel), std::ios::binary);
    if (!out) fail(ErrorCode::io, "cannot write " + rel);
    out << text;
    if (!out) fail(ErrorCode::io, "write failed for " + rel);
  }
  RngStream stream(const std::string& name) const { return RngStream(cfg.seed, name); }
};

json site_json(const assembly::Site& s) { return {s.row, s.col}; }

assembly::Site site_from(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number_integer() || !j[1].is_number_integer())
    fail(ErrorCode::parse, what + ": expected [row, col], got " + j.dump());
  return {j[0].get<int>(), j[1].get<int>()};
}

// Rejects parameters a stage does not understand.
void check_params(const Stage& st, std::initializer_list<const char*> known) {
  for (auto it = st.params.begin(); it != st.params.end(); ++it)
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return it.key() == k; }))
      fail(ErrorCode::parse, "stage '" + st.op + "': unknown parameter '" + it.key() + "'");
}

std::string csv_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string grid_text(const assembly::Occupancy& occ) {
  std::ostringstream os;
  assembly::write_grid(occ, os);
  return os.str();
}

std::vector<assembly::Site> sites_from_pattern(const json& rows, const std::string& what) {
  std::vector<assembly::Site> out;
  if (!rows.is_array()) fail(ErrorCode::parse, what + ": expected an array of row strings");
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const std::string line = rows[r].get<std::string>();
    for (std::size_t c = 0; c < line.size(); ++c) {
      if (line[c] == 'o') out.push_back({static_cast<int>(r), static_cast<int>(c)});
      else if (line[c] != '.') fail(ErrorCode::parse, what + ": unexpected character in row " + std::to_string(r));
    }
  }
  return out;
}

void require_occupancy(const Context& ctx, const std::string& stage) {
  if (!ctx.occ) fail(ErrorCode::invalid_argument, "stage '" + stage + "' needs a preceding load stage");
}

// --- load ------------------------------------------------------------------

void stage_load(Context& ctx, const Stage& st) {
  check_params(st, {"fill_probability", "pattern", "particles"});
  const auto grid = ctx.cfg.grid();
  json s;
  if (st.params.contains("particles")) {
    ctx.occ.emplace(grid);
    for (const auto& pj : st.params.at("particles")) {
      assembly::Particle p;
      ParticleSpec spec;
      spec.shape = pj.value("shape", "sphere");
      spec.radius = pj.value("radius_m", ctx.cfg.assembly.shapes.sphere_radius);
      spec.aspect = pj.value("aspect", 1.5);
      p.geometry = spec.geometry();
      p.charge = pj.value("charge_e", ctx.cfg.assembly.shapes.charge_mean_e) * constants::elementary_charge;
      p.anisotropic = !p.geometry.is_sphere();
      ctx.occ->place(site_from(pj.at("site"), "load.particles.site"), p);
    }
    s["mode"] = "explicit";
  } else if (st.params.contains("pattern")) {
    ctx.occ.emplace(grid);
    for (const auto& site : sites_from_pattern(st.params.at("pattern"), "load.pattern")) {
      assembly::Particle p;
      p.geometry = optics::EllipsoidGeometry::sphere(ctx.cfg.assembly.shapes.sphere_radius);
      p.charge = ctx.cfg.assembly.shapes.charge_mean_e * constants::elementary_charge;
      ctx.occ->place(site, p);
    }
    s["mode"] = "pattern";
  } else {
    const double fill = st.params.value("fill_probability", ctx.cfg.assembly.fill_probability);
    RngStream rng = ctx.stream("assembly/load");
    ctx.occ = assembly::load_array(grid, fill, rng, ctx.cfg.assembly.shapes);
    s["mode"] = "random";
    s["fill_probability"] = fill;
  }
  s["loaded"] = ctx.occ->occupied_count();
  ctx.write_text("occupancy/initial.txt", grid_text(*ctx.occ));
  ctx.summary["load"] = s;
}

// --- plan ------------------------------------------------------------------

void stage_plan(Context& ctx, const Stage& st) {
  check_params(st, {"target", "target_pattern"});
  require_occupancy(ctx, st.op);
  std::vector<assembly::Site> target;
  if (st.params.contains("target_pattern")) {
    target = sites_from_pattern(st.params.at("target_pattern"), "plan.target_pattern");
  } else if (st.params.contains("target")) {
    for (const auto& t : st.params.at("target")) target.push_back(site_from(t, "plan.target"));
  } else {
    fail(ErrorCode::parse, "stage 'plan' needs 'target' or 'target_pattern'");
  }
  assembly::PlanOptions po;
  po.exclusion_factor = ctx.cfg.assembly.exclusion_factor;
  ctx.plan = assembly::plan_rearrangement(*ctx.occ, target, po);
  assembly::replay_plan(*ctx.plan, *ctx.occ);

  assembly::TargetPattern tp{ctx.occ->rows(), ctx.occ->cols(), ctx.plan->target};
  assembly::write_target_list(tp, ctx.path("occupancy/target.txt"));
  ctx.write_text("plan.json", assembly::plan_json(*ctx.plan) + "\n");
  ctx.summary["plan"] = {{"moves", ctx.plan->moves.size()},
                         {"transfers", ctx.plan->transfer_count()},
                         {"discards", ctx.plan->moves.size() - ctx.plan->transfer_count()},
                         {"cost_m", ctx.plan->cost}};
}

// --- execute ---------------------------------------------------------------

void stage_execute(Context& ctx, const Stage& st) {
  check_params(st, {"transport_success_prob"});
  require_occupancy(ctx, st.op);
  if (!ctx.plan) fail(ErrorCode::invalid_argument, "stage 'execute' needs a preceding plan stage");
  assembly::ExecuteOptions eo;
  eo.transport_success_prob = st.params.value("transport_success_prob", ctx.cfg.assembly.transport_success_prob);
  eo.transport_speed = ctx.cfg.assembly.transport_speed;
  eo.settle_time = ctx.cfg.assembly.settle_time;
  RngStream rng = ctx.stream("assembly/execute");
  const std::size_t before = ctx.occ->particle_count();
  const auto res = assembly::execute_plan(*ctx.plan, *ctx.occ, rng, eo);
  assembly::write_events(res.events, ctx.cfg.seed, ctx.path("events.jsonl"));
  ctx.write_text("occupancy/final.txt", grid_text(*ctx.occ));
  std::vector<assembly::Site> occupied = ctx.occ->occupied_sites();
  json defects = json::array();
  for (const auto& d : res.defects) defects.push_back(site_json(d));
  ctx.summary["execute"] = {{"transport_success_prob", eo.transport_success_prob},
                            {"defect_free", res.defect_free()},
                            {"defects", defects},
                            {"lost", res.lost.size()},
                            {"discarded", res.discarded.size()},
                            {"particles_before", before},
                            {"particles_after", ctx.occ->particle_count()},
                            {"matches_target", occupied == ctx.plan->target}};
}

// --- merge -----------------------------------------------------------------

void stage_merge(Context& ctx, const Stage& st) {
  check_params(st, {"sites", "until", "max_attempts", "pressure_pa", "pair_simulation"});
  require_occupancy(ctx, st.op);
  assembly::Site a, b;
  if (st.params.contains("sites")) {
    const auto& s = st.params.at("sites");
    if (!s.is_array() || s.size() != 2) fail(ErrorCode::parse, "merge.sites: expected two sites");
    a = site_from(s[0], "merge.sites");
    b = site_from(s[1], "merge.sites");
  } else {
    std::vector<assembly::Site> candidates;
    for (const auto& site : ctx.occ->occupied_sites()) {
      const auto& c = ctx.occ->cell(site);
      if (c.state == assembly::SiteState::single && !ctx.occ->particle(c.members.front()).anisotropic)
        candidates.push_back(site);
    }
    if (candidates.size() < 2) fail(ErrorCode::selection, "merge needs two spherical particles");
    a = candidates[0];
    b = candidates[1];
  }
  const std::string until = st.params.value("until", "");
  const int max_attempts = st.params.value("max_attempts", 1);
  if (max_attempts < 1) fail(ErrorCode::parse, "merge.max_attempts must be >= 1");
  assembly::MergeModel model = ctx.cfg.merge;
  model.pressure_pa = st.params.value("pressure_pa", model.pressure_pa);

  const assembly::Particle pa = ctx.occ->particle(ctx.occ->cell(a).members.front());
  const assembly::Particle pb = ctx.occ->particle(ctx.occ->cell(b).members.front());
  std::vector<assembly::Event> log;
  std::map<std::string, int> histogram;
  std::optional<assembly::MergeOutcome> last;
  bool pair_done = !st.params.value("pair_simulation", false);
  json pair_summary;
  int attempt = 0;
  for (; attempt < max_attempts; ++attempt) {
    if (attempt > 0) {
      // A fresh pair is loaded into the same two traps for each retry.
      ctx.occ->remove(b);
      ctx.occ->place(a, pa);
      ctx.occ->place(b, pb);
    }
    RngStream rng = ctx.stream("assembly/merge/" + std::to_string(attempt));
    last = assembly::merge_particles(a, b, *ctx.occ, model, rng);
    ++histogram[assembly::to_string(last->kind)];
    assembly::Event ev;
    ev.t_s = attempt;
    ev.op = "merge";
    ev.site = b;
    ev.source = a;
    ev.outcome = assembly::to_string(last->kind);
    ev.particles = last->consumed;
    log.push_back(ev);

    if (!pair_done && last->kind == assembly::MergeKind::separated_coulomb) {
      pair_done = true;
      optics::TrapArraySpec spec = ctx.cfg.array;
      const auto array = optics::TrapArray::make_grid(spec);
      const auto& site = array.at(b.row, b.col);
      auto sa = dynamics::ParticleState::at_rest(pa.geometry, site.focus);
      auto sb = dynamics::ParticleState::at_rest(pb.geometry, site.focus);
      sa.charge = pa.charge;
      sb.charge = pb.charge;
      gas::GasEnvironment env = ctx.cfg.gas;
      env.pressure = model.pressure_pa;
      RngStream prng = ctx.stream("assembly/pair");
      const auto res = assembly::simulate_pair(sa, sb, site, env, prng);
      std::ostringstream os;
      os << "# schema: \"levarray.pair/1\"\n# seed: " << ctx.cfg.seed << "\nt_s,separation_m\n";
      for (std::size_t i = 0; i < res.t.size(); ++i) os << csv_number(res.t[i]) << ',' << csv_number(res.separation[i]) << '\n';
      ctx.write_text("tables/pair_separation.csv", os.str());
      pair_summary = {{"mean_separation_m", res.mean_separation},
                      {"contact_distance_m", res.contact_distance},
                      {"stayed_trapped", res.stayed_trapped}};
    }
    if (until.empty() || until == assembly::to_string(last->kind)) break;
  }
  assembly::write_events(log, ctx.cfg.seed, ctx.path("merge/attempts.jsonl"));
  ctx.write_text("occupancy/after_merge.txt", grid_text(*ctx.occ));
  if (last->kind == assembly::MergeKind::dumbbell) {
    ctx.dumbbell = last->dumbbell;
    ctx.dumbbell_site = b;
  }
  json s{{"sites", {site_json(a), site_json(b)}},
         {"attempts", std::min(attempt + 1, max_attempts)},
         {"outcome", assembly::to_string(last->kind)},
         {"pressure_pa", model.pressure_pa},
         {"histogram", histogram}};
  if (!pair_summary.is_null()) s["pair"] = pair_summary;
  if (!until.empty() && until != assembly::to_string(last->kind))
    fail(ErrorCode::not_converged, "no " + until + " outcome within " + std::to_string(max_attempts) + " merge attempts");
  ctx.write_text("merge/merge.json", s.dump(2) + "\n");
  ctx.summary["merge"] = s;
}

// --- simulate --------------------------------------------------------------

std::string subject_label(const assembly::Particle& p, const assembly::Site& s) {
  return "p" + std::to_string(p.id) + "_r" + std::to_string(s.row) + "c" + std::to_string(s.col);
}

void stage_simulate(Context& ctx, const Stage& st) {
  check_params(st, {"pressures_pa", "decay_times", "duration_s", "sample_rate_hz", "write_trajectories",
                    "reference_sphere"});
  const auto array = optics::TrapArray::make_grid(ctx.cfg.array);
  ctx.subjects.clear();
  if (ctx.occ) {
    for (const auto& site : ctx.occ->occupied_sites()) {
      const auto& c = ctx.occ->cell(site);
      if (c.state == assembly::SiteState::pair) continue;
      const auto& p = ctx.occ->particle(c.members.front());
      ctx.subjects.push_back({subject_label(p, site), site, p.geometry, p.id,
                              p.geometry.is_sphere() ? "spherical" : "anisotropic"});
    }
  } else {
    const assembly::Site site{ctx.cfg.simulation.site_row, ctx.cfg.simulation.site_col};
    const auto g = ctx.cfg.particle.geometry();
    ctx.subjects.push_back({"particle", site, g, 0, g.is_sphere() ? "spherical" : "anisotropic"});
  }
  if (st.params.value("reference_sphere", false) && !ctx.subjects.empty()) {
    const auto g = optics::EllipsoidGeometry::sphere(ctx.cfg.assembly.shapes.sphere_radius);
    ctx.subjects.push_back({"reference_sphere", ctx.subjects.front().site, g, 0, "spherical"});
  }
  if (ctx.subjects.empty()) fail(ErrorCode::invalid_argument, "nothing to simulate");

  ctx.pressures = st.params.value("pressures_pa", std::vector<double>{ctx.cfg.gas.pressure});
  const double sample_rate = st.params.value("sample_rate_hz", ctx.cfg.simulation.sample_rate);
  const std::string write = st.params.value("write_trajectories", "binary");
  if (write != "binary" && write != "text" && write != "none")
    fail(ErrorCode::parse, "simulate.write_trajectories must be binary, text or none");
  const std::size_t np = ctx.pressures.size(), ns = ctx.subjects.size();

  dynamics::SimulationOptions so;
  so.dt_safety = ctx.cfg.simulation.dt_safety;
  so.burn_in = ctx.cfg.simulation.burn_in;
  so.integrator.drag = ctx.cfg.simulation.drag;

  auto results = parallel_map<dynamics::Trajectory>(ns * np, ctx.workers, [&](std::size_t job) {
    const Subject& sub = ctx.subjects[job / np];
    const std::size_t pi = job % np;
    gas::GasEnvironment env = ctx.cfg.gas;
    env.pressure = ctx.pressures[pi];
    double duration = ctx.cfg.simulation.duration;
    if (st.params.contains("decay_times")) {
      const double gmin = gas::damping_rates(sub.geometry, false, env).gamma.minCoeff();
      duration = st.params.at("decay_times").get<double>() / gmin;
    } else if (st.params.contains("duration_s")) {
      duration = st.params.at("duration_s").get<double>();
    }
    const std::string key = "particle/" + sub.label + "/p" + std::to_string(pi);
    RngStream init(ctx.cfg.seed, key + "/init");
    const std::size_t home = array.index(sub.site.row, sub.site.col);
    const auto state = dynamics::thermal_state(sub.geometry, array, home, env, init);
    dynamics::SimulationOptions o = so;
    o.label = sub.label;
    return dynamics::simulate(state, array, env, duration, sample_rate, derive_seed(ctx.cfg.seed, key), o);
  });

  ctx.trajectories.assign(ns, {});
  json traj = json::array();
  for (std::size_t i = 0; i < ns; ++i) {
    for (std::size_t p = 0; p < np; ++p) {
      dynamics::Trajectory& t = results[i * np + p];
      if (write != "none") {
        const std::string rel = "trajectories/" + ctx.subjects[i].label + "_p" + std::to_string(p) +
                                (write == "binary" ? ".ltrj" : ".csv");
        if (write == "binary") dynamics::write_trajectory_binary(t, ctx.path(rel));
        else dynamics::write_trajectory_text(t, ctx.path(rel));
      }
      traj.push_back({{"subject", ctx.subjects[i].label},
                      {"pressure_pa", ctx.pressures[p]},
                      {"samples", t.length()},
                      {"lost", t.meta.lost_at_s.has_value()}});
      ctx.trajectories[i].push_back(std::move(t));
    }
  }
  ctx.summary["simulate"] = {{"subjects", ns}, {"pressures_pa", ctx.pressures}, {"sample_rate_hz", sample_rate},
                             {"trajectories", traj}};
}

// --- analyze ---------------------------------------------------------------

void stage_analyze(Context& ctx, const Stage& st) {
  check_params(st, {"write_psd"});
  if (ctx.trajectories.empty()) fail(ErrorCode::invalid_argument, "stage 'analyze' needs a preceding simulate stage");
  const bool write_psd = st.params.value("write_psd", true);
  const auto options = ctx.cfg.analysis.shape_options();
  const std::size_t ns = ctx.subjects.size();

  auto reports = parallel_map<analysis::ShapeReport>(ns, ctx.workers, [&](std::size_t i) {
    return analysis::classify_shape(ctx.trajectories[i], options);
  });

  std::ostringstream table;
  table << "# schema: \"levarray.characterization/1\"\n# seed: " << ctx.cfg.seed << '\n'
        << "subject,truth,verdict,correct,torsion_detected,torsion_hz,gamma_y_over_x,gamma_z_over_x,"
           "fx_hz,fy_hz,fz_hz,slope_x,slope_y,slope_z\n";
  std::size_t correct = 0;
  json subjects = json::array();
  for (std::size_t i = 0; i < ns; ++i) {
    const auto& rep = reports[i];
    const Subject& sub = ctx.subjects[i];
    ctx.write_text("reports/" + sub.label + ".json", analysis::report_json(rep, sub.label, ctx.cfg.seed) + "\n");
    if (write_psd) {
      static const char* axes[3] = {"x", "y", "z"};
      for (std::size_t p = 0; p < rep.fits.size(); ++p)
        for (int a = 0; a < 3; ++a)
          analysis::write_psd(rep.fits[p][static_cast<std::size_t>(a)].psd,
                              ctx.path("psd/" + sub.label + "_p" + std::to_string(p) + "_" + axes[a] + ".csv"));
    }
    const bool ok = sub.truth == analysis::to_string(rep.verdict);
    correct += ok;
    table << sub.label << ',' << sub.truth << ',' << analysis::to_string(rep.verdict) << ',' << (ok ? 1 : 0) << ','
          << (rep.torsional_detected ? 1 : 0) << ',' << csv_number(rep.torsion_frequency) << ','
          << csv_number(rep.gamma_ratios[0]) << ',' << csv_number(rep.gamma_ratios[1]);
    for (int a = 0; a < 3; ++a) table << ',' << csv_number(rep.trap_frequencies[a]);
    for (int a = 0; a < 3; ++a) table << ',' << csv_number(rep.axis[a].slope);
    table << '\n';
    subjects.push_back({{"subject", sub.label},
                        {"truth", sub.truth},
                        {"verdict", analysis::to_string(rep.verdict)},
                        {"correct", ok},
                        {"torsional_detected", rep.torsional_detected},
                        {"gamma_ratios", {rep.gamma_ratios[0], rep.gamma_ratios[1]}},
                        {"trap_frequencies_hz", {rep.trap_frequencies[0], rep.trap_frequencies[1],
                                                 rep.trap_frequencies[2]}}});
    if (ctx.occ && sub.id != 0) ctx.occ->set_anisotropic(sub.id, rep.verdict == analysis::ShapeVerdict::anisotropic);
  }
  ctx.write_text("tables/characterization.csv", table.str());
  ctx.summary["analyze"] = {{"subjects", subjects},
                            {"correct", correct},
                            {"accuracy", static_cast<double>(correct) / static_cast<double>(ns)}};
}

// --- rotation --------------------------------------------------------------

void stage_rotation(Context& ctx, const Stage& st) {
  check_params(st, {"pressures_pa", "reference_pressure_pa", "spin_up"});
  optics::EllipsoidGeometry geometry;
  std::string who;
  if (ctx.dumbbell) {
    geometry = ctx.dumbbell->geometry;
    who = "dumbbell";
  } else {
    const auto it = std::find_if(ctx.subjects.begin(), ctx.subjects.end(),
                                 [](const Subject& s) { return !s.geometry.is_sphere(); });
    geometry = it != ctx.subjects.end() ? it->geometry : ctx.cfg.particle.geometry();
    who = it != ctx.subjects.end() ? it->label : "particle";
  }
  optics::TrapArraySpec spec = ctx.cfg.array;
  spec.polarization = optics::Polarization::circular;
  spec.rows = spec.cols = 1;
  const auto array = optics::TrapArray::make_grid(spec);
  const auto& site = array.sites.front();

  const std::vector<double> pressures =
      st.params.value("pressures_pa", std::vector<double>{0.006, 0.02, 0.06, 0.2, 0.6, 2.0, 6.0});
  const double ref_p = st.params.value("reference_pressure_pa", 0.06);
  const auto state = dynamics::ParticleState::at_rest(geometry, site.focus);
  auto omega_at = [&](double p) {
    gas::GasEnvironment env = ctx.cfg.gas;
    env.pressure = p;
    return dynamics::terminal_rotation(state, site, env);
  };

  std::ostringstream table;
  table << "# schema: \"levarray.rotation/1\"\n# seed: " << ctx.cfg.seed << "\npressure_pa,omega_rad_s,frequency_hz\n";
  std::vector<double> lx, ly;
  for (double p : pressures) {
    const double w = omega_at(p);
    table << csv_number(p) << ',' << csv_number(w) << ',' << csv_number(w / (2.0 * constants::pi)) << '\n';
    lx.push_back(std::log10(p));
    ly.push_back(std::log10(w));
  }
  ctx.write_text("tables/rotation.csv", table.str());
  const auto fit = analysis::linear_regression(lx, ly, {});
  json s{{"subject", who},
         {"loglog_slope", fit.slope},
         {"reference_pressure_pa", ref_p},
         {"reference_frequency_hz", omega_at(ref_p) / (2.0 * constants::pi)}};

  if (st.params.contains("spin_up")) {
    const json& su = st.params.at("spin_up");
    gas::GasEnvironment env = ctx.cfg.gas;
    env.pressure = su.value("pressure_pa", 20.0);
    const double target = omega_at(env.pressure);
    const double gamma_rot = gas::rotational_damping(geometry, env);
    const double duration = su.value("decay_times", 15.0) / gamma_rot;
    // Four samples per turn keep the unwrapped phase unambiguous.
    const double fs = su.value("sample_rate_hz", 4.0 * target / (2.0 * constants::pi));
    dynamics::SimulationOptions o;
    o.max_dt = 0.05 / target;
    o.label = "spin_up";
    RngStream init(ctx.cfg.seed, "particle/spin_up/init");
    const auto s0 = dynamics::thermal_state(geometry, array, 0, env, init);
    const auto t = dynamics::simulate(s0, array, env, duration, fs, derive_seed(ctx.cfg.seed, "particle/spin_up"), o);
    const auto& phase = t.channel("phase");
    // Mean spin rate once five spin-up time constants have passed.
    const std::size_t n = phase.size();
    const auto k0 = static_cast<std::size_t>(std::ceil(5.0 / gamma_rot * fs));
    if (n < k0 + 2) fail(ErrorCode::invalid_argument, "rotation.spin_up.decay_times must exceed 5");
    const double measured = (phase[n - 1] - phase[k0]) / (static_cast<double>(n - 1 - k0) / fs);
    std::ostringstream os;
    os << "# schema: \"levarray.spinup/1\"\n# seed: " << ctx.cfg.seed << "\n# pressure_pa: " << csv_number(env.pressure)
       << "\nt_s,phase_rad,closed_form_rad\n";
    const std::size_t stride = std::max<std::size_t>(1, n / 2000);
    for (std::size_t i = 0; i < n; i += stride) {
      const double ti = static_cast<double>(i) / fs;
      const double model = phase.front() + target * (ti - (1.0 - std::exp(-gamma_rot * ti)) / gamma_rot);
      os << csv_number(ti) << ',' << csv_number(phase[i]) << ',' << csv_number(model) << '\n';
    }
    ctx.write_text("tables/spinup.csv", os.str());
    s["spin_up"] = {{"pressure_pa", env.pressure},
                    {"closed_form_rad_s", target},
                    {"measured_rad_s", measured},
                    {"relative_error", std::abs(measured - target) / target}};
  }
  ctx.summary["rotation"] = s;
}

// --- report ----------------------------------------------------------------

void stage_report(Context& ctx, const Stage& st) {
  check_params(st, {});
  json j{{"schema", "levarray.summary/1"}, {"scenario", ctx.scenario.name}, {"seed", ctx.cfg.seed}};
  j["stages"] = ctx.summary;
  if (ctx.occ) ctx.write_text("occupancy/report.txt", grid_text(*ctx.occ));
  ctx.write_text("summary.json", j.dump(2) + "\n");
}

}  // namespace

ScenarioResult run_scenario(const Scenario& scenario, const std::string& out_dir, const ScenarioOptions& options) {
  scenario.validate();
  ScenarioResult res;
  res.out_dir = out_dir;
  Config base = options.config_path ? load_config(*options.config_path) : Config{};
  base.seed = scenario.seed;
  Config cfg = apply_overrides(base, scenario.overrides);
  if (options.seed) cfg.seed = *options.seed;

  fs::create_directories(out_dir);
  Context ctx{scenario, cfg, out_dir, Manifest(out_dir, scenario.name, cfg.seed), options.workers, {}, {}, {}, {}, {},
              {}, {}};
  ctx.write_text("config.json", cfg.to_json().dump(2) + "\n");

  static const std::map<std::string, void (*)(Context&, const Stage&)> handlers = {
      {"load", stage_load},         {"plan", stage_plan},         {"execute", stage_execute},
      {"merge", stage_merge},       {"simulate", stage_simulate}, {"analyze", stage_analyze},
      {"rotation", stage_rotation}, {"report", stage_report}};
  for (const Stage& st : scenario.stages) {
    try {
      handlers.at(st.op)(ctx, st);
    } catch (const std::exception& e) {
      res.exit_status = 1;
      res.failed_stage = st.op;
      res.error = e.what();
      break;
    }
  }
  ctx.manifest.write(res.exit_status == 0 ? "ok" : "failed", res.failed_stage, res.error);
  res.files = ctx.manifest.files();
  res.summary = ctx.summary;
  return res;
}

ScenarioResult run_scenario(const std::string& path, const std::string& out_dir, const ScenarioOptions& options) {
  return run_scenario(load_scenario(path), out_dir, options);
}

dynamics::Trajectory simulate_particle(const Config& cfg) {
  cfg.validate();
  const auto array = optics::TrapArray::make_grid(cfg.array);
  const auto& sim = cfg.simulation;
  if (sim.site_row < 0 || sim.site_row >= array.rows || sim.site_col < 0 || sim.site_col >= array.cols)
    fail(ErrorCode::domain, "simulation site lies outside the array");
  dynamics::SimulationOptions o;
  o.dt_safety = sim.dt_safety;
  o.burn_in = sim.burn_in;
  o.integrator.drag = sim.drag;
  o.label = "particle";
  const std::string key = "particle/particle/p0";
  RngStream init(cfg.seed, key + "/init");
  const auto state =
      dynamics::thermal_state(cfg.particle.geometry(), array, array.index(sim.site_row, sim.site_col), cfg.gas, init);
  return dynamics::simulate(state, array, cfg.gas, sim.duration, sim.sample_rate, derive_seed(cfg.seed, key), o);
}

}  // namespace lev::harness
