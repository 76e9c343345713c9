#include "levarray/levarray.h"

#include <cstdlib>
#include <cstring>
#include <new>
#include <string>

#include "json.hpp"

#include "analysis/analysis.hpp"
#include "assembly/assembly.hpp"
#include "common/error.hpp"
#include "common/rng.hpp"
#include "harness/harness.hpp"

using nlohmann::json;

struct levarray_config {
  lev::harness::Config cfg;
};
struct levarray_trajectory {
  lev::dynamics::Trajectory t;
};
struct levarray_occupancy {
  lev::assembly::Occupancy occ;
};
struct levarray_plan {
  lev::assembly::MovePlan plan;
};

namespace {

thread_local std::string last_error;

template <typename F>
levarray_status guarded(F&& f) noexcept {
  last_error.clear();
  try {
    f();
    return LEVARRAY_OK;
  } catch (const lev::Error& e) {
    last_error = e.what();
    return static_cast<levarray_status>(e.code());
  } catch (const json::exception& e) {
    last_error = e.what();
    return LEVARRAY_PARSE;
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
    return LEVARRAY_INTERNAL;
  } catch (const std::exception& e) {
    last_error = e.what();
    return LEVARRAY_INTERNAL;
  } catch (...) {
    last_error = "unknown failure";
    return LEVARRAY_INTERNAL;
  }
}

void need(const void* p, const char* what) {
  if (p == nullptr) lev::fail(lev::ErrorCode::invalid_argument, std::string(what) + " is NULL");
}

char* dup(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

const lev::harness::Config& config_or_default(const levarray_config* cfg) {
  static const lev::harness::Config defaults;
  return cfg != nullptr ? cfg->cfg : defaults;
}

lev::assembly::Site checked_site(const lev::assembly::Occupancy& occ, int row, int col) {
  const lev::assembly::Site s{row, col};
  if (!occ.grid().contains(s)) lev::fail(lev::ErrorCode::domain, "site " + lev::assembly::to_string(s) + " lies outside the grid");
  return s;
}

}  // namespace

extern "C" {

const char* levarray_version(void) { return "0.1.0"; }

const char* levarray_status_name(levarray_status status) {
  return lev::to_string(static_cast<lev::ErrorCode>(status));
}

const char* levarray_last_error(void) { return last_error.c_str(); }

void levarray_string_free(char* s) { std::free(s); }

// ---- configuration -------------------------------------------------------

levarray_status levarray_config_default(levarray_config** out) {
  return guarded([&] {
    need(out, "out");
    *out = new levarray_config{};
  });
}

levarray_status levarray_config_load(const char* path, levarray_config** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new levarray_config{lev::harness::load_config(path)};
  });
}

levarray_status levarray_config_patch(levarray_config* cfg, const char* json_patch) {
  return guarded([&] {
    need(cfg, "cfg");
    need(json_patch, "json_patch");
    cfg->cfg = lev::harness::apply_overrides(cfg->cfg, lev::harness::parse_json(json_patch, "<patch>"));
  });
}

levarray_status levarray_config_set_seed(levarray_config* cfg, uint64_t seed) {
  return guarded([&] {
    need(cfg, "cfg");
    cfg->cfg.seed = seed;
  });
}

levarray_status levarray_config_seed(const levarray_config* cfg, uint64_t* seed) {
  return guarded([&] {
    need(cfg, "cfg");
    need(seed, "seed");
    *seed = cfg->cfg.seed;
  });
}

levarray_status levarray_config_to_json(const levarray_config* cfg, char** out) {
  return guarded([&] {
    need(cfg, "cfg");
    need(out, "out");
    *out = dup(cfg->cfg.to_json().dump(2));
  });
}

void levarray_config_free(levarray_config* cfg) { delete cfg; }

// ---- trajectories --------------------------------------------------------

levarray_status levarray_simulate(const levarray_config* cfg, levarray_trajectory** out) {
  return guarded([&] {
    need(cfg, "cfg");
    need(out, "out");
    *out = new levarray_trajectory{lev::harness::simulate_particle(cfg->cfg)};
  });
}

levarray_status levarray_trajectory_read(const char* path, levarray_trajectory** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new levarray_trajectory{lev::dynamics::read_trajectory(path)};
  });
}

levarray_status levarray_trajectory_write(const levarray_trajectory* t, const char* path, int binary) {
  return guarded([&] {
    need(t, "trajectory");
    need(path, "path");
    if (binary) lev::dynamics::write_trajectory_binary(t->t, path);
    else lev::dynamics::write_trajectory_text(t->t, path);
  });
}

levarray_status levarray_trajectory_info(const levarray_trajectory* t, size_t* samples, double* sample_rate_hz,
                                         double* pressure_pa, uint64_t* seed) {
  return guarded([&] {
    need(t, "trajectory");
    if (samples) *samples = t->t.length();
    if (sample_rate_hz) *sample_rate_hz = t->t.sample_rate;
    if (pressure_pa) *pressure_pa = t->t.meta.pressure_pa;
    if (seed) *seed = t->t.meta.seed;
  });
}

levarray_status levarray_trajectory_channel(const levarray_trajectory* t, const char* name, const double** data,
                                            size_t* length) {
  return guarded([&] {
    need(t, "trajectory");
    need(name, "name");
    need(data, "data");
    need(length, "length");
    const auto& c = t->t.channel(name);
    *data = c.data();
    *length = c.size();
  });
}

void levarray_trajectory_free(levarray_trajectory* t) { delete t; }

// ---- analysis ------------------------------------------------------------

levarray_status levarray_fit_channel(const levarray_trajectory* t, const char* channel, double* center_hz,
                                     double* damping_rad_s, double* damping_sigma_rad_s) {
  return guarded([&] {
    need(t, "trajectory");
    need(channel, "channel");
    const auto r = lev::analysis::fit_channel(t->t, channel);
    if (center_hz) *center_hz = r.fit.center_frequency;
    if (damping_rad_s) *damping_rad_s = r.fit.damping;
    if (damping_sigma_rad_s) *damping_sigma_rad_s = r.fit.damping_sigma();
  });
}

levarray_status levarray_classify(const levarray_trajectory* const* trajectories, size_t count,
                                  const levarray_config* cfg, const char* label, char** report_json,
                                  int* spherical) {
  return guarded([&] {
    if (count > 0) need(trajectories, "trajectories");
    std::vector<lev::dynamics::Trajectory> ts;
    ts.reserve(count);
    for (size_t i = 0; i < count; ++i) {
      need(trajectories[i], "trajectory");
      ts.push_back(trajectories[i]->t);
    }
    const auto& c = config_or_default(cfg);
    const auto rep = lev::analysis::classify_shape(ts, c.analysis.shape_options());
    if (report_json) *report_json = dup(lev::analysis::report_json(rep, label ? label : "particle", c.seed));
    if (spherical) *spherical = rep.verdict == lev::analysis::ShapeVerdict::spherical ? 1 : 0;
  });
}

// ---- occupancy -----------------------------------------------------------

levarray_status levarray_occupancy_read(const char* path, levarray_occupancy** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new levarray_occupancy{lev::assembly::read_grid(std::string(path))};
  });
}

levarray_status levarray_occupancy_load(const levarray_config* cfg, levarray_occupancy** out) {
  return guarded([&] {
    need(cfg, "cfg");
    need(out, "out");
    lev::RngStream rng(cfg->cfg.seed, "assembly/load");
    *out = new levarray_occupancy{
        lev::assembly::load_array(cfg->cfg.grid(), cfg->cfg.assembly.fill_probability, rng, cfg->cfg.assembly.shapes)};
  });
}

levarray_status levarray_occupancy_write(const levarray_occupancy* occ, const char* path) {
  return guarded([&] {
    need(occ, "occupancy");
    need(path, "path");
    lev::assembly::write_grid(occ->occ, std::string(path));
  });
}

levarray_status levarray_occupancy_info(const levarray_occupancy* occ, int* rows, int* cols, size_t* occupied,
                                        uint64_t* version) {
  return guarded([&] {
    need(occ, "occupancy");
    if (rows) *rows = occ->occ.rows();
    if (cols) *cols = occ->occ.cols();
    if (occupied) *occupied = occ->occ.occupied_count();
    if (version) *version = occ->occ.version();
  });
}

levarray_status levarray_occupancy_state(const levarray_occupancy* occ, int row, int col, int* state) {
  return guarded([&] {
    need(occ, "occupancy");
    need(state, "state");
    *state = static_cast<int>(occ->occ.state(checked_site(occ->occ, row, col)));
  });
}

void levarray_occupancy_free(levarray_occupancy* occ) { delete occ; }

// ---- planning and execution ----------------------------------------------

levarray_status levarray_plan_create(const levarray_occupancy* current, const char* target_path,
                                     const levarray_config* cfg, levarray_plan** out) {
  return guarded([&] {
    need(current, "current");
    need(target_path, "target_path");
    need(out, "out");
    const auto target = lev::assembly::read_target(std::string(target_path));
    if (target.rows != current->occ.rows() || target.cols != current->occ.cols())
      lev::fail(lev::ErrorCode::invalid_argument,
                "target grid is " + std::to_string(target.rows) + "x" + std::to_string(target.cols) +
                    " but the occupancy is " + std::to_string(current->occ.rows()) + "x" +
                    std::to_string(current->occ.cols()));
    lev::assembly::PlanOptions po;
    po.exclusion_factor = config_or_default(cfg).assembly.exclusion_factor;
    *out = new levarray_plan{lev::assembly::plan_rearrangement(current->occ, target.sites, po)};
  });
}

levarray_status levarray_plan_read(const char* path, levarray_plan** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    const auto j = lev::harness::read_json_file(path);
    *out = new levarray_plan{lev::assembly::plan_from_json(j.dump())};
  });
}

levarray_status levarray_plan_write(const levarray_plan* plan, const char* path) {
  return guarded([&] {
    need(plan, "plan");
    need(path, "path");
    std::FILE* f = std::fopen(path, "wb");
    if (f == nullptr) lev::fail(lev::ErrorCode::io, std::string("cannot write ") + path);
    const std::string text = lev::assembly::plan_json(plan->plan) + "\n";
    const bool ok = std::fwrite(text.data(), 1, text.size(), f) == text.size();
    if (std::fclose(f) != 0 || !ok) lev::fail(lev::ErrorCode::io, std::string("cannot write ") + path);
  });
}

levarray_status levarray_plan_info(const levarray_plan* plan, size_t* moves, double* cost_m) {
  return guarded([&] {
    need(plan, "plan");
    if (moves) *moves = plan->plan.moves.size();
    if (cost_m) *cost_m = plan->plan.cost;
  });
}

void levarray_plan_free(levarray_plan* plan) { delete plan; }

levarray_status levarray_execute(levarray_occupancy* occ, const levarray_plan* plan, const levarray_config* cfg,
                                 const char* events_path, size_t* defects) {
  return guarded([&] {
    need(occ, "occupancy");
    need(plan, "plan");
    const auto& c = config_or_default(cfg);
    lev::assembly::ExecuteOptions eo;
    eo.transport_success_prob = c.assembly.transport_success_prob;
    eo.transport_speed = c.assembly.transport_speed;
    eo.settle_time = c.assembly.settle_time;
    lev::RngStream rng(c.seed, "assembly/execute");
    const auto res = lev::assembly::execute_plan(plan->plan, occ->occ, rng, eo);
    if (events_path) lev::assembly::write_events(res.events, c.seed, std::string(events_path));
    if (defects) *defects = res.defects.size();
  });
}

levarray_status levarray_merge(levarray_occupancy* occ, int row_a, int col_a, int row_b, int col_b,
                               const levarray_config* cfg, char** outcome_json) {
  return guarded([&] {
    need(occ, "occupancy");
    const auto& c = config_or_default(cfg);
    const auto a = checked_site(occ->occ, row_a, col_a), b = checked_site(occ->occ, row_b, col_b);
    lev::RngStream rng(c.seed, "assembly/merge/0");
    const auto out = lev::assembly::merge_particles(a, b, occ->occ, c.merge, rng);
    if (outcome_json) {
      json j = {{"outcome", lev::assembly::to_string(out.kind)},
                {"site", {out.site.row, out.site.col}},
                {"consumed", out.consumed},
                {"pressure_pa", out.pressure_pa},
                {"seed", c.seed}};
      if (out.dumbbell) {
        const auto& g = out.dumbbell->geometry;
        j["dumbbell"] = {{"id", out.dumbbell->id}, {"r1_m", g.r1}, {"r2_m", g.r2}, {"r3_m", g.r3},
                         {"charge_c", out.dumbbell->charge}};
      }
      *outcome_json = dup(j.dump());
    }
  });
}

// ---- scenarios -----------------------------------------------------------

levarray_status levarray_run_scenario(const char* path, const char* out_dir, const levarray_scenario_options* options,
                                      int* exit_status, char** summary_json) {
  return guarded([&] {
    need(path, "path");
    need(out_dir, "out_dir");
    lev::harness::ScenarioOptions so;
    if (options) {
      if (options->has_seed) so.seed = options->seed;
      if (options->config_path) so.config_path = options->config_path;
      so.workers = options->workers;
    }
    const auto scenario = lev::harness::load_scenario(path);
    const auto res = lev::harness::run_scenario(scenario, out_dir, so);
    if (exit_status) *exit_status = res.exit_status;
    if (summary_json) *summary_json = dup(res.summary.dump(2));
    if (res.exit_status != 0) last_error = "stage '" + res.failed_stage + "' failed: " + res.error;
  });
}

}  // extern "C"
