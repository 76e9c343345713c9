// levarray command-line interface. Talks to the library only through the C API.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "levarray/levarray.h"

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 64;

struct Failure {
  levarray_status status;
  std::string context;
};

void check(levarray_status s, const std::string& context) {
  if (s != LEVARRAY_OK) throw Failure{s, context};
}

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* app, Common& c, const std::string& out_help, const std::string& out_default) {
  app->add_option("--config", c.config, "configuration file (JSON, schema levarray.config/1)")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "master random seed [unsigned integer]; overrides the configuration");
  c.out = out_default;
  app->add_option("--out", c.out, out_help)->capture_default_str();
}

template <typename T, void (*Free)(T*)>
struct Handle {
  T* p = nullptr;
  Handle() = default;
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  ~Handle() { Free(p); }
};

using ConfigHandle = Handle<levarray_config, levarray_config_free>;
using TrajectoryHandle = Handle<levarray_trajectory, levarray_trajectory_free>;
using OccupancyHandle = Handle<levarray_occupancy, levarray_occupancy_free>;
using PlanHandle = Handle<levarray_plan, levarray_plan_free>;

struct OwnedString {
  char* p = nullptr;
  OwnedString() = default;
  OwnedString(const OwnedString&) = delete;
  OwnedString& operator=(const OwnedString&) = delete;
  ~OwnedString() { levarray_string_free(p); }
  std::string str() const { return p ? p : ""; }
};

void make_config(const Common& c, const nlohmann::json& patch, ConfigHandle& cfg) {
  if (c.config.empty()) check(levarray_config_default(&cfg.p), "default configuration");
  else check(levarray_config_load(c.config.c_str(), &cfg.p), "loading " + c.config);
  if (!patch.empty()) check(levarray_config_patch(cfg.p, patch.dump().c_str()), "applying command-line options");
  if (c.seed) check(levarray_config_set_seed(cfg.p, *c.seed), "seed");
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (f == nullptr || std::fwrite(text.data(), 1, text.size(), f) != text.size() || std::fclose(f) != 0)
    throw Failure{LEVARRAY_IO, "cannot write " + path};
}

std::string site_str(const std::vector<int>& s) { return "(" + std::to_string(s[0]) + ", " + std::to_string(s[1]) + ")"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simulator and planner for optically levitated nanoparticle arrays"};
  app.require_subcommand(1);
  app.set_version_flag("--version", levarray_version());

  // ---- simulate
  Common sim_c;
  std::optional<double> pressure, duration, sample_rate, temperature, radius, aspect, charge;
  std::optional<std::string> shape;
  std::vector<int> sim_site;
  std::string format = "binary";
  auto* sim = app.add_subcommand("simulate", "simulate one trapped particle and write its trajectory");
  add_common(sim, sim_c, "trajectory output file", "trajectory.ltrj");
  sim->add_option("--pressure-pa", pressure, "gas pressure [Pa]")->check(CLI::PositiveNumber);
  sim->add_option("--duration-s", duration, "recorded duration [s]")->check(CLI::PositiveNumber);
  sim->add_option("--sample-rate-hz", sample_rate, "sampling rate [Hz]")->check(CLI::PositiveNumber);
  sim->add_option("--temperature-k", temperature, "gas temperature [K]")->check(CLI::PositiveNumber);
  sim->add_option("--shape", shape, "particle shape")->check(CLI::IsMember({"sphere", "spheroid", "dumbbell"}));
  sim->add_option("--radius-m", radius, "sphere radius, or short semi-axis of a spheroid [m]")
      ->check(CLI::PositiveNumber);
  sim->add_option("--aspect", aspect, "spheroid long / short semi-axis ratio [dimensionless, >= 1]");
  sim->add_option("--charge-e", charge, "particle charge [elementary charges]");
  sim->add_option("--site", sim_site, "trap site [row col, 0-based indices]")->expected(2);
  sim->add_option("--format", format, "trajectory file format")
      ->check(CLI::IsMember({"binary", "text"}))
      ->capture_default_str();

  // ---- analyze
  Common an_c;
  std::vector<std::string> an_files;
  std::vector<std::string> an_channels;
  std::string an_label = "particle";
  auto* an = app.add_subcommand(
      "analyze", "fit trajectory spectra; with three or more pressures, classify the particle shape");
  add_common(an, an_c, "report output file ('-' for stdout)", "-");
  an->add_option("trajectories", an_files, "trajectory files (text or binary)")
      ->required()
      ->check(CLI::ExistingFile);
  an->add_option("--channel", an_channels, "fit only these channels (x, y, z, torsion) instead of classifying");
  an->add_option("--label", an_label, "particle label in the report")->capture_default_str();

  // ---- plan
  Common pl_c;
  std::string pl_current, pl_target;
  auto* pl = app.add_subcommand("plan", "plan a minimum-distance rearrangement to a target pattern");
  add_common(pl, pl_c, "plan output file (JSON)", "plan.json");
  pl->add_option("--current", pl_current, "current occupancy grid file")->required()->check(CLI::ExistingFile);
  pl->add_option("--target", pl_target, "target pattern (grid or 'row col' list)")
      ->required()
      ->check(CLI::ExistingFile);
  std::optional<double> exclusion;
  pl->add_option("--exclusion-factor", exclusion, "exclusion radius as a fraction of the smaller pitch [dimensionless]")
      ->check(CLI::PositiveNumber);

  // ---- execute
  Common ex_c;
  std::string ex_current, ex_plan;
  std::optional<double> success;
  auto* ex = app.add_subcommand("execute", "execute a plan with stochastic transport and log the events");
  add_common(ex, ex_c, "output directory (final.txt, events.jsonl)", ".");
  ex->add_option("--current", ex_current, "occupancy grid file the plan was made from")
      ->required()
      ->check(CLI::ExistingFile);
  ex->add_option("--plan", ex_plan, "plan file (JSON)")->required()->check(CLI::ExistingFile);
  ex->add_option("--transport-success-prob", success, "per-move transport success probability [dimensionless, 0..1]")
      ->check(CLI::Range(0.0, 1.0));

  // ---- merge
  Common mg_c;
  std::string mg_current;
  std::vector<int> site_a, site_b;
  std::optional<double> mg_pressure, p_dumbbell, p_lost, p_separated;
  auto* mg = app.add_subcommand("merge", "move one particle into another trap and sample the merge outcome");
  add_common(mg, mg_c, "occupancy grid file after the merge", "merged.txt");
  mg->add_option("--current", mg_current, "occupancy grid file")->required()->check(CLI::ExistingFile);
  mg->add_option("--site-a", site_a, "site of the moved particle [row col, 0-based indices]")->required()->expected(2);
  mg->add_option("--site-b", site_b, "receiving site [row col, 0-based indices]")->required()->expected(2);
  mg->add_option("--pressure-pa", mg_pressure, "gas pressure during the merge [Pa]")->check(CLI::NonNegativeNumber);
  mg->add_option("--p-dumbbell", p_dumbbell, "dumbbell outcome probability [dimensionless, 0..1]")
      ->check(CLI::Range(0.0, 1.0));
  mg->add_option("--p-lost", p_lost, "loss outcome probability [dimensionless, 0..1]")->check(CLI::Range(0.0, 1.0));
  mg->add_option("--p-separated", p_separated, "separated-pair outcome probability [dimensionless, 0..1]")
      ->check(CLI::Range(0.0, 1.0));

  // ---- scenario
  Common sc_c;
  std::string sc_file;
  unsigned workers = 0;
  auto* sc = app.add_subcommand("scenario", "run a scenario script and write its artifact tree");
  add_common(sc, sc_c, "artifact directory", "out");
  sc->add_option("scenario", sc_file, "scenario file (JSON, schema levarray.scenario/1)")
      ->required()
      ->check(CLI::ExistingFile);
  sc->add_option("--workers", workers, "worker threads [count; 0 = hardware concurrency]")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*sim) {
      nlohmann::json patch = nlohmann::json::object();
      if (pressure) patch["gas"]["pressure_pa"] = *pressure;
      if (temperature) patch["gas"]["temperature_k"] = *temperature;
      if (duration) patch["simulation"]["duration_s"] = *duration;
      if (sample_rate) patch["simulation"]["sample_rate_hz"] = *sample_rate;
      if (!sim_site.empty()) patch["simulation"]["site"] = sim_site;
      if (shape) patch["particle"]["shape"] = *shape;
      if (radius) patch["particle"]["radius_m"] = *radius;
      if (aspect) patch["particle"]["aspect"] = *aspect;
      if (charge) patch["particle"]["charge_e"] = *charge;
      ConfigHandle cfg;
      make_config(sim_c, patch, cfg);
      TrajectoryHandle t;
      check(levarray_simulate(cfg.p, &t.p), "simulate");
      check(levarray_trajectory_write(t.p, sim_c.out.c_str(), format == "binary"), "writing " + sim_c.out);
      std::size_t n = 0;
      double fs = 0, p = 0;
      std::uint64_t seed = 0;
      check(levarray_trajectory_info(t.p, &n, &fs, &p, &seed), "trajectory");
      std::cout << sim_c.out << ": " << n << " samples at " << fs << " Hz, pressure " << p << " Pa, seed " << seed
                << "\n";
    } else if (*an) {
      ConfigHandle cfg;
      make_config(an_c, nlohmann::json::object(), cfg);
      std::vector<TrajectoryHandle> ts(an_files.size());
      for (std::size_t i = 0; i < an_files.size(); ++i)
        check(levarray_trajectory_read(an_files[i].c_str(), &ts[i].p), "reading " + an_files[i]);
      if (!an_channels.empty()) {
        nlohmann::json out = nlohmann::json::array();
        for (std::size_t i = 0; i < ts.size(); ++i) {
          double p = 0;
          check(levarray_trajectory_info(ts[i].p, nullptr, nullptr, &p, nullptr), "trajectory");
          for (const auto& ch : an_channels) {
            double f0 = 0, g = 0, gs = 0;
            check(levarray_fit_channel(ts[i].p, ch.c_str(), &f0, &g, &gs), an_files[i] + " channel " + ch);
            out.push_back({{"file", an_files[i]},
                           {"pressure_pa", p},
                           {"channel", ch},
                           {"center_hz", f0},
                           {"damping_rad_s", g},
                           {"damping_sigma_rad_s", gs}});
          }
        }
        write_text(an_c.out, out.dump(2) + "\n");
      } else {
        std::vector<const levarray_trajectory*> raw;
        for (const auto& t : ts) raw.push_back(t.p);
        OwnedString report;
        int spherical = 0;
        check(levarray_classify(raw.data(), raw.size(), cfg.p, an_label.c_str(), &report.p, &spherical), "classify");
        write_text(an_c.out, report.str() + "\n");
        if (an_c.out != "-") std::cout << an_label << ": " << (spherical ? "spherical" : "anisotropic") << "\n";
      }
    } else if (*pl) {
      nlohmann::json patch = nlohmann::json::object();
      if (exclusion) patch["assembly"]["exclusion_factor"] = *exclusion;
      ConfigHandle cfg;
      make_config(pl_c, patch, cfg);
      OccupancyHandle occ;
      check(levarray_occupancy_read(pl_current.c_str(), &occ.p), "reading " + pl_current);
      PlanHandle plan;
      check(levarray_plan_create(occ.p, pl_target.c_str(), cfg.p, &plan.p), "plan");
      check(levarray_plan_write(plan.p, pl_c.out.c_str()), "writing " + pl_c.out);
      std::size_t moves = 0;
      double cost = 0;
      check(levarray_plan_info(plan.p, &moves, &cost), "plan");
      std::cout << pl_c.out << ": " << moves << " moves, total path " << cost << " m\n";
    } else if (*ex) {
      nlohmann::json patch = nlohmann::json::object();
      if (success) patch["assembly"]["transport_success_prob"] = *success;
      ConfigHandle cfg;
      make_config(ex_c, patch, cfg);
      OccupancyHandle occ;
      check(levarray_occupancy_read(ex_current.c_str(), &occ.p), "reading " + ex_current);
      PlanHandle plan;
      check(levarray_plan_read(ex_plan.c_str(), &plan.p), "reading " + ex_plan);
      std::filesystem::create_directories(ex_c.out);
      const std::string events = (std::filesystem::path(ex_c.out) / "events.jsonl").string();
      const std::string final_grid = (std::filesystem::path(ex_c.out) / "final.txt").string();
      std::size_t defects = 0;
      check(levarray_execute(occ.p, plan.p, cfg.p, events.c_str(), &defects), "execute");
      check(levarray_occupancy_write(occ.p, final_grid.c_str()), "writing " + final_grid);
      std::cout << final_grid << ": " << defects << " defects\n";
    } else if (*mg) {
      nlohmann::json patch = nlohmann::json::object();
      if (mg_pressure) patch["merge"]["pressure_pa"] = *mg_pressure;
      if (p_dumbbell) patch["merge"]["p_dumbbell"] = *p_dumbbell;
      if (p_lost) patch["merge"]["p_lost"] = *p_lost;
      if (p_separated) patch["merge"]["p_separated"] = *p_separated;
      ConfigHandle cfg;
      make_config(mg_c, patch, cfg);
      OccupancyHandle occ;
      check(levarray_occupancy_read(mg_current.c_str(), &occ.p), "reading " + mg_current);
      OwnedString outcome;
      check(levarray_merge(occ.p, site_a[0], site_a[1], site_b[0], site_b[1], cfg.p, &outcome.p),
            "merge " + site_str(site_a) + " into " + site_str(site_b));
      check(levarray_occupancy_write(occ.p, mg_c.out.c_str()), "writing " + mg_c.out);
      std::cout << outcome.str() << "\n";
    } else if (*sc) {
      levarray_scenario_options opts{};
      if (sc_c.seed) {
        opts.has_seed = 1;
        opts.seed = *sc_c.seed;
      }
      if (!sc_c.config.empty()) opts.config_path = sc_c.config.c_str();
      opts.workers = workers;
      int status = 0;
      OwnedString summary;
      check(levarray_run_scenario(sc_file.c_str(), sc_c.out.c_str(), &opts, &status, &summary.p), sc_file);
      if (status != 0) {
        std::cerr << "levarray: " << levarray_last_error() << " (partial artifacts in " << sc_c.out << ")\n";
        return kExitRuntime;
      }
      std::cout << sc_c.out << "/manifest.json written\n";
    }
  } catch (const Failure& f) {
    std::cerr << "levarray: " << f.context << ": " << levarray_status_name(f.status) << ": " << levarray_last_error()
              << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "levarray: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
