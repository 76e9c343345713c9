#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "analysis/analysis.hpp"
#include "assembly/assembly.hpp"
#include "dynamics/dynamics.hpp"
#include "gas/gas.hpp"
#include "optics/optics.hpp"

namespace lev::harness {

inline constexpr const char* kConfigSchema = "levarray.config/1";
inline constexpr const char* kScenarioSchema = "levarray.scenario/1";
inline constexpr const char* kManifestSchema = "levarray.manifest/1";

struct ParticleSpec {
  std::string shape = "sphere";  // sphere, spheroid, dumbbell
  double radius = 85e-9;         // sphere radius, or short semi-axis of a spheroid
  double aspect = 1.5;           // spheroid r1 / r2
  double charge_e = 0.0;
  optics::EllipsoidGeometry geometry() const;
};

struct SimulationSpec {
  double duration = 0.1;        // s
  double sample_rate = 4e6;     // Hz
  double burn_in = 0.0;         // s
  double dt_safety = 0.9;
  dynamics::DragMode drag = dynamics::DragMode::aligned;
  int site_row = 0;
  int site_col = 0;
};

struct AnalysisSpec {
  double ratio_threshold = analysis::kRatioThreshold;
  double peak_threshold_db = analysis::kPeakThresholdDb;
  double bins_per_fwhm = 24.0;
  std::size_t min_segments = 15;
  double overlap = analysis::kDefaultOverlap;
  analysis::ShapeOptions shape_options() const;
};

struct AssemblySpec {
  double fill_probability = 0.5;
  assembly::ShapeDistribution shapes;
  double transport_success_prob = 0.99;
  double transport_speed = 1e-6;  // m/s
  double settle_time = 0.05;      // s
  double exclusion_factor = 0.5;
};

struct Config {
  std::uint64_t seed = 1;
  optics::TrapArraySpec array;
  gas::GasEnvironment gas;
  ParticleSpec particle;
  SimulationSpec simulation;
  AnalysisSpec analysis;
  AssemblySpec assembly;
  assembly::MergeModel merge;

  nlohmann::json to_json() const;
  // Strict: unknown keys and wrong types are reported with their JSON path.
  static Config from_json(const nlohmann::json& j);
  assembly::GridGeometry grid() const;
  void validate() const;
};

// Parses JSON text; syntax errors become parse errors naming `source`, line
// and column.
nlohmann::json parse_json(const std::string& text, const std::string& source);
nlohmann::json read_json_file(const std::string& path);

Config load_config(const std::string& path);
// RFC 7386 merge patch applied to the JSON form of `base`.
Config apply_overrides(const Config& base, const nlohmann::json& patch);

// One particle from the `particle`, `simulation` and `gas` blocks, at the
// configured site, on stream "particle/particle/p0".
dynamics::Trajectory simulate_particle(const Config& cfg);

// ---------------------------------------------------------------------------

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::string& path);

// Every artifact written by a scenario, with content hashes.
class Manifest {
 public:
  Manifest(std::string root, std::string scenario, std::uint64_t seed);
  // Records a file given relative to the root.
  void add(const std::string& relative_path);
  const std::vector<std::string>& files() const { return files_; }
  // Writes manifest.json under the root. Status is "ok" or "failed".
  void write(const std::string& status, const std::string& failed_stage = {}, const std::string& error = {}) const;

 private:
  std::string root_;
  std::string scenario_;
  std::uint64_t seed_;
  std::vector<std::string> files_;
};

// ---------------------------------------------------------------------------

// Runs fn(0..n-1) on up to `workers` threads (0 selects the hardware count)
// and returns results in index order. The first exception by index is
// rethrown after all workers stop.
void parallel_for(std::size_t n, unsigned workers, const std::function<void(std::size_t)>& fn);

template <typename R>
std::vector<R> parallel_map(std::size_t n, unsigned workers, const std::function<R(std::size_t)>& fn) {
  std::vector<std::optional<R>> slots(n);
  parallel_for(n, workers, [&](std::size_t i) { slots[i].emplace(fn(i)); });
  std::vector<R> out;
  out.reserve(n);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

// ---------------------------------------------------------------------------

// Pipeline order; a scenario lists each stage at most once, in this order.
inline const std::vector<std::string> kStageOrder = {"load",    "plan",     "execute",  "merge",
                                                     "simulate", "analyze", "rotation", "report"};

struct Stage {
  std::string op;
  nlohmann::json params;
};

struct Scenario {
  std::string name;
  std::uint64_t seed = 1;
  nlohmann::json overrides = nlohmann::json::object();
  std::vector<Stage> stages;
  std::string source;  // file path, for diagnostics
  // Throws parse on unknown or out-of-order stages.
  void validate() const;
};

Scenario parse_scenario(const std::string& text, const std::string& source);
Scenario load_scenario(const std::string& path);

struct ScenarioOptions {
  std::optional<std::uint64_t> seed;  // overrides the scenario seed
  std::optional<std::string> config_path;  // base configuration under the scenario overrides
  unsigned workers = 0;
};

struct ScenarioResult {
  int exit_status = 0;  // 0 ok, 1 stage failure
  std::string out_dir;
  std::vector<std::string> files;
  std::string failed_stage;
  std::string error;
  nlohmann::json summary;
};

// Executes the stages in order, writing artifacts and manifest.json under
// `out_dir`. Stage failures are reported in the result, not thrown; a
// manifest listing the files written so far is kept.
ScenarioResult run_scenario(const Scenario& scenario, const std::string& out_dir, const ScenarioOptions& options = {});
ScenarioResult run_scenario(const std::string& path, const std::string& out_dir, const ScenarioOptions& options = {});

}  // namespace lev::harness
