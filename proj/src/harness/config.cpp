#include <fstream>
#include <set>
#include <sstream>

#include "common/error.hpp"
#include "harness/harness.hpp"

namespace lev::harness {

using nlohmann::json;

namespace {

// Walks one JSON object, reading known keys and rejecting the rest.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(ErrorCode::parse, where() + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      if constexpr (std::is_same_v<T, double>) {
        if (!it->is_number()) throw std::invalid_argument("number");
      } else if constexpr (std::is_integral_v<T>) {
        if (!it->is_number_integer()) throw std::invalid_argument("integer");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!it->is_string()) throw std::invalid_argument("string");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw std::invalid_argument("boolean");
      }
      out = it->get<T>();
    } catch (const std::exception& e) {
      fail(ErrorCode::parse, where(key) + ": expected " + e.what() + ", got " + it->dump());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string where(const std::string& key = {}) const { return key.empty() ? (path_.empty() ? "/" : path_) : path_ + "/" + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) fail(ErrorCode::parse, where(it.key()) + ": unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::pair<int, int> line_column(const std::string& text, std::size_t byte) {
  int line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

}  // namespace

json parse_json(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    // The reported byte is one past the offending character.
    const auto [line, col] = line_column(text, e.byte > 0 ? e.byte - 1 : 0);
    std::string msg = e.what();
    const auto colon = msg.find("]: ");
    if (colon != std::string::npos) msg = msg.substr(colon + 3);
    fail(ErrorCode::parse, source + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + msg);
  }
}

json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_json(ss.str(), path);
}

optics::EllipsoidGeometry ParticleSpec::geometry() const {
  if (shape == "sphere") return optics::EllipsoidGeometry::sphere(radius);
  if (shape == "spheroid") return optics::EllipsoidGeometry::spheroid(radius * aspect, radius);
  if (shape == "dumbbell") return optics::EllipsoidGeometry::dumbbell(radius);
  fail(ErrorCode::invalid_argument, "unknown particle shape '" + shape + "' (sphere, spheroid, dumbbell)");
}

analysis::ShapeOptions AnalysisSpec::shape_options() const {
  analysis::ShapeOptions o;
  o.ratio_threshold = ratio_threshold;
  o.fit.peak_threshold_db = peak_threshold_db;
  o.segments.bins_per_fwhm = bins_per_fwhm;
  o.segments.min_segments = min_segments;
  o.segments.overlap = overlap;
  return o;
}

json Config::to_json() const {
  return {
      {"schema", kConfigSchema},
      {"seed", seed},
      {"array",
       {{"rows", array.rows},
        {"cols", array.cols},
        {"column_pitch_m", array.column_pitch},
        {"row_pitch_m", array.row_pitch},
        {"wavelength_m", array.wavelength},
        {"numerical_aperture", array.numerical_aperture},
        {"power_w", array.power},
        {"polarization", optics::to_string(array.polarization)},
        {"waist_anisotropy", array.waist_anisotropy},
        {"axial_force_n", array.axial_force},
        {"spin_drive_coefficient_s", array.spin_drive_coefficient},
        {"gravity_m_s2", array.gravity}}},
      {"gas",
       {{"pressure_pa", gas.pressure},
        {"temperature_k", gas.temperature},
        {"molecular_mass_kg", gas.molecular_mass},
        {"accommodation", gas.accommodation_coefficient},
        {"molecular_diameter_m", gas.molecular_diameter}}},
      {"particle",
       {{"shape", particle.shape},
        {"radius_m", particle.radius},
        {"aspect", particle.aspect},
        {"charge_e", particle.charge_e}}},
      {"simulation",
       {{"duration_s", simulation.duration},
        {"sample_rate_hz", simulation.sample_rate},
        {"burn_in_s", simulation.burn_in},
        {"dt_safety", simulation.dt_safety},
        {"drag", dynamics::to_string(simulation.drag)},
        {"site", {simulation.site_row, simulation.site_col}}}},
      {"analysis",
       {{"ratio_threshold", analysis.ratio_threshold},
        {"peak_threshold_db", analysis.peak_threshold_db},
        {"bins_per_fwhm", analysis.bins_per_fwhm},
        {"min_segments", analysis.min_segments},
        {"overlap", analysis.overlap}}},
      {"assembly",
       {{"fill_probability", assembly.fill_probability},
        {"sphere_radius_m", assembly.shapes.sphere_radius},
        {"ellipsoid_fraction", assembly.shapes.ellipsoid_fraction},
        {"ellipsoid_aspect", assembly.shapes.ellipsoid_aspect},
        {"charge_mean_e", assembly.shapes.charge_mean_e},
        {"charge_spread_e", assembly.shapes.charge_spread_e},
        {"transport_success_prob", assembly.transport_success_prob},
        {"transport_speed_m_s", assembly.transport_speed},
        {"settle_time_s", assembly.settle_time},
        {"exclusion_factor", assembly.exclusion_factor}}},
      {"merge",
       {{"p_dumbbell", merge.p_dumbbell},
        {"p_lost", merge.p_lost},
        {"p_separated", merge.p_separated},
        {"pressure_pa", merge.pressure_pa}}},
  };
}

Config Config::from_json(const json& j) {
  Config c;
  ObjectReader top(j, "");
  std::string schema = kConfigSchema;
  top.get("schema", schema);
  if (schema != kConfigSchema) fail(ErrorCode::parse, "/schema: unsupported schema '" + schema + "'");
  top.get("seed", c.seed);
  if (const json* a = top.child("array")) {
    ObjectReader r(*a, "/array");
    std::string pol = optics::to_string(c.array.polarization);
    r.get("rows", c.array.rows);
    r.get("cols", c.array.cols);
    r.get("column_pitch_m", c.array.column_pitch);
    r.get("row_pitch_m", c.array.row_pitch);
    r.get("wavelength_m", c.array.wavelength);
    r.get("numerical_aperture", c.array.numerical_aperture);
    r.get("power_w", c.array.power);
    r.get("polarization", pol);
    r.get("waist_anisotropy", c.array.waist_anisotropy);
    r.get("axial_force_n", c.array.axial_force);
    r.get("spin_drive_coefficient_s", c.array.spin_drive_coefficient);
    r.get("gravity_m_s2", c.array.gravity);
    r.finish();
    c.array.polarization = optics::polarization_from_string(pol);
  }
  if (const json* g = top.child("gas")) {
    ObjectReader r(*g, "/gas");
    r.get("pressure_pa", c.gas.pressure);
    r.get("temperature_k", c.gas.temperature);
    r.get("molecular_mass_kg", c.gas.molecular_mass);
    r.get("accommodation", c.gas.accommodation_coefficient);
    r.get("molecular_diameter_m", c.gas.molecular_diameter);
    r.finish();
  }
  if (const json* p = top.child("particle")) {
    ObjectReader r(*p, "/particle");
    r.get("shape", c.particle.shape);
    r.get("radius_m", c.particle.radius);
    r.get("aspect", c.particle.aspect);
    r.get("charge_e", c.particle.charge_e);
    r.finish();
  }
  if (const json* s = top.child("simulation")) {
    ObjectReader r(*s, "/simulation");
    std::string drag = dynamics::to_string(c.simulation.drag);
    std::vector<int> site{c.simulation.site_row, c.simulation.site_col};
    r.get("duration_s", c.simulation.duration);
    r.get("sample_rate_hz", c.simulation.sample_rate);
    r.get("burn_in_s", c.simulation.burn_in);
    r.get("dt_safety", c.simulation.dt_safety);
    r.get("drag", drag);
    if (const json* st = r.child("site")) {
      if (!st->is_array() || st->size() != 2 || !(*st)[0].is_number_integer() || !(*st)[1].is_number_integer())
        fail(ErrorCode::parse, "/simulation/site: expected [row, col]");
      site = st->get<std::vector<int>>();
    }
    r.finish();
    c.simulation.drag = dynamics::drag_mode_from_string(drag);
    c.simulation.site_row = site[0];
    c.simulation.site_col = site[1];
  }
  if (const json* a = top.child("analysis")) {
    ObjectReader r(*a, "/analysis");
    r.get("ratio_threshold", c.analysis.ratio_threshold);
    r.get("peak_threshold_db", c.analysis.peak_threshold_db);
    r.get("bins_per_fwhm", c.analysis.bins_per_fwhm);
    r.get("min_segments", c.analysis.min_segments);
    r.get("overlap", c.analysis.overlap);
    r.finish();
  }
  if (const json* a = top.child("assembly")) {
    ObjectReader r(*a, "/assembly");
    r.get("fill_probability", c.assembly.fill_probability);
    r.get("sphere_radius_m", c.assembly.shapes.sphere_radius);
    r.get("ellipsoid_fraction", c.assembly.shapes.ellipsoid_fraction);
    r.get("ellipsoid_aspect", c.assembly.shapes.ellipsoid_aspect);
    r.get("charge_mean_e", c.assembly.shapes.charge_mean_e);
    r.get("charge_spread_e", c.assembly.shapes.charge_spread_e);
    r.get("transport_success_prob", c.assembly.transport_success_prob);
    r.get("transport_speed_m_s", c.assembly.transport_speed);
    r.get("settle_time_s", c.assembly.settle_time);
    r.get("exclusion_factor", c.assembly.exclusion_factor);
    r.finish();
  }
  if (const json* m = top.child("merge")) {
    ObjectReader r(*m, "/merge");
    r.get("p_dumbbell", c.merge.p_dumbbell);
    r.get("p_lost", c.merge.p_lost);
    r.get("p_separated", c.merge.p_separated);
    r.get("pressure_pa", c.merge.pressure_pa);
    r.finish();
  }
  top.finish();
  c.validate();
  return c;
}

assembly::GridGeometry Config::grid() const {
  return {array.rows, array.cols, array.column_pitch, array.row_pitch};
}

void Config::validate() const {
  gas.validate();
  particle.geometry().validate();
  merge.validate();
  assembly.shapes.validate();
  grid().validate();
  if (!(simulation.duration > 0.0)) fail(ErrorCode::domain, "simulation duration must be positive");
  if (!(simulation.sample_rate > 0.0)) fail(ErrorCode::domain, "sample rate must be positive");
  if (!(simulation.dt_safety > 0.0 && simulation.dt_safety <= 1.0))
    fail(ErrorCode::domain, "dt safety must lie in (0, 1]");
  if (!(assembly.fill_probability >= 0.0 && assembly.fill_probability <= 1.0))
    fail(ErrorCode::domain, "fill probability must lie in [0, 1]");
  if (!(assembly.transport_success_prob >= 0.0 && assembly.transport_success_prob <= 1.0))
    fail(ErrorCode::domain, "transport success probability must lie in [0, 1]");
  if (!(analysis.ratio_threshold > 0.0 && analysis.ratio_threshold < 1.0))
    fail(ErrorCode::domain, "ratio threshold must lie in (0, 1)");
}

Config load_config(const std::string& path) {
  try {
    return Config::from_json(read_json_file(path));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::parse && std::string(e.what()).rfind(path, 0) != 0)
      fail(ErrorCode::parse, path + ": " + e.what());
    throw;
  }
}

Config apply_overrides(const Config& base, const json& patch) {
  if (!patch.is_object()) fail(ErrorCode::parse, "configuration overrides must be an object");
  json j = base.to_json();
  j.merge_patch(patch);
  return Config::from_json(j);
}

}  // namespace lev::harness
