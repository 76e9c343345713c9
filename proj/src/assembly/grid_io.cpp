#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "assembly/assembly.hpp"
#include "common/error.hpp"

namespace lev::assembly {

using nlohmann::json;

namespace {

char glyph(SiteState s) {
  switch (s) {
    case SiteState::empty: return '.';
    case SiteState::single: return 'o';
    case SiteState::merged: return 'D';
    case SiteState::pair: return '2';
  }
  return '?';
}

bool is_glyph(char c) { return c == '.' || c == 'o' || c == 'D' || c == '2'; }

SiteState state_of(char c) {
  switch (c) {
    case 'o': return SiteState::single;
    case 'D': return SiteState::merged;
    case '2': return SiteState::pair;
    default: return SiteState::empty;
  }
}

[[noreturn]] void parse_fail(int line, int col, const std::string& what) {
  fail(ErrorCode::parse, "line " + std::to_string(line) + ", column " + std::to_string(col) + ": " + what);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// "# key: value" with a JSON value; nullopt for free-text comments.
std::optional<std::pair<std::string, json>> metadata(const std::string& comment) {
  const auto colon = comment.find(':');
  if (colon == std::string::npos) return std::nullopt;
  const std::string key = trim(comment.substr(0, colon));
  if (key.empty() || key.find(' ') != std::string::npos) return std::nullopt;
  json value = json::parse(trim(comment.substr(colon + 1)), nullptr, false);
  if (value.is_discarded()) return std::nullopt;
  return std::make_pair(key, std::move(value));
}

json particle_json(const Particle& p) {
  return {{"id", p.id},
          {"shape", p.geometry.kind == optics::BodyKind::dumbbell ? "dumbbell" : "ellipsoid"},
          {"r1_m", p.geometry.r1},
          {"r2_m", p.geometry.r2},
          {"r3_m", p.geometry.r3},
          {"density_kg_m3", p.geometry.material_density},
          {"permittivity", p.geometry.relative_permittivity},
          {"charge_c", p.charge},
          {"anisotropic", p.anisotropic}};
}

Particle particle_from_json(const json& j) {
  Particle p;
  p.id = j.at("id").get<ParticleId>();
  p.geometry.kind = j.value("shape", "ellipsoid") == "dumbbell" ? optics::BodyKind::dumbbell
                                                                  : optics::BodyKind::ellipsoid;
  p.geometry.r1 = j.at("r1_m").get<double>();
  p.geometry.r2 = j.at("r2_m").get<double>();
  p.geometry.r3 = j.at("r3_m").get<double>();
  p.geometry.material_density = j.value("density_kg_m3", p.geometry.material_density);
  p.geometry.relative_permittivity = j.value("permittivity", p.geometry.relative_permittivity);
  p.geometry.validate();
  p.charge = j.value("charge_c", 0.0);
  p.anisotropic = j.value("anisotropic", !p.geometry.is_sphere());
  return p;
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open " + path);
  return in;
}

}  // namespace

void write_grid(const Occupancy& occ, std::ostream& out) {
  out << "# schema: \"" << kGridSchema << "\"\n";
  out << "# version: " << occ.version() << '\n';
  out << "# column_pitch_m: " << json(occ.grid().column_pitch).dump() << '\n';
  out << "# row_pitch_m: " << json(occ.grid().row_pitch).dump() << '\n';
  for (const Site& s : occ.occupied_sites())
    for (ParticleId id : occ.cell(s).members) out << "# particle: " << particle_json(occ.particle(id)).dump() << '\n';
  for (int r = 0; r < occ.rows(); ++r) {
    for (int c = 0; c < occ.cols(); ++c) out << glyph(occ.state({r, c}));
    out << '\n';
  }
}

void write_grid(const Occupancy& occ, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot write " + path);
  write_grid(occ, out);
  if (!out) fail(ErrorCode::io, "write failed for " + path);
}

Occupancy read_grid(std::istream& in, const GridGeometry& pitch_hint) {
  GridGeometry g = pitch_hint;
  std::optional<std::uint64_t> version;
  std::vector<Particle> listed;
  std::vector<std::string> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string body = line;
    const auto hash = body.find('#');
    if (hash != std::string::npos) {
      if (auto kv = metadata(body.substr(hash + 1))) {
        const auto& [key, value] = *kv;
        try {
          if (key == "schema" && value.get<std::string>() != kGridSchema)
            parse_fail(lineno, 1, "unsupported schema " + value.dump());
          if (key == "version") version = value.get<std::uint64_t>();
          if (key == "column_pitch_m") g.column_pitch = value.get<double>();
          if (key == "row_pitch_m") g.row_pitch = value.get<double>();
          if (key == "particle") listed.push_back(particle_from_json(value));
        } catch (const json::exception& e) {
          parse_fail(lineno, static_cast<int>(hash) + 1, "bad '" + key + "' entry: " + e.what());
        }
      }
      body = body.substr(0, hash);
    }
    body = trim(body);
    if (body.empty()) continue;
    for (std::size_t c = 0; c < body.size(); ++c)
      if (!is_glyph(body[c]))
        parse_fail(lineno, static_cast<int>(line.find(body) + c) + 1,
                   std::string("unexpected character '") + body[c] + "' (expected . o D 2)");
    if (!rows.empty() && body.size() != rows.front().size())
      parse_fail(lineno, 1, "row has " + std::to_string(body.size()) + " sites, expected " +
                                std::to_string(rows.front().size()));
    rows.push_back(body);
  }
  if (rows.empty()) parse_fail(lineno + 1, 1, "grid has no rows");
  g.rows = static_cast<int>(rows.size());
  g.cols = static_cast<int>(rows.front().size());

  Occupancy occ(g);
  std::size_t next = 0;
  ParticleId fresh = 1;
  for (const Particle& p : listed) fresh = std::max(fresh, p.id + 1);
  std::size_t needed = 0;
  for (const auto& r : rows)
    for (char c : r) needed += c == '.' ? 0 : c == '2' ? 2 : 1;
  if (!listed.empty() && listed.size() != needed)
    fail(ErrorCode::parse, "grid lists " + std::to_string(listed.size()) + " particles but its sites hold " +
                               std::to_string(needed));
  auto take = [&](SiteState st) {
    if (!listed.empty()) return listed[next++];
    Particle p;
    p.id = fresh++;
    p.geometry = st == SiteState::merged ? optics::EllipsoidGeometry::dumbbell(85e-9)
                                         : optics::EllipsoidGeometry::sphere(85e-9);
    p.anisotropic = st == SiteState::merged;
    return p;
  };
  for (int r = 0; r < g.rows; ++r) {
    for (int c = 0; c < g.cols; ++c) {
      const SiteState st = state_of(rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)]);
      if (st == SiteState::empty) continue;
      std::vector<Particle> members{take(st)};
      if (st == SiteState::pair) members.push_back(take(st));
      occ.install({r, c}, st, std::move(members));
    }
  }
  occ.validate();
  if (version) occ.restore_version(*version);
  return occ;
}

Occupancy read_grid(const std::string& path, const GridGeometry& pitch_hint) {
  std::ifstream in = open_input(path);
  try {
    return read_grid(in, pitch_hint);
  } catch (const Error& e) {
    fail(e.code(), path + ": " + e.what());
  }
}

TargetPattern read_target(std::istream& in) {
  std::vector<std::pair<int, std::string>> lines;
  std::optional<int> rows, cols;
  std::string line;
  int lineno = 0;
  bool grid = false, decided = false;
  while (std::getline(in, line)) {
    ++lineno;
    std::string body = line;
    const auto hash = body.find('#');
    if (hash != std::string::npos) {
      if (auto kv = metadata(body.substr(hash + 1))) {
        const auto& [key, value] = *kv;
        if (key == "rows" && value.is_number_integer()) rows = value.get<int>();
        if (key == "cols" && value.is_number_integer()) cols = value.get<int>();
        if (key == "schema" && value.is_string() && value.get<std::string>() != kSitesSchema &&
            value.get<std::string>() != kGridSchema)
          parse_fail(lineno, 1, "unsupported schema " + value.dump());
      }
      body = body.substr(0, hash);
    }
    body = trim(body);
    if (body.empty()) continue;
    if (!decided) {
      grid = std::all_of(body.begin(), body.end(), is_glyph);
      decided = true;
    }
    lines.emplace_back(lineno, body);
  }
  if (!decided) parse_fail(lineno + 1, 1, "target file is empty");

  TargetPattern t;
  if (grid) {
    std::istringstream text;
    std::string joined;
    for (const auto& [n, b] : lines) joined += b + "\n";
    text.str(joined);
    const Occupancy occ = read_grid(text);
    t.rows = occ.rows();
    t.cols = occ.cols();
    t.sites = occ.occupied_sites();
    return t;
  }
  std::set<Site> sites;
  int max_r = -1, max_c = -1;
  for (const auto& [n, b] : lines) {
    std::string s = b;
    std::replace(s.begin(), s.end(), ',', ' ');
    std::istringstream is(s);
    Site site;
    std::string extra;
    if (!(is >> site.row >> site.col) || (is >> extra))
      parse_fail(n, 1, "expected 'row col', got '" + b + "'");
    if (site.row < 0 || site.col < 0) parse_fail(n, 1, "negative coordinate");
    if (!sites.insert(site).second) parse_fail(n, 1, "site " + to_string(site) + " repeats");
    max_r = std::max(max_r, site.row);
    max_c = std::max(max_c, site.col);
  }
  t.rows = rows.value_or(max_r + 1);
  t.cols = cols.value_or(max_c + 1);
  if (max_r >= t.rows || max_c >= t.cols) fail(ErrorCode::parse, "target site lies outside the declared grid");
  t.sites.assign(sites.begin(), sites.end());
  return t;
}

TargetPattern read_target(const std::string& path) {
  std::ifstream in = open_input(path);
  try {
    return read_target(in);
  } catch (const Error& e) {
    fail(e.code(), path + ": " + e.what());
  }
}

void write_target_list(const TargetPattern& t, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot write " + path);
  out << "# schema: \"" << kSitesSchema << "\"\n# rows: " << t.rows << "\n# cols: " << t.cols << '\n';
  for (const Site& s : t.sites) out << s.row << ' ' << s.col << '\n';
  if (!out) fail(ErrorCode::io, "write failed for " + path);
}

std::string plan_json(const MovePlan& plan) {
  json j;
  j["schema"] = kPlanSchema;
  j["grid"] = {{"rows", plan.grid.rows},
               {"cols", plan.grid.cols},
               {"column_pitch_m", plan.grid.column_pitch},
               {"row_pitch_m", plan.grid.row_pitch}};
  j["base_version"] = plan.base_version;
  j["base_fingerprint"] = plan.base_fingerprint;
  j["exclusion_radius_m"] = plan.exclusion_radius;
  j["cost_m"] = plan.cost;
  json target = json::array();
  for (const Site& s : plan.target) target.push_back({s.row, s.col});
  j["target"] = target;
  json moves = json::array();
  for (const Move& m : plan.moves) {
    json path = json::array();
    for (const auto& p : m.path) path.push_back({p.x(), p.y()});
    moves.push_back({{"kind", to_string(m.kind)},
                     {"source", {m.source.row, m.source.col}},
                     {"destination", {m.destination.row, m.destination.col}},
                     {"via_buffer", m.via_buffer},
                     {"path_m", path}});
  }
  j["moves"] = moves;
  return j.dump(2);
}

MovePlan plan_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::parse, std::string("plan: ") + e.what());
  }
  try {
    if (j.at("schema").get<std::string>() != kPlanSchema)
      fail(ErrorCode::parse, "plan: unsupported schema " + j.at("schema").dump());
    MovePlan p;
    const json& g = j.at("grid");
    p.grid.rows = g.at("rows").get<int>();
    p.grid.cols = g.at("cols").get<int>();
    p.grid.column_pitch = g.at("column_pitch_m").get<double>();
    p.grid.row_pitch = g.at("row_pitch_m").get<double>();
    p.base_version = j.at("base_version").get<std::uint64_t>();
    p.base_fingerprint = j.at("base_fingerprint").get<std::uint64_t>();
    p.exclusion_radius = j.at("exclusion_radius_m").get<double>();
    p.cost = j.at("cost_m").get<double>();
    for (const auto& s : j.at("target")) p.target.push_back({s.at(0).get<int>(), s.at(1).get<int>()});
    for (const auto& m : j.at("moves")) {
      Move mv;
      mv.kind = m.at("kind").get<std::string>() == "discard" ? MoveKind::discard : MoveKind::transfer;
      mv.source = {m.at("source").at(0).get<int>(), m.at("source").at(1).get<int>()};
      mv.destination = {m.at("destination").at(0).get<int>(), m.at("destination").at(1).get<int>()};
      mv.via_buffer = m.value("via_buffer", false);
      for (const auto& pt : m.at("path_m")) mv.path.emplace_back(pt.at(0).get<double>(), pt.at(1).get<double>());
      p.moves.push_back(std::move(mv));
    }
    return p;
  } catch (const json::exception& e) {
    fail(ErrorCode::parse, std::string("plan: ") + e.what());
  }
}

}  // namespace lev::assembly
