#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "common/error.hpp"
#include "dynamics/dynamics.hpp"

namespace lev::dynamics {

namespace {

using nlohmann::json;

constexpr char kBinaryMagic[8] = {'L', 'E', 'V', 'T', 'R', 'J', '0', '1'};

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json metadata_json(const Trajectory& t) {
  const auto& m = t.meta;
  json j;
  j["schema"] = kTrajectorySchema;
  j["sample_rate_hz"] = t.sample_rate;
  j["pressure_pa"] = m.pressure_pa;
  j["temperature_k"] = m.temperature_k;
  j["seed"] = m.seed;
  j["site_row"] = m.site_row;
  j["site_col"] = m.site_col;
  j["polarization"] = optics::to_string(m.polarization);
  j["shape"] = m.shape;
  j["r1_m"] = m.r1;
  j["r2_m"] = m.r2;
  j["r3_m"] = m.r3;
  j["focus_m"] = {m.focus.x(), m.focus.y(), m.focus.z()};
  j["lost_at_s"] = m.lost_at_s ? json(*m.lost_at_s) : json(nullptr);
  j["label"] = m.label;
  j["samples"] = t.length();
  j["channels"] = t.channels;
  j["units"] = t.units;
  return j;
}

void apply_metadata(const json& j, Trajectory& t) {
  if (j.value("schema", std::string()) != kTrajectorySchema)
    fail(ErrorCode::parse, "unsupported trajectory schema '" + j.value("schema", std::string()) + "'");
  auto& m = t.meta;
  t.sample_rate = j.at("sample_rate_hz").get<double>();
  m.pressure_pa = j.value("pressure_pa", 0.0);
  m.temperature_k = j.value("temperature_k", 0.0);
  m.seed = j.value("seed", std::uint64_t{0});
  m.site_row = j.value("site_row", 0);
  m.site_col = j.value("site_col", 0);
  m.polarization = optics::polarization_from_string(j.value("polarization", std::string("linear_x")));
  m.shape = j.value("shape", std::string("ellipsoid"));
  m.r1 = j.value("r1_m", 0.0);
  m.r2 = j.value("r2_m", 0.0);
  m.r3 = j.value("r3_m", 0.0);
  if (j.contains("focus_m")) {
    const auto& f = j.at("focus_m");
    m.focus = Vec3(f.at(0).get<double>(), f.at(1).get<double>(), f.at(2).get<double>());
  }
  if (j.contains("lost_at_s") && !j.at("lost_at_s").is_null()) m.lost_at_s = j.at("lost_at_s").get<double>();
  m.label = j.value("label", std::string());
}

// Text metadata lines are "# key: value" with a JSON-encoded value.
Trajectory read_text(std::istream& in, const std::string& path) {
  json meta = json::object();
  std::string line;
  std::size_t lineno = 0;
  Trajectory t;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto colon = line.find(':');
      if (colon == std::string::npos) continue;
      std::string key = line.substr(1, colon - 1);
      key.erase(0, key.find_first_not_of(' '));
      std::string value = line.substr(colon + 1);
      value.erase(0, value.find_first_not_of(' '));
      try {
        meta[key] = json::parse(value);
      } catch (const json::exception&) {
        meta[key] = value;
      }
      continue;
    }
    if (!header_seen) {
      header_seen = true;
      std::stringstream ss(line);
      std::string cell;
      std::getline(ss, cell, ',');  // time column
      while (std::getline(ss, cell, ',')) {
        const auto us = cell.rfind('_');
        if (us == std::string::npos) fail(ErrorCode::parse, path + ":" + std::to_string(lineno) + ": column '" + cell + "' lacks a unit suffix");
        t.channels.push_back(cell.substr(0, us));
        t.units.push_back(cell.substr(us + 1));
      }
      t.data.assign(t.channels.size(), {});
      continue;
    }
    const char* p = line.c_str();
    char* end = nullptr;
    std::strtod(p, &end);  // time column is implied by the sample rate
    for (std::size_t c = 0; c < t.channels.size(); ++c) {
      if (*end != ',') fail(ErrorCode::parse, path + ":" + std::to_string(lineno) + ": expected " + std::to_string(t.channels.size() + 1) + " columns");
      p = end + 1;
      const double v = std::strtod(p, &end);
      if (end == p) fail(ErrorCode::parse, path + ":" + std::to_string(lineno) + ": malformed number");
      t.data[c].push_back(v);
    }
  }
  if (!header_seen) fail(ErrorCode::parse, path + ": missing header row");
  apply_metadata(meta, t);
  t.validate();
  return t;
}

Trajectory read_binary(std::istream& in, const std::string& path) {
  std::uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  std::string header(len, '\0');
  in.read(header.data(), len);
  if (!in) fail(ErrorCode::parse, path + ": truncated binary header");
  json j;
  try {
    j = json::parse(header);
  } catch (const json::exception& e) {
    fail(ErrorCode::parse, path + ": bad binary header: " + e.what());
  }
  Trajectory t;
  apply_metadata(j, t);
  t.channels = j.at("channels").get<std::vector<std::string>>();
  t.units = j.at("units").get<std::vector<std::string>>();
  const auto n = j.at("samples").get<std::size_t>();
  t.data.assign(t.channels.size(), std::vector<double>(n));
  std::vector<double> row(t.channels.size() + 1);
  for (std::size_t k = 0; k < n; ++k) {
    in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(double)));
    if (!in) fail(ErrorCode::parse, path + ": truncated binary payload");
    for (std::size_t c = 0; c < t.channels.size(); ++c) t.data[c][k] = row[c + 1];
  }
  t.validate();
  return t;
}

}  // namespace

void write_trajectory_text(const Trajectory& t, const std::string& path) {
  t.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot write " + path);
  const json meta = metadata_json(t);
  for (const char* key : {"schema", "sample_rate_hz", "pressure_pa", "temperature_k", "seed", "site_row", "site_col",
                          "polarization", "shape", "r1_m", "r2_m", "r3_m", "focus_m", "lost_at_s", "label", "samples"})
    out << "# " << key << ": " << meta.at(key).dump() << '\n';
  out << "t_s";
  for (std::size_t c = 0; c < t.channels.size(); ++c) out << ',' << t.channels[c] << '_' << t.units[c];
  out << '\n';
  std::string line;
  for (std::size_t k = 0; k < t.length(); ++k) {
    line = fmt17(static_cast<double>(k) / t.sample_rate);
    for (const auto& ch : t.data) {
      line += ',';
      line += fmt17(ch[k]);
    }
    line += '\n';
    out << line;
  }
  if (!out) fail(ErrorCode::io, "write failed for " + path);
}

void write_trajectory_binary(const Trajectory& t, const std::string& path) {
  t.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot write " + path);
  const std::string header = metadata_json(t).dump();
  const auto len = static_cast<std::uint32_t>(header.size());
  out.write(kBinaryMagic, sizeof kBinaryMagic);
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(header.data(), len);
  std::vector<double> row(t.channels.size() + 1);
  for (std::size_t k = 0; k < t.length(); ++k) {
    row[0] = static_cast<double>(k) / t.sample_rate;
    for (std::size_t c = 0; c < t.data.size(); ++c) row[c + 1] = t.data[c][k];
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(double)));
  }
  if (!out) fail(ErrorCode::io, "write failed for " + path);
}

Trajectory read_trajectory(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open " + path);
  char magic[8] = {};
  in.read(magic, sizeof magic);
  if (in && std::memcmp(magic, kBinaryMagic, sizeof magic) == 0) return read_binary(in, path);
  in.clear();
  in.seekg(0);
  return read_text(in, path);
}

}  // namespace lev::dynamics
