#include <fstream>
#include <ostream>

#include "json.hpp"

#include "assembly/assembly.hpp"
#include "common/error.hpp"

namespace lev::assembly {

namespace {

std::vector<ParticleId> members_of(const Occupancy& occ, const Site& s) { return occ.cell(s).members; }

}  // namespace

ExecutionResult execute_plan(const MovePlan& plan, Occupancy& occ, RngStream& rng, const ExecuteOptions& options) {
  if (!(options.transport_success_prob >= 0.0 && options.transport_success_prob <= 1.0))
    fail(ErrorCode::domain, "transport success probability must lie in [0, 1]");
  if (!(options.transport_speed > 0.0)) fail(ErrorCode::domain, "transport speed must be positive");
  if (!(options.settle_time >= 0.0)) fail(ErrorCode::domain, "settle time must be >= 0");
  if (plan.base_version != occ.version() || plan.base_fingerprint != occ.fingerprint())
    fail(ErrorCode::stale_plan, "plan was built for occupancy version " + std::to_string(plan.base_version) +
                                    ", current version is " + std::to_string(occ.version()));

  ExecutionResult res;
  double t = 0.0;
  for (const Move& mv : plan.moves) {
    Event ev;
    ev.t_s = t;
    ev.site = mv.destination;
    if (mv.kind == MoveKind::discard) {
      ev.op = "discard";
      ev.particles = members_of(occ, mv.source);
      for (const Particle& p : occ.remove(mv.source)) res.discarded.push_back(p.id);
      ev.outcome = "removed";
      res.events.push_back(std::move(ev));
      t += options.settle_time;
      continue;
    }
    ev.op = mv.via_buffer ? "park" : "move";
    ev.source = mv.source;
    if (!occ.occupied(mv.source)) {
      // The particle was lost on an earlier leg.
      ev.outcome = "skipped";
      res.events.push_back(std::move(ev));
      continue;
    }
    if (occ.occupied(mv.destination))
      fail(ErrorCode::internal, "destination " + to_string(mv.destination) + " occupied during execution");
    ev.particles = members_of(occ, mv.source);
    t += mv.length() / options.transport_speed + options.settle_time;
    ev.t_s = t;
    if (rng.uniform() < options.transport_success_prob) {
      occ.move(mv.source, mv.destination);
      ev.outcome = "ok";
    } else {
      for (const Particle& p : occ.remove(mv.source)) res.lost.push_back(p.id);
      ev.outcome = "lost";
    }
    res.events.push_back(std::move(ev));
  }
  for (const Site& s : plan.target)
    if (!occ.occupied(s)) res.defects.push_back(s);

  Event done;
  done.t_s = t;
  done.op = "complete";
  done.site = {0, 0};
  done.outcome = res.defects.empty() ? "defect_free" : std::to_string(res.defects.size()) + "_defects";
  res.events.push_back(std::move(done));
  occ.validate();
  res.occupancy = occ;
  return res;
}

void write_events(const std::vector<Event>& events, std::uint64_t seed, std::ostream& out) {
  out << nlohmann::json{{"schema", kEventSchema}, {"seed", seed}}.dump() << '\n';
  for (const Event& e : events) {
    nlohmann::json j;
    j["t_s"] = e.t_s;
    j["op"] = e.op;
    j["site"] = {e.site.row, e.site.col};
    if (e.source) j["source"] = {e.source->row, e.source->col};
    j["outcome"] = e.outcome;
    j["particles"] = e.particles;
    out << j.dump() << '\n';
  }
}

void write_events(const std::vector<Event>& events, std::uint64_t seed, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot write " + path);
  write_events(events, seed, out);
  if (!out) fail(ErrorCode::io, "write failed for " + path);
}

}  // namespace lev::assembly
