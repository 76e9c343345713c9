#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "assembly/assembly.hpp"
#include "common/error.hpp"

namespace lev::assembly {

using Point = Eigen::Vector2d;

const char* to_string(MoveKind k) noexcept { return k == MoveKind::transfer ? "transfer" : "discard"; }

double Move::length() const {
  double s = 0.0;
  for (std::size_t i = 1; i < path.size(); ++i) s += (path[i] - path[i - 1]).norm();
  return s;
}

std::size_t MovePlan::transfer_count() const {
  return static_cast<std::size_t>(
      std::count_if(moves.begin(), moves.end(), [](const Move& m) { return m.kind == MoveKind::transfer; }));
}

double segment_distance(const Point& p, const Point& a, const Point& b) {
  const Point d = b - a;
  const double len2 = d.squaredNorm();
  if (len2 == 0.0) return (p - a).norm();
  const double t = std::clamp((p - a).dot(d) / len2, 0.0, 1.0);
  return (p - (a + t * d)).norm();
}

bool path_clear(const Occupancy& occ, const std::vector<Point>& path, const Site& mover, double radius) {
  // Touching the exclusion circle is allowed; lanes run exactly at half pitch.
  const double limit = radius * (1.0 - 1e-9);
  const GridGeometry& g = occ.grid();
  for (const Site& s : occ.occupied_sites()) {
    if (s == mover) continue;
    const Point p = g.position(s);
    for (std::size_t i = 0; i + 1 < path.size(); ++i)
      if (segment_distance(p, path[i], path[i + 1]) < limit) return false;
    if (path.size() == 1 && (p - path.front()).norm() < limit) return false;
  }
  return true;
}

namespace {

// Lanes run midway between rows and columns. A site reaches the lane network
// through one of its four cell corners; lane segments keep at least half a
// pitch from every site, and the corner spurs at least min_pitch / sqrt(2).
std::vector<Point> lane_route(const GridGeometry& g, const Site& from, const Site& to) {
  const Point a = g.position(from), b = g.position(to);
  const Point half(0.5 * g.column_pitch, 0.5 * g.row_pitch);
  static const int sx[4] = {-1, 1, -1, 1}, sy[4] = {-1, -1, 1, 1};
  double best = std::numeric_limits<double>::infinity();
  std::vector<Point> route;
  for (int i = 0; i < 4; ++i) {
    const Point ca = a + Point(sx[i] * half.x(), sy[i] * half.y());
    for (int j = 0; j < 4; ++j) {
      const Point cb = b + Point(sx[j] * half.x(), sy[j] * half.y());
      // Horizontal leg along a row lane, then vertical leg along a column lane.
      const Point elbow(cb.x(), ca.y());
      const double len = (ca - a).norm() + (elbow - ca).norm() + (cb - elbow).norm() + (b - cb).norm();
      if (len < best - 1e-15) {
        best = len;
        route = {a, ca, elbow, cb, b};
      }
    }
  }
  // Drop repeated vertices.
  std::vector<Point> out;
  for (const Point& p : route)
    if (out.empty() || (p - out.back()).norm() > 1e-15) out.push_back(p);
  return out;
}

struct Pending {
  Site source;
  Site destination;
};

}  // namespace

MovePlan plan_rearrangement(const Occupancy& current, const std::vector<Site>& target, const PlanOptions& options) {
  const GridGeometry& g = current.grid();
  if (!(options.exclusion_factor >= 0.0 && options.exclusion_factor < 1.0))
    fail(ErrorCode::domain, "exclusion factor must lie in [0, 1)");
  std::set<Site> target_set;
  for (const Site& s : target) {
    if (!g.contains(s)) fail(ErrorCode::invalid_argument, "target site " + to_string(s) + " is outside the grid");
    if (!target_set.insert(s).second) fail(ErrorCode::invalid_argument, "target site " + to_string(s) + " repeats");
  }
  const std::vector<Site> units = current.occupied_sites();
  if (units.size() < target.size())
    fail(ErrorCode::infeasible, "target needs " + std::to_string(target.size()) + " particles but only " +
                                    std::to_string(units.size()) + " are loaded (deficit " +
                                    std::to_string(target.size() - units.size()) + ")");

  MovePlan plan;
  plan.target.assign(target_set.begin(), target_set.end());
  plan.grid = g;
  plan.exclusion_radius = options.exclusion_factor * g.min_pitch();
  plan.base_version = current.version();
  plan.base_fingerprint = current.fingerprint();

  const std::size_t n = plan.target.size(), m = units.size();
  Eigen::MatrixXd cost(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = g.distance(plan.target[i], units[j]);
  const std::vector<int> chosen = solve_assignment(cost);

  std::vector<char> assigned(m, 0);
  std::vector<Pending> pending;
  for (std::size_t i = 0; i < n; ++i) {
    const auto j = static_cast<std::size_t>(chosen[i]);
    assigned[j] = 1;
    plan.cost += cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    if (units[j] != plan.target[i]) pending.push_back({units[j], plan.target[i]});
  }

  Occupancy work = current;
  // Surplus particles leave first; each removal only frees space.
  for (std::size_t j = 0; j < m; ++j) {
    if (assigned[j]) continue;
    Move mv;
    mv.kind = MoveKind::discard;
    mv.source = mv.destination = units[j];
    mv.path = {g.position(units[j])};
    plan.moves.push_back(std::move(mv));
    work.remove(units[j]);
  }

  auto emit = [&](const Site& from, const Site& to, bool buffer) {
    Move mv;
    mv.source = from;
    mv.destination = to;
    mv.via_buffer = buffer;
    mv.path = {g.position(from), g.position(to)};
    if (!path_clear(work, mv.path, from, plan.exclusion_radius)) {
      mv.path = lane_route(g, from, to);
      if (!path_clear(work, mv.path, from, plan.exclusion_radius))
        fail(ErrorCode::internal, "lane route from " + to_string(from) + " is obstructed");
    }
    work.move(from, to);
    plan.moves.push_back(std::move(mv));
  };

  while (!pending.empty()) {
    // Shortest move whose destination is free right now.
    std::size_t pick = pending.size();
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < pending.size(); ++k) {
      if (work.occupied(pending[k].destination)) continue;
      const double d = g.distance(pending[k].source, pending[k].destination);
      if (d < best) {
        best = d;
        pick = k;
      }
    }
    if (pick < pending.size()) {
      emit(pending[pick].source, pending[pick].destination, false);
      pending.erase(pending.begin() + static_cast<std::ptrdiff_t>(pick));
      continue;
    }
    // Every destination is held by a particle that must itself move: a cycle.
    // Park one member on the nearest free site outside the target pattern.
    Pending& p = pending.front();
    std::optional<Site> buffer;
    double best_buffer = std::numeric_limits<double>::infinity();
    for (int r = 0; r < g.rows; ++r) {
      for (int c = 0; c < g.cols; ++c) {
        const Site s{r, c};
        if (work.occupied(s) || target_set.count(s)) continue;
        const double d = g.distance(p.source, s);
        if (d < best_buffer) {
          best_buffer = d;
          buffer = s;
        }
      }
    }
    if (!buffer) fail(ErrorCode::infeasible, "no free buffer site to break a move cycle");
    emit(p.source, *buffer, true);
    p.source = *buffer;
  }
  return plan;
}

Occupancy replay_plan(const MovePlan& plan, const Occupancy& occ) {
  if (plan.base_version != occ.version() || plan.base_fingerprint != occ.fingerprint())
    fail(ErrorCode::stale_plan, "plan was built for occupancy version " + std::to_string(plan.base_version) +
                                    ", current version is " + std::to_string(occ.version()));
  Occupancy work = occ;
  const GridGeometry& g = occ.grid();
  for (std::size_t k = 0; k < plan.moves.size(); ++k) {
    const Move& mv = plan.moves[k];
    const std::string where = "move " + std::to_string(k) + " " + to_string(mv.source) + " -> " +
                              to_string(mv.destination);
    if (!work.occupied(mv.source)) fail(ErrorCode::infeasible, where + ": source is empty");
    if (mv.kind == MoveKind::discard) {
      work.remove(mv.source);
      continue;
    }
    if (work.occupied(mv.destination)) fail(ErrorCode::infeasible, where + ": destination is occupied");
    if (mv.path.size() < 2 || (mv.path.front() - g.position(mv.source)).norm() > 1e-12 ||
        (mv.path.back() - g.position(mv.destination)).norm() > 1e-12)
      fail(ErrorCode::infeasible, where + ": path does not join source and destination");
    if (!path_clear(work, mv.path, mv.source, plan.exclusion_radius))
      fail(ErrorCode::infeasible, where + ": path enters the exclusion radius of an occupied site");
    work.move(mv.source, mv.destination);
  }
  return work;
}

}  // namespace lev::assembly
