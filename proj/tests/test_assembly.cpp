#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "doctest.h"

#include "assembly/assembly.hpp"
#include "common/error.hpp"

using namespace lev;
using namespace lev::assembly;

namespace {

template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::ok;
}

GridGeometry grid(int rows, int cols) {
  GridGeometry g;
  g.rows = rows;
  g.cols = cols;
  return g;
}

Particle sphere(double charge_e = 10.0) {
  Particle p;
  p.geometry = optics::EllipsoidGeometry::sphere(85e-9);
  p.charge = charge_e * constants::elementary_charge;
  return p;
}

Occupancy with_sites(const GridGeometry& g, const std::vector<Site>& sites) {
  Occupancy occ(g);
  for (const Site& s : sites) occ.place(s, sphere());
  return occ;
}

// Minimum over all injective maps of targets onto loaded sites of the summed
// Euclidean distance.
double brute_force_cost(const GridGeometry& g, const std::vector<Site>& units, const std::vector<Site>& targets) {
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

// Independent replay: tracks occupied positions as a set, checks each move
// against the instantaneous state with its own segment geometry, and returns
// the final occupied set.
std::set<Site> replay_oracle(const MovePlan& plan, std::set<Site> occupied) {
  const GridGeometry& g = plan.grid;
  for (const Move& mv : plan.moves) {
    REQUIRE(occupied.count(mv.source) == 1);
    if (mv.kind == MoveKind::discard) {
      occupied.erase(mv.source);
      continue;
    }
    REQUIRE(occupied.count(mv.destination) == 0);
    REQUIRE(mv.path.size() >= 2);
    CHECK((mv.path.front() - g.position(mv.source)).norm() < 1e-15);
    CHECK((mv.path.back() - g.position(mv.destination)).norm() < 1e-15);
    for (const Site& s : occupied) {
      if (s == mv.source) continue;
      const Eigen::Vector2d p = g.position(s);
      for (std::size_t i = 0; i + 1 < mv.path.size(); ++i) {
        const Eigen::Vector2d a = mv.path[i], b = mv.path[i + 1];
        // Closest approach by dense sampling of the segment.
        double d = std::numeric_limits<double>::infinity();
        for (int k = 0; k <= 2000; ++k) d = std::min(d, (a + (b - a) * (k / 2000.0) - p).norm());
        CHECK(d >= plan.exclusion_radius * (1.0 - 1e-6));
      }
    }
    occupied.erase(mv.source);
    occupied.insert(mv.destination);
  }
  return occupied;
}

std::set<Site> site_set(const Occupancy& occ) {
  const auto v = occ.occupied_sites();
  return {v.begin(), v.end()};
}

std::vector<Site> random_sites(const GridGeometry& g, std::size_t k, std::mt19937_64& rng) {
  std::vector<Site> all;
  for (int r = 0; r < g.rows; ++r)
    for (int c = 0; c < g.cols; ++c) all.push_back({r, c});
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(k);
  return all;
}

}  // namespace

TEST_CASE("loading fills nothing at 0 and everything at 1") {
  const auto g = grid(4, 5);
  RngStream a(1), b(1);
  CHECK(load_array(g, 0.0, a).occupied_count() == 0);
  const auto full = load_array(g, 1.0, b);
  CHECK(full.occupied_count() == 20);
  CHECK_NOTHROW(full.validate());
  std::set<ParticleId> ids;
  for (const auto& [id, p] : full.particles()) ids.insert(id);
  CHECK(ids.size() == 20);
  RngStream c(1);
  CHECK(code_of([&] { load_array(g, 1.5, c); }) == ErrorCode::domain);
}

TEST_CASE("loading is binomial per site") {
  const auto g = grid(4, 4);
  const double p = 0.3;
  const int trials = 4000;
  RngStream rng(7);
  std::vector<int> per_site(16, 0);
  double total = 0.0, total2 = 0.0;
  for (int t = 0; t < trials; ++t) {
    const auto occ = load_array(g, p, rng);
    const double n = static_cast<double>(occ.occupied_count());
    total += n;
    total2 += n * n;
    for (const Site& s : occ.occupied_sites()) ++per_site[static_cast<std::size_t>(s.row * 4 + s.col)];
  }
  const double mean = total / trials, var = total2 / trials - mean * mean;
  CHECK(std::abs(mean - 16 * p) < 4.0 * std::sqrt(16 * p * (1 - p) / trials));
  CHECK(var == doctest::Approx(16 * p * (1 - p)).epsilon(0.1));
  for (int k : per_site) CHECK(std::abs(k - trials * p) < 4.0 * std::sqrt(trials * p * (1 - p)));
}

TEST_CASE("loaded ellipsoids match the sphere volume and carry the anisotropy flag") {
  ShapeDistribution shapes;
  shapes.ellipsoid_fraction = 1.0;
  RngStream rng(3);
  const auto occ = load_array(grid(2, 2), 1.0, rng, shapes);
  for (const auto& [id, p] : occ.particles()) {
    CHECK(p.anisotropic);
    CHECK(p.geometry.volume() == doctest::Approx(optics::EllipsoidGeometry::sphere(85e-9).volume()).epsilon(1e-12));
  }
}

TEST_CASE("assignment solver matches exhaustive search") {
  std::mt19937_64 g(5);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 1 + trial % 5, m = n + trial % 3;
    Eigen::MatrixXd c(n, m);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) c(i, j) = u(g);
    const auto pick = solve_assignment(c);
    REQUIRE(pick.size() == static_cast<std::size_t>(n));
    std::set<int> used(pick.begin(), pick.end());
    CHECK(used.size() == static_cast<std::size_t>(n));
    double got = 0.0;
    for (int i = 0; i < n; ++i) got += c(i, pick[static_cast<std::size_t>(i)]);
    std::vector<int> idx(static_cast<std::size_t>(m));
    std::iota(idx.begin(), idx.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += c(i, idx[static_cast<std::size_t>(i)]);
      best = std::min(best, s);
    } while (std::next_permutation(idx.begin(), idx.end()));
    CHECK(got == doctest::Approx(best).epsilon(1e-12));
  }
  CHECK(code_of([] { solve_assignment(Eigen::MatrixXd::Ones(3, 2)); }) == ErrorCode::infeasible);
}

TEST_CASE("identical target gives an empty plan") {
  const auto g = grid(3, 3);
  const std::vector<Site> sites = {{0, 0}, {1, 2}, {2, 1}};
  const auto occ = with_sites(g, sites);
  const auto plan = plan_rearrangement(occ, sites);
  CHECK(plan.empty());
  CHECK(plan.cost == 0.0);
}

TEST_CASE("plans are optimal and replay safely") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const auto g = grid(3 + trial % 2, 3 + (trial / 2) % 2);
    const std::size_t k = 1 + static_cast<std::size_t>(trial) % 6;
    const auto units = random_sites(g, k, rng);
    const std::size_t nt = 1 + static_cast<std::size_t>(trial / 7) % k;
    const auto targets = random_sites(g, nt, rng);
    const auto occ = with_sites(g, units);
    const auto plan = plan_rearrangement(occ, targets);
    CAPTURE(trial);
    CHECK(plan.cost == doctest::Approx(brute_force_cost(g, units, targets)).epsilon(1e-12));
    const auto final_sites = replay_oracle(plan, site_set(occ));
    CHECK(final_sites == std::set<Site>(targets.begin(), targets.end()));
    CHECK(site_set(replay_plan(plan, occ)) == final_sites);
  }
}

TEST_CASE("planning errors") {
  const auto g = grid(3, 3);
  const auto occ = with_sites(g, {{0, 0}});
  CHECK(code_of([&] { plan_rearrangement(occ, {{1, 1}, {2, 2}}); }) == ErrorCode::infeasible);
  CHECK(code_of([&] { plan_rearrangement(occ, {{3, 0}}); }) == ErrorCode::invalid_argument);
  CHECK(code_of([&] { plan_rearrangement(occ, {{1, 1}, {1, 1}}); }) == ErrorCode::invalid_argument);
}

TEST_CASE("execution with certain transport reaches the target exactly") {
  const auto g = grid(4, 4);
  RngStream load(21);
  auto occ = load_array(g, 0.6, load);
  const std::vector<Site> target = {{1, 1}, {1, 2}, {2, 1}, {2, 2}};
  REQUIRE(occ.occupied_count() >= target.size());
  const std::size_t before = occ.particle_count();
  const auto plan = plan_rearrangement(occ, target);
  ExecuteOptions o;
  o.transport_success_prob = 1.0;
  RngStream rng(22);
  const auto res = execute_plan(plan, occ, rng, o);
  CHECK(res.defect_free());
  CHECK(site_set(occ) == std::set<Site>(target.begin(), target.end()));
  CHECK(occ.particle_count() + res.discarded.size() + res.lost.size() == before);
  CHECK(res.lost.empty());
  CHECK(res.events.back().op == "complete");
  for (std::size_t i = 1; i < res.events.size(); ++i) CHECK(res.events[i].t_s >= res.events[i - 1].t_s);
}

TEST_CASE("defect-free rate follows the product of transport successes") {
  const auto g = grid(4, 4);
  const std::vector<Site> start = {{0, 0}, {0, 3}, {3, 0}, {3, 3}, {0, 1}, {3, 2}, {1, 0}, {2, 3}};
  const std::vector<Site> target = {{1, 1}, {1, 2}, {2, 1}, {2, 2}, {0, 2}, {3, 1}, {2, 0}, {1, 3}};
  const auto base = with_sites(g, start);
  const auto plan = plan_rearrangement(base, target);
  const double p = 0.9;
  const double expected = std::pow(p, static_cast<double>(plan.transfer_count()));
  const int trials = 4000;
  int ok = 0;
  RngStream rng(23);
  ExecuteOptions o;
  o.transport_success_prob = p;
  for (int t = 0; t < trials; ++t) {
    Occupancy occ = base;
    if (execute_plan(plan, occ, rng, o).defect_free()) ++ok;
  }
  const double sigma = std::sqrt(expected * (1 - expected) / trials);
  CHECK(std::abs(static_cast<double>(ok) / trials - expected) < 3.5 * sigma);
}

TEST_CASE("a plan built for another snapshot is stale") {
  const auto g = grid(3, 3);
  auto occ = with_sites(g, {{0, 0}, {2, 2}});
  const auto plan = plan_rearrangement(occ, {{1, 1}});
  occ.place({0, 1}, sphere());
  RngStream rng(1);
  CHECK(code_of([&] { execute_plan(plan, occ, rng); }) == ErrorCode::stale_plan);
  CHECK(code_of([&] { replay_plan(plan, occ); }) == ErrorCode::stale_plan);
}

TEST_CASE("merge with certain sticking makes an anisotropic dumbbell") {
  const auto g = grid(1, 2);
  auto occ = with_sites(g, {{0, 0}, {0, 1}});
  MergeModel m;
  m.p_dumbbell = 1.0;
  m.p_lost = m.p_separated = 0.0;
  RngStream rng(1);
  const auto out = merge_particles({0, 0}, {0, 1}, occ, m, rng);
  REQUIRE(out.kind == MergeKind::dumbbell);
  REQUIRE(out.dumbbell.has_value());
  CHECK(out.dumbbell->geometry.r1 == doctest::Approx(2.0 * 85e-9).epsilon(1e-12));
  CHECK(out.dumbbell->geometry.kind == optics::BodyKind::dumbbell);
  CHECK(out.dumbbell->anisotropic);
  CHECK(occ.state({0, 1}) == SiteState::merged);
  CHECK(occ.state({0, 0}) == SiteState::empty);
  CHECK(occ.particle(out.dumbbell->id).charge == doctest::Approx(20.0 * constants::elementary_charge));
}

TEST_CASE("merge outcome frequencies follow the model") {
  const auto g = grid(1, 2);
  const Occupancy base = with_sites(g, {{0, 0}, {0, 1}});
  const MergeModel m;  // 0.25 / 0.5 / 0.25
  RngStream rng(99);
  const int trials = 10000;
  int count[3] = {0, 0, 0};
  for (int t = 0; t < trials; ++t) {
    Occupancy occ = base;
    const auto out = merge_particles({0, 0}, {0, 1}, occ, m, rng);
    ++count[static_cast<int>(out.kind)];
    switch (out.kind) {
      case MergeKind::dumbbell: REQUIRE(occ.state({0, 1}) == SiteState::merged); break;
      case MergeKind::lost: REQUIRE(occ.occupied_count() == 0); break;
      case MergeKind::separated_coulomb: REQUIRE(occ.state({0, 1}) == SiteState::pair); break;
    }
  }
  const double f = count[0] / static_cast<double>(trials);
  CHECK(std::abs(f - 0.25) < 3.0 * std::sqrt(0.25 * 0.75 / trials));
  const double expect[3] = {0.25, 0.5, 0.25};
  double chi2 = 0.0;
  for (int k = 0; k < 3; ++k) chi2 += std::pow(count[k] - trials * expect[k], 2) / (trials * expect[k]);
  CHECK(chi2 < 13.8);  // 2 degrees of freedom, p = 0.001
}

TEST_CASE("merge selection and domain errors") {
  const auto g = grid(2, 2);
  auto occ = with_sites(g, {{0, 0}, {0, 1}});
  Particle e;
  e.geometry = optics::EllipsoidGeometry::spheroid(120e-9, 80e-9);
  e.anisotropic = true;
  occ.place({1, 0}, e);
  RngStream rng(1);
  const MergeModel m;
  CHECK(code_of([&] { merge_particles({0, 0}, {0, 0}, occ, m, rng); }) == ErrorCode::domain);
  CHECK(code_of([&] { merge_particles({0, 0}, {1, 1}, occ, m, rng); }) == ErrorCode::selection);
  CHECK(code_of([&] { merge_particles({0, 0}, {1, 0}, occ, m, rng); }) == ErrorCode::selection);
  MergeModel bad;
  bad.p_lost = 0.9;
  CHECK(code_of([&] { merge_particles({0, 0}, {0, 1}, occ, bad, rng); }) == ErrorCode::domain);
  CHECK(occ.occupied_count() == 3);
}

TEST_CASE("Coulomb force") {
  auto a = dynamics::ParticleState::at_rest(optics::EllipsoidGeometry::sphere(85e-9), Vec3::Zero());
  auto b = a;
  b.position = Vec3(1e-6, 0, 0);
  CHECK(coulomb_force(a, b).norm() == 0.0);
  a.charge = b.charge = 10 * constants::elementary_charge;
  const Vec3 f = coulomb_force(a, b);
  const double k = 1.0 / (4.0 * constants::pi * constants::vacuum_permittivity);
  CHECK(f.x() == doctest::Approx(-k * a.charge * b.charge / 1e-12).epsilon(1e-12));
  CHECK((f + coulomb_force(b, a)).norm() == 0.0);
  b.position = a.position;
  CHECK(code_of([&] { coulomb_force(a, b); }) == ErrorCode::singular);
}

TEST_CASE("a charged pair in one trap rests near contact and spreads with more charge") {
  optics::TrapArraySpec spec;
  spec.rows = spec.cols = 1;
  const auto array = optics::TrapArray::make_grid(spec);
  gas::GasEnvironment env;
  const auto g = optics::EllipsoidGeometry::sphere(85e-9);
  auto a = dynamics::ParticleState::at_rest(g, Vec3::Zero());
  auto b = a;
  a.charge = b.charge = 10 * constants::elementary_charge;
  const auto [pa, pb] = pair_equilibrium(a, b, array.sites[0], env);
  const double d10 = (pa - pb).norm();
  CHECK(d10 >= 2.0 * g.r1 * 0.99);
  CHECK(d10 < 2.0 * g.r1 * 1.05);
  a.charge = b.charge = 40 * constants::elementary_charge;
  const auto [qa, qb] = pair_equilibrium(a, b, array.sites[0], env);
  CHECK((qa - qb).norm() > d10);
}

TEST_CASE("grid, target and plan files round-trip") {
  const auto g = grid(3, 4);
  RngStream rng(5);
  const auto occ = load_array(g, 0.5, rng);
  std::stringstream ss;
  write_grid(occ, ss);
  const auto back = read_grid(ss);
  CHECK(back.fingerprint() == occ.fingerprint());
  CHECK(back.particle_count() == occ.particle_count());
  for (const auto& [id, p] : occ.particles()) {
    CHECK(back.particle(id).charge == p.charge);
    CHECK(back.particle(id).geometry.r1 == p.geometry.r1);
  }

  std::stringstream ts("# rows: 3\n# cols: 4\n0 1\n2 3\n");
  const auto tp = read_target(ts);
  CHECK(tp.rows == 3);
  CHECK(tp.cols == 4);
  CHECK(tp.sites == std::vector<Site>{{0, 1}, {2, 3}});

  const auto plan = plan_rearrangement(occ, {{1, 1}});
  const auto copy = plan_from_json(plan_json(plan));
  CHECK(copy.moves.size() == plan.moves.size());
  CHECK(copy.cost == plan.cost);
  CHECK(copy.base_fingerprint == plan.base_fingerprint);
  CHECK(site_set(replay_plan(copy, occ)) == site_set(replay_plan(plan, occ)));
  CHECK(code_of([] { plan_from_json("{not json"); }) == ErrorCode::parse);
}
