#include <cmath>
#include <utility>
#include <vector>

#include "doctest.h"

#include "common/error.hpp"
#include "gas/gas.hpp"

using namespace lev;
using namespace lev::gas;
using optics::EllipsoidGeometry;

namespace {

GasEnvironment at(double p) {
  GasEnvironment e;
  e.pressure = p;
  return e;
}

// Drag torque coefficient (per unit momentum flux) of a set of spheres
// rotating rigidly about `axis`, by midpoint quadrature of the linearized
// free-molecular stress over every sphere surface.
double quadrature_rotational_drag(const std::vector<Vec3>& centers, double radius, const Vec3& axis,
                                  double accommodation, int n) {
  const double cn = 1.0 - accommodation / 2.0 + accommodation * constants::pi / 8.0;
  const double ct = accommodation / 4.0;
  const double dth = constants::pi / n, dph = 2.0 * constants::pi / (2 * n);
  double torque = 0.0;
  for (const Vec3& c : centers) {
    for (int i = 0; i < n; ++i) {
      const double th = (i + 0.5) * dth;
      for (int j = 0; j < 2 * n; ++j) {
        const double ph = (j + 0.5) * dph;
        const Vec3 nrm(std::sin(th) * std::cos(ph), std::sin(th) * std::sin(ph), std::cos(th));
        const Vec3 r = c + radius * nrm;
        const double area = radius * radius * std::sin(th) * dth * dph;
        const Vec3 u = axis.cross(r);
        const double un = u.dot(nrm);
        const Vec3 f = -(cn * un * nrm + ct * (u - un * nrm));
        torque += r.cross(f).dot(axis) * area;
      }
    }
  }
  return -torque;
}

}  // namespace

TEST_CASE("zero pressure gives zero damping") {
  const auto r = damping_rates(EllipsoidGeometry::sphere(85e-9), false, at(0.0));
  CHECK(r.gamma.norm() == 0.0);
  CHECK(rotational_damping(EllipsoidGeometry::dumbbell(85e-9), at(0.0)) == 0.0);
}

TEST_CASE("damping is exactly proportional to pressure") {
  for (const auto& g : {EllipsoidGeometry::sphere(85e-9), EllipsoidGeometry::spheroid(120e-9, 80e-9),
                        EllipsoidGeometry::dumbbell(85e-9)}) {
    for (auto [p1, p2] : {std::pair{1000.0, 2000.0}, std::pair{0.06, 6.0}, std::pair{3.7, 1234.5}}) {
      const Vec3 g1 = damping_rates(g, false, at(p1)).gamma, g2 = damping_rates(g, false, at(p2)).gamma;
      for (int k = 0; k < 3; ++k) CHECK(g1[k] / g2[k] == doctest::Approx(p1 / p2).epsilon(1e-14));
      CHECK(rotational_damping(g, at(p1)) / rotational_damping(g, at(p2)) == doctest::Approx(p1 / p2).epsilon(1e-14));
    }
  }
}

TEST_CASE("sphere damping is isotropic") {
  const Vec3 g = damping_rates(EllipsoidGeometry::sphere(85e-9), false, at(2000.0)).gamma;
  CHECK((g.maxCoeff() - g.minCoeff()) / g.minCoeff() < 1e-12);
}

TEST_CASE("the long axis has the smallest damping") {
  const Vec3 g = damping_rates(EllipsoidGeometry::spheroid(120e-9, 80e-9), false, at(2000.0)).gamma;
  CHECK(g.x() < g.y());
  CHECK(g.y() == doctest::Approx(g.z()).epsilon(1e-14));
  const Vec3 avg = damping_rates(EllipsoidGeometry::spheroid(120e-9, 80e-9), true, at(2000.0)).gamma;
  CHECK(avg.x() == doctest::Approx(avg.y()).epsilon(1e-14));
}

TEST_CASE("sphere damping follows the Epstein form") {
  const auto env = at(2000.0);
  const auto g = EllipsoidGeometry::sphere(85e-9);
  const double vbar = std::sqrt(8.0 * constants::boltzmann * env.temperature / (constants::pi * env.molecular_mass));
  const double n = env.pressure / (constants::boltzmann * env.temperature);
  const double delta = 1.0 + constants::pi * env.accommodation_coefficient / 8.0;
  const double expected = 4.0 / 3.0 * delta * constants::pi * g.r1 * g.r1 * n * env.molecular_mass * vbar / g.mass();
  CHECK(damping_rates(g, false, env).gamma.x() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("free-molecular validity flag") {
  const auto g = EllipsoidGeometry::sphere(85e-9);
  CHECK(damping_rates(g, false, at(100.0)).free_molecular);
  CHECK_FALSE(damping_rates(g, false, at(1e5)).free_molecular);
}

TEST_CASE("dumbbell rotational drag matches a surface quadrature") {
  const double r = 85e-9, acc = 0.9;
  const auto d = EllipsoidGeometry::dumbbell(r);
  const Vec3 c = rotational_drag_coefficients(d, acc);
  const std::vector<Vec3> centers = {Vec3(r, 0, 0), Vec3(-r, 0, 0)};
  const double spin_axis = quadrature_rotational_drag(centers, r, Vec3::UnitZ(), acc, 200);
  const double long_axis = quadrature_rotational_drag(centers, r, Vec3::UnitX(), acc, 200);
  CHECK(c.z() == doctest::Approx(spin_axis).epsilon(1e-3));
  CHECK(c.y() == doctest::Approx(spin_axis).epsilon(1e-3));
  CHECK(c.x() == doctest::Approx(long_axis).epsilon(1e-3));
  // Single sphere.
  const double sphere = quadrature_rotational_drag({Vec3::Zero()}, r, Vec3::UnitZ(), acc, 200);
  CHECK(rotational_drag_coefficients(EllipsoidGeometry::sphere(r), acc).z() == doctest::Approx(sphere).epsilon(1e-3));
}

TEST_CASE("ellipsoid rotational drag reduces to the sphere and matches quadrature near it") {
  const double acc = 0.9;
  const auto near_sphere = EllipsoidGeometry::spheroid(85.0001e-9, 85e-9);
  const Vec3 c = rotational_drag_coefficients(near_sphere, acc);
  const double sphere = rotational_drag_coefficients(EllipsoidGeometry::sphere(85e-9), acc).z();
  for (int k = 0; k < 3; ++k) CHECK(c[k] == doctest::Approx(sphere).epsilon(1e-4));
}

TEST_CASE("dumbbell spins down faster than a sphere of equal volume") {
  const double r = 85e-9;
  const auto d = EllipsoidGeometry::dumbbell(r);
  const auto s = EllipsoidGeometry::sphere(r * std::cbrt(2.0));
  CHECK(d.volume() == doctest::Approx(s.volume()).epsilon(1e-12));
  CHECK(rotational_damping(d, at(1.0)) > rotational_damping(s, at(1.0)));
}

TEST_CASE("thermal kick covariance obeys fluctuation-dissipation") {
  const auto env = at(2000.0);
  const double m = 5e-18, g = 1e5, dt = 1e-8;
  CHECK(thermal_kick_covariance(g, m, env, dt) ==
        doctest::Approx(2.0 * constants::boltzmann * env.temperature * m * g * dt).epsilon(1e-15));
  CHECK(thermal_kick_covariance(0.0, m, env, dt) == 0.0);
  CHECK(thermal_kick_covariance(g, m, env, 2 * dt) == doctest::Approx(2.0 * thermal_kick_covariance(g, m, env, dt)));
  try {
    thermal_kick_covariance(g, m, env, 0.0);
    FAIL("expected a domain error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::domain);
  }
}

TEST_CASE("environment validation") {
  GasEnvironment e;
  e.temperature = 0.0;
  CHECK_THROWS_AS(e.validate(), Error);
  e = GasEnvironment{};
  e.pressure = -1.0;
  CHECK_THROWS_AS(e.validate(), Error);
  e = GasEnvironment{};
  e.accommodation_coefficient = 1.5;
  CHECK_THROWS_AS(e.validate(), Error);
}
