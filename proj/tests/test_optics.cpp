#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>

#include "doctest.h"

#include "common/error.hpp"
#include "optics/optics.hpp"

using namespace lev;
using namespace lev::optics;

namespace {

TrapArraySpec single_spec() {
  TrapArraySpec s;
  s.rows = s.cols = 1;
  return s;
}

// Central-difference gradient of the potential.
Vec3 fd_gradient(const Vec3& p, const TrapArray& a, const EllipsoidGeometry& g, double h) {
  Vec3 out;
  for (int k = 0; k < 3; ++k) {
    Vec3 e = Vec3::Zero();
    e[k] = h;
    out[k] = (trap_potential(p + e, a, g) - trap_potential(p - e, a, g)) / (2.0 * h);
  }
  return out;
}

Quat about(const Vec3& axis, double angle) { return Quat(Eigen::AngleAxisd(angle, axis.normalized())); }

// Orientation energy of the induced dipole in a time-averaged linear x field
// of intensity I, from the principal polarizabilities alone.
double orientation_energy(const Quat& q, const EllipsoidGeometry& g, double intensity) {
  const auto a = principal_polarizabilities(g);
  const Mat3 lab = q.toRotationMatrix() * Vec3(a[0], a[1], a[2]).asDiagonal() * q.toRotationMatrix().transpose();
  return -lab(0, 0) * intensity / (2.0 * constants::speed_of_light * constants::vacuum_permittivity);
}

}  // namespace

TEST_CASE("single focus is the potential minimum without gravity or axial force") {
  auto spec = single_spec();
  spec.gravity = 0.0;
  spec.axial_force = 0.0;
  const auto a = TrapArray::make_grid(spec);
  const auto g = EllipsoidGeometry::sphere(85e-9);
  const Vec3 f = a.sites[0].focus;
  const double u0 = trap_potential(f, a, g);
  for (int i = -4; i <= 4; ++i)
    for (int j = -4; j <= 4; ++j)
      for (int k = -4; k <= 4; ++k) {
        if (i == 0 && j == 0 && k == 0) continue;
        const Vec3 p = f + Vec3(i * 50e-9, j * 50e-9, k * 150e-9);
        CHECK(trap_potential(p, a, g) > u0);
      }
}

TEST_CASE("3x3 array at 200 mW has nine distinct local minima on the lattice") {
  TrapArraySpec spec;  // 3x3, 1.77 / 2.66 um, 200 mW, 1064 nm, NA 0.95
  const auto a = TrapArray::make_grid(spec);
  const auto g = EllipsoidGeometry::sphere(85e-9);
  std::vector<Vec3> minima;
  for (std::size_t i = 0; i < a.sites.size(); ++i) {
    const Vec3 eq = find_equilibrium(a, g, i);
    const Mat3 h = potential_hessian(eq, a, g);
    Eigen::SelfAdjointEigenSolver<Mat3> es(0.5 * (h + h.transpose()));
    CHECK(es.eigenvalues().minCoeff() > 0.0);
    CHECK((eq.head<2>() - a.sites[i].focus.head<2>()).norm() < 0.05 * spec.column_pitch);
    minima.push_back(eq);
  }
  for (std::size_t i = 0; i < minima.size(); ++i)
    for (std::size_t j = i + 1; j < minima.size(); ++j) CHECK((minima[i] - minima[j]).norm() > 1e-6);
}

TEST_CASE("potential is mirror symmetric about an isolated focus") {
  const auto a = TrapArray::make_grid(single_spec());
  const auto g = EllipsoidGeometry::spheroid(110e-9, 75e-9);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-400e-9, 400e-9);
  for (int i = 0; i < 50; ++i) {
    const Vec3 p(u(rng), u(rng), u(rng));
    const Vec3 m(-p.x(), p.y(), p.z());
    CHECK(trap_potential(p, a, g) == doctest::Approx(trap_potential(m, a, g)).epsilon(1e-12));
  }
}

TEST_CASE("force matches the finite-difference gradient plus the axial constant") {
  TrapArraySpec spec;
  spec.axial_force = 2e-15;
  const auto a = TrapArray::make_grid(spec);
  const auto g = EllipsoidGeometry::spheroid(120e-9, 80e-9);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> ux(-0.5e-6, 2 * spec.column_pitch + 0.5e-6),
      uy(-0.5e-6, 2 * spec.row_pitch + 0.5e-6), uz(-1e-6, 1e-6);
  for (int i = 0; i < 100; ++i) {
    const Vec3 p(ux(rng), uy(rng), uz(rng));
    const Vec3 f = trap_force(p, a, g) - Vec3(0, 0, spec.axial_force);
    const Vec3 fd = -fd_gradient(p, a, g, 1e-11);
    CHECK((f - fd).norm() / fd.norm() < 1e-4);
  }
}

TEST_CASE("force at the equilibrium is below the force tolerance") {
  const auto a = TrapArray::make_grid(TrapArraySpec{});
  const auto g = EllipsoidGeometry::sphere(85e-9);
  for (std::size_t i = 0; i < a.sites.size(); ++i)
    CHECK(trap_force(find_equilibrium(a, g, i), a, g).norm() < kForceTolerance);
}

TEST_CASE("doubling power doubles the force without gravity or axial force") {
  auto spec = single_spec();
  spec.gravity = 0.0;
  auto spec2 = spec;
  spec2.power = 2.0 * spec.power;
  const auto a1 = TrapArray::make_grid(spec), a2 = TrapArray::make_grid(spec2);
  const auto g = EllipsoidGeometry::sphere(85e-9);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-500e-9, 500e-9);
  for (int i = 0; i < 30; ++i) {
    const Vec3 p(u(rng), u(rng), u(rng));
    const Vec3 f1 = trap_force(p, a1, g), f2 = trap_force(p, a2, g);
    CHECK((f2 - 2.0 * f1).norm() <= 1e-12 * f2.norm());
  }
}

TEST_CASE("non-finite position is a domain error") {
  const auto a = TrapArray::make_grid(single_spec());
  const auto g = EllipsoidGeometry::sphere(85e-9);
  const Vec3 bad(std::nan(""), 0, 0);
  CHECK_THROWS_AS(trap_potential(bad, a, g), Error);
  try {
    trap_force(bad, a, g);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::domain);
  }
}

TEST_CASE("geometry invariants") {
  EllipsoidGeometry g;
  g.r1 = 50e-9;
  g.r2 = 60e-9;
  CHECK_THROWS_AS(g.validate(), Error);
  CHECK(EllipsoidGeometry::sphere(85e-9).is_sphere());
  CHECK_FALSE(EllipsoidGeometry::spheroid(120e-9, 80e-9).is_sphere());
  const auto d = depolarization_factors(120e-9, 80e-9, 70e-9);
  CHECK(d[0] + d[1] + d[2] == doctest::Approx(1.0).epsilon(1e-12));
  const auto s = depolarization_factors(85e-9, 85e-9, 85e-9);
  for (double v : s) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("trap frequencies: polarization ordering and symmetric beams") {
  const auto g = EllipsoidGeometry::sphere(85e-9);
  const auto lin = TrapArray::make_grid(single_spec());
  const Vec3 w = trap_frequencies(lin.sites[0], g, g.mass());
  CHECK(w.x() < w.y());

  auto cs = single_spec();
  cs.polarization = Polarization::circular;
  const auto circ = TrapArray::make_grid(cs);
  const Vec3 wc = trap_frequencies(circ.sites[0], g, g.mass());
  CHECK(std::abs(wc.x() - wc.y()) <= 1e-9 * wc.y());
}

TEST_CASE("trap frequencies agree with a finite-difference Hessian") {
  const auto g = EllipsoidGeometry::sphere(85e-9);
  const auto a = TrapArray::make_grid(single_spec());
  const Vec3 w = trap_frequencies(a.sites[0], g, g.mass());
  const Vec3 eq = find_equilibrium(a, g, 0);
  const double h = 1e-10;
  for (int k = 0; k < 3; ++k) {
    Vec3 e = Vec3::Zero();
    e[k] = h;
    const double kk = -(trap_force(eq + e, a, g)[k] - trap_force(eq - e, a, g)[k]) / (2.0 * h);
    CHECK(std::sqrt(kk / g.mass()) == doctest::Approx(w[k]).epsilon(1e-6));
  }
}

TEST_CASE("radial frequency ratio approaches one as the waist anisotropy vanishes") {
  const auto g = EllipsoidGeometry::sphere(85e-9);
  double last = 0.0;
  for (double an : {1.4, 1.2, 1.1, 1.01, 1.0}) {
    auto spec = single_spec();
    spec.waist_anisotropy = an;
    const Vec3 w = trap_frequencies(TrapArray::make_grid(spec).sites[0], g, g.mass());
    const double ratio = w.x() / w.y();
    if (an > 1.0) CHECK(ratio < 1.0);
    CHECK(ratio > last);
    last = ratio;
  }
  CHECK(last == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("interior sites of a large array see the same potential landscape") {
  TrapArraySpec spec;
  spec.rows = spec.cols = 5;
  const auto a = TrapArray::make_grid(spec);
  const auto g = EllipsoidGeometry::sphere(85e-9);
  const Vec3 center = a.at(2, 2).focus;
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-300e-9, 300e-9);
  for (int i = 0; i < 20; ++i) {
    const Vec3 d(u(rng), u(rng), u(rng));
    const double u0 = trap_potential(center + d, a, g);
    for (auto [r, c] : {std::pair{1, 2}, std::pair{2, 1}, std::pair{3, 3}}) {
      const double u1 = trap_potential(a.at(r, c).focus + d, a, g);
      CHECK(std::abs(u1 - u0) <= 0.01 * std::abs(u0));
    }
  }
}

TEST_CASE("spheres feel no torque in either polarization") {
  const auto g = EllipsoidGeometry::sphere(85e-9);
  std::mt19937_64 rng(2);
  for (auto pol : {Polarization::linear_x, Polarization::circular}) {
    auto spec = single_spec();
    spec.polarization = pol;
    const auto a = TrapArray::make_grid(spec);
    for (int i = 0; i < 20; ++i) {
      const Quat q = Quat::UnitRandom();
      CHECK(optical_torque(q, a.sites[0], g).norm() == 0.0);
    }
  }
}

TEST_CASE("linear polarization aligns the long axis") {
  const auto g = EllipsoidGeometry::spheroid(120e-9, 80e-9);
  const auto a = TrapArray::make_grid(single_spec());
  const auto& site = a.sites[0];
  CHECK(optical_torque(Quat::Identity(), site, g).norm() < 1e-30);
  // Rotating r1 by +theta about z must produce a torque of opposite sign.
  CHECK(optical_torque(about(Vec3::UnitZ(), 0.1), site, g).z() < 0.0);
  CHECK(optical_torque(about(Vec3::UnitZ(), -0.1), site, g).z() > 0.0);
  CHECK(optical_torque(about(Vec3::UnitY(), 0.1), site, g).y() < 0.0);
}

TEST_CASE("torque matches the finite-difference orientation energy") {
  const auto g = EllipsoidGeometry::spheroid(130e-9, 75e-9);
  const auto a = TrapArray::make_grid(single_spec());
  const auto& site = a.sites[0];
  const double intensity = site.peak_intensity();
  for (const Vec3& axis : {Vec3(Vec3::UnitZ()), Vec3(Vec3::UnitY()), Vec3(1.0, 2.0, 0.5)}) {
    for (double theta : {0.05, 0.3, 0.9, 2.0}) {
      const Vec3 n = axis.normalized();
      const double h = 1e-5;
      const double dU = (orientation_energy(about(n, theta + h), g, intensity) -
                         orientation_energy(about(n, theta - h), g, intensity)) /
                        (2.0 * h);
      const double tau = optical_torque_at(about(n, theta), site, g, intensity).dot(n);
      CHECK(tau == doctest::Approx(-dU).epsilon(1e-4));
    }
  }
}

TEST_CASE("circular polarization drives a spin about the beam axis") {
  auto spec = single_spec();
  spec.polarization = Polarization::circular;
  const auto a = TrapArray::make_grid(spec);
  const auto g = EllipsoidGeometry::dumbbell(85e-9);
  const Vec3 t = optical_torque(Quat::Identity(), a.sites[0], g);
  CHECK(t.z() > 0.0);
  CHECK(t.z() == doctest::Approx(spin_drive_torque(a.sites[0], g)).epsilon(1e-12));
  // Proportional to power.
  auto spec2 = spec;
  spec2.power *= 2.0;
  const auto a2 = TrapArray::make_grid(spec2);
  CHECK(optical_torque(Quat::Identity(), a2.sites[0], g).z() == doctest::Approx(2.0 * t.z()).epsilon(1e-12));
}

TEST_CASE("non-normalized quaternion is a domain error") {
  const auto a = TrapArray::make_grid(single_spec());
  const auto g = EllipsoidGeometry::spheroid(120e-9, 80e-9);
  const Quat q(2.0, 0.0, 0.0, 0.0);
  try {
    optical_torque(q, a.sites[0], g);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::domain);
  }
}

TEST_CASE("invalid array specifications") {
  TrapArraySpec s;
  s.numerical_aperture = 1.2;
  CHECK_THROWS_AS(TrapArray::make_grid(s), Error);
  s = TrapArraySpec{};
  s.power = -1.0;
  CHECK_THROWS_AS(TrapArray::make_grid(s), Error);
  s = TrapArraySpec{};
  s.rows = 0;
  CHECK_THROWS_AS(TrapArray::make_grid(s), Error);
}
