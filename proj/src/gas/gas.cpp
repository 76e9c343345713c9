#include "gas/gas.hpp"

#include <boost/math/quadrature/gauss.hpp>
#include <cmath>

#include "common/error.hpp"

namespace lev::gas {

namespace {

using constants::boltzmann;
using constants::pi;
using optics::BodyKind;
using optics::EllipsoidGeometry;

double epstein_factor(double accommodation) { return 1.0 + pi * accommodation / 8.0; }

// Surface integral of the linearized stress over an ellipsoid rotating with
// unit angular velocity about body axis `axis`; returns the torque component
// along that axis per unit momentum flux (sign flipped to a drag coefficient).
double ellipsoid_rotational_coefficient(double a, double b, double c, double accommodation, int axis) {
  const SurfaceStress s = surface_stress(accommodation);
  const Vec3 omega = Vec3::Unit(axis);
  using Quad = boost::math::quadrature::gauss<double, 40>;
  auto over_phi = [&](double theta) {
    const double st = std::sin(theta), ct = std::cos(theta);
    auto integrand = [&](double phi) {
      const double sp = std::sin(phi), cp = std::cos(phi);
      const Vec3 r(a * st * cp, b * st * sp, c * ct);
      const Vec3 normal(b * c * st * st * cp, a * c * st * st * sp, a * b * st * ct);
      const double area = normal.norm();
      if (area == 0.0) return 0.0;
      const Vec3 n = normal / area;
      const Vec3 u = omega.cross(r);
      const double un = u.dot(n);
      const Vec3 ut = u - un * n;
      const Vec3 f = -(s.normal * un * n + s.tangential * ut);
      return r.cross(f)[axis] * area;
    };
    return Quad::integrate(integrand, 0.0, pi) + Quad::integrate(integrand, pi, 2.0 * pi);
  };
  return -Quad::integrate(over_phi, 0.0, pi);
}

}  // namespace

void GasEnvironment::validate() const {
  if (!(pressure >= 0.0) || !std::isfinite(pressure)) fail(ErrorCode::domain, "pressure must be >= 0");
  if (!(temperature > 0.0)) fail(ErrorCode::domain, "temperature must be > 0");
  if (!(molecular_mass > 0.0)) fail(ErrorCode::domain, "molecular mass must be > 0");
  if (!(accommodation_coefficient >= 0.0 && accommodation_coefficient <= 1.0))
    fail(ErrorCode::domain, "accommodation coefficient must lie in [0, 1]");
}

double GasEnvironment::mean_free_path() const {
  if (pressure <= 0.0) return std::numeric_limits<double>::infinity();
  return boltzmann * temperature / (std::sqrt(2.0) * pi * molecular_diameter * molecular_diameter * pressure);
}

double GasEnvironment::mean_molecular_speed() const {
  return std::sqrt(8.0 * boltzmann * temperature / (pi * molecular_mass));
}

double GasEnvironment::momentum_flux() const {
  return pressure * std::sqrt(8.0 * molecular_mass / (pi * boltzmann * temperature));
}

SurfaceStress surface_stress(double accommodation) {
  // Specular reflection contributes 1 to the normal term; diffuse re-emission
  // at the wall temperature contributes 1/2 + pi/8 normal and 1/4 tangential.
  return {1.0 - accommodation / 2.0 + accommodation * pi / 8.0, accommodation / 4.0};
}

Vec3 projected_areas(const EllipsoidGeometry& g) {
  if (g.kind == BodyKind::dumbbell) {
    const double disk = pi * g.r2 * g.r2;
    return Vec3(disk, 2.0 * disk, 2.0 * disk);
  }
  return Vec3(pi * g.r2 * g.r3, pi * g.r1 * g.r3, pi * g.r1 * g.r2);
}

Vec3 body_damping_rates(const EllipsoidGeometry& geometry, const GasEnvironment& env) {
  env.validate();
  geometry.validate();
  // Epstein: F = (4/3) delta A n m v_bar v for a sphere of cross-section A,
  // scaled per axis by the cross-section presented to the motion.
  const double scale = 4.0 / 3.0 * epstein_factor(env.accommodation_coefficient) * env.momentum_flux() / geometry.mass();
  return scale * projected_areas(geometry);
}

DampingRates damping_rates(const EllipsoidGeometry& geometry, bool orientation_averaged, const GasEnvironment& env) {
  DampingRates out;
  out.gamma = body_damping_rates(geometry, env);
  if (orientation_averaged) out.gamma.setConstant(out.gamma.mean());
  out.knudsen = env.mean_free_path() / geometry.r1;
  out.free_molecular = out.knudsen >= kFreeMolecularRatio;
  return out;
}

Vec3 rotational_drag_coefficients(const EllipsoidGeometry& g, double accommodation) {
  g.validate();
  const SurfaceStress s = surface_stress(accommodation);
  if (g.kind == BodyKind::dumbbell) {
    const double r4 = std::pow(g.r2, 4);
    const double spin = 8.0 * pi / 3.0 * s.tangential * r4;  // one sphere about its own centre
    // Each sphere translates at omega r with lever arm r and also spins.
    const double translate = 4.0 * pi / 3.0 * epstein_factor(accommodation) * r4;
    return Vec3(2.0 * spin, 2.0 * (translate + spin), 2.0 * (translate + spin));
  }
  if (g.r1 == g.r2 && g.r2 == g.r3) {
    const double c = 8.0 * pi / 3.0 * s.tangential * std::pow(g.r1, 4);
    return Vec3(c, c, c);
  }
  return Vec3(ellipsoid_rotational_coefficient(g.r1, g.r2, g.r3, accommodation, 0),
              ellipsoid_rotational_coefficient(g.r1, g.r2, g.r3, accommodation, 1),
              ellipsoid_rotational_coefficient(g.r1, g.r2, g.r3, accommodation, 2));
}

Vec3 rotational_damping_rates(const EllipsoidGeometry& geometry, const GasEnvironment& env) {
  env.validate();
  const Vec3 c = rotational_drag_coefficients(geometry, env.accommodation_coefficient);
  const auto inertia = optics::principal_moments(geometry);
  const double flux = env.momentum_flux();
  return Vec3(flux * c[0] / inertia[0], flux * c[1] / inertia[1], flux * c[2] / inertia[2]);
}

double rotational_damping(const EllipsoidGeometry& geometry, const GasEnvironment& env) {
  return rotational_damping_rates(geometry, env)[2];
}

double thermal_kick_covariance(double gamma, double mass, const GasEnvironment& env, double dt) {
  if (!(dt > 0.0)) fail(ErrorCode::domain, "time step must be positive");
  if (gamma < 0.0 || !(mass > 0.0)) fail(ErrorCode::domain, "damping must be >= 0 and mass > 0");
  return 2.0 * boltzmann * env.temperature * mass * gamma * dt;
}

}  // namespace lev::gas
