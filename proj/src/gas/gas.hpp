#pragma once

#include "common/physics.hpp"
#include "optics/optics.hpp"

namespace lev::gas {

struct GasEnvironment {
  double pressure = 2000.0;               // Pa
  double temperature = 296.0;             // K
  double molecular_mass = 4.8e-26;        // kg, air
  double accommodation_coefficient = 0.9;
  double molecular_diameter = 3.7e-10;    // m, for the mean free path only

  void validate() const;
  double mean_free_path() const;
  double mean_molecular_speed() const;
  // n m v_bar: molecular momentum flux scale entering all drag laws (kg/m^2/s).
  double momentum_flux() const;
};

// Free-molecular validity: mean free path at least this many times r1.
inline constexpr double kFreeMolecularRatio = 10.0;

struct DampingRates {
  Vec3 gamma = Vec3::Zero();  // rad/s along lab x, y, z
  bool free_molecular = true;
  double knudsen = 0.0;  // mean free path / r1
};

// Translational CoM damping. With orientation_averaged == false the body axes
// 1, 2, 3 are taken along lab x, y, z (r1 aligned with the linear
// polarization); with true the drag tensor is averaged over orientations.
DampingRates damping_rates(const optics::EllipsoidGeometry& geometry, bool orientation_averaged,
                           const GasEnvironment& env);

// Per-axis damping in the body frame (rad/s).
Vec3 body_damping_rates(const optics::EllipsoidGeometry& geometry, const GasEnvironment& env);

// Projected cross-sections normal to body axes 1, 2, 3 (m^2).
Vec3 projected_areas(const optics::EllipsoidGeometry& geometry);

// Rotational drag torque per unit angular velocity and per unit momentum flux
// about body axes 1, 2, 3 (m^4): tau_k = -momentum_flux * C_k * omega_k.
Vec3 rotational_drag_coefficients(const optics::EllipsoidGeometry& geometry, double accommodation);

// Rotational damping rates about body axes 1, 2, 3 (1/s).
Vec3 rotational_damping_rates(const optics::EllipsoidGeometry& geometry, const GasEnvironment& env);

// Rotational damping about the spin axis (body axis 3, perpendicular to r1).
double rotational_damping(const optics::EllipsoidGeometry& geometry, const GasEnvironment& env);

// Momentum-space variance of one thermal kick, 2 kB T m gamma dt.
double thermal_kick_covariance(double gamma, double mass, const GasEnvironment& env, double dt);

// Linearized free-molecular stress coefficients for a surface element with
// wall velocity u: force per area = -n m v_bar (c_n u_n n + c_t u_t).
struct SurfaceStress {
  double normal = 0.0;
  double tangential = 0.0;
};
SurfaceStress surface_stress(double accommodation);

}  // namespace lev::gas
