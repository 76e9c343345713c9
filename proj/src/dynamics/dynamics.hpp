#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "common/physics.hpp"
#include "common/rng.hpp"
#include "gas/gas.hpp"
#include "optics/optics.hpp"

namespace lev::dynamics {

struct ParticleState {
  Vec3 position = Vec3::Zero();          // m
  Vec3 velocity = Vec3::Zero();          // m/s
  Quat orientation = Quat::Identity();   // body -> lab; body axis 1 is r1
  Vec3 angular_velocity = Vec3::Zero();  // rad/s, body frame
  optics::EllipsoidGeometry geometry;
  double mass = 0.0;    // kg
  double charge = 0.0;  // C

  static ParticleState at_rest(const optics::EllipsoidGeometry& geometry, const Vec3& position);
  // Throws domain error if the quaternion is not normalized or the mass does
  // not match density * volume.
  void validate() const;
};

enum class DragMode {
  aligned,     // body axes fixed along lab x, y, z (r1 along the polarization)
  averaged,    // isotropic orientation average of the drag tensor
  body_frame,  // drag tensor rotates with the body
};

const char* to_string(DragMode m) noexcept;
DragMode drag_mode_from_string(const std::string& s);

struct IntegratorOptions {
  DragMode drag = DragMode::aligned;
  double escape_factor = 3.0;  // escape radius in units of the larger waist
};

// Stability bound: dt must stay below this fraction of 1 / max(rate).
inline constexpr double kStabilityFraction = 0.05;

// One particle in one array under one gas environment. Splitting scheme per
// step (BAOAB): half kick, half drift, exact Ornstein-Uhlenbeck update of the
// velocities, half drift, half kick. Translation and rotation share it; the
// rotational drift is the free rigid-body flow, gyroscopic terms included.
class Integrator {
 public:
  Integrator(const optics::TrapArray& array, const gas::GasEnvironment& env, const optics::EllipsoidGeometry& geometry,
             double mass, std::size_t home_site, IntegratorOptions options = {});

  // Largest rate entering the stability bound (rad/s).
  double max_rate() const { return max_rate_; }
  double max_stable_dt() const { return kStabilityFraction / max_rate_; }

  // Advances `state` by dt. Throws step_size when dt violates the stability
  // bound and lost_particle when the particle leaves the escape radius.
  void step(ParticleState& state, double dt, RngStream& rng);

  const optics::TrapSite& home() const { return home_; }
  const Vec3& equilibrium() const { return equilibrium_; }
  const Vec3& trap_frequencies() const { return trap_omega_; }
  const Vec3& torsional_frequencies() const { return torsion_omega_; }
  const Vec3& translational_damping() const { return gamma_; }
  const Vec3& rotational_damping() const { return gamma_rot_; }
  const Vec3& inertia() const { return inertia_; }
  double escape_radius() const { return escape_radius_; }
  const optics::TrapField& field() const { return field_; }

 private:
  struct StepCoefficients {
    double dt = 0.0;
    Vec3 decay = Vec3::Ones();
    Vec3 kick = Vec3::Zero();
    Vec3 rot_decay = Vec3::Ones();
    Vec3 rot_kick = Vec3::Zero();
  };
  const StepCoefficients& coefficients(double dt);
  void refresh_forces(const ParticleState& state);

  optics::TrapField field_;
  optics::TrapSite home_;
  gas::GasEnvironment env_;
  IntegratorOptions options_;
  double mass_ = 0.0;
  Vec3 equilibrium_ = Vec3::Zero();
  Vec3 trap_omega_ = Vec3::Zero();
  Vec3 torsion_omega_ = Vec3::Zero();
  Vec3 gamma_ = Vec3::Zero();      // translational, per lab or body axis
  Vec3 gamma_rot_ = Vec3::Zero();  // body axes
  Vec3 inertia_ = Vec3::Ones();
  double escape_radius_ = 0.0;
  double max_rate_ = 0.0;
  StepCoefficients coeff_;

  // Force and torque at the last evaluated configuration.
  Vec3 cached_position_ = Vec3::Constant(std::numeric_limits<double>::quiet_NaN());
  Quat cached_orientation_ = Quat(0, 0, 0, 0);
  Vec3 cached_force_ = Vec3::Zero();
  Vec3 cached_torque_body_ = Vec3::Zero();
};

// Convenience single step; builds an Integrator on each call.
ParticleState step(const ParticleState& state, const optics::TrapArray& array, const gas::GasEnvironment& env,
                   double dt, RngStream& rng);

struct TrajectoryMetadata {
  double pressure_pa = 0.0;
  double temperature_k = 0.0;
  std::uint64_t seed = 0;
  int site_row = 0;
  int site_col = 0;
  optics::Polarization polarization = optics::Polarization::linear_x;
  std::string shape;  // "ellipsoid" or "dumbbell"
  double r1 = 0.0, r2 = 0.0, r3 = 0.0;
  Vec3 focus = Vec3::Zero();
  std::optional<double> lost_at_s;
  std::string label;
};

// Uniformly sampled channels. Channel 0 sample k is at time k / sample_rate.
struct Trajectory {
  double sample_rate = 0.0;  // Hz
  std::vector<std::string> channels;
  std::vector<std::string> units;
  std::vector<std::vector<double>> data;
  TrajectoryMetadata meta;

  std::size_t length() const { return data.empty() ? 0 : data.front().size(); }
  double duration() const { return sample_rate > 0.0 ? static_cast<double>(length()) / sample_rate : 0.0; }
  bool has_channel(const std::string& name) const;
  // Throws missing_channel.
  const std::vector<double>& channel(const std::string& name) const;
  void validate() const;
};

// Standard channel set: CoM displacement from the site focus along x, y, z;
// the cross-polarized torsion signal (alpha_xy / mean alpha, zero for
// isotropic bodies); and the unwrapped in-plane angle of the r1 axis.
inline const std::vector<std::string> kChannels = {"x", "y", "z", "torsion", "phase"};
inline const std::vector<std::string> kChannelUnits = {"m", "m", "m", "1", "rad"};

struct SimulationOptions {
  IntegratorOptions integrator;
  double dt_safety = 0.9;            // dt = dt_safety * stability bound (rounded to divide the sample period)
  double max_dt = 0.0;               // s, extra cap on the step; 0 leaves only the stability bound
  double burn_in = 0.0;              // s, simulated but not recorded
  std::size_t max_samples = 50'000'000;
  std::string label;
};

// Particle state drawn from the harmonic thermal distribution around the
// equilibrium of `site_index`, with the r1 axis along x.
ParticleState thermal_state(const optics::EllipsoidGeometry& geometry, const optics::TrapArray& array,
                            std::size_t site_index, const gas::GasEnvironment& env, RngStream& rng);

Trajectory simulate(const ParticleState& initial, const optics::TrapArray& array, const gas::GasEnvironment& env,
                    double duration, double sample_rate, std::uint64_t seed, const SimulationOptions& options = {});

// Steady spin rate (rad/s) where the circular-polarization drive balances
// rotational gas drag about the spin axis.
double terminal_rotation(const ParticleState& state, const optics::TrapSite& site, const gas::GasEnvironment& env);

// Drive coefficient that makes terminal_rotation() equal `target_omega`.
double calibrate_spin_drive(const optics::EllipsoidGeometry& geometry, const optics::TrapSite& site,
                            const gas::GasEnvironment& env, double target_omega);

// Total mechanical energy (kinetic + rotational + trap potential), J.
double mechanical_energy(const ParticleState& state, const Integrator& integrator);

// Trajectory file formats. The text form is comma-separated with comment
// metadata lines; the binary form stores the same schema in a JSON header
// followed by little-endian float64 rows.
inline constexpr const char* kTrajectorySchema = "levarray.trajectory/1";
void write_trajectory_text(const Trajectory& t, const std::string& path);
void write_trajectory_binary(const Trajectory& t, const std::string& path);
Trajectory read_trajectory(const std::string& path);  // detects the format

}  // namespace lev::dynamics
