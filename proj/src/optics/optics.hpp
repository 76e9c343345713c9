#pragma once

#include <array>
#include <string>
#include <cstddef>
#include <vector>

#include "common/physics.hpp"

namespace lev::optics {

enum class Polarization { linear_x, circular };

const char* to_string(Polarization p) noexcept;
Polarization polarization_from_string(const std::string& s);

// How the semi-axes are realized physically. A dumbbell is two touching
// spheres of radius r2 == r3 with r1 == 2 * r2 along the body axis.
enum class BodyKind { ellipsoid, dumbbell };

inline constexpr double kSphericityTolerance = 0.05;
inline constexpr double kForceTolerance = 1e-18;  // N

struct EllipsoidGeometry {
  double r1 = 85e-9;  // semi-axes, m; r1 >= r2 >= r3 > 0
  double r2 = 85e-9;
  double r3 = 85e-9;
  double material_density = 1850.0;     // kg/m^3, silica
  double relative_permittivity = 2.1;   // silica at 1064 nm
  BodyKind kind = BodyKind::ellipsoid;

  static EllipsoidGeometry sphere(double radius);
  static EllipsoidGeometry spheroid(double r_long, double r_short);
  static EllipsoidGeometry dumbbell(double sphere_radius);

  // Throws domain error when the ordering or positivity invariants fail.
  void validate() const;
  double volume() const;
  double mass() const { return material_density * volume(); }
  bool is_sphere(double tolerance = kSphericityTolerance) const { return (r1 - r3) / r1 < tolerance; }
  // True when all principal polarizabilities coincide exactly.
  bool is_isotropic() const { return kind == BodyKind::ellipsoid && r1 == r2 && r2 == r3; }
};

// Principal polarizabilities along body axes 1, 2, 3 (SI, C m^2 / V).
std::array<double, 3> principal_polarizabilities(const EllipsoidGeometry& g);

// Principal moments of inertia about body axes 1, 2, 3 (kg m^2).
std::array<double, 3> principal_moments(const EllipsoidGeometry& g);

// Depolarization factors of a general ellipsoid; they sum to one.
std::array<double, 3> depolarization_factors(double r1, double r2, double r3);

struct TrapSite {
  Vec3 focus = Vec3::Zero();  // m
  double power = 0.2;         // W
  Polarization polarization = Polarization::linear_x;
  double waist_x = 0.0;  // m, 1/e^2 intensity radius
  double waist_y = 0.0;
  double rayleigh_range = 0.0;
  // Lumped scattering + photophoretic force along +z (propagation axis), N.
  double axial_force = 0.0;
  // Spin torque per watt per unit in-plane anisotropy under circular
  // polarization (s). Calibration constant, see calibrate_spin_drive().
  double spin_drive_coefficient = 0.0;

  void validate() const;
  double peak_intensity() const;  // W/m^2 at the focus
};

struct TrapArraySpec {
  double wavelength = 1064e-9;
  double numerical_aperture = 0.95;
  int rows = 3;
  int cols = 3;
  double column_pitch = 1.77e-6;  // x spacing
  double row_pitch = 2.66e-6;     // y spacing
  double power = 0.2;
  Polarization polarization = Polarization::linear_x;
  double waist_anisotropy = 1.2;  // waist_x / waist_y for linear_x
  double axial_force = 0.0;
  double spin_drive_coefficient = 0.0;  // 0 selects the calibrated default
  double gravity = constants::standard_gravity;
};

// Default spin-drive coefficient, fitted once so that the default dumbbell
// (two 170 nm silica spheres, 200 mW) spins at 1.75 GHz at 0.06 Pa.
inline constexpr double kDefaultSpinDriveCoefficient = 2.7808753607688302e-19;  // s

struct TrapArray {
  int rows = 0;
  int cols = 0;
  double column_pitch = 0.0;
  double row_pitch = 0.0;
  double wavelength = 0.0;
  double numerical_aperture = 0.0;
  double gravity = constants::standard_gravity;
  std::vector<TrapSite> sites;  // row-major

  static TrapArray make_grid(const TrapArraySpec& spec);
  // Single-site array containing `site`, used by single-trap queries.
  static TrapArray single(const TrapSite& site, double wavelength = 1064e-9,
                          double gravity = constants::standard_gravity);

  void validate() const;
  bool empty() const { return sites.empty(); }
  std::size_t index(int row, int col) const { return static_cast<std::size_t>(row * cols + col); }
  const TrapSite& at(int row, int col) const { return sites.at(index(row, col)); }
  // Index of the site whose focus is laterally closest to `position`.
  std::size_t nearest_site(const Vec3& position) const;
};

// Paraxial Gaussian waist for a given wavelength and numerical aperture.
double gaussian_waist(double wavelength, double numerical_aperture);

// Polarizability entering the CoM trapping potential: the field-aligned value
// for linear polarization, the in-plane mean for circular.
double trapping_polarizability(const EllipsoidGeometry& g, Polarization p);

// Optical response of one body, precomputed from its geometry.
struct DipoleBody {
  std::array<double, 3> alpha{};  // principal polarizabilities
  Vec3 shifted = Vec3::Zero();     // alpha_k - min(alpha)
  double base = 0.0;               // min(alpha)
  bool isotropic = true;

  explicit DipoleBody(const EllipsoidGeometry& g);
  // (R A R^T) - base * identity, exactly zero for isotropic bodies.
  Mat3 anisotropic_tensor(const Quat& orientation) const;
};

// Evaluates potential, force, Hessian, and torque for one body in one array.
// Construction does the expensive per-body work once.
class TrapField {
 public:
  TrapField(const TrapArray& array, const EllipsoidGeometry& geometry, double mass);

  // Copy keeping only sites whose focus lies within `radius` (lateral) of
  // `center`. Contributions of dropped sites must be below double precision.
  TrapField restricted_to(const Vec3& center, double radius) const;

  struct Sample {
    double intensity = 0.0;
    Vec3 gradient = Vec3::Zero();
  };
  Sample sample(const Vec3& position) const;

  double intensity(const Vec3& position) const;
  // Potential and force use the trapping polarizability of the aligned body.
  double potential(const Vec3& position) const;
  Vec3 force(const Vec3& position) const;
  Mat3 hessian(const Vec3& position) const;
  // Optical torque at `position`, using the polarization and drive of the
  // nearest site.
  Vec3 torque(const Quat& orientation, const Vec3& position) const;

  // Orientation-resolved polarizability along the field: x^T A_lab x for
  // linear polarization, the in-plane mean for circular.
  double polarizability(const Quat& orientation) const;
  // Same, from a precomputed anisotropic tensor.
  double polarizability(const Mat3& anisotropic) const;
  // alpha / (2 c eps0) for a given polarizability.
  static double potential_scale(double alpha);
  double axial_force(const Vec3& position) const { return nearest(position).axial_force; }
  double gravity() const { return gravity_; }
  const TrapSite& nearest(const Vec3& position) const;

  const std::vector<TrapSite>& sites() const { return sites_; }
  const DipoleBody& body() const { return body_; }
  double mass() const { return mass_; }

 private:
  // Per-site constants for the per-step force evaluation.
  struct Beam {
    Vec3 focus;
    double inv_wx2, inv_wy2, inv_zr2, peak;
  };
  void build_beams();

  std::vector<TrapSite> sites_;
  std::vector<Beam> beams_;
  DipoleBody body_;
  double prefactor_ = 0.0;  // alpha_trap / (2 c eps0)
  double mass_ = 0.0;
  double gravity_ = 0.0;
};

Vec3 optical_torque_for(const Quat& orientation, const TrapSite& site, const DipoleBody& body, double intensity);
// `long_axis` is the lab direction of body axis 1.
Vec3 optical_torque_for(const Mat3& anisotropic, const Vec3& long_axis, const TrapSite& site, const DipoleBody& body,
                        double intensity);

// Time-averaged intensity (W/m^2).
double site_intensity(const TrapSite& site, const Vec3& position);
double array_intensity(const TrapArray& array, const Vec3& position);

double trap_potential(const Vec3& position, const TrapArray& array, const EllipsoidGeometry& geometry);
Vec3 trap_force(const Vec3& position, const TrapArray& array, const EllipsoidGeometry& geometry);
// Analytic Hessian of trap_potential (J/m^2).
Mat3 potential_hessian(const Vec3& position, const TrapArray& array, const EllipsoidGeometry& geometry);

// Newton iteration on trap_force starting at the focus of `site_index`.
// Throws no_trap when no stable equilibrium exists near that focus.
Vec3 find_equilibrium(const TrapArray& array, const EllipsoidGeometry& geometry, std::size_t site_index);

// Angular CoM frequencies (rad/s) along x, y, z of a single site.
Vec3 trap_frequencies(const TrapSite& site, const EllipsoidGeometry& geometry, double mass,
                      double gravity = constants::standard_gravity);

// Torque on the particle where the local intensity is `intensity`; the
// circular spin drive scales with intensity / peak intensity.
Vec3 optical_torque_at(const Quat& orientation, const TrapSite& site, const EllipsoidGeometry& geometry,
                       double intensity);
// Torque at the focus of `site`.
Vec3 optical_torque(const Quat& orientation, const TrapSite& site, const EllipsoidGeometry& geometry);

// Magnitude of the circular-polarization spin torque with the r1 axis in the
// focal plane (N m).
double spin_drive_torque(const TrapSite& site, const EllipsoidGeometry& geometry);

// Small-angle torsional stiffness (N m / rad) about lab axis z and y for the
// r1 axis aligned with x under linear polarization at the focus.
Vec3 torsional_stiffness(const TrapSite& site, const EllipsoidGeometry& geometry);

}  // namespace lev::optics
