#include "optics/optics.hpp"

#include <Eigen/Eigenvalues>
#include <boost/math/special_functions/ellint_rd.hpp>
#include <cmath>
#include <limits>
#include <sstream>

#include "common/error.hpp"

namespace lev::optics {

namespace {

using constants::pi;

constexpr double kIntensityPrefactorToField = 1.0 / (constants::speed_of_light * constants::vacuum_permittivity);

// Beyond this exponent a site contributes below 1e-18 of its peak intensity.
constexpr double kExponentCutoff = 41.5;

bool finite(const Vec3& v) { return std::isfinite(v.x()) && std::isfinite(v.y()) && std::isfinite(v.z()); }

void check_position(const Vec3& position) {
  if (!finite(position)) fail(ErrorCode::domain, "position is not finite");
}

struct SiteTerms {
  double intensity = 0.0;
  Vec3 grad_log = Vec3::Zero();
  Mat3 hess_log = Mat3::Zero();
};

// Intensity of an elliptical paraxial Gaussian with a common Rayleigh range:
// I = I0 g exp(-2 g Q), g = 1 / (1 + z^2/zR^2), Q = x^2/wx^2 + y^2/wy^2.
// Derivatives are returned for L = ln I.
enum class Order { value, gradient, hessian };

SiteTerms site_terms(const TrapSite& s, const Vec3& position, Order order) {
  SiteTerms t;
  const Vec3 d = position - s.focus;
  const double wx2 = s.waist_x * s.waist_x;
  const double wy2 = s.waist_y * s.waist_y;
  const double zr2 = s.rayleigh_range * s.rayleigh_range;
  const double g = 1.0 / (1.0 + d.z() * d.z() / zr2);
  const double q = d.x() * d.x() / wx2 + d.y() * d.y() / wy2;
  const double expo = 2.0 * g * q;
  if (expo > kExponentCutoff) return t;
  t.intensity = s.peak_intensity() * g * std::exp(-expo);
  if (order == Order::value) return t;

  const double gp = -2.0 * d.z() * g * g / zr2;
  t.grad_log = Vec3(-4.0 * g * d.x() / wx2, -4.0 * g * d.y() / wy2, -2.0 * d.z() * g / zr2 - 2.0 * gp * q);
  if (order == Order::gradient) return t;
  const double gpp = -2.0 * g * g / zr2 - 4.0 * d.z() * g * gp / zr2;
  t.hess_log(0, 0) = -4.0 * g / wx2;
  t.hess_log(1, 1) = -4.0 * g / wy2;
  t.hess_log(0, 2) = t.hess_log(2, 0) = -4.0 * gp * d.x() / wx2;
  t.hess_log(1, 2) = t.hess_log(2, 1) = -4.0 * gp * d.y() / wy2;
  t.hess_log(2, 2) = -2.0 * g / zr2 - 2.0 * d.z() * gp / zr2 - 2.0 * gpp * q;
  return t;
}

void check_array(const TrapArray& array) {
  if (array.empty()) fail(ErrorCode::invalid_argument, "trap array has no sites");
}

void check_orientation(const Quat& q) {
  if (std::abs(q.norm() - 1.0) > 1e-9) fail(ErrorCode::domain, "orientation quaternion is not normalized");
}

}  // namespace

const char* to_string(Polarization p) noexcept {
  return p == Polarization::linear_x ? "linear_x" : "circular";
}

Polarization polarization_from_string(const std::string& s) {
  if (s == "linear_x" || s == "linear") return Polarization::linear_x;
  if (s == "circular") return Polarization::circular;
  fail(ErrorCode::invalid_argument, "unknown polarization '" + s + "'");
}

EllipsoidGeometry EllipsoidGeometry::sphere(double radius) {
  EllipsoidGeometry g;
  g.r1 = g.r2 = g.r3 = radius;
  return g;
}

EllipsoidGeometry EllipsoidGeometry::spheroid(double r_long, double r_short) {
  EllipsoidGeometry g;
  g.r1 = r_long;
  g.r2 = g.r3 = r_short;
  return g;
}

EllipsoidGeometry EllipsoidGeometry::dumbbell(double sphere_radius) {
  EllipsoidGeometry g;
  g.r1 = 2.0 * sphere_radius;
  g.r2 = g.r3 = sphere_radius;
  g.kind = BodyKind::dumbbell;
  return g;
}

void EllipsoidGeometry::validate() const {
  if (!(r3 > 0.0) || !(r2 >= r3) || !(r1 >= r2))
    fail(ErrorCode::domain, "ellipsoid semi-axes must satisfy r1 >= r2 >= r3 > 0");
  if (!(material_density > 0.0) || !(relative_permittivity > 1.0))
    fail(ErrorCode::domain, "material density must be positive and permittivity above one");
  if (kind == BodyKind::dumbbell && (r2 != r3 || std::abs(r1 - 2.0 * r2) > 1e-12 * r1))
    fail(ErrorCode::domain, "dumbbell requires r1 = 2 r2 = 2 r3");
}

double EllipsoidGeometry::volume() const { return 4.0 / 3.0 * pi * r1 * r2 * r3; }

std::array<double, 3> depolarization_factors(double r1, double r2, double r3) {
  const double a2 = r1 * r1, b2 = r2 * r2, c2 = r3 * r3;
  const double pref = r1 * r2 * r3 / 3.0;
  using boost::math::ellint_rd;
  return {pref * ellint_rd(b2, c2, a2), pref * ellint_rd(a2, c2, b2), pref * ellint_rd(a2, b2, c2)};
}

std::array<double, 3> principal_polarizabilities(const EllipsoidGeometry& g) {
  const double eps0 = constants::vacuum_permittivity;
  const double chi = g.relative_permittivity - 1.0;
  if (g.kind == BodyKind::dumbbell) {
    // Two coupled point dipoles at separation d = 2r.
    const double r = g.r2;
    const double single = 4.0 * pi * eps0 * r * r * r * chi / (g.relative_permittivity + 2.0);
    const double d = 2.0 * r;
    const double coupling = single / (4.0 * pi * eps0 * d * d * d);
    const double parallel = 2.0 * single / (1.0 - 2.0 * coupling);
    const double perpendicular = 2.0 * single / (1.0 + coupling);
    return {parallel, perpendicular, perpendicular};
  }
  if (g.r1 == g.r2 && g.r2 == g.r3) {
    const double a = 4.0 * pi * eps0 * g.r1 * g.r1 * g.r1 * chi / (g.relative_permittivity + 2.0);
    return {a, a, a};
  }
  const auto l = depolarization_factors(g.r1, g.r2, g.r3);
  const double v = g.volume();
  std::array<double, 3> out{};
  for (int i = 0; i < 3; ++i) out[i] = eps0 * v * chi / (1.0 + l[i] * chi);
  return out;
}

std::array<double, 3> principal_moments(const EllipsoidGeometry& g) {
  const double m = g.mass();
  if (g.kind == BodyKind::dumbbell) {
    const double r2 = g.r2 * g.r2;
    return {0.4 * m * r2, 1.4 * m * r2, 1.4 * m * r2};
  }
  const double a2 = g.r1 * g.r1, b2 = g.r2 * g.r2, c2 = g.r3 * g.r3;
  return {m * (b2 + c2) / 5.0, m * (a2 + c2) / 5.0, m * (a2 + b2) / 5.0};
}

double gaussian_waist(double wavelength, double numerical_aperture) {
  return wavelength / (pi * numerical_aperture);
}

double trapping_polarizability(const EllipsoidGeometry& g, Polarization p) {
  const auto a = principal_polarizabilities(g);
  return p == Polarization::linear_x ? a[0] : 0.5 * (a[0] + a[1]);
}

void TrapSite::validate() const {
  if (!(power > 0.0)) fail(ErrorCode::domain, "trap power must be positive");
  if (!(waist_x > 0.0) || !(waist_y > 0.0) || !(rayleigh_range > 0.0))
    fail(ErrorCode::domain, "waists and Rayleigh range must be positive");
  if (polarization == Polarization::linear_x && waist_x < waist_y)
    fail(ErrorCode::domain, "linear_x polarization requires waist_x >= waist_y");
  if (!finite(focus)) fail(ErrorCode::domain, "site focus is not finite");
}

double TrapSite::peak_intensity() const { return 2.0 * power / (pi * waist_x * waist_y); }

TrapArray TrapArray::make_grid(const TrapArraySpec& spec) {
  if (spec.rows <= 0 || spec.cols <= 0) fail(ErrorCode::invalid_argument, "array needs at least one row and column");
  if (!(spec.wavelength > 0.0)) fail(ErrorCode::domain, "wavelength must be positive");
  if (!(spec.numerical_aperture > 0.0 && spec.numerical_aperture < 1.0))
    fail(ErrorCode::domain, "numerical aperture must lie in (0, 1)");
  if (!(spec.column_pitch > 0.0) || !(spec.row_pitch > 0.0)) fail(ErrorCode::domain, "pitches must be positive");
  if (spec.waist_anisotropy < 1.0) fail(ErrorCode::domain, "waist anisotropy must be >= 1");

  TrapArray a;
  a.rows = spec.rows;
  a.cols = spec.cols;
  a.column_pitch = spec.column_pitch;
  a.row_pitch = spec.row_pitch;
  a.wavelength = spec.wavelength;
  a.numerical_aperture = spec.numerical_aperture;
  a.gravity = spec.gravity;

  const double w0 = gaussian_waist(spec.wavelength, spec.numerical_aperture);
  TrapSite proto;
  proto.power = spec.power;
  proto.polarization = spec.polarization;
  proto.waist_y = w0;
  proto.waist_x = spec.polarization == Polarization::linear_x ? w0 * spec.waist_anisotropy : w0;
  proto.rayleigh_range = pi * w0 * w0 / spec.wavelength;
  proto.axial_force = spec.axial_force;
  proto.spin_drive_coefficient =
      spec.spin_drive_coefficient > 0.0 ? spec.spin_drive_coefficient : kDefaultSpinDriveCoefficient;
  proto.validate();

  a.sites.reserve(static_cast<std::size_t>(spec.rows * spec.cols));
  for (int r = 0; r < spec.rows; ++r) {
    for (int c = 0; c < spec.cols; ++c) {
      TrapSite s = proto;
      s.focus = Vec3(c * spec.column_pitch, r * spec.row_pitch, 0.0);
      a.sites.push_back(s);
    }
  }
  return a;
}

TrapArray TrapArray::single(const TrapSite& site, double wavelength, double gravity) {
  site.validate();
  TrapArray a;
  a.rows = a.cols = 1;
  a.column_pitch = a.row_pitch = 1.0;
  a.wavelength = wavelength;
  a.numerical_aperture = 0.95;
  a.gravity = gravity;
  a.sites.push_back(site);
  return a;
}

void TrapArray::validate() const {
  check_array(*this);
  if (!(wavelength > 0.0)) fail(ErrorCode::domain, "wavelength must be positive");
  if (!(numerical_aperture > 0.0 && numerical_aperture < 1.0))
    fail(ErrorCode::domain, "numerical aperture must lie in (0, 1)");
  if (sites.size() != static_cast<std::size_t>(rows * cols))
    fail(ErrorCode::invalid_argument, "site count does not match grid dimensions");
  for (const auto& s : sites) s.validate();
}

std::size_t TrapArray::nearest_site(const Vec3& position) const {
  check_array(*this);
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < sites.size(); ++i) {
    const double d = (position - sites[i].focus).head<2>().squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

DipoleBody::DipoleBody(const EllipsoidGeometry& g) : alpha(principal_polarizabilities(g)) {
  base = std::min({alpha[0], alpha[1], alpha[2]});
  shifted = Vec3(alpha[0] - base, alpha[1] - base, alpha[2] - base);
  isotropic = g.is_isotropic();
  if (isotropic) shifted.setZero();
}

Mat3 DipoleBody::anisotropic_tensor(const Quat& orientation) const {
  if (isotropic) return Mat3::Zero();
  const Mat3 r = orientation.toRotationMatrix();
  Mat3 m = Mat3::Zero();
  for (int k = 0; k < 3; ++k)
    if (shifted[k] != 0.0) m.noalias() += shifted[k] * r.col(k) * r.col(k).transpose();
  return m;
}

TrapField::TrapField(const TrapArray& array, const EllipsoidGeometry& geometry, double mass)
    : sites_(array.sites), body_(geometry), mass_(mass), gravity_(array.gravity) {
  check_array(array);
  build_beams();
  prefactor_ = potential_scale(trapping_polarizability(geometry, sites_.front().polarization));
}

TrapField TrapField::restricted_to(const Vec3& center, double radius) const {
  TrapField out = *this;
  out.sites_.clear();
  for (const auto& s : sites_)
    if ((s.focus - center).head<2>().norm() <= radius) out.sites_.push_back(s);
  if (out.sites_.empty()) out.sites_.push_back(nearest(center));
  out.build_beams();
  return out;
}

void TrapField::build_beams() {
  beams_.clear();
  for (const auto& s : sites_)
    beams_.push_back({s.focus, 1.0 / (s.waist_x * s.waist_x), 1.0 / (s.waist_y * s.waist_y),
                      1.0 / (s.rayleigh_range * s.rayleigh_range), s.peak_intensity()});
}

const TrapSite& TrapField::nearest(const Vec3& position) const {
  const TrapSite* best = &sites_.front();
  double best_d = std::numeric_limits<double>::infinity();
  for (const auto& s : sites_) {
    const double d = (position - s.focus).head<2>().squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = &s;
    }
  }
  return *best;
}

TrapField::Sample TrapField::sample(const Vec3& position) const {
  Sample out;
  for (const Beam& b : beams_) {
    const Vec3 d = position - b.focus;
    const double g = 1.0 / (1.0 + d.z() * d.z() * b.inv_zr2);
    const double q = d.x() * d.x() * b.inv_wx2 + d.y() * d.y() * b.inv_wy2;
    const double expo = 2.0 * g * q;
    if (expo > kExponentCutoff) continue;
    const double i = b.peak * g * std::exp(-expo);
    const double gp = -2.0 * d.z() * g * g * b.inv_zr2;
    out.intensity += i;
    out.gradient += i * Vec3(-4.0 * g * d.x() * b.inv_wx2, -4.0 * g * d.y() * b.inv_wy2,
                             -2.0 * d.z() * g * b.inv_zr2 - 2.0 * gp * q);
  }
  return out;
}

double TrapField::polarizability(const Quat& orientation) const {
  if (body_.isotropic) return body_.base;
  return polarizability(body_.anisotropic_tensor(orientation));
}

double TrapField::polarizability(const Mat3& m) const {
  if (body_.isotropic) return body_.base;
  if (sites_.front().polarization == Polarization::linear_x) return body_.base + m(0, 0);
  return body_.base + 0.5 * (m(0, 0) + m(1, 1));
}

double TrapField::potential_scale(double alpha) {
  return alpha / (2.0 * constants::speed_of_light * constants::vacuum_permittivity);
}

double TrapField::intensity(const Vec3& position) const {
  double sum = 0.0;
  for (const auto& s : sites_) sum += site_terms(s, position, Order::value).intensity;
  return sum;
}

double TrapField::potential(const Vec3& position) const {
  return -prefactor_ * intensity(position) + mass_ * gravity_ * position.z();
}

Vec3 TrapField::force(const Vec3& position) const {
  Vec3 grad_i = Vec3::Zero();
  for (const auto& s : sites_) {
    const SiteTerms t = site_terms(s, position, Order::gradient);
    grad_i += t.intensity * t.grad_log;
  }
  Vec3 f = prefactor_ * grad_i;
  f.z() += nearest(position).axial_force - mass_ * gravity_;
  return f;
}

Mat3 TrapField::hessian(const Vec3& position) const {
  Mat3 h = Mat3::Zero();
  for (const auto& s : sites_) {
    const SiteTerms t = site_terms(s, position, Order::hessian);
    h += t.intensity * (t.grad_log * t.grad_log.transpose() + t.hess_log);
  }
  return -prefactor_ * h;
}

Vec3 TrapField::torque(const Quat& orientation, const Vec3& position) const {
  return optical_torque_for(orientation, nearest(position), body_, intensity(position));
}

Vec3 optical_torque_for(const Quat& orientation, const TrapSite& site, const DipoleBody& body, double intensity) {
  if (body.isotropic) return Vec3::Zero();
  return optical_torque_for(body.anisotropic_tensor(orientation), orientation * Vec3::UnitX(), site, body, intensity);
}

Vec3 optical_torque_for(const Mat3& m, const Vec3& long_axis, const TrapSite& site, const DipoleBody& body,
                        double intensity) {
  if (body.isotropic) return Vec3::Zero();
  const double e2 = intensity * kIntensityPrefactorToField;  // <E^2>
  const Vec3 ex = Vec3::UnitX(), ey = Vec3::UnitY();
  if (site.polarization == Polarization::linear_x) return e2 * (m * ex).cross(ex);

  Vec3 tau = 0.5 * e2 * ((m * ex).cross(ex) + (m * ey).cross(ey));
  // Spin drive from the in-plane polarizability anisotropy.
  const double dxy = std::hypot(m(0, 0) - m(1, 1), 2.0 * m(0, 1));
  const double sum = m(0, 0) + m(1, 1) + 2.0 * body.base;
  const double fraction = intensity / site.peak_intensity();
  Vec3 drive(0.0, 0.0, site.spin_drive_coefficient * site.power * fraction * dxy / sum);
  // The drive turns the r1 axis and has no component about r1 itself.
  drive -= drive.dot(long_axis) * long_axis;
  return tau + drive;
}

double site_intensity(const TrapSite& site, const Vec3& position) {
  return site_terms(site, position, Order::value).intensity;
}

double array_intensity(const TrapArray& array, const Vec3& position) {
  double sum = 0.0;
  for (const auto& s : array.sites) sum += site_terms(s, position, Order::value).intensity;
  return sum;
}

double trap_potential(const Vec3& position, const TrapArray& array, const EllipsoidGeometry& geometry) {
  check_position(position);
  check_array(array);
  return TrapField(array, geometry, geometry.mass()).potential(position);
}

Vec3 trap_force(const Vec3& position, const TrapArray& array, const EllipsoidGeometry& geometry) {
  check_position(position);
  check_array(array);
  return TrapField(array, geometry, geometry.mass()).force(position);
}

Mat3 potential_hessian(const Vec3& position, const TrapArray& array, const EllipsoidGeometry& geometry) {
  check_position(position);
  check_array(array);
  return TrapField(array, geometry, geometry.mass()).hessian(position);
}

namespace {

Vec3 newton_equilibrium(const TrapField& field, const TrapSite& site, std::size_t site_index) {
  const double reach = 3.0 * std::max({site.waist_x, site.waist_y, site.rayleigh_range});
  const double cap = 0.25 * std::min(site.waist_y, site.rayleigh_range);
  Vec3 r = site.focus;
  for (int iter = 0; iter < 200; ++iter) {
    const Vec3 f = field.force(r);
    if (f.norm() < kForceTolerance) break;
    Vec3 step = field.hessian(r).ldlt().solve(f);
    // Keep each Newton step inside the harmonic region.
    if (!(step.norm() <= cap)) step *= cap / step.norm();
    r += step;
    if (!finite(r) || (r - site.focus).norm() > reach) {
      std::ostringstream os;
      os << "no stable equilibrium near site " << site_index << " (particle too heavy for trap power)";
      fail(ErrorCode::no_trap, os.str());
    }
    if (step.norm() < 1e-17) break;
  }
  Eigen::SelfAdjointEigenSolver<Mat3> eig(field.hessian(r));
  if (eig.eigenvalues().minCoeff() <= 0.0 || field.force(r).norm() > 1e3 * kForceTolerance)
    fail(ErrorCode::no_trap, "equilibrium near site is not a potential minimum");
  return r;
}

}  // namespace

Vec3 find_equilibrium(const TrapArray& array, const EllipsoidGeometry& geometry, std::size_t site_index) {
  check_array(array);
  const TrapField field(array, geometry, geometry.mass());
  return newton_equilibrium(field, array.sites.at(site_index), site_index);
}

Vec3 trap_frequencies(const TrapSite& site, const EllipsoidGeometry& geometry, double mass, double gravity) {
  site.validate();
  if (!(mass > 0.0)) fail(ErrorCode::domain, "mass must be positive");
  const TrapField field(TrapArray::single(site, 1064e-9, gravity), geometry, mass);
  const Vec3 eq = newton_equilibrium(field, site, 0);
  const Mat3 h = field.hessian(eq);
  return Vec3(std::sqrt(h(0, 0) / mass), std::sqrt(h(1, 1) / mass), std::sqrt(h(2, 2) / mass));
}

Vec3 optical_torque_at(const Quat& orientation, const TrapSite& site, const EllipsoidGeometry& geometry,
                       double intensity) {
  check_orientation(orientation);
  return optical_torque_for(orientation, site, DipoleBody(geometry), intensity);
}

Vec3 optical_torque(const Quat& orientation, const TrapSite& site, const EllipsoidGeometry& geometry) {
  return optical_torque_at(orientation, site, geometry, site.peak_intensity());
}

double spin_drive_torque(const TrapSite& site, const EllipsoidGeometry& geometry) {
  if (geometry.is_isotropic()) return 0.0;
  const auto a = principal_polarizabilities(geometry);
  return site.spin_drive_coefficient * site.power * (a[0] - a[1]) / (a[0] + a[1]);
}

Vec3 torsional_stiffness(const TrapSite& site, const EllipsoidGeometry& geometry) {
  if (geometry.is_isotropic()) return Vec3::Zero();
  const auto a = principal_polarizabilities(geometry);
  const double e2 = site.peak_intensity() * kIntensityPrefactorToField;
  return Vec3(0.0, e2 * (a[0] - a[2]), e2 * (a[0] - a[1]));
}

}  // namespace lev::optics
