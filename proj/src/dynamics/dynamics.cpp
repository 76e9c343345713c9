#include "dynamics/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "common/error.hpp"

namespace lev::dynamics {

namespace {

using constants::boltzmann;
using constants::pi;
using optics::EllipsoidGeometry;
using optics::Polarization;

// sin and cos of x; below |x| = 1e-2 the truncated series is exact to
// rounding.
inline void sin_cos(double x, double& s, double& c) {
  if (std::abs(x) < 1e-2) {
    const double x2 = x * x;
    s = x * (1.0 - x2 / 6.0 * (1.0 - x2 / 20.0 * (1.0 - x2 / 42.0)));
    c = 1.0 - x2 / 2.0 * (1.0 - x2 / 12.0 * (1.0 - x2 / 30.0 * (1.0 - x2 / 56.0)));
  } else {
    s = std::sin(x);
    c = std::cos(x);
  }
}

// Free rigid-body flow for time h, split symmetrically into exact rotations
// about body axes 1, 2, 3, 2, 1. Each sub-flow rotates the orientation by
// theta about e_k and the body angular momentum by -theta, so |L| is exact and
// the energy error stays bounded. Isotropic inertia keeps the body angular
// velocity fixed, so its flow is a single exact rotation.
void free_rotor(Quat& q, Vec3& omega, const Vec3& inertia, double h) {
  if (inertia.x() == inertia.y() && inertia.y() == inertia.z()) {
    const double rate = omega.norm();
    if (rate > 0.0) {
      double s, c;
      sin_cos(0.5 * rate * h, s, c);
      s /= rate;
      q = q * Quat(c, s * omega.x(), s * omega.y(), s * omega.z());
      q.normalize();
    }
    return;
  }
  double l[3] = {inertia.x() * omega.x(), inertia.y() * omega.y(), inertia.z() * omega.z()};
  double w = q.w(), v[3] = {q.x(), q.y(), q.z()};
  auto sub = [&](int k, double t) {
    double s, c;
    sin_cos(0.5 * t * l[k] / inertia[k], s, c);
    const int i = (k + 1) % 3, j = (k + 2) % 3;
    // q <- q (c + s e_k)
    const double w0 = w, vk = v[k], vi = v[i], vj = v[j];
    w = c * w0 - s * vk;
    v[k] = c * vk + s * w0;
    v[i] = c * vi + s * vj;
    v[j] = c * vj - s * vi;
    // L <- rotation of L by -theta about e_k
    const double cos_t = c * c - s * s, sin_t = 2.0 * s * c;
    const double li = l[i], lj = l[j];
    l[i] = cos_t * li + sin_t * lj;
    l[j] = -sin_t * li + cos_t * lj;
  };
  sub(0, 0.5 * h);
  sub(1, 0.5 * h);
  sub(2, h);
  sub(1, 0.5 * h);
  sub(0, 0.5 * h);
  q = Quat(w, v[0], v[1], v[2]);
  q.normalize();
  omega = Vec3(l[0] / inertia.x(), l[1] / inertia.y(), l[2] / inertia.z());
}

double wrap_to_pi(double a) { return a - 2.0 * pi * std::floor((a + pi) / (2.0 * pi)); }

}  // namespace

const char* to_string(DragMode m) noexcept {
  switch (m) {
    case DragMode::aligned: return "aligned";
    case DragMode::averaged: return "averaged";
    case DragMode::body_frame: return "body_frame";
  }
  return "aligned";
}

DragMode drag_mode_from_string(const std::string& s) {
  if (s == "aligned") return DragMode::aligned;
  if (s == "averaged") return DragMode::averaged;
  if (s == "body_frame") return DragMode::body_frame;
  fail(ErrorCode::invalid_argument, "unknown drag mode '" + s + "'");
}

ParticleState ParticleState::at_rest(const EllipsoidGeometry& geometry, const Vec3& position) {
  ParticleState s;
  s.geometry = geometry;
  s.mass = geometry.mass();
  s.position = position;
  return s;
}

void ParticleState::validate() const {
  geometry.validate();
  if (std::abs(orientation.norm() - 1.0) > 1e-9) fail(ErrorCode::domain, "orientation quaternion is not normalized");
  if (std::abs(mass - geometry.mass()) > 1e-9 * geometry.mass())
    fail(ErrorCode::domain, "mass is inconsistent with density and semi-axes");
}

Integrator::Integrator(const optics::TrapArray& array, const gas::GasEnvironment& env, const EllipsoidGeometry& geometry,
                       double mass, std::size_t home_site, IntegratorOptions options)
    : field_(array, geometry, mass), home_(array.sites.at(home_site)), env_(env), options_(options), mass_(mass) {
  geometry.validate();
  env.validate();
  const double waist = std::max(home_.waist_x, home_.waist_y);
  escape_radius_ = options.escape_factor * waist;
  // Sites farther than this contribute below double precision near home.
  field_ = field_.restricted_to(home_.focus, escape_radius_ + 10.0 * waist);

  equilibrium_ = optics::find_equilibrium(array, geometry, home_site);
  const Mat3 h = field_.hessian(equilibrium_);
  trap_omega_ = Vec3(std::sqrt(h(0, 0) / mass), std::sqrt(h(1, 1) / mass), std::sqrt(h(2, 2) / mass));

  const auto moments = optics::principal_moments(geometry);
  inertia_ = Vec3(moments[0], moments[1], moments[2]);
  const Vec3 k_tor = optics::torsional_stiffness(home_, geometry) * (field_.intensity(equilibrium_) / home_.peak_intensity());
  torsion_omega_ = Vec3(0.0, std::sqrt(k_tor.y() / inertia_.y()), std::sqrt(k_tor.z() / inertia_.z()));

  gamma_ = gas::body_damping_rates(geometry, env);
  if (options.drag == DragMode::averaged) gamma_.setConstant(gamma_.mean());
  gamma_rot_ = gas::rotational_damping_rates(geometry, env);

  max_rate_ = std::max({trap_omega_.maxCoeff(), torsion_omega_.maxCoeff(), gamma_.maxCoeff(), gamma_rot_.maxCoeff()});
  if (!(max_rate_ > 0.0)) fail(ErrorCode::no_trap, "trap has no restoring force");
}

const Integrator::StepCoefficients& Integrator::coefficients(double dt) {
  if (coeff_.dt == dt) return coeff_;
  const double kt = boltzmann * env_.temperature;
  coeff_.dt = dt;
  for (int i = 0; i < 3; ++i) {
    const double d = std::exp(-gamma_[i] * dt);
    coeff_.decay[i] = d;
    coeff_.kick[i] = std::sqrt(kt / mass_ * (1.0 - d * d));
    const double dr = std::exp(-gamma_rot_[i] * dt);
    coeff_.rot_decay[i] = dr;
    coeff_.rot_kick[i] = std::sqrt(kt / inertia_[i] * (1.0 - dr * dr));
  }
  return coeff_;
}

void Integrator::refresh_forces(const ParticleState& s) {
  if (s.position == cached_position_ && s.orientation.coeffs() == cached_orientation_.coeffs()) return;
  const auto sample = field_.sample(s.position);
  const Mat3 m = field_.body().anisotropic_tensor(s.orientation);
  const double scale = optics::TrapField::potential_scale(field_.polarizability(m));
  const optics::TrapSite& near = field_.sites().size() == 1 ? field_.sites().front() : field_.nearest(s.position);
  cached_force_ = scale * sample.gradient;
  cached_force_.z() += near.axial_force - mass_ * field_.gravity();
  const Vec3 tau_lab = optics::optical_torque_for(m, s.orientation * Vec3::UnitX(), near, field_.body(), sample.intensity);
  cached_torque_body_ = s.orientation.conjugate() * tau_lab;
  cached_position_ = s.position;
  cached_orientation_ = s.orientation;
}

void Integrator::step(ParticleState& s, double dt, RngStream& rng) {
  if (!(dt > 0.0) || dt >= max_stable_dt()) {
    std::ostringstream os;
    os << "time step " << dt << " s violates the stability bound " << max_stable_dt() << " s";
    fail(ErrorCode::step_size, os.str());
  }
  const StepCoefficients& c = coefficients(dt);
  const double h = 0.5 * dt;
  const Vec3 inv_inertia = inertia_.cwiseInverse();

  refresh_forces(s);
  // B
  s.velocity += h / mass_ * cached_force_;
  s.angular_velocity += h * inv_inertia.cwiseProduct(cached_torque_body_);
  // A
  s.position += h * s.velocity;
  free_rotor(s.orientation, s.angular_velocity, inertia_, h);
  // O
  const bool thermal = env_.temperature > 0.0;
  if (options_.drag == DragMode::body_frame) {
    Vec3 vb = s.orientation.conjugate() * s.velocity;
    for (int i = 0; i < 3; ++i) vb[i] = c.decay[i] * vb[i] + (thermal ? c.kick[i] * rng.normal() : 0.0);
    s.velocity = s.orientation * vb;
  } else {
    for (int i = 0; i < 3; ++i)
      s.velocity[i] = c.decay[i] * s.velocity[i] + (thermal ? c.kick[i] * rng.normal() : 0.0);
  }
  for (int i = 0; i < 3; ++i)
    s.angular_velocity[i] = c.rot_decay[i] * s.angular_velocity[i] + (thermal ? c.rot_kick[i] * rng.normal() : 0.0);
  // A
  s.position += h * s.velocity;
  free_rotor(s.orientation, s.angular_velocity, inertia_, h);
  // B
  refresh_forces(s);
  s.velocity += h / mass_ * cached_force_;
  s.angular_velocity += h * inv_inertia.cwiseProduct(cached_torque_body_);

  if ((s.position - home_.focus).norm() > escape_radius_) fail(ErrorCode::lost_particle, "particle left the trap");
}

ParticleState step(const ParticleState& state, const optics::TrapArray& array, const gas::GasEnvironment& env,
                   double dt, RngStream& rng) {
  state.validate();
  Integrator integ(array, env, state.geometry, state.mass, array.nearest_site(state.position));
  ParticleState out = state;
  integ.step(out, dt, rng);
  return out;
}

bool Trajectory::has_channel(const std::string& name) const {
  return std::find(channels.begin(), channels.end(), name) != channels.end();
}

const std::vector<double>& Trajectory::channel(const std::string& name) const {
  const auto it = std::find(channels.begin(), channels.end(), name);
  if (it == channels.end()) fail(ErrorCode::missing_channel, "trajectory has no channel '" + name + "'");
  return data.at(static_cast<std::size_t>(it - channels.begin()));
}

void Trajectory::validate() const {
  if (!(sample_rate > 0.0)) fail(ErrorCode::invalid_argument, "sample rate must be positive");
  if (channels.size() != data.size() || units.size() != data.size())
    fail(ErrorCode::invalid_argument, "channel names, units and data disagree in count");
  for (const auto& d : data)
    if (d.size() != length()) fail(ErrorCode::invalid_argument, "trajectory channels differ in length");
}

ParticleState thermal_state(const EllipsoidGeometry& geometry, const optics::TrapArray& array, std::size_t site_index,
                            const gas::GasEnvironment& env, RngStream& rng) {
  const Integrator integ(array, env, geometry, geometry.mass(), site_index);
  ParticleState s = ParticleState::at_rest(geometry, integ.equilibrium());
  const double kt = boltzmann * env.temperature;
  const double m = s.mass;
  for (int i = 0; i < 3; ++i) {
    const double w = integ.trap_frequencies()[i];
    s.position[i] += std::sqrt(kt / (m * w * w)) * rng.normal();
    s.velocity[i] = std::sqrt(kt / m) * rng.normal();
    s.angular_velocity[i] = std::sqrt(kt / integ.inertia()[i]) * rng.normal();
  }
  // Small-angle libration about lab y and z where there is a restoring torque.
  const Vec3 wt = integ.torsional_frequencies();
  Vec3 tilt = Vec3::Zero();
  for (int i = 1; i < 3; ++i)
    if (wt[i] > 0.0) tilt[i] = std::sqrt(kt / (integ.inertia()[i] * wt[i] * wt[i])) * rng.normal();
  if (array.sites.at(site_index).polarization == Polarization::circular) tilt.z() = 0.0;
  if (tilt.norm() > 0.0) s.orientation = Quat(Eigen::AngleAxisd(tilt.norm(), tilt.normalized()));
  return s;
}

Trajectory simulate(const ParticleState& initial, const optics::TrapArray& array, const gas::GasEnvironment& env,
                    double duration, double sample_rate, std::uint64_t seed, const SimulationOptions& options) {
  initial.validate();
  array.validate();
  if (!(duration >= 0.0) || !(sample_rate > 0.0))
    fail(ErrorCode::invalid_argument, "duration must be >= 0 and sample rate > 0");
  const std::size_t home = array.nearest_site(initial.position);
  Integrator integ(array, env, initial.geometry, initial.mass, home, options.integrator);

  const double nyquist_need = 2.0 * std::max(integ.trap_frequencies().maxCoeff(), integ.torsional_frequencies().maxCoeff()) / (2.0 * pi);
  if (sample_rate <= nyquist_need) {
    std::ostringstream os;
    os << "sample rate " << sample_rate << " Hz must exceed twice the largest trap frequency (" << nyquist_need << " Hz)";
    fail(ErrorCode::invalid_argument, os.str());
  }
  const auto samples = static_cast<std::size_t>(std::llround(duration * sample_rate));
  if (samples > options.max_samples) fail(ErrorCode::invalid_argument, "requested trajectory exceeds the sample cap");

  Trajectory t;
  t.sample_rate = sample_rate;
  t.channels = kChannels;
  t.units = kChannelUnits;
  t.data.assign(kChannels.size(), {});
  for (auto& d : t.data) d.reserve(samples);
  t.meta.pressure_pa = env.pressure;
  t.meta.temperature_k = env.temperature;
  t.meta.seed = seed;
  t.meta.site_row = static_cast<int>(home) / array.cols;
  t.meta.site_col = static_cast<int>(home) % array.cols;
  t.meta.polarization = array.sites[home].polarization;
  t.meta.shape = initial.geometry.kind == optics::BodyKind::dumbbell ? "dumbbell" : "ellipsoid";
  t.meta.r1 = initial.geometry.r1;
  t.meta.r2 = initial.geometry.r2;
  t.meta.r3 = initial.geometry.r3;
  t.meta.focus = array.sites[home].focus;
  t.meta.label = options.label;
  if (samples == 0) return t;

  const double period = 1.0 / sample_rate;
  double dt_target = options.dt_safety * integ.max_stable_dt();
  if (options.max_dt > 0.0) dt_target = std::min(dt_target, options.max_dt);
  const auto substeps = static_cast<std::size_t>(std::ceil(period / dt_target));
  const double dt = period / static_cast<double>(substeps);

  RngStream rng(seed);
  ParticleState s = initial;
  const optics::DipoleBody& body = integ.field().body();
  const double mean_alpha = (body.alpha[0] + body.alpha[1] + body.alpha[2]) / 3.0;
  double last_phase = 0.0, unwrapped = 0.0;
  bool first = true;

  auto record = [&]() {
    const Vec3 d = s.position - t.meta.focus;
    t.data[0].push_back(d.x());
    t.data[1].push_back(d.y());
    t.data[2].push_back(d.z());
    const Mat3 m = body.anisotropic_tensor(s.orientation);
    t.data[3].push_back(m(0, 1) / mean_alpha);
    const Vec3 axis = s.orientation * Vec3::UnitX();
    const double phase = std::atan2(axis.y(), axis.x());
    if (first) {
      unwrapped = phase;
      first = false;
    } else {
      unwrapped += wrap_to_pi(phase - last_phase);
    }
    last_phase = phase;
    t.data[4].push_back(unwrapped);
  };

  std::size_t k = 0;
  try {
    const auto burn_steps = static_cast<std::size_t>(std::ceil(options.burn_in / dt));
    for (std::size_t i = 0; i < burn_steps; ++i) integ.step(s, dt, rng);
    record();
    for (k = 1; k < samples; ++k) {
      for (std::size_t j = 0; j < substeps; ++j) integ.step(s, dt, rng);
      record();
    }
  } catch (const Error& e) {
    if (e.code() != ErrorCode::lost_particle) throw;
    t.meta.lost_at_s = static_cast<double>(k) * period;
    // Keep channels equal length: drop any partially recorded sample.
    const std::size_t n = std::min_element(t.data.begin(), t.data.end(), [](const auto& a, const auto& b) {
                            return a.size() < b.size();
                          })->size();
    for (auto& d : t.data) d.resize(n);
  }
  return t;
}

double terminal_rotation(const ParticleState& state, const optics::TrapSite& site, const gas::GasEnvironment& env) {
  state.geometry.validate();
  env.validate();
  if (site.polarization != Polarization::circular)
    fail(ErrorCode::invalid_argument, "terminal rotation needs a circularly polarized site");
  if (state.geometry.is_sphere()) fail(ErrorCode::zero_torque, "spherical particles receive no spin torque");
  if (!(env.pressure > 0.0)) fail(ErrorCode::unbounded_spin, "no rotational drag at zero pressure");
  const double tau = optics::spin_drive_torque(site, state.geometry);
  const double inertia = optics::principal_moments(state.geometry)[2];
  return tau / (inertia * gas::rotational_damping(state.geometry, env));
}

double calibrate_spin_drive(const EllipsoidGeometry& geometry, const optics::TrapSite& site,
                            const gas::GasEnvironment& env, double target_omega) {
  optics::TrapSite unit = site;
  unit.polarization = Polarization::circular;
  unit.spin_drive_coefficient = 1.0;
  const ParticleState s = ParticleState::at_rest(geometry, site.focus);
  return target_omega / terminal_rotation(s, unit, env);
}

double mechanical_energy(const ParticleState& s, const Integrator& integ) {
  const auto& field = integ.field();
  const double u = -optics::TrapField::potential_scale(field.polarizability(s.orientation)) * field.intensity(s.position) +
                   (s.mass * field.gravity() - field.axial_force(s.position)) * s.position.z();
  const double kin = 0.5 * s.mass * s.velocity.squaredNorm();
  const double rot = 0.5 * s.angular_velocity.dot(integ.inertia().cwiseProduct(s.angular_velocity));
  return kin + rot + u;
}

}  // namespace lev::dynamics
