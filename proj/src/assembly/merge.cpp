#include <cmath>

#include <Eigen/Eigenvalues>

#include "assembly/assembly.hpp"
#include "common/error.hpp"

namespace lev::assembly {

const char* to_string(MergeKind k) noexcept {
  switch (k) {
    case MergeKind::dumbbell: return "dumbbell";
    case MergeKind::lost: return "lost";
    case MergeKind::separated_coulomb: return "separated_coulomb";
  }
  return "unknown";
}

void MergeModel::validate() const {
  for (double p : {p_dumbbell, p_lost, p_separated})
    if (!(p >= 0.0 && p <= 1.0)) fail(ErrorCode::domain, "merge outcome probabilities must lie in [0, 1]");
  if (std::abs(p_dumbbell + p_lost + p_separated - 1.0) > 1e-9)
    fail(ErrorCode::domain, "merge outcome probabilities must sum to 1");
  if (!(pressure_pa >= 0.0)) fail(ErrorCode::domain, "merge pressure must be >= 0");
}

namespace {

const Particle& mergeable(const Occupancy& occ, const Site& s) {
  const Cell& c = occ.cell(s);
  if (c.state != SiteState::single)
    fail(ErrorCode::selection, "site " + to_string(s) + " holds " + to_string(c.state) + ", not a single particle");
  const Particle& p = occ.particle(c.members.front());
  if (p.anisotropic || !p.geometry.is_sphere())
    fail(ErrorCode::selection, "particle " + std::to_string(p.id) + " at " + to_string(s) + " is flagged anisotropic");
  return p;
}

}  // namespace

MergeOutcome merge_particles(const Site& site_a, const Site& site_b, Occupancy& occ, const MergeModel& model,
                             RngStream& rng) {
  model.validate();
  if (site_a == site_b) fail(ErrorCode::domain, "merge needs two distinct sites, got " + to_string(site_a) + " twice");
  mergeable(occ, site_a);
  mergeable(occ, site_b);

  MergeOutcome out;
  out.site = site_b;
  out.pressure_pa = model.pressure_pa;
  const double u = rng.uniform();
  out.kind = u < model.p_dumbbell                 ? MergeKind::dumbbell
             : u < model.p_dumbbell + model.p_lost ? MergeKind::lost
                                                   : MergeKind::separated_coulomb;

  std::vector<Particle> a = occ.remove(site_a);
  std::vector<Particle> b = occ.remove(site_b);
  out.consumed = {a.front().id, b.front().id};
  switch (out.kind) {
    case MergeKind::dumbbell: {
      Particle d;
      d.geometry = optics::EllipsoidGeometry::dumbbell(0.5 * (a.front().geometry.r1 + b.front().geometry.r1));
      d.geometry.material_density = a.front().geometry.material_density;
      d.geometry.relative_permittivity = a.front().geometry.relative_permittivity;
      d.charge = a.front().charge + b.front().charge;
      d.anisotropic = true;
      const ParticleId id = occ.place(site_b, d);
      out.dumbbell = occ.particle(id);
      break;
    }
    case MergeKind::lost:
      break;
    case MergeKind::separated_coulomb:
      occ.install(site_b, SiteState::pair, {a.front(), b.front()});
      break;
  }
  return out;
}

Vec3 coulomb_force(const dynamics::ParticleState& a, const dynamics::ParticleState& b) {
  const Vec3 r = a.position - b.position;
  const double d = r.norm();
  if (!(d > 0.0)) fail(ErrorCode::singular, "Coulomb force is singular at zero separation");
  const double k = 1.0 / (4.0 * constants::pi * constants::vacuum_permittivity);
  return k * a.charge * b.charge / (d * d * d) * r;
}

namespace {

class PairModel {
 public:
  PairModel(const dynamics::ParticleState& a, const dynamics::ParticleState& b, const optics::TrapSite& site,
            const gas::GasEnvironment& env, const PairOptions& opt)
      : array_(optics::TrapArray::single(site)),
        field_a_(array_, a.geometry, a.mass),
        field_b_(array_, b.geometry, b.mass),
        contact_(a.geometry.r1 + b.geometry.r1) {
    if (!a.geometry.is_isotropic() || !b.geometry.is_isotropic())
      fail(ErrorCode::invalid_argument, "the pair model takes two spheres");
    if (!(opt.contact_stiffness_factor > 0.0)) fail(ErrorCode::domain, "contact stiffness factor must be positive");
    env.validate();
    eq_a_ = optics::find_equilibrium(array_, a.geometry, 0);
    const Mat3 ha = field_a_.hessian(eq_a_), hb = field_b_.hessian(optics::find_equilibrium(array_, b.geometry, 0));
    Eigen::SelfAdjointEigenSolver<Mat3> es(0.5 * (ha + hb));
    soft_axis_ = es.eigenvectors().col(0);
    const double k_trap = std::max(ha.diagonal().maxCoeff(), hb.diagonal().maxCoeff());
    k_contact_ = opt.contact_stiffness_factor * k_trap;
    gamma_a_ = gas::damping_rates(a.geometry, false, env).gamma;
    gamma_b_ = gas::damping_rates(b.geometry, false, env).gamma;
    const double m = std::min(a.mass, b.mass);
    max_rate_ = std::max({std::sqrt(k_contact_ / m), gamma_a_.maxCoeff(), gamma_b_.maxCoeff()});
    escape_ = 3.0 * std::max(site.waist_x, site.waist_y);
    focus_ = site.focus;
  }

  // Forces on a and b.
  std::pair<Vec3, Vec3> forces(const dynamics::ParticleState& a, const dynamics::ParticleState& b) const {
    const Vec3 fc = coulomb_force(a, b);
    const Vec3 r = a.position - b.position;
    const double d = r.norm();
    Vec3 core = Vec3::Zero();
    if (d < contact_) core = k_contact_ * (contact_ - d) / d * r;
    return {field_a_.force(a.position) + fc + core, field_b_.force(b.position) - fc - core};
  }

  double max_rate() const { return max_rate_; }
  double contact() const { return contact_; }
  double k_contact() const { return k_contact_; }
  const Vec3& equilibrium_a() const { return eq_a_; }
  const Vec3& soft_axis() const { return soft_axis_; }
  const Vec3& gamma_a() const { return gamma_a_; }
  const Vec3& gamma_b() const { return gamma_b_; }
  bool inside(const Vec3& p) const { return (p - focus_).norm() < escape_; }
  const Vec3& focus() const { return focus_; }

 private:
  optics::TrapArray array_;
  optics::TrapField field_a_, field_b_;
  double contact_;
  double k_contact_ = 0.0;
  Vec3 eq_a_ = Vec3::Zero();
  Vec3 soft_axis_ = Vec3::UnitZ();
  Vec3 gamma_a_ = Vec3::Zero(), gamma_b_ = Vec3::Zero();
  double max_rate_ = 0.0;
  double escape_ = 0.0;
  Vec3 focus_ = Vec3::Zero();
};

}  // namespace

std::pair<Vec3, Vec3> pair_equilibrium(const dynamics::ParticleState& a0, const dynamics::ParticleState& b0,
                                       const optics::TrapSite& site, const gas::GasEnvironment& env,
                                       const PairOptions& options) {
  const PairModel model(a0, b0, site, env, options);
  dynamics::ParticleState a = a0, b = b0;
  // Start straddling the equilibrium along the softest trap axis, where the
  // repelled pair settles.
  const Vec3 half = 0.5 * (model.contact() + 1e-9) * model.soft_axis();
  a.position = model.equilibrium_a() + half;
  b.position = model.equilibrium_a() - half;
  const double eta = 0.5 / model.k_contact();
  for (int it = 0; it < 2'000'000; ++it) {
    const auto [fa, fb] = model.forces(a, b);
    const Vec3 da = eta * fa, db = eta * fb;
    a.position += da;
    b.position += db;
    if (std::max(da.norm(), db.norm()) < 1e-16) return {a.position, b.position};
  }
  fail(ErrorCode::not_converged, "pair equilibrium relaxation did not converge");
}

PairResult simulate_pair(dynamics::ParticleState a, dynamics::ParticleState b, const optics::TrapSite& site,
                         const gas::GasEnvironment& env, RngStream& rng, const PairOptions& options) {
  const PairModel model(a, b, site, env, options);
  const double bound = dynamics::kStabilityFraction / model.max_rate();
  const double dt = options.dt > 0.0 ? options.dt : bound;
  if (dt > bound * (1.0 + 1e-12)) fail(ErrorCode::step_size, "pair time step exceeds the stability bound");
  if (!(options.duration > 0.0 && options.sample_interval > 0.0))
    fail(ErrorCode::domain, "pair duration and sample interval must be positive");

  const auto [pa, pb] = pair_equilibrium(a, b, site, env, options);
  a.position = pa;
  b.position = pb;
  a.velocity.setZero();
  b.velocity.setZero();

  const double kT = constants::boltzmann * env.temperature;
  auto ou = [&](const Vec3& gamma, double mass, Vec3& decay, Vec3& kick) {
    for (int k = 0; k < 3; ++k) {
      decay[k] = std::exp(-gamma[k] * dt);
      kick[k] = options.thermal ? std::sqrt(kT / mass * (1.0 - decay[k] * decay[k])) : 0.0;
    }
  };
  Vec3 decay_a, kick_a, decay_b, kick_b;
  ou(model.gamma_a(), a.mass, decay_a, kick_a);
  ou(model.gamma_b(), b.mass, decay_b, kick_b);

  PairResult res;
  res.contact_distance = model.contact();
  const auto steps = static_cast<std::size_t>(std::ceil(options.duration / dt));
  const auto every = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(options.sample_interval / dt)));
  auto [fa, fb] = model.forces(a, b);
  std::size_t samples = 0;
  for (std::size_t s = 0; s < steps; ++s) {
    const double h = 0.5 * dt;
    a.velocity += h * fa / a.mass;
    b.velocity += h * fb / b.mass;
    a.position += h * a.velocity;
    b.position += h * b.velocity;
    for (int k = 0; k < 3; ++k) {
      a.velocity[k] = decay_a[k] * a.velocity[k] + kick_a[k] * rng.normal();
      b.velocity[k] = decay_b[k] * b.velocity[k] + kick_b[k] * rng.normal();
    }
    a.position += h * a.velocity;
    b.position += h * b.velocity;
    std::tie(fa, fb) = model.forces(a, b);
    a.velocity += h * fa / a.mass;
    b.velocity += h * fb / b.mass;
    if (!model.inside(a.position) || !model.inside(b.position)) {
      res.stayed_trapped = false;
      break;
    }
    if ((s + 1) % every == 0) {
      const double d = (a.position - b.position).norm();
      res.t.push_back(static_cast<double>(s + 1) * dt);
      res.separation.push_back(d);
      res.mean_separation += d;
      res.mean_offset_a += a.position - model.focus();
      res.mean_offset_b += b.position - model.focus();
      ++samples;
    }
  }
  if (samples > 0) {
    res.mean_separation /= static_cast<double>(samples);
    res.mean_offset_a /= static_cast<double>(samples);
    res.mean_offset_b /= static_cast<double>(samples);
  }
  return res;
}

}  // namespace lev::assembly
