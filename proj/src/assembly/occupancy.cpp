#include <cmath>
#include <set>

#include "assembly/assembly.hpp"
#include "common/error.hpp"

namespace lev::assembly {

std::string to_string(const Site& s) { return "(" + std::to_string(s.row) + ", " + std::to_string(s.col) + ")"; }

const char* to_string(SiteState s) noexcept {
  switch (s) {
    case SiteState::empty: return "empty";
    case SiteState::single: return "single";
    case SiteState::merged: return "merged";
    case SiteState::pair: return "pair";
  }
  return "unknown";
}

void GridGeometry::validate() const {
  if (rows <= 0 || cols <= 0) fail(ErrorCode::invalid_argument, "grid needs at least one row and column");
  if (!(column_pitch > 0.0 && row_pitch > 0.0)) fail(ErrorCode::domain, "grid pitches must be positive");
}

Occupancy::Occupancy(const GridGeometry& grid) : grid_(grid) {
  grid_.validate();
  cells_.resize(static_cast<std::size_t>(grid_.rows * grid_.cols));
}

std::uint64_t Occupancy::fingerprint() const {
  // FNV-1a over the layout and cell contents.
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xffu;
      h *= 1099511628211ull;
    }
  };
  mix(static_cast<std::uint64_t>(grid_.rows));
  mix(static_cast<std::uint64_t>(grid_.cols));
  for (const Cell& c : cells_) {
    mix(static_cast<std::uint64_t>(c.state));
    for (ParticleId id : c.members) mix(id);
  }
  return h;
}

const Cell& Occupancy::cell(const Site& s) const {
  if (!grid_.contains(s)) fail(ErrorCode::invalid_argument, "site " + to_string(s) + " is outside the grid");
  return cells_[index(s)];
}

Cell& Occupancy::mutable_cell(const Site& s) {
  if (!grid_.contains(s)) fail(ErrorCode::invalid_argument, "site " + to_string(s) + " is outside the grid");
  return cells_[index(s)];
}

std::vector<Site> Occupancy::occupied_sites() const {
  std::vector<Site> out;
  for (int r = 0; r < grid_.rows; ++r)
    for (int c = 0; c < grid_.cols; ++c)
      if (cells_[index({r, c})].state != SiteState::empty) out.push_back({r, c});
  return out;
}

std::size_t Occupancy::occupied_count() const {
  std::size_t n = 0;
  for (const Cell& c : cells_) n += c.state != SiteState::empty;
  return n;
}

const Particle& Occupancy::particle(ParticleId id) const {
  auto it = particles_.find(id);
  if (it == particles_.end()) fail(ErrorCode::invalid_argument, "unknown particle id " + std::to_string(id));
  return it->second;
}

ParticleId Occupancy::place(const Site& s, Particle p) {
  Cell& c = mutable_cell(s);
  if (c.state != SiteState::empty) fail(ErrorCode::invalid_argument, "site " + to_string(s) + " is occupied");
  p.id = next_id_++;
  c.state = p.geometry.kind == optics::BodyKind::dumbbell ? SiteState::merged : SiteState::single;
  c.members = {p.id};
  particles_[p.id] = std::move(p);
  ++version_;
  return c.members.front();
}

void Occupancy::install(const Site& s, SiteState state, std::vector<Particle> members) {
  Cell& c = mutable_cell(s);
  if (c.state != SiteState::empty) fail(ErrorCode::invalid_argument, "site " + to_string(s) + " is occupied");
  const std::size_t expected = state == SiteState::empty ? 0 : state == SiteState::pair ? 2 : 1;
  if (members.size() != expected)
    fail(ErrorCode::invalid_argument, std::string("a ") + to_string(state) + " site holds " +
                                          std::to_string(expected) + " particles, got " +
                                          std::to_string(members.size()));
  c.state = state;
  c.members.clear();
  for (Particle& p : members) {
    if (p.id == 0 || particles_.count(p.id)) fail(ErrorCode::invalid_argument, "duplicate or zero particle id");
    c.members.push_back(p.id);
    next_id_ = std::max(next_id_, p.id + 1);
    particles_[p.id] = std::move(p);
  }
  ++version_;
}

void Occupancy::move(const Site& from, const Site& to) {
  if (from == to) fail(ErrorCode::invalid_argument, "move source and destination coincide");
  Cell& a = mutable_cell(from);
  Cell& b = mutable_cell(to);
  if (a.state == SiteState::empty) fail(ErrorCode::invalid_argument, "source " + to_string(from) + " is empty");
  if (b.state != SiteState::empty) fail(ErrorCode::invalid_argument, "destination " + to_string(to) + " is occupied");
  std::swap(a, b);
  ++version_;
}

std::vector<Particle> Occupancy::remove(const Site& s) {
  Cell& c = mutable_cell(s);
  std::vector<Particle> out;
  for (ParticleId id : c.members) {
    out.push_back(particles_.at(id));
    particles_.erase(id);
  }
  c = Cell{};
  ++version_;
  return out;
}

void Occupancy::set_anisotropic(ParticleId id, bool flag) {
  auto it = particles_.find(id);
  if (it == particles_.end()) fail(ErrorCode::invalid_argument, "unknown particle id " + std::to_string(id));
  it->second.anisotropic = flag;
  ++version_;
}

void Occupancy::validate() const {
  std::set<ParticleId> seen;
  for (const Cell& c : cells_) {
    const std::size_t expected = c.state == SiteState::empty ? 0 : c.state == SiteState::pair ? 2 : 1;
    if (c.members.size() != expected) fail(ErrorCode::internal, "cell member count does not match its state");
    for (ParticleId id : c.members) {
      if (!seen.insert(id).second) fail(ErrorCode::internal, "particle id " + std::to_string(id) + " appears twice");
      if (!particles_.count(id)) fail(ErrorCode::internal, "dangling particle id " + std::to_string(id));
    }
  }
  if (seen.size() != particles_.size()) fail(ErrorCode::internal, "particle table holds unplaced particles");
}

void ShapeDistribution::validate() const {
  if (!(sphere_radius > 0.0)) fail(ErrorCode::domain, "sphere radius must be positive");
  if (!(ellipsoid_fraction >= 0.0 && ellipsoid_fraction <= 1.0))
    fail(ErrorCode::domain, "ellipsoid fraction must lie in [0, 1]");
  if (!(ellipsoid_aspect >= 1.0)) fail(ErrorCode::domain, "ellipsoid aspect must be >= 1");
  if (!(charge_spread_e >= 0.0)) fail(ErrorCode::domain, "charge spread must be >= 0");
}

Occupancy load_array(const GridGeometry& grid, double fill_probability, RngStream& rng,
                     const ShapeDistribution& shapes) {
  if (!(fill_probability >= 0.0 && fill_probability <= 1.0))
    fail(ErrorCode::domain, "fill probability must lie in [0, 1]");
  shapes.validate();
  Occupancy occ(grid);
  const long lo = std::lround(shapes.charge_mean_e - shapes.charge_spread_e);
  const long hi = std::lround(shapes.charge_mean_e + shapes.charge_spread_e);
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      // Fixed draw count per site keeps streams aligned across fill values.
      const bool filled = rng.uniform() < fill_probability;
      const bool ellipsoid = rng.uniform() < shapes.ellipsoid_fraction;
      const long charge_e = lo + static_cast<long>(std::floor(rng.uniform() * static_cast<double>(hi - lo + 1)));
      if (!filled) continue;
      Particle p;
      if (ellipsoid) {
        // Equal volume to the sphere.
        const double r2 = shapes.sphere_radius / std::cbrt(shapes.ellipsoid_aspect);
        p.geometry = optics::EllipsoidGeometry::spheroid(r2 * shapes.ellipsoid_aspect, r2);
      } else {
        p.geometry = optics::EllipsoidGeometry::sphere(shapes.sphere_radius);
      }
      p.charge = static_cast<double>(std::min(charge_e, hi)) * constants::elementary_charge;
      p.anisotropic = !p.geometry.is_sphere();
      occ.place({r, c}, std::move(p));
    }
  }
  return occ;
}

}  // namespace lev::assembly
