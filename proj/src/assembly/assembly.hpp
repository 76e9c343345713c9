#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "common/physics.hpp"
#include "common/rng.hpp"
#include "dynamics/dynamics.hpp"
#include "gas/gas.hpp"
#include "optics/optics.hpp"

namespace lev::assembly {

struct Site {
  int row = 0;
  int col = 0;
  auto operator<=>(const Site&) const = default;
};

std::string to_string(const Site& s);

// 'pair' holds two particles in one trap that did not stick (Coulomb branch).
enum class SiteState { empty, single, merged, pair };
const char* to_string(SiteState s) noexcept;

using ParticleId = std::uint64_t;

struct Particle {
  ParticleId id = 0;
  optics::EllipsoidGeometry geometry;
  double charge = 0.0;       // C
  bool anisotropic = false;  // flagged by loading ground truth or by classification
};

struct Cell {
  SiteState state = SiteState::empty;
  std::vector<ParticleId> members;  // 0, 1 (single/merged) or 2 (pair)
};

// Physical layout of the trap lattice in the focal plane.
struct GridGeometry {
  int rows = 0;
  int cols = 0;
  double column_pitch = 1.77e-6;  // m
  double row_pitch = 2.66e-6;     // m

  bool contains(const Site& s) const { return s.row >= 0 && s.row < rows && s.col >= 0 && s.col < cols; }
  Eigen::Vector2d position(const Site& s) const { return {s.col * column_pitch, s.row * row_pitch}; }
  double distance(const Site& a, const Site& b) const { return (position(a) - position(b)).norm(); }
  double min_pitch() const { return std::min(column_pitch, row_pitch); }
  void validate() const;
};

// Sole owner of lattice state. Every mutation bumps the version.
class Occupancy {
 public:
  Occupancy() = default;
  explicit Occupancy(const GridGeometry& grid);

  const GridGeometry& grid() const { return grid_; }
  int rows() const { return grid_.rows; }
  int cols() const { return grid_.cols; }
  std::uint64_t version() const { return version_; }
  // Content hash over layout, states and member ids; independent of version.
  std::uint64_t fingerprint() const;

  const Cell& cell(const Site& s) const;
  SiteState state(const Site& s) const { return cell(s).state; }
  bool occupied(const Site& s) const { return state(s) != SiteState::empty; }
  std::vector<Site> occupied_sites() const;  // row-major
  std::size_t occupied_count() const;
  std::size_t particle_count() const { return particles_.size(); }

  const Particle& particle(ParticleId id) const;
  const std::map<ParticleId, Particle>& particles() const { return particles_; }
  ParticleId next_id() const { return next_id_; }

  // Places a new particle, assigning it the next free id. Site must be empty.
  ParticleId place(const Site& s, Particle p);
  // Installs `cell` at an empty site with explicit particles (file readers).
  void install(const Site& s, SiteState state, std::vector<Particle> members);
  // Moves the whole content of `from` into the empty site `to`.
  void move(const Site& from, const Site& to);
  // Removes and returns everything at `s`.
  std::vector<Particle> remove(const Site& s);
  void set_anisotropic(ParticleId id, bool flag);
  // File readers only: resumes the counter recorded with a snapshot.
  void restore_version(std::uint64_t v) { version_ = v; }

  // Throws internal on duplicated or dangling ids.
  void validate() const;

 private:
  Cell& mutable_cell(const Site& s);
  std::size_t index(const Site& s) const { return static_cast<std::size_t>(s.row * grid_.cols + s.col); }

  GridGeometry grid_;
  std::vector<Cell> cells_;
  std::map<ParticleId, Particle> particles_;
  ParticleId next_id_ = 1;
  std::uint64_t version_ = 0;
};

// Composition of freshly loaded particles.
struct ShapeDistribution {
  double sphere_radius = 85e-9;        // m
  double ellipsoid_fraction = 0.0;     // probability a load is an ellipsoid
  double ellipsoid_aspect = 1.5;       // r1 / r2 of prolate spheroids
  double charge_mean_e = 10.0;         // elementary charges
  double charge_spread_e = 5.0;        // uniform integer in mean +- spread
  void validate() const;
};

Occupancy load_array(const GridGeometry& grid, double fill_probability, RngStream& rng,
                     const ShapeDistribution& shapes = {});

// ---------------------------------------------------------------------------
// Assignment

// Minimum-cost assignment of every row to a distinct column (rows <= cols).
// Returns the column chosen for each row.
std::vector<int> solve_assignment(const Eigen::MatrixXd& cost);

// ---------------------------------------------------------------------------
// Planning

enum class MoveKind { transfer, discard };
const char* to_string(MoveKind k) noexcept;

struct Move {
  MoveKind kind = MoveKind::transfer;
  Site source;
  Site destination;                    // equals source for discards
  std::vector<Eigen::Vector2d> path;   // polyline in the focal plane, m
  bool via_buffer = false;             // parking move that breaks a cycle
  double length() const;
};

struct MovePlan {
  std::vector<Move> moves;
  std::vector<Site> target;
  double cost = 0.0;  // total Euclidean distance of the optimal assignment, m
  double exclusion_radius = 0.0;
  GridGeometry grid;
  std::uint64_t base_version = 0;
  std::uint64_t base_fingerprint = 0;

  bool empty() const { return moves.empty(); }
  std::size_t transfer_count() const;
};

struct PlanOptions {
  double exclusion_factor = 0.5;  // exclusion radius in units of the smaller pitch
};

// Throws infeasible when there are fewer occupied sites than targets and
// invalid_argument for targets off the grid or repeated.
MovePlan plan_rearrangement(const Occupancy& current, const std::vector<Site>& target, const PlanOptions& options = {});

// Shortest distance from `p` to the segment [a, b].
double segment_distance(const Eigen::Vector2d& p, const Eigen::Vector2d& a, const Eigen::Vector2d& b);

// True when no occupied site other than `mover` lies within `radius` of the
// polyline.
bool path_clear(const Occupancy& occ, const std::vector<Eigen::Vector2d>& path, const Site& mover, double radius);

// Replays the plan on a copy of `occ`, checking every move against the
// instantaneous occupancy. Throws stale_plan on a version or content mismatch
// and infeasible naming the first violating move. Returns the final state.
Occupancy replay_plan(const MovePlan& plan, const Occupancy& occ);

// ---------------------------------------------------------------------------
// Execution

struct Event {
  double t_s = 0.0;
  std::string op;
  Site site;
  std::optional<Site> source;
  std::string outcome;
  std::vector<ParticleId> particles;
};

struct ExecuteOptions {
  double transport_success_prob = 0.99;
  double transport_speed = 1e-6;  // m/s along the path
  double settle_time = 0.05;      // s per move
};

struct ExecutionResult {
  Occupancy occupancy;
  std::vector<Event> events;
  std::vector<Site> defects;      // target sites left empty
  std::vector<ParticleId> lost;   // particles removed by failed transport
  std::vector<ParticleId> discarded;
  bool defect_free() const { return defects.empty(); }
};

// Mutates `occ` in place; it must be the snapshot the plan was built from.
ExecutionResult execute_plan(const MovePlan& plan, Occupancy& occ, RngStream& rng, const ExecuteOptions& options = {});

inline constexpr const char* kEventSchema = "levarray.events/1";
void write_events(const std::vector<Event>& events, std::uint64_t seed, std::ostream& out);
void write_events(const std::vector<Event>& events, std::uint64_t seed, const std::string& path);

// ---------------------------------------------------------------------------
// Merge

enum class MergeKind { dumbbell, lost, separated_coulomb };
const char* to_string(MergeKind k) noexcept;

struct MergeModel {
  double p_dumbbell = 0.25;
  double p_lost = 0.5;
  double p_separated = 0.25;
  double pressure_pa = 2000.0;  // gas pressure during the merge
  void validate() const;        // probabilities in [0, 1] summing to one
};

struct MergeOutcome {
  MergeKind kind = MergeKind::lost;
  Site site;  // trap that received the moved particle
  std::optional<Particle> dumbbell;
  std::vector<ParticleId> consumed;
  double pressure_pa = 0.0;
};

// Moves the particle at `site_a` into the trap at `site_b` and samples the
// outcome. Throws domain when a == b, selection when either site does not
// hold a single particle without an anisotropy flag.
MergeOutcome merge_particles(const Site& site_a, const Site& site_b, Occupancy& occ, const MergeModel& model,
                             RngStream& rng);

// Force on `a` due to `b`, N. Throws singular at zero separation.
Vec3 coulomb_force(const dynamics::ParticleState& a, const dynamics::ParticleState& b);

// Two spheres sharing one trap: optical force, gas damping and noise,
// mutual Coulomb repulsion and a stiff contact core.
struct PairOptions {
  double contact_stiffness_factor = 100.0;  // contact spring / largest trap stiffness
  double dt = 0.0;                          // 0 selects the stability bound
  double duration = 2e-3;                   // s
  double sample_interval = 1e-6;            // s
  bool thermal = true;
};

struct PairResult {
  std::vector<double> t;
  std::vector<double> separation;  // m, center to center
  Vec3 mean_offset_a = Vec3::Zero();
  Vec3 mean_offset_b = Vec3::Zero();
  double mean_separation = 0.0;
  double contact_distance = 0.0;
  bool stayed_trapped = true;
};

// Static equilibrium of the pair (no noise), returned as the two positions.
std::pair<Vec3, Vec3> pair_equilibrium(const dynamics::ParticleState& a, const dynamics::ParticleState& b,
                                       const optics::TrapSite& site, const gas::GasEnvironment& env,
                                       const PairOptions& options = {});

PairResult simulate_pair(dynamics::ParticleState a, dynamics::ParticleState b, const optics::TrapSite& site,
                         const gas::GasEnvironment& env, RngStream& rng, const PairOptions& options = {});

// ---------------------------------------------------------------------------
// File formats

inline constexpr const char* kGridSchema = "levarray.grid/1";
inline constexpr const char* kSitesSchema = "levarray.sites/1";
inline constexpr const char* kPlanSchema = "levarray.plan/1";

// Grid text: one line per row, '.' empty, 'o' single, 'D' merged, '2' pair;
// '#' starts a comment. Comment lines "# particle: {json}" carry particle
// details in row-major order of their sites.
void write_grid(const Occupancy& occ, std::ostream& out);
void write_grid(const Occupancy& occ, const std::string& path);
Occupancy read_grid(std::istream& in, const GridGeometry& pitch_hint = {});
Occupancy read_grid(const std::string& path, const GridGeometry& pitch_hint = {});

struct TargetPattern {
  int rows = 0;
  int cols = 0;
  std::vector<Site> sites;  // row-major, unique
};

// Reads either a grid file (occupied characters mark targets) or a
// coordinate list ("row col" per line, with "# rows:" and "# cols:" headers).
TargetPattern read_target(std::istream& in);
TargetPattern read_target(const std::string& path);
void write_target_list(const TargetPattern& t, const std::string& path);

std::string plan_json(const MovePlan& plan);
MovePlan plan_from_json(const std::string& text);

}  // namespace lev::assembly
