#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "dynamics/dynamics.hpp"

namespace lev::analysis {

// One-sided power spectral density, channel^2 / Hz.
struct PSDEstimate {
  std::vector<double> frequencies;  // Hz, strictly increasing, starting at 0
  std::vector<double> power;
  std::size_t segment_count = 0;
  std::size_t segment_length = 0;
  double overlap = 0.0;
  double resolution = 0.0;  // Hz
  double variance = 0.0;    // of the channel samples
  // Window-weighted mean square over segments; equals the PSD integral exactly.
  double window_variance = 0.0;
  std::string channel;

  // Integral of the PSD divided by the channel variance. Within 1% of one
  // once the record spans many correlation times.
  double parseval_ratio() const;
  double integral() const;
};

inline constexpr double kDefaultOverlap = 0.5;
inline constexpr double kMaxOverlap = 0.9;

// Welch estimate: Hann window, mean removed, averaged one-sided periodograms.
PSDEstimate estimate_psd(const std::vector<double>& samples, double sample_rate, std::size_t segment_length,
                         double overlap = kDefaultOverlap);
PSDEstimate estimate_psd(const dynamics::Trajectory& trajectory, const std::string& channel,
                         std::size_t segment_length, double overlap = kDefaultOverlap);

struct FrequencyBand {
  double low_hz = 0.0;
  double high_hz = 0.0;  // 0 selects the Nyquist frequency
};

// S(omega) = A gamma / ((omega0^2 - omega^2)^2 + gamma^2 omega^2) + floor,
// omega = 2 pi f.
double lorentzian(double omega, double amplitude, double omega0, double gamma, double floor);

struct LorentzianFit {
  double center_frequency = 0.0;  // Hz, omega0 / 2 pi
  double damping = 0.0;           // rad/s
  double amplitude = 0.0;         // A, channel^2 rad^3 / s^3 / Hz
  double noise_floor = 0.0;       // channel^2 / Hz
  // Covariance of (omega0, gamma, A, floor), SI units.
  Eigen::Matrix4d covariance = Eigen::Matrix4d::Zero();
  double reduced_chi_square = 0.0;
  std::size_t points = 0;
  int iterations = 0;

  double omega0() const;
  double center_sigma() const;   // Hz
  double damping_sigma() const;  // rad/s
};

inline constexpr double kPeakThresholdDb = 6.0;

struct FitOptions {
  double peak_threshold_db = kPeakThresholdDb;
  double window_fwhm = 8.0;         // fit window half-width in FWHM
  std::size_t min_window_bins = 20;  // fit window half-width floor
  int max_iterations = 200;
  int reweight_passes = 4;
};

// Throws no_peak when the band maximum is below the peak threshold over the
// band median, and not_converged when least squares fails.
LorentzianFit fit_lorentzian(const PSDEstimate& psd, FrequencyBand band = {}, const FitOptions& options = {});

// True when the band maximum clears the detection threshold.
bool has_peak(const PSDEstimate& psd, FrequencyBand band = {}, double threshold_db = kPeakThresholdDb);

struct ChannelFit {
  PSDEstimate psd;
  LorentzianFit fit;
};

struct SegmentPolicy {
  double bins_per_fwhm = 24.0;
  std::size_t min_segments = 15;
  std::size_t min_length = 256;
  double overlap = kDefaultOverlap;
};

// Two-pass pipeline: a coarse PSD locates the peak and its width, then the
// segment length is chosen per `policy` and the peak is fitted.
ChannelFit fit_channel(const dynamics::Trajectory& trajectory, const std::string& channel, FrequencyBand band = {},
                       const SegmentPolicy& policy = {}, const FitOptions& options = {});

struct DampingRegression {
  double slope = 0.0;      // rad/s per Pa
  double intercept = 0.0;  // rad/s
  double slope_sigma = 0.0;
  double intercept_sigma = 0.0;
  double r_squared = 0.0;
  std::size_t points = 0;
  // Intercept within two standard deviations of zero.
  bool intercept_consistent_with_zero() const { return std::abs(intercept) <= 2.0 * intercept_sigma; }
};

// Weighted linear regression of damping against pressure. Needs at least
// three distinct pressures.
DampingRegression damping_vs_pressure(const std::vector<std::pair<double, LorentzianFit>>& fits);
DampingRegression linear_regression(const std::vector<double>& x, const std::vector<double>& y,
                                    const std::vector<double>& sigma);

enum class ShapeVerdict { spherical, anisotropic };
const char* to_string(ShapeVerdict v) noexcept;

inline constexpr double kRatioThreshold = 0.15;

struct ShapeOptions {
  double ratio_threshold = kRatioThreshold;
  SegmentPolicy segments;
  FitOptions fit;
};

struct ShapeReport {
  bool torsional_detected = false;
  double torsion_frequency = 0.0;  // Hz, mean over detections; 0 if none
  Eigen::Vector2d gamma_ratios = Eigen::Vector2d::Zero();  // (gamma_y / gamma_x, gamma_z / gamma_x)
  ShapeVerdict verdict = ShapeVerdict::spherical;
  bool ratios_spherical = true;
  bool criteria_agree = true;  // torsion and ratio criteria give the same answer
  std::vector<double> pressures;
  DampingRegression axis[3];
  Eigen::Vector3d trap_frequencies = Eigen::Vector3d::Zero();  // Hz, mean fitted centers
  std::vector<std::vector<ChannelFit>> fits;  // [pressure][x, y, z]
  std::string summary;
};

// Trajectories at >= 3 distinct pressures, linear polarization.
ShapeReport classify_shape(const std::vector<dynamics::Trajectory>& trajectories, const ShapeOptions& options = {});

// Columnar PSD table and machine-readable report writers.
void write_psd(const PSDEstimate& psd, const std::string& path);
std::string report_json(const ShapeReport& report, const std::string& label, std::uint64_t seed);

}  // namespace lev::analysis
