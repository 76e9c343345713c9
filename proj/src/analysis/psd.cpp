#include <fftw3.h>

#include <cmath>
#include <memory>
#include <mutex>
#include <numeric>

#include "analysis/analysis.hpp"
#include "common/error.hpp"

namespace lev::analysis {

namespace {

// FFTW planning is not thread-safe; execution is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

class RealFft {
 public:
  explicit RealFft(std::size_t n)
      : n_(n),
        in_(static_cast<double*>(fftw_malloc(sizeof(double) * n))),
        out_(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1)))) {
    if (!in_ || !out_) fail(ErrorCode::internal, "FFT buffer allocation failed");
    std::lock_guard<std::mutex> lock(planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_.get(), out_.get(), FFTW_ESTIMATE);
    if (!plan_) fail(ErrorCode::internal, "FFT plan creation failed");
  }
  ~RealFft() {
    std::lock_guard<std::mutex> lock(planner_mutex());
    fftw_destroy_plan(plan_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  double* input() { return in_.get(); }
  const fftw_complex* execute() {
    fftw_execute(plan_);
    return out_.get();
  }

 private:
  std::size_t n_;
  std::unique_ptr<double, FftwFree> in_;
  std::unique_ptr<fftw_complex, FftwFree> out_;
  fftw_plan plan_ = nullptr;
};

}  // namespace

double PSDEstimate::integral() const { return std::accumulate(power.begin(), power.end(), 0.0) * resolution; }

double PSDEstimate::parseval_ratio() const { return variance > 0.0 ? integral() / variance : 1.0; }

PSDEstimate estimate_psd(const std::vector<double>& x, double sample_rate, std::size_t segment_length,
                         double overlap) {
  if (!(sample_rate > 0.0)) fail(ErrorCode::invalid_argument, "sample rate must be positive");
  if (segment_length < 2) fail(ErrorCode::invalid_argument, "segment length must be at least 2");
  if (segment_length > x.size())
    fail(ErrorCode::insufficient_data, "segment length " + std::to_string(segment_length) +
                                           " exceeds the " + std::to_string(x.size()) + " available samples");
  if (!(overlap >= 0.0 && overlap <= kMaxOverlap)) fail(ErrorCode::invalid_argument, "overlap must lie in [0, 0.9]");

  const std::size_t n = segment_length;
  // Segment starts are spread so the last segment ends at the last sample;
  // the realized overlap is never below the requested one.
  const double nominal = std::max(1.0, static_cast<double>(n) * (1.0 - overlap));
  const std::size_t spare = x.size() - n;
  const std::size_t segments = 1 + static_cast<std::size_t>(std::ceil(static_cast<double>(spare) / nominal - 1e-9));
  auto start = [&](std::size_t s) {
    return segments == 1 ? std::size_t{0} : (s * spare) / (segments - 1);
  };

  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());

  // Periodic Hann window.
  std::vector<double> w(n);
  double w2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * constants::pi * static_cast<double>(i) / static_cast<double>(n));
    w2 += w[i] * w[i];
  }

  const std::size_t bins = n / 2 + 1;
  PSDEstimate out;
  out.frequencies.resize(bins);
  out.power.assign(bins, 0.0);
  out.segment_count = segments;
  out.segment_length = n;
  out.overlap = overlap;
  out.resolution = sample_rate / static_cast<double>(n);
  out.variance = var;
  for (std::size_t k = 0; k < bins; ++k) out.frequencies[k] = static_cast<double>(k) * out.resolution;

  RealFft fft(n);
  for (std::size_t s = 0; s < segments; ++s) {
    double* in = fft.input();
    const std::size_t offset = start(s);
    for (std::size_t i = 0; i < n; ++i) {
      in[i] = (x[offset + i] - mean) * w[i];
      out.window_variance += in[i] * in[i];
    }
    const fftw_complex* X = fft.execute();
    for (std::size_t k = 0; k < bins; ++k) out.power[k] += X[k][0] * X[k][0] + X[k][1] * X[k][1];
  }
  out.window_variance /= w2 * static_cast<double>(segments);
  const double norm = 1.0 / (sample_rate * w2 * static_cast<double>(segments));
  for (std::size_t k = 0; k < bins; ++k) {
    const bool edge = k == 0 || (n % 2 == 0 && k == bins - 1);
    out.power[k] *= norm * (edge ? 1.0 : 2.0);
  }
  return out;
}

PSDEstimate estimate_psd(const dynamics::Trajectory& t, const std::string& channel, std::size_t segment_length,
                         double overlap) {
  PSDEstimate p = estimate_psd(t.channel(channel), t.sample_rate, segment_length, overlap);
  p.channel = channel;
  return p;
}

}  // namespace lev::analysis
