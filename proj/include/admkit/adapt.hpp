#pragma once

// Distribution-shift detection over a histogram of scalar outputs, epsilon
// calibration by bootstrap, and constraint filtering of prior samples.

#include <admkit/dimension.hpp>
#include <admkit/errors.hpp>
#include <admkit/multivector.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <deque>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace admkit {

// Equal-width bins over [lo, hi); values outside land in the edge bins.
struct Binning {
  double lo = 0;
  double hi = 1;
  std::size_t bins = 1;

  void validate() const {
    if (bins == 0 || !(hi > lo)) throw BinningError("binning needs hi > lo and at least one bin");
  }
  double width() const { return (hi - lo) / static_cast<double>(bins); }
  std::size_t index(double x) const {
    if (!(x >= lo)) return 0;
    const auto i = static_cast<std::size_t>((x - lo) / width());
    return std::min(i, bins - 1);
  }
  bool operator==(const Binning&) const = default;
};

struct Histogram {
  Binning binning;
  std::vector<double> counts;

  explicit Histogram(Binning b) : binning(b), counts(b.bins, 0.0) { b.validate(); }
  Histogram(Binning b, std::vector<double> c) : binning(b), counts(std::move(c)) {
    b.validate();
    if (counts.size() != b.bins) throw BinningError("histogram has " + std::to_string(counts.size()) +
                                                    " counts for " + std::to_string(b.bins) + " bins");
  }
  // Expected counts of `mass` observations under the given bin probabilities.
  static Histogram from_probabilities(Binning b, std::span<const double> p, double mass) {
    std::vector<double> c(p.begin(), p.end());
    for (double& v : c) v *= mass;
    return Histogram(b, std::move(c));
  }

  void add(double x, double w = 1) { counts[binning.index(x)] += w; }
  void remove(double x, double w = 1) { counts[binning.index(x)] -= w; }
  double total() const {
    double s = 0;
    for (double c : counts) s += c;
    return s;
  }
  // Additive smoothing then normalisation.
  std::vector<double> probabilities(double alpha) const {
    const double denom = total() + alpha * static_cast<double>(counts.size());
    std::vector<double> p(counts.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = (counts[i] + alpha) / denom;
    return p;
  }
};

// Expected counts of `mass` draws from N(mean, sd^2); the tails fold into the
// edge bins the same way Binning::index clamps.
inline Histogram normal_histogram(const Binning& b, double mean, double sd, double mass) {
  b.validate();
  if (!(sd > 0)) throw Error("normal histogram needs sd > 0");
  auto cdf = [&](double x) { return 0.5 * std::erfc(-(x - mean) / (sd * std::sqrt(2.0))); };
  std::vector<double> p(b.bins);
  for (std::size_t i = 0; i < b.bins; ++i) {
    const double lo = i == 0 ? 0.0 : cdf(b.lo + static_cast<double>(i) * b.width());
    const double hi = i + 1 == b.bins ? 1.0 : cdf(b.lo + static_cast<double>(i + 1) * b.width());
    p[i] = hi - lo;
  }
  return Histogram::from_probabilities(b, p, mass);
}

// Sum p ln(p/q) in nats over probability vectors; terms with p = 0 vanish.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size())
    throw BinningError("KL over " + std::to_string(p.size()) + " and " + std::to_string(q.size()) + " bins");
  double d = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0) continue;
    if (q[i] == 0) throw BinningError("KL undefined: model mass 0 in bin " + std::to_string(i));
    d += p[i] * std::log(p[i] / q[i]);
  }
  return std::max(d, 0.0);
}

inline double kl_divergence(const Histogram& p, const Histogram& q, double alpha = 1.0) {
  if (!(p.binning == q.binning)) throw BinningError("KL between histograms with different binning");
  if (!(alpha > 0)) throw BinningError("smoothing alpha must be positive");
  const double dp = p.total() + alpha * static_cast<double>(p.counts.size());
  const double dq = q.total() + alpha * static_cast<double>(q.counts.size());
  double d = 0;
  for (std::size_t i = 0; i < p.counts.size(); ++i) {
    const double pi = (p.counts[i] + alpha) / dp;
    d += pi * std::log(pi / ((q.counts[i] + alpha) / dq));
  }
  return std::max(d, 0.0);
}

struct DetectorConfig {
  std::size_t window_size = 200;
  Binning binning{};
  double alpha = 1.0;
  std::optional<double> epsilon;  // unset: calibrate

  void validate() const {
    if (window_size == 0) throw Error("detector window_size must be positive");
    binning.validate();
    if (!(alpha > 0)) throw Error("detector alpha must be positive");
    if (epsilon && !(*epsilon > 0)) throw Error("detector epsilon must be positive");
  }
};

struct ShiftSignal {
  bool rotate = false;
  bool window_full = false;
  double kl = 0;
};

class ShiftDetector {
 public:
  ShiftDetector(const DetectorConfig& c, double epsilon) : cfg_(c), epsilon_(epsilon), window_(c.binning) {
    cfg_.epsilon = epsilon;
    cfg_.validate();
  }
  ShiftDetector(const ShiftDetector& o)
      : cfg_(o.cfg_), epsilon_(o.epsilon_), buffer_(o.buffer_), window_(o.window_), last_kl_(o.last_kl()) {}

  ShiftSignal observe_and_check(double x, const Histogram& model) {
    if (buffer_.size() == cfg_.window_size) {
      window_.remove(buffer_.front());
      buffer_.pop_front();
    }
    buffer_.push_back(x);
    window_.add(x);
    if (buffer_.size() < cfg_.window_size) return {};
    const double kl = kl_divergence(window_, model, cfg_.alpha);
    last_kl_.store(kl, std::memory_order_relaxed);
    return {kl > epsilon_, true, kl};
  }

  void reset() {
    buffer_.clear();
    window_ = Histogram(cfg_.binning);
  }

  double epsilon() const { return epsilon_; }
  const DetectorConfig& config() const { return cfg_; }
  std::size_t buffered() const { return buffer_.size(); }
  // Safe to call from another thread while the owner observes.
  double last_kl() const { return last_kl_.load(std::memory_order_relaxed); }

 private:
  DetectorConfig cfg_;
  double epsilon_;
  std::deque<double> buffer_;
  Histogram window_;
  std::atomic<double> last_kl_{0.0};
};

struct Calibration {
  double epsilon = 0;
  double quantile = 0;
  std::size_t replicates = 0;
  std::size_t horizon = 0;
};

// Threshold as the given quantile of the largest windowed KL seen over
// `horizon` observations drawn from the model's own bin probabilities.
inline Calibration calibrate_epsilon(const Histogram& model, std::size_t window_size, double alpha,
                                     std::size_t horizon, std::size_t replicates, uint64_t seed,
                                     double quantile = 0.999) {
  if (replicates == 0 || horizon < window_size) throw Error("calibration needs replicates and horizon >= window");
  const auto q = model.probabilities(0.0);
  std::mt19937_64 rng(seed);
  std::discrete_distribution<std::size_t> draw(q.begin(), q.end());
  const Binning& b = model.binning;
  std::vector<double> maxima;
  maxima.reserve(replicates);
  for (std::size_t r = 0; r < replicates; ++r) {
    DetectorConfig c{window_size, b, alpha, 1.0};
    ShiftDetector d(c, 1.0);
    double worst = 0;
    for (std::size_t i = 0; i < horizon; ++i) {
      const std::size_t bin = draw(rng);
      const double x = b.lo + (static_cast<double>(bin) + 0.5) * b.width();
      worst = std::max(worst, d.observe_and_check(x, model).kl);
    }
    maxima.push_back(worst);
  }
  std::sort(maxima.begin(), maxima.end());
  const auto k = std::min(maxima.size() - 1,
                          static_cast<std::size_t>(std::ceil(quantile * static_cast<double>(maxima.size()))) - 1);
  return {maxima[k], quantile, replicates, horizon};
}

// Constraint on one parameter: allowed grades and required dimension.
struct ParamConstraint {
  GradeSet grades;
  DimVec dim;
};

template <class T>
struct PriorSample {
  std::vector<Multivector<T>> params;
  double weight = 0;
};

template <class T>
struct DistillResult {
  std::vector<PriorSample<T>> samples;
  std::size_t rejected = 0;
  double satisfaction_before = 0;  // conformant share of the prior mass
  double satisfaction_after = 0;
};

template <class T>
bool conforms(const PriorSample<T>& s, const std::vector<ParamConstraint>& c) {
  if (s.params.size() != c.size()) return false;
  for (std::size_t k = 0; k < c.size(); ++k) {
    const auto& m = s.params[k];
    if (m.dim() != c[k].dim) return false;
    for (std::size_t i = 0; i < m.size(); ++i)
      if (!c[k].grades.contains(grade_of(m.blades()[i])) && !scalar_traits<T>::is_zero(m.coeffs()[i])) return false;
  }
  return true;
}

// Hard rejection of nonconforming samples; survivors renormalised to sum 1.
template <class T>
DistillResult<T> distill_prior(const std::vector<PriorSample<T>>& samples, const std::vector<ParamConstraint>& c) {
  if (samples.empty()) throw EmptyPriorError("prior sample set is empty");
  DistillResult<T> r;
  double total = 0, kept = 0;
  for (const auto& s : samples) {
    if (!(s.weight >= 0) || !std::isfinite(s.weight)) throw Error("prior weights must be finite and non-negative");
    total += s.weight;
    if (conforms(s, c)) {
      kept += s.weight;
      r.samples.push_back(s);
    } else {
      ++r.rejected;
    }
  }
  if (r.samples.empty() || !(kept > 0))
    throw EmptyPriorError("all " + std::to_string(samples.size()) + " prior samples violate the constraints");
  r.satisfaction_before = total > 0 ? kept / total : 0;
  // Already normalised within rounding: leave untouched, so a second pass is a no-op.
  const double slack = 4.0 * static_cast<double>(r.samples.size()) * std::numeric_limits<double>::epsilon();
  if (r.rejected > 0 || std::fabs(kept - 1.0) > slack)
    for (auto& s : r.samples) s.weight /= kept;
  double after_ok = 0, after_total = 0;
  for (const auto& s : r.samples) {
    after_total += s.weight;
    if (conforms(s, c)) after_ok += s.weight;
  }
  r.satisfaction_after = after_ok / after_total;
  return r;
}

}  // namespace admkit
