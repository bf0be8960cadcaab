#pragma once

// Empirical gradient variance caused by compressed context.
//
// On a fixed minibatch the exact-mode gradient is deterministic, so any spread across
// repeated backward passes with fresh quantization draws is the extra variance the
// compression introduces.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "actkg/random.hpp"
#include "actkg/tape.hpp"

namespace actkg {

struct ParamVariance {
  std::size_t param = 0;
  double extra_variance = 0.0;     // variance over trials, averaged over elements
  double exact_variance = 0.0;     // same statistic for the pass-through run (0 on a fixed batch)
  double exact_mean_square = 0.0;  // mean of squared exact gradient entries, for scale
  double max_abs_bias = 0.0;       // max |trial mean - exact|
};

struct VarianceReport {
  QuantConfig quant;
  std::size_t trials = 0;
  std::vector<ParamVariance> params;
};

namespace detail {

/// Welford accumulator over a flat vector.
class RunningMoments {
 public:
  explicit RunningMoments(std::size_t n) : mean_(n, 0.0), m2_(n, 0.0) {}

  template <typename T>
  void push(std::span<const T> x) {
    ++count_;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double v = static_cast<double>(x[i]);
      const double delta = v - mean_[i];
      mean_[i] += delta / static_cast<double>(count_);
      m2_[i] += delta * (v - mean_[i]);
    }
  }

  std::size_t count() const noexcept { return count_; }
  double mean(std::size_t i) const { return mean_[i]; }
  double variance(std::size_t i) const { return count_ > 1 ? m2_[i] / static_cast<double>(count_ - 1) : 0.0; }

  double mean_variance() const {
    if (mean_.empty()) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < mean_.size(); ++i) s += variance(i);
    return s / static_cast<double>(mean_.size());
  }

 private:
  std::size_t count_ = 0;
  std::vector<double> mean_;
  std::vector<double> m2_;
};

template <typename T, typename Builder>
std::vector<RunningMoments> run_trials(Builder& build, const QuantConfig& quant, std::size_t trials,
                                       std::uint64_t seed, GradientSet<T>* first = nullptr) {
  std::vector<RunningMoments> moments;
  for (std::size_t t = 0; t < trials; ++t) {
    Tape<T> tape(quant, hash_combine(seed, t));
    build(tape);
    auto grads = tape.backward();
    if (moments.empty())
      for (const auto& g : grads.grads) moments.emplace_back(g.size());
    for (std::size_t p = 0; p < grads.size(); ++p) moments[p].push<T>(grads.grads[p].values());
    if (t == 0 && first) *first = grads;
  }
  return moments;
}

}  // namespace detail

/// `build(tape)` must register the parameters and record a loss on the tape, identically
/// on every call. Trials reseed the tape so each backward sees fresh quantization draws.
template <typename T, typename Builder>
VarianceReport gradient_variance_probe(Builder&& build, const QuantConfig& quant, std::size_t trials,
                                       std::uint64_t seed) {
  if (trials < 2) throw std::invalid_argument("gradient_variance_probe: need at least 2 trials");
  GradientSet<T> exact;
  const auto exact_moments = detail::run_trials<T>(build, QuantConfig::exact(), 2, seed, &exact);
  const auto moments = detail::run_trials<T>(build, quant, trials, hash_combine(seed, 0xC0FFEE));

  VarianceReport report;
  report.quant = quant;
  report.trials = trials;
  for (std::size_t p = 0; p < moments.size(); ++p) {
    ParamVariance pv;
    pv.param = p;
    pv.extra_variance = moments[p].mean_variance();
    pv.exact_variance = exact_moments[p].mean_variance();
    const auto ex = exact.grads[p].values();
    double sq = 0.0;
    for (std::size_t i = 0; i < ex.size(); ++i) {
      const double e = static_cast<double>(ex[i]);
      sq += e * e;
      pv.max_abs_bias = std::max(pv.max_abs_bias, std::abs(moments[p].mean(i) - e));
    }
    pv.exact_mean_square = ex.empty() ? 0.0 : sq / static_cast<double>(ex.size());
    report.params.push_back(pv);
  }
  return report;
}

}  // namespace actkg
