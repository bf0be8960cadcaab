#pragma once

// Monte-Carlo verification of the row quantizer: unbiasedness, the per-element variance
// bound R^2 / (4 B^2), and tightness of that bound on half-fraction elements.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "actkg/quant.hpp"
#include "actkg/random.hpp"

namespace actkg {

struct QuantCheckConfig {
  std::vector<int> bits{1, 2, 4, 8};
  Rounding rounding = Rounding::stochastic;
  std::size_t rows = 100;
  std::size_t dim = 64;
  std::size_t trials = 100000;
  std::uint64_t seed = 7;
  double sigmas = 4.0;          // unbiasedness band width
  double variance_slack = 1.05;  // allowed excess over the bound
  double tightness_tolerance = 0.02;

  void validate() const {
    if (bits.empty()) throw ConfigError("verify-quant: no bit widths given");
    for (const int b : bits)
      if (!is_supported_bits(b)) throw ConfigError("verify-quant: unsupported bit width " + std::to_string(b));
    if (rows < 1 || dim < 3) throw ConfigError("verify-quant: need rows >= 1 and dim >= 3");
    if (trials < 2) throw ConfigError("verify-quant: need at least 2 trials");
  }
};

struct BitsCheck {
  int bits = 0;
  std::uint32_t bins = 0;
  // Largest |mean - e| divided by sigmas * sqrt(bound / M); <= 1 passes.
  double max_bias_ratio = 0.0;
  std::size_t bias_violations = 0;
  // Largest empirical variance over its bound, per element and per row.
  double max_element_variance_ratio = 0.0;
  double max_row_variance_ratio = 0.0;
  // Empirical variance over the bound for half-fraction elements.
  double tight_min_ratio = 0.0;
  double tight_max_ratio = 0.0;
  // Whole half-fraction row (its two endpoints are always exact).
  double tight_row_ratio = 0.0;
  // Nearest rounding only: largest |e_hat - e| over R / (2B).
  double max_nearest_error_ratio = 0.0;
  bool deterministic = true;
  bool unbiased = true;
  bool variance_ok = true;
  bool tight_ok = true;
  bool exact = true;  // b = 32 round trip

  bool passed() const noexcept { return unbiased && variance_ok && tight_ok && deterministic && exact; }
};

struct QuantCheckReport {
  QuantCheckConfig config;
  std::vector<BitsCheck> checks;

  bool passed() const noexcept {
    return std::all_of(checks.begin(), checks.end(), [](const BitsCheck& c) { return c.passed(); });
  }
};

namespace detail {

struct RowMoments {
  std::vector<double> sum;     // of (e_hat - e)
  std::vector<double> sum_sq;  // of (e_hat - e)^2

  explicit RowMoments(std::size_t d) : sum(d, 0.0), sum_sq(d, 0.0) {}

  double mean_error(std::size_t i, double m) const { return sum[i] / m; }
  double variance(std::size_t i, double m) const {
    const double mean = sum[i] / m;
    return std::max(0.0, (sum_sq[i] - m * mean * mean) / (m - 1.0));
  }
};

/// Quantizes `row` `trials` times with independent streams. Scale metadata is a pure
/// function of the row, so per-element code histograms determine the moments of the
/// dequantized values exactly.
inline RowMoments sample_row(std::span<const float> row, const QuantConfig& cfg, std::size_t trials,
                             std::uint64_t seed, std::uint64_t row_id) {
  const std::size_t d = row.size();
  const std::size_t levels = cfg.bins() + 1;
  std::vector<std::uint32_t> codes(d);
  std::vector<std::uint64_t> counts(d * levels, 0);
  RowScale scale;
  for (std::size_t t = 0; t < trials; ++t) {
    RandomStream rng(seed, t, row_id);
    scale = quantize_row_into<float>(row, cfg, rng, codes);
    for (std::size_t i = 0; i < d; ++i) ++counts[i * levels + codes[i]];
  }
  RowMoments acc(d);
  std::vector<std::uint32_t> level_codes(levels);
  for (std::size_t c = 0; c < levels; ++c) level_codes[c] = static_cast<std::uint32_t>(c);
  const auto values = dequantize_row<float>(level_codes, scale, cfg.bins());
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t c = 0; c < levels; ++c) {
      const double n = static_cast<double>(counts[i * levels + c]);
      const double err = static_cast<double>(values[c]) - static_cast<double>(row[i]);
      acc.sum[i] += n * err;
      acc.sum_sq[i] += n * err * err;
    }
  }
  return acc;
}

/// Scaled values 0, then k + 1/2 cycling through the bins, then B; with R = B and Z = 0
/// every element is exactly representable and every interior one sits on a half fraction.
inline std::vector<float> half_fraction_row(std::size_t d, std::uint32_t bins) {
  std::vector<float> row(d);
  row.front() = 0.0f;
  row.back() = static_cast<float>(bins);
  for (std::size_t i = 1; i + 1 < d; ++i) row[i] = static_cast<float>((i - 1) % bins) + 0.5f;
  return row;
}

inline BitsCheck check_passthrough(const std::vector<std::vector<float>>& rows, std::uint64_t seed) {
  BitsCheck c;
  c.bits = 32;
  DenseMatrix<float> x(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) std::copy(rows[r].begin(), rows[r].end(), x.row(r).begin());
  const auto back = dequantize_tensor(quantize_tensor(x, QuantConfig::exact(), seed, 0));
  c.exact = back == x;
  return c;
}

inline BitsCheck check_nearest(const std::vector<std::vector<float>>& rows, int bits, std::uint64_t seed) {
  BitsCheck c;
  c.bits = bits;
  const QuantConfig cfg{bits, Rounding::nearest};
  c.bins = cfg.bins();
  const std::size_t d = rows.front().size();
  std::vector<std::uint32_t> a(d), b(d);
  std::vector<float> out(d);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    RandomStream s1(seed, 0, r), s2(seed, 1, r);
    const RowScale scale = quantize_row_into<float>(rows[r], cfg, s1, a);
    quantize_row_into<float>(rows[r], cfg, s2, b);
    if (a != b) c.deterministic = false;
    dequantize_row_into<float>(a, scale, cfg.bins(), out);
    const double half_step = static_cast<double>(scale.range) / (2.0 * cfg.bins());
    for (std::size_t i = 0; i < d; ++i) {
      const double err = std::abs(static_cast<double>(out[i]) - static_cast<double>(rows[r][i]));
      if (half_step > 0.0) c.max_nearest_error_ratio = std::max(c.max_nearest_error_ratio, err / half_step);
    }
  }
  // Allow the float32 metadata and output rounding on top of the half step.
  c.variance_ok = c.max_nearest_error_ratio <= 1.0 + 1e-5;
  return c;
}

inline BitsCheck check_stochastic(const std::vector<std::vector<float>>& rows, int bits,
                                  const QuantCheckConfig& cfg) {
  BitsCheck c;
  c.bits = bits;
  const QuantConfig qc{bits, Rounding::stochastic};
  c.bins = qc.bins();
  const double m = static_cast<double>(cfg.trials);
  const std::uint64_t seed = hash_combine(cfg.seed, static_cast<std::uint64_t>(bits));

  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& row = rows[r];
    const auto [lo, hi] = std::minmax_element(row.begin(), row.end());
    const double bound = element_variance_bound(static_cast<double>(*hi - *lo), c.bins);
    const auto acc = detail::sample_row(row, qc, cfg.trials, seed, r);
    const double band = cfg.sigmas * std::sqrt(bound / m);
    double row_var = 0.0;
    for (std::size_t i = 0; i < row.size(); ++i) {
      const double bias = std::abs(acc.mean_error(i, m));
      if (band > 0.0) c.max_bias_ratio = std::max(c.max_bias_ratio, bias / band);
      if (bias > band) ++c.bias_violations;
      const double var = acc.variance(i, m);
      row_var += var;
      if (bound > 0.0) c.max_element_variance_ratio = std::max(c.max_element_variance_ratio, var / bound);
    }
    if (bound > 0.0)
      c.max_row_variance_ratio =
          std::max(c.max_row_variance_ratio, row_var / (static_cast<double>(row.size()) * bound));
  }
  c.unbiased = c.bias_violations == 0;
  c.variance_ok = c.max_element_variance_ratio <= cfg.variance_slack && c.max_row_variance_ratio <= cfg.variance_slack;

  const auto tight = half_fraction_row(cfg.dim, c.bins);
  const double bound = element_variance_bound(static_cast<double>(c.bins), c.bins);
  const auto acc = detail::sample_row(tight, qc, cfg.trials, hash_combine(seed, 0x7167), 0);
  c.tight_min_ratio = 1e300;
  double row_var = 0.0;
  for (std::size_t i = 0; i < tight.size(); ++i) {
    const double ratio = acc.variance(i, m) / bound;
    row_var += acc.variance(i, m);
    if (i == 0 || i + 1 == tight.size()) continue;
    c.tight_min_ratio = std::min(c.tight_min_ratio, ratio);
    c.tight_max_ratio = std::max(c.tight_max_ratio, ratio);
  }
  c.tight_row_ratio = row_var / (static_cast<double>(tight.size()) * bound);
  c.tight_ok = c.tight_min_ratio >= 1.0 - cfg.tightness_tolerance && c.tight_max_ratio <= 1.0 + cfg.tightness_tolerance;
  return c;
}

}  // namespace detail

/// Random rows with entries uniform in [-1, 1], identical for every bit width.
inline std::vector<std::vector<float>> random_rows(std::size_t rows, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<float>> out(rows, std::vector<float>(dim));
  for (auto& row : out)
    for (auto& v : row) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return out;
}

inline QuantCheckReport verify_quantizer(const QuantCheckConfig& cfg) {
  cfg.validate();
  QuantCheckReport report;
  report.config = cfg;
  const auto rows = random_rows(cfg.rows, cfg.dim, cfg.seed);
  for (const int b : cfg.bits) {
    if (b == 32)
      report.checks.push_back(detail::check_passthrough(rows, cfg.seed));
    else if (cfg.rounding == Rounding::nearest)
      report.checks.push_back(detail::check_nearest(rows, b, cfg.seed));
    else
      report.checks.push_back(detail::check_stochastic(rows, b, cfg));
  }
  return report;
}

}  // namespace actkg
