#pragma once

// Per-row uniform quantization of activation maps with stochastic (or nearest)
// rounding, bit-packed storage and exact byte accounting.
//
// For a row e with Z = min(e) and R = max(e) - min(e) the stored code of element i is
// round((e_i - Z) / R * B) with B = 2^bits - 1, and the reconstruction is
// R * code / B + Z. With stochastic rounding the reconstruction is unbiased and its
// per-element variance is at most R^2 / (4 B^2).
//
// Storage layout: codes are packed least-significant-bit first inside each byte,
// row-major, and every row starts on a byte boundary. R and Z are kept as 32-bit
// floats regardless of the engine's element width.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "actkg/random.hpp"
#include "actkg/tensor.hpp"

namespace actkg {

class EncodingError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Rounding { stochastic, nearest };

inline const char* to_string(Rounding r) { return r == Rounding::stochastic ? "stochastic" : "nearest"; }

inline Rounding parse_rounding(const std::string& s) {
  if (s == "stochastic" || s == "sr") return Rounding::stochastic;
  if (s == "nearest" || s == "nr") return Rounding::nearest;
  throw ConfigError("unknown rounding mode '" + s + "' (expected stochastic or nearest)");
}

inline bool is_supported_bits(int bits) {
  return bits == 1 || bits == 2 || bits == 4 || bits == 8 || bits == 32;
}

struct QuantConfig {
  int bits = 2;
  Rounding rounding = Rounding::stochastic;

  static QuantConfig exact() { return {32, Rounding::stochastic}; }

  bool passthrough() const noexcept { return bits == 32; }

  /// Number of quantization bins, 2^bits - 1. Meaningless in pass-through mode.
  std::uint32_t bins() const noexcept { return passthrough() ? 0u : (1u << bits) - 1u; }

  void validate() const {
    if (!is_supported_bits(bits))
      throw ConfigError("bits must be one of 1, 2, 4, 8, 32 (got " + std::to_string(bits) + ")");
  }

  friend bool operator==(const QuantConfig&, const QuantConfig&) = default;
};

/// Returns ceil(x) when u < x - floor(x), otherwise floor(x).
inline std::int64_t floor_to_int(double x) noexcept {
  auto i = static_cast<std::int64_t>(x);
  return static_cast<double>(i) > x ? i - 1 : i;
}

inline std::int64_t stochastic_round(double x, double u) noexcept {
  const std::int64_t f = floor_to_int(x);
  return f + (u < x - static_cast<double>(f) ? 1 : 0);
}

/// Round half to even.
inline std::int64_t nearest_round(double x) noexcept {
  auto i = floor_to_int(x);
  const double frac = x - static_cast<double>(i);
  if (frac > 0.5 || (frac == 0.5 && (i & 1) != 0)) ++i;
  return i;
}

struct RowScale {
  float range = 0.0f;   // R_v
  float offset = 0.0f;  // Z_v
};

/// Quantizes one row into `codes` (same length as `row`). Draws come from `rng` in
/// element order; nearest rounding ignores the stream.
template <typename T>
RowScale quantize_row_into(std::span<const T> row, const QuantConfig& cfg, RandomStream& rng,
                           std::span<std::uint32_t> codes) {
  if (row.empty()) throw DimensionError("quantize_row: empty row");
  if (codes.size() != row.size()) throw DimensionError("quantize_row: code buffer length mismatch");
  T lo = row[0], hi = row[0];
  for (const T v : row) {
    lo = v < lo ? v : lo;
    hi = v > hi ? v : hi;
  }
  const T range = hi - lo;
  if (range == T{0}) {
    std::fill(codes.begin(), codes.end(), 0u);
    return {0.0f, static_cast<float>(lo)};
  }
  const std::uint32_t bins = cfg.bins();
  const double scale = static_cast<double>(bins);
  const auto max_code = static_cast<std::int64_t>(bins);
  const double r = static_cast<double>(range);
  // row[i] - lo >= 0, so codes can only overflow at the top.
  if (cfg.rounding == Rounding::stochastic) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      const std::int64_t q = stochastic_round(static_cast<double>(row[i] - lo) / r * scale, rng.next());
      codes[i] = static_cast<std::uint32_t>(q > max_code ? max_code : q);
    }
  } else {
    for (std::size_t i = 0; i < row.size(); ++i) {
      const std::int64_t q = nearest_round(static_cast<double>(row[i] - lo) / r * scale);
      codes[i] = static_cast<std::uint32_t>(q > max_code ? max_code : q);
    }
  }
  return {static_cast<float>(range), static_cast<float>(lo)};
}

template <typename T>
struct QuantizedRow {
  std::vector<std::uint32_t> codes;
  RowScale scale;
};

template <typename T>
QuantizedRow<T> quantize_row(std::span<const T> row, const QuantConfig& cfg, RandomStream& rng) {
  QuantizedRow<T> out{std::vector<std::uint32_t>(row.size()), {}};
  out.scale = quantize_row_into<T>(row, cfg, rng, out.codes);
  return out;
}

template <typename T>
void dequantize_row_into(std::span<const std::uint32_t> codes, RowScale scale, std::uint32_t bins,
                         std::span<T> out) {
  if (codes.size() != out.size()) throw DimensionError("dequantize_row: output length mismatch");
  if (scale.range == 0.0f) {
    std::fill(out.begin(), out.end(), static_cast<T>(scale.offset));
    return;
  }
  const double r = scale.range;
  const double z = scale.offset;
  const double b = static_cast<double>(bins);
  for (std::size_t i = 0; i < codes.size(); ++i) out[i] = static_cast<T>(r * codes[i] / b + z);
}

template <typename T>
std::vector<T> dequantize_row(std::span<const std::uint32_t> codes, RowScale scale, std::uint32_t bins) {
  std::vector<T> out(codes.size());
  dequantize_row_into<T>(codes, scale, bins, out);
  return out;
}

inline void check_pack_width(int bits) {
  if (bits != 1 && bits != 2 && bits != 4 && bits != 8)
    throw EncodingError("bit packing supports widths 1, 2, 4, 8 (got " + std::to_string(bits) + ")");
}

inline std::size_t packed_row_bytes(std::size_t count, int bits) {
  return (count * static_cast<std::size_t>(bits) + 7) / 8;
}

/// Packs codes into `out`, which must hold packed_row_bytes(codes.size(), bits) bytes.
inline void pack_bits_into(std::span<const std::uint32_t> codes, int bits, std::span<std::uint8_t> out) {
  check_pack_width(bits);
  if (out.size() != packed_row_bytes(codes.size(), bits)) throw EncodingError("pack_bits: output size mismatch");
  std::fill(out.begin(), out.end(), std::uint8_t{0});
  const std::uint32_t limit = 1u << bits;
  const std::size_t per_byte = 8 / static_cast<std::size_t>(bits);
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (codes[i] >= limit)
      throw EncodingError("pack_bits: code " + std::to_string(codes[i]) + " does not fit in " +
                          std::to_string(bits) + " bits");
    const auto shift = static_cast<unsigned>((i % per_byte) * static_cast<std::size_t>(bits));
    out[i / per_byte] |= static_cast<std::uint8_t>(codes[i] << shift);
  }
}

inline std::vector<std::uint8_t> pack_bits(std::span<const std::uint32_t> codes, int bits) {
  check_pack_width(bits);
  std::vector<std::uint8_t> out(packed_row_bytes(codes.size(), bits));
  pack_bits_into(codes, bits, out);
  return out;
}

inline void unpack_bits_into(std::span<const std::uint8_t> bytes, int bits, std::span<std::uint32_t> codes) {
  check_pack_width(bits);
  if (bytes.size() < packed_row_bytes(codes.size(), bits)) throw EncodingError("unpack_bits: buffer too short");
  const std::uint32_t mask = (1u << bits) - 1u;
  const std::size_t per_byte = 8 / static_cast<std::size_t>(bits);
  for (std::size_t i = 0; i < codes.size(); ++i) {
    const auto shift = static_cast<unsigned>((i % per_byte) * static_cast<std::size_t>(bits));
    codes[i] = (static_cast<std::uint32_t>(bytes[i / per_byte]) >> shift) & mask;
  }
}

inline std::vector<std::uint32_t> unpack_bits(std::span<const std::uint8_t> bytes, int bits, std::size_t count) {
  std::vector<std::uint32_t> codes(count);
  unpack_bits_into(bytes, bits, codes);
  return codes;
}

/// A compressed activation map. Immutable once built.
template <typename T>
class QuantizedTensor {
 public:
  QuantizedTensor() = default;

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  int bits() const noexcept { return bits_; }
  std::uint32_t bins() const noexcept { return bits_ == 32 ? 0u : (1u << bits_) - 1u; }
  std::size_t row_stride() const noexcept { return row_stride_; }
  std::span<const std::uint8_t> packed() const noexcept { return codes_; }
  std::span<const std::uint8_t> packed_row(std::size_t r) const noexcept {
    return {codes_.data() + r * row_stride_, row_stride_};
  }
  RowScale scale(std::size_t r) const noexcept { return {ranges_[r], offsets_[r]}; }

  std::vector<std::uint32_t> codes(std::size_t r) const { return unpack_bits(packed_row(r), bits_, cols_); }

  /// Context bytes actually held: packed codes plus 8 bytes of (R, Z) per row, or 4
  /// bytes per element in pass-through mode.
  std::size_t stored_bytes() const noexcept {
    return bits_ == 32 ? rows_ * cols_ * 4 : rows_ * (row_stride_ + 8);
  }

  /// What the same context costs as an FP32 tensor.
  std::size_t fp32_bytes() const noexcept { return rows_ * cols_ * 4; }

  friend bool operator==(const QuantizedTensor&, const QuantizedTensor&) = default;

  template <typename U>
  friend QuantizedTensor<U> quantize_tensor(const DenseMatrix<U>&, const QuantConfig&, std::uint64_t,
                                            std::uint64_t);
  template <typename U>
  friend DenseMatrix<U> dequantize_tensor(const QuantizedTensor<U>&);

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  int bits_ = 32;
  std::size_t row_stride_ = 0;
  std::vector<std::uint8_t> codes_;
  std::vector<float> ranges_;
  std::vector<float> offsets_;
  std::vector<T> raw_;
};

template <typename T>
std::size_t stored_bytes(const QuantizedTensor<T>& q) noexcept {
  return q.stored_bytes();
}

/// Row r draws from RandomStream(seed, tensor_id, r).
template <typename T>
QuantizedTensor<T> quantize_tensor(const DenseMatrix<T>& x, const QuantConfig& cfg, std::uint64_t seed,
                                   std::uint64_t tensor_id) {
  cfg.validate();
  QuantizedTensor<T> q;
  q.rows_ = x.rows();
  q.cols_ = x.cols();
  q.bits_ = cfg.bits;
  if (cfg.passthrough()) {
    q.raw_ = x.data();
    return q;
  }
  q.row_stride_ = packed_row_bytes(x.cols(), cfg.bits);
  q.codes_.assign(q.rows_ * q.row_stride_, 0);
  q.ranges_.resize(q.rows_);
  q.offsets_.resize(q.rows_);
  std::vector<std::uint32_t> codes(x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    RandomStream rng(seed, tensor_id, r);
    const RowScale s = quantize_row_into<T>(x.row(r), cfg, rng, codes);
    q.ranges_[r] = s.range;
    q.offsets_[r] = s.offset;
    pack_bits_into(codes, cfg.bits, {q.codes_.data() + r * q.row_stride_, q.row_stride_});
  }
  return q;
}

template <typename T>
DenseMatrix<T> dequantize_tensor(const QuantizedTensor<T>& q) {
  if (q.bits_ == 32) return DenseMatrix<T>(q.rows_, q.cols_, q.raw_);
  DenseMatrix<T> out(q.rows_, q.cols_);
  std::vector<std::uint32_t> codes(q.cols_);
  for (std::size_t r = 0; r < q.rows_; ++r) {
    unpack_bits_into(q.packed_row(r), q.bits_, codes);
    dequantize_row_into<T>(codes, q.scale(r), q.bins(), out.row(r));
  }
  return out;
}

/// Per-element variance bound R^2 / (4 B^2) for stochastic rounding.
inline double element_variance_bound(double range, std::uint32_t bins) {
  const double b = static_cast<double>(bins);
  return range * range / (4.0 * b * b);
}

}  // namespace actkg
