#pragma once

// Binary checkpoint of model parameters.
//
// Layout (all integers and reals little-endian):
//
//   offset  size  field
//   0       8     magic "AKGCKPT\0"
//   8       4     u32 format version (1)
//   12      4     u32 element width in bytes (4 = float32, 8 = float64)
//   16      8     u64 node count N
//   24      8     u64 embedding width d
//   32      8     u64 layer count L
//   40      ...   E^(0), N*d reals, row-major
//           ...   Theta^(0) .. Theta^(L-1), d*d reals each, row-major
//
// A reader accepts either element width and converts to its own.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "actkg/data.hpp"
#include "actkg/model.hpp"

namespace actkg {

inline constexpr std::array<char, 8> checkpoint_magic{'A', 'K', 'G', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t checkpoint_version = 1;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <typename U>
void write_le(std::ostream& out, U value) {
  static_assert(std::is_unsigned_v<U>);
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFFu);
  out.write(bytes.data(), bytes.size());
}

template <typename U>
U read_le(std::istream& in) {
  static_assert(std::is_unsigned_v<U>);
  std::array<unsigned char, sizeof(U)> bytes{};
  if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) throw FormatError("checkpoint: truncated file");
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

template <typename T>
void write_matrix(std::ostream& out, const DenseMatrix<T>& m) {
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  for (const T v : m.values()) write_le<Bits>(out, std::bit_cast<Bits>(v));
}

template <typename T>
void read_matrix(std::istream& in, DenseMatrix<T>& m, std::uint32_t width) {
  for (auto& v : m.values()) {
    if (width == 4)
      v = static_cast<T>(std::bit_cast<float>(read_le<std::uint32_t>(in)));
    else
      v = static_cast<T>(std::bit_cast<double>(read_le<std::uint64_t>(in)));
  }
}

}  // namespace detail

template <typename T>
void write_checkpoint(std::ostream& out, const ModelParams<T>& params) {
  static_assert(sizeof(T) == 4 || sizeof(T) == 8);
  out.write(checkpoint_magic.data(), checkpoint_magic.size());
  detail::write_le<std::uint32_t>(out, checkpoint_version);
  detail::write_le<std::uint32_t>(out, sizeof(T));
  detail::write_le<std::uint64_t>(out, params.num_nodes());
  detail::write_le<std::uint64_t>(out, params.dim());
  detail::write_le<std::uint64_t>(out, params.layers());
  detail::write_matrix(out, params.embeddings);
  for (const auto& t : params.thetas) detail::write_matrix(out, t);
  if (!out) throw IoError("checkpoint: write failed");
}

template <typename T>
ModelParams<T> read_checkpoint(std::istream& in) {
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != checkpoint_magic) throw FormatError("checkpoint: bad magic");
  const auto version = detail::read_le<std::uint32_t>(in);
  if (version != checkpoint_version) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  const auto width = detail::read_le<std::uint32_t>(in);
  if (width != 4 && width != 8) throw FormatError("checkpoint: bad element width " + std::to_string(width));
  const auto n = detail::read_le<std::uint64_t>(in);
  const auto d = detail::read_le<std::uint64_t>(in);
  const auto layers = detail::read_le<std::uint64_t>(in);
  if (n == 0 || d == 0 || layers == 0) throw FormatError("checkpoint: empty dimensions");
  ModelParams<T> p;
  p.embeddings = DenseMatrix<T>(n, d);
  detail::read_matrix(in, p.embeddings, width);
  for (std::uint64_t l = 0; l < layers; ++l) {
    p.thetas.emplace_back(d, d);
    detail::read_matrix(in, p.thetas.back(), width);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("checkpoint: trailing bytes");
  return p;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ModelParams<T>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_checkpoint(out, params);
}

template <typename T>
ModelParams<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_checkpoint<T>(in);
}

}  // namespace actkg
