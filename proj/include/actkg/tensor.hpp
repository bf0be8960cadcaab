#pragma once

// Dense/sparse matrix types and the forward kernels used by the training engine.
//
// Every kernel accumulates inner products in ascending inner index, so results are
// reproducible bit for bit and spmm/spmm_t match a densify-then-multiply reference
// exactly (build with -ffp-contract=off, see CMakeLists.txt).

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

namespace actkg {

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::string shape_str(std::size_t rows, std::size_t cols) {
  std::ostringstream os;
  os << '(' << rows << 'x' << cols << ')';
  return os.str();
}

template <typename T>
class DenseMatrix {
 public:
  using value_type = T;

  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, T fill = T{0})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("DenseMatrix: data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_str(rows_, cols_));
    }
  }

  /// Row-major literal, e.g. DenseMatrix<double>::from_rows({{1, 2}, {3, 4}}).
  static DenseMatrix from_rows(std::initializer_list<std::initializer_list<T>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<T> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("DenseMatrix::from_rows: ragged rows");
      data.insert(data.end(), row.begin(), row.end());
    }
    return DenseMatrix(r, c, std::move(data));
  }

  static DenseMatrix identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T{1};
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  const std::vector<T>& data() const noexcept { return data_; }

  bool same_shape(const DenseMatrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  DenseMatrix& operator+=(const DenseMatrix& o) {
    if (!same_shape(o)) {
      throw DimensionError("add: shapes " + shape_str(rows_, cols_) + " and " +
                           shape_str(o.rows_, o.cols_) + " differ");
    }
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

  template <typename U>
  DenseMatrix<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return DenseMatrix<U>(rows_, cols_, std::move(out));
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

template <typename T>
DenseMatrix<T> operator+(DenseMatrix<T> a, const DenseMatrix<T>& b) {
  a += b;
  return a;
}

template <typename T>
DenseMatrix<T> transpose(const DenseMatrix<T>& m) {
  DenseMatrix<T> out(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out(c, r) = m(r, c);
  return out;
}

/// Compressed sparse row matrix. Indices are 32-bit; column indices are strictly
/// increasing inside each row.
template <typename T>
class CsrMatrix {
 public:
  using index_type = std::uint32_t;

  CsrMatrix() : row_ptr_(1, 0) {}
  CsrMatrix(std::size_t rows, std::size_t cols, std::vector<index_type> row_ptr,
            std::vector<index_type> col_idx, std::vector<T> values)
      : rows_(rows),
        cols_(cols),
        row_ptr_(std::move(row_ptr)),
        col_idx_(std::move(col_idx)),
        values_(std::move(values)) {
    validate();
  }

  /// Builds from (row, col, value) triplets; duplicates are rejected.
  static CsrMatrix from_triplets(std::size_t rows, std::size_t cols,
                                 std::vector<std::tuple<index_type, index_type, T>> triplets) {
    std::sort(triplets.begin(), triplets.end(), [](const auto& a, const auto& b) {
      return std::pair(std::get<0>(a), std::get<1>(a)) < std::pair(std::get<0>(b), std::get<1>(b));
    });
    std::vector<index_type> row_ptr(rows + 1, 0);
    std::vector<index_type> col_idx;
    std::vector<T> values;
    col_idx.reserve(triplets.size());
    values.reserve(triplets.size());
    for (const auto& [r, c, v] : triplets) {
      if (r >= rows) throw DimensionError("CsrMatrix: row index out of range");
      ++row_ptr[r + 1];
      col_idx.push_back(c);
      values.push_back(v);
    }
    for (std::size_t r = 0; r < rows; ++r) row_ptr[r + 1] += row_ptr[r];
    return CsrMatrix(rows, cols, std::move(row_ptr), std::move(col_idx), std::move(values));
  }

  static CsrMatrix identity(std::size_t n) {
    std::vector<index_type> row_ptr(n + 1), col_idx(n);
    for (std::size_t i = 0; i < n; ++i) {
      row_ptr[i + 1] = static_cast<index_type>(i + 1);
      col_idx[i] = static_cast<index_type>(i);
    }
    return CsrMatrix(n, n, std::move(row_ptr), std::move(col_idx), std::vector<T>(n, T{1}));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t nnz() const noexcept { return col_idx_.size(); }
  std::span<const index_type> row_ptr() const noexcept { return row_ptr_; }
  std::span<const index_type> col_idx() const noexcept { return col_idx_; }
  std::span<const T> values() const noexcept { return values_; }

  /// Nominal storage in FP32/INT32 units: values + column indices + row offsets.
  std::size_t stored_bytes() const noexcept { return nnz() * 8 + (rows_ + 1) * 4; }

  DenseMatrix<T> densify() const {
    DenseMatrix<T> out(rows_, cols_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (index_type k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) out(r, col_idx_[k]) = values_[k];
    return out;
  }

  bool is_structurally_symmetric() const {
    if (rows_ != cols_) return false;
    for (std::size_t r = 0; r < rows_; ++r) {
      for (index_type k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) {
        const auto c = col_idx_[k];
        const auto begin = col_idx_.begin() + row_ptr_[c];
        const auto end = col_idx_.begin() + row_ptr_[c + 1];
        if (!std::binary_search(begin, end, static_cast<index_type>(r))) return false;
      }
    }
    return true;
  }

  friend bool operator==(const CsrMatrix&, const CsrMatrix&) = default;

 private:
  void validate() const {
    if (row_ptr_.size() != rows_ + 1) throw DimensionError("CsrMatrix: row_ptr length must be rows+1");
    if (row_ptr_.front() != 0) throw DimensionError("CsrMatrix: row_ptr[0] must be 0");
    if (row_ptr_.back() != col_idx_.size() || col_idx_.size() != values_.size())
      throw DimensionError("CsrMatrix: row_ptr[rows] must equal nnz");
    for (std::size_t r = 0; r < rows_; ++r) {
      if (row_ptr_[r] > row_ptr_[r + 1]) throw DimensionError("CsrMatrix: row_ptr must be nondecreasing");
      for (index_type k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) {
        if (col_idx_[k] >= cols_) throw DimensionError("CsrMatrix: column index out of range");
        if (k > row_ptr_[r] && col_idx_[k] <= col_idx_[k - 1])
          throw DimensionError("CsrMatrix: column indices must be strictly increasing per row");
      }
    }
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<index_type> row_ptr_;
  std::vector<index_type> col_idx_;
  std::vector<T> values_;
};

/// One bit per element, least-significant bit first within each byte.
class BitMask {
 public:
  BitMask() = default;
  explicit BitMask(std::size_t count) : count_(count), bytes_((count + 7) / 8, 0) {}

  std::size_t count() const noexcept { return count_; }
  std::size_t stored_bytes() const noexcept { return bytes_.size(); }
  std::span<const std::uint8_t> bytes() const noexcept { return bytes_; }

  bool test(std::size_t i) const noexcept { return (bytes_[i >> 3] >> (i & 7)) & 1u; }
  void set(std::size_t i) noexcept { bytes_[i >> 3] |= static_cast<std::uint8_t>(1u << (i & 7)); }

  std::size_t popcount() const noexcept {
    std::size_t n = 0;
    for (auto b : bytes_) n += static_cast<std::size_t>(std::popcount(b));
    return n;
  }

  friend bool operator==(const BitMask&, const BitMask&) = default;

 private:
  std::size_t count_ = 0;
  std::vector<std::uint8_t> bytes_;
};

template <typename T>
DenseMatrix<T> mm(const DenseMatrix<T>& a, const DenseMatrix<T>& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("mm: cannot multiply " + shape_str(a.rows(), a.cols()) + " by " +
                         shape_str(b.rows(), b.cols()));
  }
  DenseMatrix<T> out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out_row = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const T aik = a(i, k);
      const auto b_row = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aik * b_row[j];
    }
  }
  return out;
}

/// a^T * b without materializing the transpose.
template <typename T>
DenseMatrix<T> mm_tn(const DenseMatrix<T>& a, const DenseMatrix<T>& b) {
  if (a.rows() != b.rows()) {
    throw DimensionError("mm_tn: cannot multiply transpose of " + shape_str(a.rows(), a.cols()) +
                         " by " + shape_str(b.rows(), b.cols()));
  }
  DenseMatrix<T> out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const auto a_row = a.row(k);
    const auto b_row = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const T aki = a_row[i];
      auto out_row = out.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aki * b_row[j];
    }
  }
  return out;
}

/// a * b^T without materializing the transpose.
template <typename T>
DenseMatrix<T> mm_nt(const DenseMatrix<T>& a, const DenseMatrix<T>& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("mm_nt: cannot multiply " + shape_str(a.rows(), a.cols()) +
                         " by transpose of " + shape_str(b.rows(), b.cols()));
  }
  DenseMatrix<T> out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto a_row = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const auto b_row = b.row(j);
      T acc{0};
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a_row[k] * b_row[k];
      out(i, j) = acc;
    }
  }
  return out;
}

template <typename T>
DenseMatrix<T> spmm(const CsrMatrix<T>& s, const DenseMatrix<T>& d) {
  if (s.cols() != d.rows()) {
    throw DimensionError("spmm: cannot multiply sparse " + shape_str(s.rows(), s.cols()) + " by " +
                         shape_str(d.rows(), d.cols()));
  }
  const auto row_ptr = s.row_ptr();
  const auto col_idx = s.col_idx();
  const auto vals = s.values();
  DenseMatrix<T> out(s.rows(), d.cols());
  for (std::size_t r = 0; r < s.rows(); ++r) {
    auto out_row = out.row(r);
    for (auto k = row_ptr[r]; k < row_ptr[r + 1]; ++k) {
      const T v = vals[k];
      const auto d_row = d.row(col_idx[k]);
      for (std::size_t j = 0; j < d.cols(); ++j) out_row[j] += v * d_row[j];
    }
  }
  return out;
}

/// s^T * d. Each output row accumulates contributions in ascending source row.
template <typename T>
DenseMatrix<T> spmm_t(const CsrMatrix<T>& s, const DenseMatrix<T>& d) {
  if (s.rows() != d.rows()) {
    throw DimensionError("spmm_t: cannot multiply transpose of sparse " + shape_str(s.rows(), s.cols()) +
                         " by " + shape_str(d.rows(), d.cols()));
  }
  const auto row_ptr = s.row_ptr();
  const auto col_idx = s.col_idx();
  const auto vals = s.values();
  DenseMatrix<T> out(s.cols(), d.cols());
  for (std::size_t r = 0; r < s.rows(); ++r) {
    const auto d_row = d.row(r);
    for (auto k = row_ptr[r]; k < row_ptr[r + 1]; ++k) {
      const T v = vals[k];
      auto out_row = out.row(col_idx[k]);
      for (std::size_t j = 0; j < d.cols(); ++j) out_row[j] += v * d_row[j];
    }
  }
  return out;
}

template <typename T>
std::pair<DenseMatrix<T>, BitMask> relu(const DenseMatrix<T>& x) {
  DenseMatrix<T> out(x.rows(), x.cols());
  BitMask mask(x.size());
  const auto in = x.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (in[i] > T{0}) {
      dst[i] = in[i];
      mask.set(i);
    }
  }
  return {std::move(out), std::move(mask)};
}

/// grad ⊙ mask, the ReLU backward.
template <typename T>
DenseMatrix<T> apply_mask(const DenseMatrix<T>& grad, const BitMask& mask) {
  if (grad.size() != mask.count()) throw DimensionError("apply_mask: mask length does not match gradient");
  DenseMatrix<T> out(grad.rows(), grad.cols());
  const auto g = grad.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < g.size(); ++i)
    if (mask.test(i)) dst[i] = g[i];
  return out;
}

template <typename T>
T dot(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
  T acc{0};
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace actkg
