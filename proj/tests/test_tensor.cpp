#include <gtest/gtest.h>

#include <cmath>
#include <tuple>
#include <vector>

#include "actkg/random.hpp"
#include "actkg/tensor.hpp"
#include "reference_engine.hpp"

using actkg::CsrMatrix;
using actkg::DenseMatrix;
using Csr = CsrMatrix<double>;
using Mat = DenseMatrix<double>;

namespace {

Mat random_dense(std::size_t r, std::size_t c, actkg::Rng& rng) {
  Mat m(r, c);
  for (auto& v : m.values()) v = rng.uniform(-1.0, 1.0);
  return m;
}

Csr random_csr(std::size_t r, std::size_t c, double density, actkg::Rng& rng) {
  std::vector<std::tuple<std::uint32_t, std::uint32_t, double>> t;
  for (std::uint32_t i = 0; i < r; ++i)
    for (std::uint32_t j = 0; j < c; ++j)
      if (rng.uniform() < density) t.emplace_back(i, j, rng.uniform(-2.0, 2.0));
  return Csr::from_triplets(r, c, std::move(t));
}

// Dense copy built entry by entry from the raw CSR arrays.
Mat dense_of(const Csr& s) {
  Mat m(s.rows(), s.cols());
  for (std::size_t r = 0; r < s.rows(); ++r)
    for (auto k = s.row_ptr()[r]; k < s.row_ptr()[r + 1]; ++k) m(r, s.col_idx()[k]) = s.values()[k];
  return m;
}

}  // namespace

TEST(Mm, IdentityLeavesMatrixUnchanged) {
  const auto m = Mat::from_rows({{1.5, -2.0}, {0.25, 7.0}});
  EXPECT_EQ(actkg::mm(Mat::identity(2), m), m);
}

TEST(Mm, HandExpandedProduct) {
  const auto a = Mat::from_rows({{1, 2}, {3, 4}});
  const auto b = Mat::from_rows({{1}, {1}});
  EXPECT_EQ(actkg::mm(a, b), Mat::from_rows({{3}, {7}}));
}

TEST(Mm, OnesDotProduct) {
  for (std::size_t k : {1u, 5u, 64u}) {
    const auto out = actkg::mm(Mat(1, k, 1.0), Mat(k, 1, 1.0));
    ASSERT_EQ(out.rows(), 1u);
    EXPECT_EQ(out(0, 0), static_cast<double>(k));
  }
}

TEST(Mm, ShapeMismatchNamesBothShapes) {
  try {
    actkg::mm(Mat(2, 3), Mat(4, 5));
    FAIL() << "expected DimensionError";
  } catch (const actkg::DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("(2x3)"), std::string::npos);
    EXPECT_NE(msg.find("(4x5)"), std::string::npos);
  }
}

TEST(Mm, TransposedVariantsMatchExplicitTranspose) {
  actkg::Rng rng(3);
  const auto a = random_dense(5, 4, rng);
  const auto b = random_dense(5, 3, rng);
  const auto c = random_dense(6, 4, rng);
  EXPECT_EQ(actkg::mm_tn(a, b), reference::matmul(actkg::transpose(a), b));
  EXPECT_EQ(actkg::mm_nt(a, c), reference::matmul(a, actkg::transpose(c)));
  EXPECT_THROW(actkg::mm_tn(a, c), actkg::DimensionError);
  EXPECT_THROW(actkg::mm_nt(a, b), actkg::DimensionError);
}

TEST(Mm, AssociativeWithinTolerance) {
  actkg::Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = random_dense(8, 8, rng), b = random_dense(8, 8, rng), c = random_dense(8, 8, rng);
    const auto left = actkg::mm(actkg::mm(a, b), c);
    const auto right = reference::matmul(a, reference::matmul(b, c));
    for (std::size_t i = 0; i < left.size(); ++i) {
      const double l = left.values()[i], r = right.values()[i];
      EXPECT_LE(std::abs(l - r), 1e-12 * std::max(1.0, std::abs(r)));
    }
  }
}

TEST(Spmm, IdentityCsr) {
  actkg::Rng rng(1);
  const auto m = random_dense(4, 3, rng);
  EXPECT_EQ(actkg::spmm(Csr::identity(4), m), m);
}

TEST(Spmm, DensifyAndMultiplyExample) {
  const auto s = Csr::from_triplets(2, 2, {{0, 1, 0.5}, {1, 0, 0.5}});
  const auto d = Mat::from_rows({{2, 0}, {0, 4}});
  EXPECT_EQ(actkg::spmm(s, d), Mat::from_rows({{0, 2}, {1, 0}}));
}

TEST(Spmm, EmptyRowGivesZeroRow) {
  const auto s = Csr::from_triplets(3, 2, {{0, 0, 1.0}, {2, 1, 3.0}});
  const auto out = actkg::spmm(s, Mat::from_rows({{1, 2}, {3, 4}}));
  EXPECT_EQ(out(1, 0), 0.0);
  EXPECT_EQ(out(1, 1), 0.0);
  EXPECT_EQ(out(2, 0), 9.0);
}

TEST(Spmm, ShapeMismatch) {
  EXPECT_THROW(actkg::spmm(Csr::identity(3), Mat(2, 2)), actkg::DimensionError);
  EXPECT_THROW(actkg::spmm_t(Csr::identity(3), Mat(2, 2)), actkg::DimensionError);
}

TEST(SpmmT, SymmetricMatchesSpmm) {
  const auto s = Csr::from_triplets(3, 3, {{0, 1, 0.5}, {1, 0, 0.5}, {1, 2, 0.25}, {2, 1, 0.25}, {2, 2, 1.0}});
  actkg::Rng rng(2);
  const auto d = random_dense(3, 4, rng);
  EXPECT_EQ(actkg::spmm_t(s, d), actkg::spmm(s, d));
}

TEST(SpmmT, DensifyTransposeExample) {
  const auto s = Csr::from_triplets(2, 2, {{0, 1, 1.0}});
  const double a = 1.25, b = -3.0, c = 0.5, d = 8.0;
  EXPECT_EQ(actkg::spmm_t(s, Mat::from_rows({{a, b}, {c, d}})), Mat::from_rows({{0, 0}, {a, b}}));
}

TEST(SpmmT, IdentityCsr) {
  actkg::Rng rng(4);
  const auto m = random_dense(5, 2, rng);
  EXPECT_EQ(actkg::spmm_t(Csr::identity(5), m), m);
}

TEST(Spmm, RandomMatricesMatchDenseOracleBitwise) {
  actkg::Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t r = 1 + rng.below(32), c = 1 + rng.below(32), k = 1 + rng.below(8);
    const auto s = random_csr(r, c, rng.uniform(0.0, 0.6), rng);
    const auto dense = dense_of(s);
    EXPECT_EQ(s.densify(), dense);
    const auto right = random_dense(c, k, rng);
    EXPECT_EQ(actkg::spmm(s, right), reference::matmul(dense, right));
    const auto left = random_dense(r, k, rng);
    EXPECT_EQ(actkg::spmm_t(s, left), reference::matmul(reference::transposed(dense), left));
  }
}

TEST(Csr, RejectsMalformedArrays) {
  using V = std::vector<std::uint32_t>;
  EXPECT_THROW(Csr(2, 2, V{0, 1}, V{0}, {1.0}), actkg::DimensionError);            // row_ptr length
  EXPECT_THROW(Csr(1, 2, V{1, 1}, V{0}, {1.0}), actkg::DimensionError);            // row_ptr[0]
  EXPECT_THROW(Csr(1, 2, V{0, 2}, V{0}, {1.0}), actkg::DimensionError);            // nnz
  EXPECT_THROW(Csr(1, 2, V{0, 1}, V{2}, {1.0}), actkg::DimensionError);            // column range
  EXPECT_THROW(Csr(1, 3, V{0, 2}, V{1, 1}, {1.0, 2.0}), actkg::DimensionError);    // strictly increasing
  EXPECT_THROW(Csr(2, 3, V{0, 2, 1}, V{0, 1}, {1.0, 2.0}), actkg::DimensionError); // nondecreasing
  EXPECT_THROW(Csr::from_triplets(2, 2, {{0, 0, 1.0}, {0, 0, 2.0}}), actkg::DimensionError);
  EXPECT_NO_THROW(Csr(1, 3, V{0, 2}, V{0, 2}, {1.0, 2.0}));
}

TEST(Csr, StoredBytesCountsIndicesAndValues) {
  const auto s = Csr::from_triplets(3, 3, {{0, 0, 1.0}, {1, 2, 1.0}});
  EXPECT_EQ(s.stored_bytes(), 2u * 8u + 4u * 4u);
}

TEST(Relu, AllNegativeGivesZerosAndEmptyMask) {
  const auto [out, mask] = actkg::relu(Mat::from_rows({{-1, -2}, {-0.5, -3}}));
  EXPECT_EQ(out, Mat(2, 2));
  EXPECT_EQ(mask.popcount(), 0u);
  EXPECT_EQ(mask.stored_bytes(), 1u);
}

TEST(Relu, ZeroMapsToMaskBitZero) {
  const auto [out, mask] = actkg::relu(Mat::from_rows({{-1, 0, 2.5}}));
  EXPECT_EQ(out, Mat::from_rows({{0, 0, 2.5}}));
  EXPECT_FALSE(mask.test(0));
  EXPECT_FALSE(mask.test(1));
  EXPECT_TRUE(mask.test(2));
  EXPECT_EQ(mask.bytes()[0], 0b100);
}

TEST(Relu, NonnegativeInputUnchanged) {
  const auto x = Mat::from_rows({{0, 1, 2}, {3, 0, 5}});
  const auto [out, mask] = actkg::relu(x);
  EXPECT_EQ(out, x);
  EXPECT_EQ(mask.popcount(), 4u);
  EXPECT_FALSE(mask.test(0));
  EXPECT_FALSE(mask.test(4));
}

TEST(Relu, Idempotent) {
  actkg::Rng rng(9);
  for (int t = 0; t < 50; ++t) {
    const auto x = random_dense(1 + rng.below(10), 1 + rng.below(10), rng);
    const auto once = actkg::relu(x).first;
    EXPECT_EQ(actkg::relu(once).first, once);
  }
}

TEST(Relu, MaskBackwardZeroesInactivePositions) {
  const auto [out, mask] = actkg::relu(Mat::from_rows({{1, -1}, {0, 2}}));
  const auto g = actkg::apply_mask(Mat::from_rows({{5, 6}, {7, 8}}), mask);
  EXPECT_EQ(g, Mat::from_rows({{5, 0}, {0, 8}}));
  EXPECT_THROW(actkg::apply_mask(Mat(3, 3), mask), actkg::DimensionError);
}

TEST(DenseMatrix, FromRowsRejectsRaggedInput) {
  EXPECT_THROW(Mat::from_rows({{1, 2}, {3}}), actkg::DimensionError);
}

TEST(DenseMatrix, FiniteCheck) {
  Mat m(2, 2, 1.0);
  EXPECT_TRUE(m.all_finite());
  m(1, 1) = std::nan("");
  EXPECT_FALSE(m.all_finite());
}
