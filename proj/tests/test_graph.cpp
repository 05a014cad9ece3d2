#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "support.hpp"
#include "uignn/graph.hpp"

using namespace uignn;
using testing_support::random_adjacency;
using testing_support::random_matrix;

namespace {

// T_k(x) = (k/2) sum_m (-1)^m (k-m-1)! / (m! (k-2m)!) (2x)^(k-2m), k >= 1.
Matrix chebyshev_explicit(const Matrix& a, int k) {
  const auto n = a.rows();
  Matrix result = Matrix::Zero(n, n);
  for (int m = 0; 2 * m <= k; ++m) {
    const double coeff = 0.5 * k * std::pow(-1.0, m) * std::tgamma(k - m) / (std::tgamma(m + 1) * std::tgamma(k - 2 * m + 1));
    Matrix power = Matrix::Identity(n, n);
    for (int p = 0; p < k - 2 * m; ++p) power = power * (2.0 * a);
    result += coeff * power;
  }
  return result;
}

Matrix distances_of(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix d(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (auto r : rows) {
    Eigen::Index j = 0;
    for (double v : r) d(i, j++) = v;
    ++i;
  }
  return d;
}

}  // namespace

TEST(Kernel, ZeroDistanceIsOne) {
  const Matrix d = distances_of({{0, 0}, {0, 0}});
  const RoadGraph g = build_adjacency(d, 2.0);
  EXPECT_EQ(g.adjacency(0, 1), 1.0);
}

TEST(Kernel, DistanceSigmaGivesInverseE) {
  const Matrix d = distances_of({{0, 3}, {3, 0}});
  const RoadGraph g = build_adjacency(d, 3.0);
  EXPECT_NEAR(g.adjacency(0, 1), std::exp(-1.0), 1e-15);
  EXPECT_NEAR(g.adjacency(0, 1), 0.36788, 1e-5);
}

TEST(Kernel, ThresholdDropsFarPairsByDefault) {
  const Matrix d = distances_of({{0, 1, 5}, {1, 0, 2}, {5, 2, 0}});
  const RoadGraph g = build_adjacency(d, 2.0, 2.0);
  EXPECT_GT(g.adjacency(0, 1), 0.0);
  EXPECT_EQ(g.adjacency(1, 2), 0.0);  // d == kappa is dropped
  EXPECT_EQ(g.adjacency(0, 2), 0.0);
  EXPECT_EQ(g.adjacency.diagonal(), Vector::Ones(3));
}

TEST(Kernel, LiteralRuleDropsNearPairs) {
  const Matrix d = distances_of({{0, 1, 5}, {1, 0, 2}, {5, 2, 0}});
  const RoadGraph g = build_adjacency(d, 2.0, 2.0, ThresholdRule::DropNear);
  EXPECT_EQ(g.adjacency(0, 1), 0.0);
  EXPECT_EQ(g.adjacency(1, 2), 0.0);
  EXPECT_NEAR(g.adjacency(0, 2), std::exp(-25.0 / 4.0), 1e-15);
  EXPECT_EQ(g.adjacency(2, 2), 1.0);
}

TEST(Kernel, UnreachablePairsAreZeroAndDefaultSigmaIsDistanceStd) {
  Matrix d = distances_of({{0, 2, kInfiniteDistance}, {4, 0, 6}, {kInfiniteDistance, 8, 0}});
  const RoadGraph g = build_adjacency(d);
  EXPECT_EQ(g.adjacency(0, 2), 0.0);
  std::vector<double> finite{0, 2, 4, 0, 6, 8, 0};
  const double mean = std::accumulate(finite.begin(), finite.end(), 0.0) / 7.0;
  double ss = 0.0;
  for (double v : finite) ss += (v - mean) * (v - mean);
  EXPECT_NEAR(g.kernel_sigma, std::sqrt(ss / 7.0), 1e-12);
}

TEST(Kernel, NegativeDistanceRejected) {
  EXPECT_THROW(build_adjacency(distances_of({{0, -1}, {1, 0}}), 1.0), ParameterError);
}

TEST(Normalize, IdentityStaysIdentity) {
  const TransitionPair t = normalize(Matrix::Identity(4, 4));
  EXPECT_EQ(t.forward, Matrix::Identity(4, 4));
  EXPECT_EQ(t.backward, Matrix::Identity(4, 4));
}

TEST(Normalize, HandRow) {
  Matrix a = Matrix::Zero(3, 3);
  a.row(0) << 2, 2, 0;
  a(1, 1) = 1;
  a(2, 2) = 1;
  const TransitionPair t = normalize(a);
  EXPECT_DOUBLE_EQ(t.forward(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(t.forward(0, 1), 0.5);
  EXPECT_DOUBLE_EQ(t.forward(0, 2), 0.0);
}

TEST(Normalize, RowsSumToOneAndBackwardIsTranspose) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix a = random_adjacency(7, rng, 0.4);
    a.row(3).setZero();
    const TransitionPair t = normalize(a);
    for (Eigen::Index i = 0; i < 7; ++i) {
      if (i == 3)
        EXPECT_EQ(t.forward.row(i).sum(), 0.0);
      else
        EXPECT_NEAR(t.forward.row(i).sum(), 1.0, 1e-9);
    }
    EXPECT_EQ(t.backward, Matrix(t.forward.transpose()));
  }
}

TEST(Normalize, IdempotentOnNormalizedMatrices) {
  std::mt19937_64 rng(12);
  const Matrix once = row_normalize(random_adjacency(6, rng));
  EXPECT_TRUE(row_normalize(once).isApprox(once, 1e-14));
}

TEST(Normalize, RowNormTransposeVariant) {
  std::mt19937_64 rng(13);
  const Matrix a = random_adjacency(5, rng);
  const TransitionPair t = normalize(a, BackwardTransition::RowNormTranspose);
  for (Eigen::Index i = 0; i < 5; ++i) EXPECT_NEAR(t.backward.row(i).sum(), 1.0, 1e-12);
  EXPECT_TRUE(t.backward.isApprox(row_normalize(a.transpose())));
}

TEST(Chebyshev, FirstOrderIsTransitionTimesFeatures) {
  std::mt19937_64 rng(21);
  const Matrix a = row_normalize(random_adjacency(4, rng));
  const Matrix h = random_matrix(4, 3, rng);
  const auto terms = chebyshev_terms(a, h, 1);
  ASSERT_EQ(terms.size(), 1u);
  EXPECT_TRUE(terms[0].isApprox(a * h));
}

TEST(Chebyshev, IdentityTransitionReturnsFeatures) {
  std::mt19937_64 rng(22);
  const Matrix h = random_matrix(5, 2, rng);
  for (const auto& term : chebyshev_terms(Matrix::Identity(5, 5), h, 4)) EXPECT_TRUE(term.isApprox(h, 1e-15));
}

TEST(Chebyshev, SecondOrderMatchesExplicitPolynomial) {
  std::mt19937_64 rng(23);
  const Matrix a = random_matrix(4, 4, rng, -1, 1);
  const Matrix h = random_matrix(4, 3, rng);
  const auto terms = chebyshev_terms(a, h, 2);
  const Matrix expected = (2.0 * a * a - Matrix::Identity(4, 4)) * h;
  EXPECT_LT((terms[1] - expected).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Chebyshev, RecursionMatchesClosedFormCoefficients) {
  std::mt19937_64 rng(24);
  std::uniform_int_distribution<int> size(1, 10), order(1, 4);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = size(rng), k = order(rng);
    const Matrix a = row_normalize(random_adjacency(n, rng));
    const Matrix h = random_matrix(n, 3, rng);
    const auto terms = chebyshev_terms(a, h, k);
    for (int j = 1; j <= k; ++j)
      ASSERT_LT((terms[static_cast<std::size_t>(j - 1)] - chebyshev_explicit(a, j) * h).cwiseAbs().maxCoeff(), 1e-8)
          << "n=" << n << " k=" << j;
  }
}

TEST(Chebyshev, TensorVersionMatchesNumeric) {
  std::mt19937_64 rng(25);
  const Matrix a = row_normalize(random_adjacency(6, rng));
  const Matrix h = random_matrix(6, 4, rng);
  ad::Tape tape;
  const auto tensors = chebyshev_terms(tape.constant(a), tape.constant(h), 3);
  const auto plain = chebyshev_terms(a, h, 3);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_TRUE(tensors[k].value().isApprox(plain[k], 1e-14));
}

TEST(Chebyshev, InvalidArguments) {
  EXPECT_THROW(chebyshev_terms(Matrix::Identity(3, 3), Matrix::Ones(3, 1), 0), ContractError);
  EXPECT_THROW(chebyshev_terms(Matrix::Identity(3, 3), Matrix::Ones(2, 1), 1), DimensionError);
}

TEST(Subgraph, AllNodesInOrderIsIdentity) {
  std::mt19937_64 rng(31);
  const Matrix a = random_adjacency(6, rng);
  NodeList all(6);
  std::iota(all.begin(), all.end(), 0);
  EXPECT_EQ(subgraph(a, all), a);
}

TEST(Subgraph, SingleNode) {
  std::mt19937_64 rng(32);
  const Matrix a = random_adjacency(5, rng);
  const NodeList one{3};
  const Matrix s = subgraph(a, one);
  ASSERT_EQ(s.rows(), 1);
  EXPECT_EQ(s(0, 0), a(3, 3));
}

TEST(Subgraph, PermutedIndicesMatchNaiveGather) {
  std::mt19937_64 rng(33);
  for (int trial = 0; trial < 30; ++trial) {
    const Matrix a = random_adjacency(9, rng);
    NodeList idx(9);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(5);
    const Matrix s = subgraph(a, idx);
    for (std::size_t p = 0; p < idx.size(); ++p)
      for (std::size_t q = 0; q < idx.size(); ++q)
        ASSERT_EQ(s(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(q)),
                  a(static_cast<Eigen::Index>(idx[p]), static_cast<Eigen::Index>(idx[q])));
  }
}

TEST(Subgraph, RejectsBadIndices) {
  const Matrix a = Matrix::Identity(3, 3);
  EXPECT_THROW(subgraph(a, NodeList{0, 3}), ContractError);
  EXPECT_THROW(subgraph(a, NodeList{1, 1}), ContractError);
}

TEST(Subgraph, NormalizeMustFollowExtraction) {
  // Node 0 links to 1 and 2; keeping only {0, 1} is not degree-closed.
  Matrix a = Matrix::Identity(3, 3);
  a(0, 1) = a(1, 0) = 1.0;
  a(0, 2) = a(2, 0) = 1.0;
  const NodeList keep{0, 1};
  const Matrix after = normalize(subgraph(a, keep)).forward;
  const Matrix before = subgraph(row_normalize(a), keep);
  EXPECT_NEAR(after.row(0).sum(), 1.0, 1e-15);
  EXPECT_LT(before.row(0).sum(), 1.0 - 1e-3);
  EXPECT_FALSE(after.isApprox(before));
}

TEST(RoadGraphPartition, SetMissingSplitsNodes) {
  RoadGraph g = build_adjacency(Matrix::Zero(5, 5), 1.0);
  g.set_missing({4, 1});
  EXPECT_EQ(g.missing, (NodeList{1, 4}));
  EXPECT_EQ(g.observable, (NodeList{0, 2, 3}));
  EXPECT_THROW(g.set_missing({5}), ContractError);
}
