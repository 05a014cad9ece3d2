#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "uignn/autodiff.hpp"
#include "uignn/errors.hpp"

namespace uignn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using NodeIndex = std::size_t;
using NodeList = std::vector<NodeIndex>;

inline constexpr double kInfiniteDistance = std::numeric_limits<double>::infinity();

/// Which side of the distance threshold gets truncated to zero.
enum class ThresholdRule {
  DropFar,   ///< dist >= kappa -> 0 (far pairs removed)
  DropNear,  ///< dist <= kappa -> 0 (literal reading; self-loops still kept)
};

/// How the backward transition matrix is formed.
enum class BackwardTransition {
  Transpose,          ///< A_b = A_f^T
  RowNormTranspose,   ///< A_b = row-normalize(A^T)
};

struct RoadGraph {
  std::size_t n = 0;
  Matrix adjacency;  ///< n x n, entries in [0, 1], unit diagonal
  Matrix distances;  ///< n x n road distances, +inf where no path is known
  NodeList observable;
  NodeList missing;
  double kernel_sigma = 1.0;
  double kernel_kappa = kInfiniteDistance;
  std::vector<std::string> ids;

  std::size_t num_observable() const noexcept { return observable.size(); }
  std::size_t num_missing() const noexcept { return missing.size(); }

  /// true when node i carries historical data.
  std::vector<bool> observable_mask() const {
    std::vector<bool> m(n, false);
    for (auto i : observable) m[i] = true;
    return m;
  }

  /// Replaces the partition; `missing_nodes` must be distinct valid indices.
  void set_missing(NodeList missing_nodes) {
    std::vector<bool> hidden(n, false);
    for (auto i : missing_nodes) {
      if (i >= n) throw ContractError("set_missing: node index out of range");
      if (hidden[i]) throw ContractError("set_missing: duplicate node index");
      hidden[i] = true;
    }
    observable.clear();
    missing.clear();
    for (std::size_t i = 0; i < n; ++i) (hidden[i] ? missing : observable).push_back(i);
  }
};

struct TransitionPair {
  Matrix forward;
  Matrix backward;
};

/// Population standard deviation of the finite entries of a distance matrix.
inline double finite_distance_std(const Matrix& distances) {
  double sum = 0.0, sum_sq = 0.0;
  std::size_t count = 0;
  for (Eigen::Index i = 0; i < distances.size(); ++i) {
    const double d = distances.data()[i];
    if (!std::isfinite(d)) continue;
    sum += d;
    sum_sq += d * d;
    ++count;
  }
  if (count == 0) throw ParameterError("finite_distance_std: no finite distances");
  const double mean = sum / static_cast<double>(count);
  return std::sqrt(std::max(0.0, sum_sq / static_cast<double>(count) - mean * mean));
}

/// Thresholded Gaussian kernel A_ij = exp(-d_ij^2 / sigma^2). When `sigma` is
/// empty it falls back to the standard deviation of the finite distances.
inline RoadGraph build_adjacency(const Matrix& distances, std::optional<double> sigma = std::nullopt,
                                 double kappa = kInfiniteDistance, ThresholdRule rule = ThresholdRule::DropFar) {
  if (distances.rows() != distances.cols()) throw DimensionError("build_adjacency: distance matrix not square");
  const double s = sigma ? *sigma : finite_distance_std(distances);
  if (!(s > 0.0)) throw ParameterError("build_adjacency: sigma must be positive");
  if ((distances.array() < 0.0).any()) throw ParameterError("build_adjacency: negative distance");

  RoadGraph g;
  g.n = static_cast<std::size_t>(distances.rows());
  g.distances = distances;
  g.kernel_sigma = s;
  g.kernel_kappa = kappa;
  g.adjacency = Matrix::Zero(distances.rows(), distances.cols());
  for (Eigen::Index i = 0; i < distances.rows(); ++i) {
    for (Eigen::Index j = 0; j < distances.cols(); ++j) {
      if (i == j) {
        g.adjacency(i, j) = 1.0;
        continue;
      }
      const double d = distances(i, j);
      if (!std::isfinite(d)) continue;
      const bool dropped = rule == ThresholdRule::DropFar ? d >= kappa : d <= kappa;
      if (!dropped) g.adjacency(i, j) = std::exp(-(d * d) / (s * s));
    }
  }
  for (std::size_t i = 0; i < g.n; ++i) g.observable.push_back(i);
  return g;
}

/// Divides each row by its sum; rows summing to zero stay zero.
inline Matrix row_normalize(const Matrix& a) {
  Matrix out = Matrix::Zero(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double deg = a.row(i).sum();
    if (deg > 0.0) out.row(i) = a.row(i) / deg;
  }
  return out;
}

inline TransitionPair normalize(const Matrix& adjacency, BackwardTransition rule = BackwardTransition::Transpose) {
  if (adjacency.rows() != adjacency.cols()) throw DimensionError("normalize: adjacency not square");
  if ((adjacency.array() < 0.0).any()) throw DomainError("normalize: negative adjacency entry");
  TransitionPair t;
  t.forward = row_normalize(adjacency);
  t.backward = rule == BackwardTransition::Transpose ? Matrix(t.forward.transpose())
                                                     : row_normalize(adjacency.transpose());
  return t;
}

inline TransitionPair normalize(const RoadGraph& g, BackwardTransition rule = BackwardTransition::Transpose) {
  return normalize(g.adjacency, rule);
}

/// T_k(A) H for k = 1..order via Z_k = 2 A Z_{k-1} - Z_{k-2}, Z_0 = H, Z_1 = A H.
inline std::vector<Matrix> chebyshev_terms(const Matrix& transition, const Matrix& h, int order) {
  if (order < 1) throw ContractError("chebyshev_terms: order must be >= 1");
  if (transition.rows() != transition.cols() || transition.cols() != h.rows())
    throw DimensionError("chebyshev_terms: transition and features do not align");
  std::vector<Matrix> terms;
  terms.reserve(static_cast<std::size_t>(order));
  Matrix prev = h;
  Matrix cur = transition * h;
  terms.push_back(cur);
  for (int k = 2; k <= order; ++k) {
    Matrix next = 2.0 * (transition * cur) - prev;
    prev = std::move(cur);
    cur = std::move(next);
    terms.push_back(cur);
  }
  return terms;
}

/// Differentiable version; the transition enters the tape as a constant.
inline std::vector<ad::Tensor> chebyshev_terms(const ad::Tensor& transition, const ad::Tensor& h, int order) {
  if (order < 1) throw ContractError("chebyshev_terms: order must be >= 1");
  if (transition.rows() != transition.cols() || transition.cols() != h.rows())
    throw DimensionError("chebyshev_terms: transition and features do not align");
  std::vector<ad::Tensor> terms;
  terms.reserve(static_cast<std::size_t>(order));
  ad::Tensor prev = h;
  ad::Tensor cur = ad::matmul(transition, h);
  terms.push_back(cur);
  for (int k = 2; k <= order; ++k) {
    ad::Tensor next = ad::scale(ad::matmul(transition, cur), 2.0) - prev;
    prev = cur;
    cur = next;
    terms.push_back(cur);
  }
  return terms;
}

/// Gathers A[indices[p], indices[q]] preserving the given order.
inline Matrix subgraph(const Matrix& adjacency, std::span<const NodeIndex> indices) {
  const auto n = static_cast<std::size_t>(adjacency.rows());
  std::vector<bool> seen(n, false);
  for (auto i : indices) {
    if (i >= n) throw ContractError("subgraph: node index " + std::to_string(i) + " out of range");
    if (seen[i]) throw ContractError("subgraph: duplicate node index " + std::to_string(i));
    seen[i] = true;
  }
  const auto m = static_cast<Eigen::Index>(indices.size());
  Matrix out(m, m);
  for (Eigen::Index p = 0; p < m; ++p)
    for (Eigen::Index q = 0; q < m; ++q)
      out(p, q) = adjacency(static_cast<Eigen::Index>(indices[p]), static_cast<Eigen::Index>(indices[q]));
  return out;
}

inline Matrix subgraph(const RoadGraph& g, std::span<const NodeIndex> indices) {
  return subgraph(g.adjacency, indices);
}

}  // namespace uignn
