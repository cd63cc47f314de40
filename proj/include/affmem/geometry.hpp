#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "affmem/errors.hpp"
#include "affmem/types.hpp"

namespace affmem {

/// <a,b> / (|a| |b|). Throws DimensionError on size mismatch and
/// DegenerateVectorError if either operand has zero norm.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar cosine_similarity(const Eigen::MatrixBase<DerivedA>& a,
                                            const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  if (a.size() != b.size()) {
    throw DimensionError("cosine_similarity: dimension mismatch (" +
                         std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
  }
  const Scalar na = a.norm();
  const Scalar nb = b.norm();
  if (!(na > Scalar(0)) || !(nb > Scalar(0))) {
    throw DegenerateVectorError("cosine_similarity: zero-norm input");
  }
  const Scalar c = a.dot(b) / (na * nb);
  return std::clamp(c, Scalar(-1), Scalar(1));
}

template <typename Scalar>
Scalar cosine_similarity(const BasicEmbedding<Scalar>& a, const BasicEmbedding<Scalar>& b) {
  return cosine_similarity(a.values(), b.values());
}

/// Dot product of two stored (unit-norm) embeddings.
template <typename Scalar>
Scalar unit_similarity(const BasicEmbedding<Scalar>& a, const BasicEmbedding<Scalar>& b) {
  if (a.dim() != b.dim()) {
    throw DimensionError("unit_similarity: dimension mismatch (" + std::to_string(a.dim()) +
                         " vs " + std::to_string(b.dim()) + ")");
  }
  return a.values().dot(b.values());
}

template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar euclidean_distance(const Eigen::MatrixBase<DerivedA>& p,
                                             const Eigen::MatrixBase<DerivedB>& q) {
  return (p - q).norm();
}

}  // namespace affmem
