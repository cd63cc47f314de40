#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <compare>
#include <optional>
#include <string>
#include <vector>

#include "affmem/errors.hpp"

namespace affmem {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using Vector3 = Eigen::Matrix<Scalar, 3, 1>;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Position3D = Vector3<double>;

/// Dense embedding. Values are finite and, once built through `normalized`,
/// have unit L2 norm so that cosine similarity is a dot product.
template <typename Scalar>
class BasicEmbedding {
 public:
  using Vector = VectorX<Scalar>;

  BasicEmbedding() = default;

  /// Wraps `values` as-is. Throws DimensionError on empty input and
  /// DegenerateVectorError on non-finite entries.
  explicit BasicEmbedding(Vector values) : values_(std::move(values)) {
    if (values_.size() == 0) throw DimensionError("embedding has zero dimension");
    if (!values_.allFinite()) {
      throw DegenerateVectorError("embedding contains non-finite values");
    }
  }

  /// L2-normalized copy of `values`.
  static BasicEmbedding normalized(const Vector& values) {
    BasicEmbedding e(values);
    const Scalar n = e.values_.norm();
    if (!(n > Scalar(0))) throw DegenerateVectorError("zero-norm embedding");
    e.values_ /= n;
    return e;
  }

  static BasicEmbedding from_std(const std::vector<Scalar>& v) {
    return BasicEmbedding(Eigen::Map<const Vector>(v.data(), Eigen::Index(v.size())));
  }

  Eigen::Index dim() const { return values_.size(); }
  bool empty() const { return values_.size() == 0; }
  const Vector& values() const { return values_; }

  std::vector<Scalar> to_std() const {
    return std::vector<Scalar>(values_.data(), values_.data() + values_.size());
  }

  friend bool operator==(const BasicEmbedding& a, const BasicEmbedding& b) {
    return a.values_.size() == b.values_.size() && a.values_ == b.values_;
  }

 private:
  Vector values_;
};

using Embedding = BasicEmbedding<double>;

inline bool is_finite(const Position3D& p) { return p.allFinite(); }

/// Robot-executable atomic action. Pick and place are built in; anything
/// else (open, close, ...) is carried by name.
class Action {
 public:
  Action() = default;
  static Action pick() { return Action("pick"); }
  static Action place() { return Action("place"); }
  static Action named(std::string name);

  const std::string& name() const { return name_; }
  bool is_pick() const { return name_ == "pick"; }
  bool is_place() const { return name_ == "place"; }

  auto operator<=>(const Action&) const = default;

 private:
  explicit Action(std::string name) : name_(std::move(name)) {}
  std::string name_;
};

struct AffordanceTriplet {
  std::string instance_id;
  Action action;
  double score = 0.0;

  bool operator==(const AffordanceTriplet&) const = default;
};

enum class NodeKind { Affordance = 1, Instance = 2, View = 3, Region = 4 };

const char* to_string(NodeKind kind);

inline NodeKind kind_for_level(int level) {
  switch (level) {
    case 1: return NodeKind::Affordance;
    case 2: return NodeKind::Instance;
    case 3: return NodeKind::View;
    default: return NodeKind::Region;
  }
}

/// Pre-explored observation handed to the builder.
struct ViewRecord {
  std::string image_ref;
  Position3D pose = Position3D::Zero();
  int width = 0;
  int height = 0;
  std::string env_id;
};

}  // namespace affmem
