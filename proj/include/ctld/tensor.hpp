#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "ctld/error.hpp"

namespace ctld {

inline std::int64_t numel(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int e : shape) {
    if (e <= 0) throw ConfigError("tensor extents must be positive");
    n *= e;
  }
  return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Dense row-major tensor. Rank 0 (empty shape) is a scalar with one
/// element; a default-constructed tensor is empty and holds no data.
template <typename Scalar>
class Tensor {
 public:
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Tensor() = default;

  explicit Tensor(std::vector<int> shape)
      : shape_(std::move(shape)), data_(Storage::Zero(numel(shape_))) {}

  Tensor(std::vector<int> shape, std::vector<Scalar> values)
      : shape_(std::move(shape)) {
    if (static_cast<std::int64_t>(values.size()) != numel(shape_))
      throw ConfigError("tensor data length does not match shape " + shape_str(shape_));
    data_ = Eigen::Map<const Storage>(values.data(), values.size());
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int> shape, Scalar v) {
    Tensor t(std::move(shape));
    t.data_.setConstant(v);
    return t;
  }

  static Tensor scalar(Scalar v) { return Tensor({}, {v}); }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  Eigen::Index size() const { return data_.size(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  Storage& array() { return data_; }
  const Storage& array() const { return data_; }

  template <typename... Ix>
  Scalar& operator()(Ix... ix) {
    return data_[offset(ix...)];
  }
  template <typename... Ix>
  Scalar operator()(Ix... ix) const {
    return data_[offset(ix...)];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const { return data_.isFinite().all(); }
  void set_zero() { data_.setZero(); }

  /// Scalar convenience for rank-0 / single-element tensors.
  Scalar item() const {
    if (data_.size() != 1) throw UsageError("item() on tensor of size " + std::to_string(data_.size()));
    return data_[0];
  }

 private:
  template <typename... Ix>
  Eigen::Index offset(Ix... ix) const {
    const int idx[] = {static_cast<int>(ix)...};
    constexpr int n = sizeof...(Ix);
    Eigen::Index off = 0;
    for (int i = 0; i < n; ++i) off = off * shape_[static_cast<std::size_t>(i)] + idx[i];
    return off;
  }

  std::vector<int> shape_;
  Storage data_;
};

}  // namespace ctld
