#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

namespace clustertab::nn {

#ifdef CLUSTERTAB_FLOAT32
using Scalar = float;
#else
using Scalar = double;
#endif

using Shape = std::vector<int>;

std::string shape_str(const Shape& shape);
std::size_t shape_size(const Shape& shape);

/// Dense contiguous tensor. Operations treat it as a matrix of
/// (product of leading dims) x (last dim).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Scalar fill = 0);
  Tensor(Shape shape, std::vector<Scalar> data);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  int dim() const { return static_cast<int>(shape_.size()); }
  int rows() const;
  int cols() const;

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> values() { return data_; }
  std::span<const Scalar> values() const { return data_; }

  Scalar& operator[](std::size_t i) { return data_[i]; }
  Scalar operator[](std::size_t i) const { return data_[i]; }
  Scalar& at(int r, int c) { return data_[static_cast<std::size_t>(r) * cols() + c]; }
  Scalar at(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols() + c]; }

  void fill(Scalar v);
  Tensor reshaped(Shape shape) const;
  bool all_finite() const;

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<Scalar, Eigen::aligned_allocator<Scalar>> data_;
};

struct ParamId {
  std::size_t index = 0;
  bool operator==(const ParamId&) const = default;
};

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

/// Named learnable tensors with gradient accumulators of identical shape.
class ParamStore {
 public:
  ParamId add(std::string name, Shape shape);
  ParamId add(std::string name, Tensor value);

  Parameter& operator[](ParamId id) { return params_[id.index]; }
  const Parameter& operator[](ParamId id) const { return params_[id.index]; }
  std::optional<ParamId> find(const std::string& name) const;
  ParamId at(const std::string& name) const;

  std::vector<Parameter>& all() { return params_; }
  const std::vector<Parameter>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }

  void zero_grad();
  /// Total scalar count, optionally restricted to names not starting with `exclude_prefix`.
  std::size_t count(const std::string& exclude_prefix = {}) const;

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Counter-based seed mixing (splitmix64 finaliser).
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

}  // namespace clustertab::nn
