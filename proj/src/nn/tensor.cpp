#include "clustertab/nn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "clustertab/errors.hpp"

namespace clustertab::nn {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ")";
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor::Tensor(Shape shape, Scalar fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<Scalar> data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  if (data_.size() != shape_size(shape_))
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_str(shape_));
}

int Tensor::cols() const { return shape_.empty() ? 1 : shape_.back(); }

int Tensor::rows() const {
  int c = cols();
  return c == 0 ? 0 : static_cast<int>(data_.size() / static_cast<std::size_t>(c));
}

void Tensor::fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size())
    throw ShapeError("reshape: cannot view " + shape_str(shape_) + " as " + shape_str(shape));
  Tensor out = *this;
  out.shape_ = std::move(shape);
  return out;
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](Scalar v) { return std::isfinite(v); });
}

ParamId ParamStore::add(std::string name, Shape shape) { return add(std::move(name), Tensor(std::move(shape))); }

ParamId ParamStore::add(std::string name, Tensor value) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  ParamId id{params_.size()};
  index_.emplace(name, id.index);
  Tensor grad(value.shape());
  params_.push_back({std::move(name), std::move(value), std::move(grad)});
  return id;
}

std::optional<ParamId> ParamStore::find(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return ParamId{it->second};
}

ParamId ParamStore::at(const std::string& name) const {
  auto id = find(name);
  if (!id) throw ConfigError("unknown parameter '" + name + "'");
  return *id;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.grad.fill(0);
}

std::size_t ParamStore::count(const std::string& exclude_prefix) const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (!exclude_prefix.empty() && p.name.rfind(exclude_prefix, 0) == 0) continue;
    n += p.value.size();
  }
  return n;
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(a) ^ b) ^ c);
}

}  // namespace clustertab::nn
