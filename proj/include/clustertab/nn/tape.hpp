#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "clustertab/nn/tensor.hpp"

namespace clustertab::nn {

/// Handle to a value recorded on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode tape over a fixed set of primitives. Every op evaluates
/// eagerly and records how to push gradients back to its inputs. Parameter
/// gradients are accumulated (+=) straight into the ParamStore.
///
/// All ops view tensors as matrices (rows x last dim).
class Tape {
 public:
  /// Training tape: backward() accumulates into `params`.
  explicit Tape(ParamStore* params = nullptr);
  /// Inference tape: parameters are read-only constants, so several tapes
  /// may share one store.
  explicit Tape(const ParamStore* params);

  Var constant(Tensor value);
  /// Leaf that references the stored parameter value (no copy).
  Var parameter(ParamId id);

  const Tensor& value(Var v) const;
  /// Gradient of the last backward() root with respect to v (zeros if untouched).
  Tensor grad(Var v) const;

  Var matmul(Var a, Var b);
  Var transpose(Var a);
  Var reshape(Var a, Shape shape);
  /// Elementwise sum; `b` may also be a 1-D tensor of size a.cols(), added to every row.
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, Scalar s);
  Var sigmoid(Var a);
  /// Tanh approximation of GELU.
  Var gelu(Var a);
  /// Softmax over the last axis.
  Var softmax(Var a);
  /// Normalises each row to zero mean / unit variance, then applies gain and bias (both 1-D).
  Var layer_norm(Var x, Var gain, Var bias, Scalar eps = 1e-5);
  /// Gathers rows of `table`. Throws IndexError for ids outside the table.
  Var embedding(Var table, std::span<const int> ids);
  /// Inverted dropout; identity when `training` is false or p == 0.
  Var dropout(Var a, Scalar p, std::uint64_t seed, bool training);
  /// out = mask ? value : a, with mask given per element.
  Var masked_fill(Var a, std::vector<unsigned char> mask, Scalar value);
  Var slice_cols(Var a, int begin, int end);
  Var concat_cols(std::span<const Var> parts);
  /// Sum of all elements as a 1-element tensor.
  Var sum(Var a);
  /// Sum over entries of weight * BCE(sigmoid(logit), target), in the stable logit form.
  Var bce_with_logits(Var logits, const Tensor& targets, const Tensor& weights);

  /// Seeds d(root)/d(root) = 1 and propagates to every recorded input.
  void backward(Var root);

  std::size_t num_nodes() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    const Tensor* ref = nullptr;  // parameter leaves
    Tensor grad;
    bool needs_grad = false;
    bool has_grad = false;
    long param = -1;
    std::function<void(int)> backward;
  };

  const Tensor& val(int id) const { return nodes_[id].ref ? *nodes_[id].ref : nodes_[id].value; }
  Tensor& grad_buffer(int id);
  bool needs(int id) const { return nodes_[id].needs_grad; }
  Var push(Tensor value, bool needs_grad, std::function<void(int)> backward);
  void check(Var v, const char* op) const;

  const ParamStore* params_;
  ParamStore* mutable_params_;
  std::vector<Node> nodes_;
};

}  // namespace clustertab::nn
