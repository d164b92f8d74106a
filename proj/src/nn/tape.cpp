#include "clustertab/nn/tape.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include <Eigen/Dense>

#include "clustertab/errors.hpp"

namespace clustertab::nn {

namespace {

using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<Mat>;
using CMapM = Eigen::Map<const Mat>;

CMapM cmat(const Tensor& t) { return CMapM(t.data(), t.rows(), t.cols()); }
MapM mmat(Tensor& t) { return MapM(t.data(), t.rows(), t.cols()); }

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

void require_2d(const char* op, const Tensor& t) {
  if (t.dim() != 2) throw ShapeError(std::string(op) + ": expected a 2-D tensor, got " + shape_str(t.shape()));
}

constexpr Scalar kGeluC = static_cast<Scalar>(0.7978845608028654);  // sqrt(2/pi)
constexpr Scalar kGeluA = static_cast<Scalar>(0.044715);

}  // namespace

Tape::Tape(ParamStore* params) : params_(params), mutable_params_(params) { nodes_.reserve(256); }

Tape::Tape(const ParamStore* params) : params_(params), mutable_params_(nullptr) { nodes_.reserve(256); }

void Tape::check(Var v, const char* op) const {
  if (v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
    throw IndexError(std::string(op) + ": variable does not belong to this tape");
}

Var Tape::push(Tensor value, bool needs_grad, std::function<void(int)> backward) {
#ifndef NDEBUG
  if (!value.all_finite()) throw Error("non-finite value produced on tape");
#endif
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Tensor& Tape::grad_buffer(int id) {
  Node& n = nodes_[id];
  if (n.param >= 0) {
    if (!mutable_params_) throw ConfigError("backward through a read-only parameter store");
    n.has_grad = true;
    return (*mutable_params_)[ParamId{static_cast<std::size_t>(n.param)}].grad;
  }
  if (!n.has_grad) {
    n.grad = Tensor(val(id).shape(), 0);
    n.has_grad = true;
  }
  return n.grad;
}

Var Tape::constant(Tensor value) { return push(std::move(value), false, nullptr); }

Var Tape::parameter(ParamId id) {
  if (!params_) throw ConfigError("tape has no parameter store");
  if (id.index >= params_->size()) throw IndexError("unknown parameter id");
  Node n;
  n.ref = &(*params_)[id].value;
  n.needs_grad = mutable_params_ != nullptr;
  n.param = static_cast<long>(id.index);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

const Tensor& Tape::value(Var v) const {
  check(v, "value");
  return val(v.id);
}

Tensor Tape::grad(Var v) const {
  check(v, "grad");
  const Node& n = nodes_[v.id];
  if (n.param >= 0) return (*params_)[ParamId{static_cast<std::size_t>(n.param)}].grad;
  if (n.has_grad) return n.grad;
  return Tensor(val(v.id).shape(), 0);
}

Var Tape::matmul(Var a, Var b) {
  check(a, "matmul");
  check(b, "matmul");
  const Tensor& A = val(a.id);
  const Tensor& B = val(b.id);
  require_2d("matmul", A);
  require_2d("matmul", B);
  if (A.cols() != B.rows()) shape_fail("matmul", A.shape(), B.shape());
  Tensor out({A.rows(), B.cols()});
  mmat(out).noalias() = cmat(A) * cmat(B);
  const int ai = a.id, bi = b.id;
  return push(std::move(out), needs(ai) || needs(bi), [this, ai, bi](int self) {
    const Tensor& g = nodes_[self].grad;
    if (needs(ai)) mmat(grad_buffer(ai)).noalias() += cmat(g) * cmat(val(bi)).transpose();
    if (needs(bi)) mmat(grad_buffer(bi)).noalias() += cmat(val(ai)).transpose() * cmat(g);
  });
}

Var Tape::transpose(Var a) {
  check(a, "transpose");
  const Tensor& A = val(a.id);
  require_2d("transpose", A);
  Tensor out({A.cols(), A.rows()});
  mmat(out) = cmat(A).transpose();
  const int ai = a.id;
  return push(std::move(out), needs(ai), [this, ai](int self) {
    mmat(grad_buffer(ai)) += cmat(nodes_[self].grad).transpose();
  });
}

Var Tape::reshape(Var a, Shape shape) {
  check(a, "reshape");
  Tensor out = val(a.id).reshaped(std::move(shape));
  const int ai = a.id;
  return push(std::move(out), needs(ai), [this, ai](int self) {
    const Tensor& g = nodes_[self].grad;
    Tensor& ga = grad_buffer(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var Tape::add(Var a, Var b) {
  check(a, "add");
  check(b, "add");
  const Tensor& A = val(a.id);
  const Tensor& B = val(b.id);
  const int ai = a.id, bi = b.id;
  if (A.shape() == B.shape()) {
    Tensor out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
    return push(std::move(out), needs(ai) || needs(bi), [this, ai, bi](int self) {
      const Tensor& g = nodes_[self].grad;
      for (int id : {ai, bi}) {
        if (!needs(id)) continue;
        Tensor& gx = grad_buffer(id);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
    });
  }
  if (B.dim() == 1 && B.size() == static_cast<std::size_t>(A.cols())) {
    Tensor out = A;
    mmat(out).rowwise() += cmat(B).row(0);
    return push(std::move(out), needs(ai) || needs(bi), [this, ai, bi](int self) {
      const Tensor& g = nodes_[self].grad;
      if (needs(ai)) mmat(grad_buffer(ai)) += cmat(g);
      if (needs(bi)) mmat(grad_buffer(bi)).row(0) += cmat(g).colwise().sum();
    });
  }
  shape_fail("add", A.shape(), B.shape());
}

Var Tape::mul(Var a, Var b) {
  check(a, "mul");
  check(b, "mul");
  const Tensor& A = val(a.id);
  const Tensor& B = val(b.id);
  if (A.shape() != B.shape()) shape_fail("mul", A.shape(), B.shape());
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  const int ai = a.id, bi = b.id;
  return push(std::move(out), needs(ai) || needs(bi), [this, ai, bi](int self) {
    const Tensor& g = nodes_[self].grad;
    if (needs(ai)) {
      Tensor& ga = grad_buffer(ai);
      const Tensor& vb = val(bi);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
    }
    if (needs(bi)) {
      Tensor& gb = grad_buffer(bi);
      const Tensor& va = val(ai);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
    }
  });
}

Var Tape::scale(Var a, Scalar s) {
  check(a, "scale");
  Tensor out = val(a.id);
  for (auto& v : out.values()) v *= s;
  const int ai = a.id;
  return push(std::move(out), needs(ai), [this, ai, s](int self) {
    const Tensor& g = nodes_[self].grad;
    Tensor& ga = grad_buffer(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

Var Tape::sigmoid(Var a) {
  check(a, "sigmoid");
  Tensor out = val(a.id);
  for (auto& v : out.values()) v = Scalar(1) / (Scalar(1) + std::exp(-v));
  const int ai = a.id;
  return push(std::move(out), needs(ai), [this, ai](int self) {
    const Tensor& g = nodes_[self].grad;
    const Tensor& y = nodes_[self].value;
    Tensor& ga = grad_buffer(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (Scalar(1) - y[i]);
  });
}

Var Tape::gelu(Var a) {
  check(a, "gelu");
  const Tensor& x = val(a.id);
  Tensor out(x.shape());
  Tensor tanh_u(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    Scalar v = x[i];
    Scalar t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
    tanh_u[i] = t;
    out[i] = Scalar(0.5) * v * (Scalar(1) + t);
  }
  const int ai = a.id;
  return push(std::move(out), needs(ai), [this, ai, t = std::move(tanh_u)](int self) {
    const Tensor& g = nodes_[self].grad;
    const Tensor& xv = val(ai);
    Tensor& ga = grad_buffer(ai);
    for (std::size_t i = 0; i < g.size(); ++i) {
      Scalar v = xv[i];
      Scalar du = kGeluC * (Scalar(1) + Scalar(3) * kGeluA * v * v);
      Scalar d = Scalar(0.5) * (Scalar(1) + t[i]) + Scalar(0.5) * v * (Scalar(1) - t[i] * t[i]) * du;
      ga[i] += g[i] * d;
    }
  });
}

Var Tape::softmax(Var a) {
  check(a, "softmax");
  Tensor out = val(a.id);
  const int r = out.rows(), c = out.cols();
  for (int i = 0; i < r; ++i) {
    Scalar* row = out.data() + static_cast<std::size_t>(i) * c;
    Scalar mx = *std::max_element(row, row + c);
    Scalar s = 0;
    for (int j = 0; j < c; ++j) {
      row[j] = std::exp(row[j] - mx);
      s += row[j];
    }
    for (int j = 0; j < c; ++j) row[j] /= s;
  }
  const int ai = a.id;
  return push(std::move(out), needs(ai), [this, ai](int self) {
    const Tensor& g = nodes_[self].grad;
    const Tensor& y = nodes_[self].value;
    Tensor& ga = grad_buffer(ai);
    const int rr = y.rows(), cc = y.cols();
    for (int i = 0; i < rr; ++i) {
      const std::size_t o = static_cast<std::size_t>(i) * cc;
      Scalar dot = 0;
      for (int j = 0; j < cc; ++j) dot += g[o + j] * y[o + j];
      for (int j = 0; j < cc; ++j) ga[o + j] += y[o + j] * (g[o + j] - dot);
    }
  });
}

Var Tape::layer_norm(Var x, Var gain, Var bias, Scalar eps) {
  check(x, "layer_norm");
  check(gain, "layer_norm");
  check(bias, "layer_norm");
  const Tensor& X = val(x.id);
  const Tensor& G = val(gain.id);
  const Tensor& B = val(bias.id);
  const int r = X.rows(), c = X.cols();
  if (G.size() != static_cast<std::size_t>(c)) shape_fail("layer_norm", X.shape(), G.shape());
  if (B.size() != static_cast<std::size_t>(c)) shape_fail("layer_norm", X.shape(), B.shape());

  Tensor xhat(X.shape());
  std::vector<Scalar> inv_std(r);
  Tensor out(X.shape());
  for (int i = 0; i < r; ++i) {
    const std::size_t o = static_cast<std::size_t>(i) * c;
    Scalar mean = 0;
    for (int j = 0; j < c; ++j) mean += X[o + j];
    mean /= c;
    Scalar var = 0;
    for (int j = 0; j < c; ++j) var += (X[o + j] - mean) * (X[o + j] - mean);
    var /= c;
    Scalar inv = Scalar(1) / std::sqrt(var + eps);
    inv_std[i] = inv;
    for (int j = 0; j < c; ++j) {
      xhat[o + j] = (X[o + j] - mean) * inv;
      out[o + j] = xhat[o + j] * G[j] + B[j];
    }
  }
  const int xi = x.id, gi = gain.id, bi = bias.id;
  return push(std::move(out), needs(xi) || needs(gi) || needs(bi),
              [this, xi, gi, bi, xhat = std::move(xhat), inv_std = std::move(inv_std)](int self) {
                const Tensor& g = nodes_[self].grad;
                const int rr = g.rows(), cc = g.cols();
                if (needs(gi)) {
                  Tensor& gg = grad_buffer(gi);
                  for (int i = 0; i < rr; ++i)
                    for (int j = 0; j < cc; ++j) gg[j] += g.at(i, j) * xhat.at(i, j);
                }
                if (needs(bi)) {
                  Tensor& gb = grad_buffer(bi);
                  for (int i = 0; i < rr; ++i)
                    for (int j = 0; j < cc; ++j) gb[j] += g.at(i, j);
                }
                if (needs(xi)) {
                  const Tensor& G2 = val(gi);
                  Tensor& gx = grad_buffer(xi);
                  std::vector<Scalar> dxhat(cc);
                  for (int i = 0; i < rr; ++i) {
                    Scalar s1 = 0, s2 = 0;
                    for (int j = 0; j < cc; ++j) {
                      dxhat[j] = g.at(i, j) * G2[j];
                      s1 += dxhat[j];
                      s2 += dxhat[j] * xhat.at(i, j);
                    }
                    const Scalar k = inv_std[i] / cc;
                    for (int j = 0; j < cc; ++j)
                      gx.at(i, j) += k * (cc * dxhat[j] - s1 - xhat.at(i, j) * s2);
                  }
                }
              });
}

Var Tape::embedding(Var table, std::span<const int> ids) {
  check(table, "embedding");
  const Tensor& T = val(table.id);
  require_2d("embedding", T);
  const int rows = T.rows(), d = T.cols();
  for (int id : ids)
    if (id < 0 || id >= rows)
      throw IndexError("embedding: id " + std::to_string(id) + " outside table of " + std::to_string(rows) +
                       " rows");
  const int n = static_cast<int>(ids.size());
  Tensor out({n, d});
  for (int i = 0; i < n; ++i)
    std::copy_n(T.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + static_cast<std::size_t>(i) * d);
  const int ti = table.id;
  std::vector<int> saved(ids.begin(), ids.end());
  return push(std::move(out), needs(ti), [this, ti, saved = std::move(saved)](int self) {
    const Tensor& g = nodes_[self].grad;
    Tensor& gt = grad_buffer(ti);
    const int dd = g.cols();
    for (std::size_t i = 0; i < saved.size(); ++i) {
      Scalar* dst = gt.data() + static_cast<std::size_t>(saved[i]) * dd;
      const Scalar* src = g.data() + i * dd;
      for (int j = 0; j < dd; ++j) dst[j] += src[j];
    }
  });
}

Var Tape::dropout(Var a, Scalar p, std::uint64_t seed, bool training) {
  check(a, "dropout");
  if (!training || p <= 0) return a;
  if (p >= 1) throw ConfigError("dropout probability must be below 1");
  const Tensor& A = val(a.id);
  std::mt19937_64 rng(seed);
  const Scalar keep_scale = Scalar(1) / (Scalar(1) - p);
  Tensor mask(A.shape());
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) {
    double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    mask[i] = u < p ? Scalar(0) : keep_scale;
    out[i] = A[i] * mask[i];
  }
  const int ai = a.id;
  return push(std::move(out), needs(ai), [this, ai, mask = std::move(mask)](int self) {
    const Tensor& g = nodes_[self].grad;
    Tensor& ga = grad_buffer(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
  });
}

Var Tape::masked_fill(Var a, std::vector<unsigned char> mask, Scalar value) {
  check(a, "masked_fill");
  Tensor out = val(a.id);
  if (mask.size() != out.size())
    shape_fail("masked_fill", out.shape(), Shape{static_cast<int>(mask.size())});
  for (std::size_t i = 0; i < out.size(); ++i)
    if (mask[i]) out[i] = value;
  const int ai = a.id;
  return push(std::move(out), needs(ai), [this, ai, mask = std::move(mask)](int self) {
    const Tensor& g = nodes_[self].grad;
    Tensor& ga = grad_buffer(ai);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!mask[i]) ga[i] += g[i];
  });
}

Var Tape::slice_cols(Var a, int begin, int end) {
  check(a, "slice_cols");
  const Tensor& A = val(a.id);
  require_2d("slice_cols", A);
  if (begin < 0 || end > A.cols() || begin >= end)
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for shape " + shape_str(A.shape()));
  Tensor out({A.rows(), end - begin});
  mmat(out) = cmat(A).middleCols(begin, end - begin);
  const int ai = a.id;
  return push(std::move(out), needs(ai), [this, ai, begin, end](int self) {
    mmat(grad_buffer(ai)).middleCols(begin, end - begin) += cmat(nodes_[self].grad);
  });
}

Var Tape::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  int rows = -1, total = 0;
  bool any = false;
  for (Var p : parts) {
    check(p, "concat_cols");
    const Tensor& P = val(p.id);
    require_2d("concat_cols", P);
    if (rows >= 0 && P.rows() != rows) shape_fail("concat_cols", val(parts[0].id).shape(), P.shape());
    rows = P.rows();
    total += P.cols();
    any = any || needs(p.id);
  }
  Tensor out({rows, total});
  std::vector<int> ids, offsets;
  int off = 0;
  for (Var p : parts) {
    const Tensor& P = val(p.id);
    mmat(out).middleCols(off, P.cols()) = cmat(P);
    ids.push_back(p.id);
    offsets.push_back(off);
    off += P.cols();
  }
  return push(std::move(out), any, [this, ids = std::move(ids), offsets = std::move(offsets)](int self) {
    const Tensor& g = nodes_[self].grad;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!needs(ids[k])) continue;
      Tensor& gp = grad_buffer(ids[k]);
      mmat(gp) += cmat(g).middleCols(offsets[k], gp.cols());
    }
  });
}

Var Tape::sum(Var a) {
  check(a, "sum");
  const Tensor& A = val(a.id);
  Scalar s = 0;
  for (Scalar v : A.values()) s += v;
  const int ai = a.id;
  return push(Tensor({1}, std::vector<Scalar>{s}), needs(ai), [this, ai](int self) {
    const Scalar g = nodes_[self].grad[0];
    for (auto& v : grad_buffer(ai).values()) v += g;
  });
}

Var Tape::bce_with_logits(Var logits, const Tensor& targets, const Tensor& weights) {
  check(logits, "bce_with_logits");
  const Tensor& X = val(logits.id);
  if (targets.shape() != X.shape()) shape_fail("bce_with_logits", X.shape(), targets.shape());
  if (weights.shape() != X.shape()) shape_fail("bce_with_logits", X.shape(), weights.shape());
  double loss = 0;
  for (std::size_t i = 0; i < X.size(); ++i) {
    if (weights[i] == 0) continue;
    double x = X[i];
    double y = targets[i];
    loss += weights[i] * (std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x))));
  }
  const int li = logits.id;
  return push(Tensor({1}, std::vector<Scalar>{static_cast<Scalar>(loss)}), needs(li),
              [this, li, targets, weights](int self) {
                const Scalar g = nodes_[self].grad[0];
                const Tensor& xv = val(li);
                Tensor& gx = grad_buffer(li);
                for (std::size_t i = 0; i < xv.size(); ++i) {
                  if (weights[i] == 0) continue;
                  Scalar p = Scalar(1) / (Scalar(1) + std::exp(-xv[i]));
                  gx[i] += g * weights[i] * (p - targets[i]);
                }
              });
}

void Tape::backward(Var root) {
  check(root, "backward");
  if (val(root.id).size() != 1)
    throw ShapeError("backward: root must be a scalar, got " + shape_str(val(root.id).shape()));
  if (!nodes_[root.id].needs_grad) return;
  grad_buffer(root.id)[0] += 1;
  for (int id = root.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.backward && n.has_grad) n.backward(id);
  }
}

}  // namespace clustertab::nn
