#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "gcap/errors.hpp"
#include "gcap/tensor.hpp"

namespace gcap {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Shape& shape() const;
  std::span<const double> value() const;
  std::size_t numel() const { return value().size(); }
  double item() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

enum class OpKind {
  kConstant,
  kParam,
  kMatMul,
  kAdd,
  kMul,
  kAddRowBroadcast,
  kTanh,
  kSigmoid,
  kSoftmax,
  kCrossEntropy,
  kConcat,
  kSlice,
  kGatherRows,
  kReshape,
  kScale,
};

inline constexpr double kLogClamp = 1e-12;

/// Linear record of primitive operations for reverse-mode differentiation.
///
/// Every node is appended in evaluation order, so the node index is a valid
/// topological order. Reductions run row-major, left to right; replaying the
/// tape therefore reproduces every recorded value bitwise.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Shape shape, std::vector<double> values) {
    if (numel(shape) != values.size()) {
      throw ShapeError("constant shape " + to_string(shape) + " does not match " +
                       std::to_string(values.size()) + " values");
    }
    Node node;
    node.op = OpKind::kConstant;
    node.shape = std::move(shape);
    node.value = std::move(values);
    return push(std::move(node));
  }

  Var constant(const Tensor& t) {
    return constant(t.shape(), std::vector<double>(t.values().begin(), t.values().end()));
  }

  /// Borrow a parameter. Repeated calls with the same tensor return the same node.
  Var param(const Tensor& t) {
    if (auto it = param_ids_.find(&t); it != param_ids_.end()) return Var(this, it->second);
    Node node;
    node.op = OpKind::kParam;
    node.shape = t.shape();
    node.param = &t;
    node.requires_grad = t.requires_grad();
    Var v = push(std::move(node));
    param_ids_.emplace(&t, v.id());
    return v;
  }

  std::size_t size() const { return nodes_.size(); }
  const Shape& shape(std::size_t id) const { return nodes_[id].shape; }
  OpKind op(std::size_t id) const { return nodes_[id].op; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  std::span<const double> value(std::size_t id) const {
    const Node& n = nodes_[id];
    if (n.op == OpKind::kParam) return n.param->values();
    return n.value;
  }

  /// Gradient of the last backward() target with respect to node `id`.
  /// Empty when the node does not require grad.
  std::span<const double> grad(Var v) const {
    if (v.id() >= grads_.size()) return {};
    return grads_[v.id()];
  }

  /// Populate gradients for every requires-grad node reachable from `loss`.
  /// Parameter gradients are added to Tensor::grad, so repeated calls accumulate.
  void backward(Var loss) {
    check_owned(loss);
    if (nodes_[loss.id()].value.size() != 1) {
      throw ShapeError("backward needs a scalar loss, got shape " + to_string(nodes_[loss.id()].shape));
    }
    grads_.assign(nodes_.size(), {});
    if (!nodes_[loss.id()].requires_grad) return;
    grad_buffer(loss.id())[0] = 1.0;
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
      const Node& n = nodes_[id];
      if (!n.requires_grad || grads_[id].empty()) continue;
      propagate(id);
    }
    for (const auto& [tensor, id] : param_ids_) {
      if (id > loss.id() || grads_[id].empty()) continue;
      nodes_[id].param->accumulate_grad(grads_[id]);
    }
  }

  /// Re-evaluate every node from the leaves and return the fresh values.
  std::vector<std::vector<double>> replay() const {
    std::vector<std::vector<double>> out(nodes_.size());
    auto lookup = [&](std::size_t id) -> std::span<const double> {
      const Node& n = nodes_[id];
      if (n.op == OpKind::kParam) return n.param->values();
      return out[id];
    };
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
      const Node& n = nodes_[id];
      if (n.op == OpKind::kConstant) {
        out[id] = n.value;
      } else if (n.op != OpKind::kParam) {
        out[id] = evaluate(n, lookup);
      }
    }
    return out;
  }

  // Recording entry points; prefer the free functions below.
  Var record(OpKind op, std::vector<std::size_t> inputs, Shape shape, std::size_t aux = 0,
             double scalar = 0.0, std::vector<std::size_t> index = {}) {
    Node node;
    node.op = op;
    node.inputs = std::move(inputs);
    node.shape = std::move(shape);
    node.aux = aux;
    node.scalar = scalar;
    node.index = std::move(index);
    for (std::size_t in : node.inputs) node.requires_grad = node.requires_grad || nodes_[in].requires_grad;
    node.value = evaluate(node, [this](std::size_t id) { return value(id); });
    return push(std::move(node));
  }

  void check_owned(Var v) const {
    if (&v.tape() != this || v.id() >= nodes_.size()) throw std::logic_error("variable belongs to another tape");
  }

 private:
  struct Node {
    OpKind op = OpKind::kConstant;
    Shape shape;
    std::vector<double> value;
    std::vector<std::size_t> inputs;
    std::vector<std::size_t> index;
    std::size_t aux = 0;
    double scalar = 0.0;
    const Tensor* param = nullptr;
    bool requires_grad = false;
  };

  Var push(Node node) {
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
  }

  std::vector<double>& grad_buffer(std::size_t id) {
    auto& g = grads_[id];
    if (g.empty()) g.assign(numel(nodes_[id].shape), 0.0);
    return g;
  }

  template <typename Lookup>
  static std::vector<double> evaluate(const Node& n, Lookup&& in) {
    std::vector<double> out(numel(n.shape), 0.0);
    switch (n.op) {
      case OpKind::kConstant:
      case OpKind::kParam:
        break;
      case OpKind::kMatMul: {
        auto a = in(n.inputs[0]);
        auto b = in(n.inputs[1]);
        const std::size_t m = n.shape[0], cols = n.shape[1], inner = a.size() / m;
        for (std::size_t i = 0; i < m; ++i) {
          const double* arow = a.data() + i * inner;
          double* orow = out.data() + i * cols;
          for (std::size_t k = 0; k < inner; ++k) {
            const double av = arow[k];
            const double* brow = b.data() + k * cols;
            for (std::size_t j = 0; j < cols; ++j) orow[j] += av * brow[j];
          }
        }
        break;
      }
      case OpKind::kAdd: {
        auto a = in(n.inputs[0]);
        auto b = in(n.inputs[1]);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
        break;
      }
      case OpKind::kMul: {
        auto a = in(n.inputs[0]);
        auto b = in(n.inputs[1]);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
        break;
      }
      case OpKind::kAddRowBroadcast: {
        auto a = in(n.inputs[0]);
        auto b = in(n.inputs[1]);
        const std::size_t cols = b.size();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i % cols];
        break;
      }
      case OpKind::kTanh: {
        auto a = in(n.inputs[0]);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a[i]);
        break;
      }
      case OpKind::kSigmoid: {
        auto a = in(n.inputs[0]);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-a[i]));
        break;
      }
      case OpKind::kSoftmax: {
        auto a = in(n.inputs[0]);
        double hi = a[0];
        for (double v : a) {
          if (!std::isfinite(v)) throw NumericError("softmax input contains a non-finite value");
          hi = std::max(hi, v);
        }
        double total = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) {
          out[i] = std::exp(a[i] - hi);
          total += out[i];
        }
        for (double& v : out) v /= total;
        break;
      }
      case OpKind::kCrossEntropy: {
        auto p = in(n.inputs[0]);
        out[0] = -std::log(std::max(p[n.aux], kLogClamp));
        break;
      }
      case OpKind::kConcat: {
        auto a = in(n.inputs[0]);
        auto b = in(n.inputs[1]);
        std::copy(a.begin(), a.end(), out.begin());
        std::copy(b.begin(), b.end(), out.begin() + static_cast<std::ptrdiff_t>(a.size()));
        break;
      }
      case OpKind::kSlice: {
        auto a = in(n.inputs[0]);
        std::copy_n(a.begin() + static_cast<std::ptrdiff_t>(n.aux), out.size(), out.begin());
        break;
      }
      case OpKind::kGatherRows: {
        auto a = in(n.inputs[0]);
        const std::size_t cols = n.shape[1];
        for (std::size_t r = 0; r < n.index.size(); ++r) {
          std::copy_n(a.begin() + static_cast<std::ptrdiff_t>(n.index[r] * cols), cols,
                      out.begin() + static_cast<std::ptrdiff_t>(r * cols));
        }
        break;
      }
      case OpKind::kReshape: {
        auto a = in(n.inputs[0]);
        std::copy(a.begin(), a.end(), out.begin());
        break;
      }
      case OpKind::kScale: {
        auto a = in(n.inputs[0]);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = n.scalar * a[i];
        break;
      }
    }
    return out;
  }

  void propagate(std::size_t id) {
    const Node& n = nodes_[id];
    const std::vector<double>& dout = grads_[id];
    auto wants = [&](std::size_t slot) { return nodes_[n.inputs[slot]].requires_grad; };
    switch (n.op) {
      case OpKind::kConstant:
      case OpKind::kParam:
        break;
      case OpKind::kMatMul: {
        const std::size_t a_id = n.inputs[0], b_id = n.inputs[1];
        auto a = value(a_id);
        auto b = value(b_id);
        const std::size_t m = n.shape[0], cols = n.shape[1], inner = a.size() / m;
        if (wants(0)) {
          auto& da = grad_buffer(a_id);
          for (std::size_t i = 0; i < m; ++i) {
            const double* drow = dout.data() + i * cols;
            for (std::size_t k = 0; k < inner; ++k) {
              const double* brow = b.data() + k * cols;
              double acc = 0.0;
              for (std::size_t j = 0; j < cols; ++j) acc += drow[j] * brow[j];
              da[i * inner + k] += acc;
            }
          }
        }
        if (wants(1)) {
          auto& db = grad_buffer(b_id);
          for (std::size_t i = 0; i < m; ++i) {
            const double* drow = dout.data() + i * cols;
            for (std::size_t k = 0; k < inner; ++k) {
              const double av = a[i * inner + k];
              if (av == 0.0) continue;
              double* dbrow = db.data() + k * cols;
              for (std::size_t j = 0; j < cols; ++j) dbrow[j] += av * drow[j];
            }
          }
        }
        break;
      }
      case OpKind::kAdd:
        for (std::size_t slot = 0; slot < 2; ++slot) {
          if (!wants(slot)) continue;
          auto& d = grad_buffer(n.inputs[slot]);
          for (std::size_t i = 0; i < dout.size(); ++i) d[i] += dout[i];
        }
        break;
      case OpKind::kMul:
        for (std::size_t slot = 0; slot < 2; ++slot) {
          if (!wants(slot)) continue;
          auto other = value(n.inputs[1 - slot]);
          auto& d = grad_buffer(n.inputs[slot]);
          for (std::size_t i = 0; i < dout.size(); ++i) d[i] += dout[i] * other[i];
        }
        break;
      case OpKind::kAddRowBroadcast: {
        if (wants(0)) {
          auto& da = grad_buffer(n.inputs[0]);
          for (std::size_t i = 0; i < dout.size(); ++i) da[i] += dout[i];
        }
        if (wants(1)) {
          auto& db = grad_buffer(n.inputs[1]);
          const std::size_t cols = db.size();
          for (std::size_t i = 0; i < dout.size(); ++i) db[i % cols] += dout[i];
        }
        break;
      }
      case OpKind::kTanh: {
        if (!wants(0)) break;
        auto& da = grad_buffer(n.inputs[0]);
        for (std::size_t i = 0; i < dout.size(); ++i) da[i] += dout[i] * (1.0 - n.value[i] * n.value[i]);
        break;
      }
      case OpKind::kSigmoid: {
        if (!wants(0)) break;
        auto& da = grad_buffer(n.inputs[0]);
        for (std::size_t i = 0; i < dout.size(); ++i) da[i] += dout[i] * n.value[i] * (1.0 - n.value[i]);
        break;
      }
      case OpKind::kSoftmax: {
        if (!wants(0)) break;
        double dot = 0.0;
        for (std::size_t i = 0; i < dout.size(); ++i) dot += dout[i] * n.value[i];
        auto& da = grad_buffer(n.inputs[0]);
        for (std::size_t i = 0; i < dout.size(); ++i) da[i] += n.value[i] * (dout[i] - dot);
        break;
      }
      case OpKind::kCrossEntropy: {
        if (!wants(0)) break;
        const double pt = value(n.inputs[0])[n.aux];
        // The clamp is flat below kLogClamp, so no gradient flows there.
        if (pt > kLogClamp) grad_buffer(n.inputs[0])[n.aux] += -dout[0] / pt;
        break;
      }
      case OpKind::kConcat: {
        const std::size_t split = numel(nodes_[n.inputs[0]].shape);
        if (wants(0)) {
          auto& da = grad_buffer(n.inputs[0]);
          for (std::size_t i = 0; i < split; ++i) da[i] += dout[i];
        }
        if (wants(1)) {
          auto& db = grad_buffer(n.inputs[1]);
          for (std::size_t i = split; i < dout.size(); ++i) db[i - split] += dout[i];
        }
        break;
      }
      case OpKind::kSlice: {
        if (!wants(0)) break;
        auto& da = grad_buffer(n.inputs[0]);
        for (std::size_t i = 0; i < dout.size(); ++i) da[n.aux + i] += dout[i];
        break;
      }
      case OpKind::kGatherRows: {
        if (!wants(0)) break;
        auto& da = grad_buffer(n.inputs[0]);
        const std::size_t cols = n.shape[1];
        for (std::size_t r = 0; r < n.index.size(); ++r) {
          for (std::size_t j = 0; j < cols; ++j) da[n.index[r] * cols + j] += dout[r * cols + j];
        }
        break;
      }
      case OpKind::kReshape: {
        if (!wants(0)) break;
        auto& da = grad_buffer(n.inputs[0]);
        for (std::size_t i = 0; i < dout.size(); ++i) da[i] += dout[i];
        break;
      }
      case OpKind::kScale: {
        if (!wants(0)) break;
        auto& da = grad_buffer(n.inputs[0]);
        for (std::size_t i = 0; i < dout.size(); ++i) da[i] += n.scalar * dout[i];
        break;
      }
    }
  }

  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  std::unordered_map<const Tensor*, std::size_t> param_ids_;
};

inline const Shape& Var::shape() const { return tape_->shape(id_); }
inline std::span<const double> Var::value() const { return tape_->value(id_); }
inline double Var::item() const {
  auto v = value();
  if (v.size() != 1) throw ShapeError("item() on non-scalar of shape " + to_string(shape()));
  return v[0];
}

namespace detail {

inline Tape& same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw std::logic_error("operands recorded on different tapes");
  return a.tape();
}

inline std::pair<std::size_t, std::size_t> as_matrix(const Shape& s) {
  if (s.size() == 1) return {1, s[0]};
  if (s.size() == 2) return {s[0], s[1]};
  throw ShapeError("expected a vector or matrix, got " + to_string(s));
}

inline void require_same_shape(const char* op, Var a, Var b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

}  // namespace detail

/// [m x k] * [k x n] -> [m x n]. Rank-1 operands are treated as single rows.
inline Var matmul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  auto [m, k] = detail::as_matrix(a.shape());
  auto [k2, n] = detail::as_matrix(b.shape());
  if (k != k2) {
    throw ShapeError("matmul: inner dimensions differ, " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  return t.record(OpKind::kMatMul, {a.id(), b.id()}, {m, n});
}

inline Var add(Var a, Var b) {
  detail::require_same_shape("add", a, b);
  return detail::same_tape(a, b).record(OpKind::kAdd, {a.id(), b.id()}, a.shape());
}

inline Var mul(Var a, Var b) {
  detail::require_same_shape("mul", a, b);
  return detail::same_tape(a, b).record(OpKind::kMul, {a.id(), b.id()}, a.shape());
}

/// Adds the row vector `row` to every row of `a`.
inline Var add_row_broadcast(Var a, Var row) {
  Tape& t = detail::same_tape(a, row);
  auto [m, n] = detail::as_matrix(a.shape());
  if (row.numel() != n) {
    throw ShapeError("add_row_broadcast: row " + to_string(row.shape()) + " does not fit " + to_string(a.shape()));
  }
  return t.record(OpKind::kAddRowBroadcast, {a.id(), row.id()}, {m, n});
}

inline Var tanh(Var a) { return a.tape().record(OpKind::kTanh, {a.id()}, a.shape()); }
inline Var sigmoid(Var a) { return a.tape().record(OpKind::kSigmoid, {a.id()}, a.shape()); }

/// Softmax over all elements of `z`, max-shifted. Throws NumericError on NaN/Inf.
inline Var softmax(Var z) { return z.tape().record(OpKind::kSoftmax, {z.id()}, z.shape()); }

/// -log(max(p[target], 1e-12)).
inline Var cross_entropy(Var p, std::size_t target) {
  if (target >= p.numel()) {
    throw ValidationError("cross_entropy: target " + std::to_string(target) + " out of range for " +
                          std::to_string(p.numel()) + " classes");
  }
  double total = 0.0;
  for (double v : p.value()) total += v;
  if (std::abs(total - 1.0) > 1e-6) throw ValidationError("cross_entropy: input is not a probability vector");
  return p.tape().record(OpKind::kCrossEntropy, {p.id()}, {1}, target);
}

/// Concatenates two vectors into a single [1 x (na+nb)] row.
inline Var concat(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  return t.record(OpKind::kConcat, {a.id(), b.id()}, {1, a.numel() + b.numel()});
}

/// Flat slice [offset, offset+length) as a [1 x length] row.
inline Var slice(Var a, std::size_t offset, std::size_t length) {
  if (length == 0 || offset + length > a.numel()) {
    throw ShapeError("slice [" + std::to_string(offset) + ", " + std::to_string(offset + length) +
                     ") out of range for " + to_string(a.shape()));
  }
  return a.tape().record(OpKind::kSlice, {a.id()}, {1, length}, offset);
}

inline Var gather_rows(Var a, std::vector<std::size_t> rows) {
  auto [m, n] = detail::as_matrix(a.shape());
  if (rows.empty()) throw ShapeError("gather_rows: empty row set");
  for (std::size_t r : rows) {
    if (r >= m) throw ShapeError("gather_rows: row " + std::to_string(r) + " out of range for " + to_string(a.shape()));
  }
  const std::size_t count = rows.size();
  return a.tape().record(OpKind::kGatherRows, {a.id()}, {count, n}, 0, 0.0, std::move(rows));
}

inline Var reshape(Var a, Shape shape) {
  if (numel(shape) != a.numel()) {
    throw ShapeError("reshape " + to_string(a.shape()) + " -> " + to_string(shape) + " changes element count");
  }
  return a.tape().record(OpKind::kReshape, {a.id()}, std::move(shape));
}

inline Var scale(Var a, double factor) {
  return a.tape().record(OpKind::kScale, {a.id()}, a.shape(), 0, factor);
}

}  // namespace gcap
