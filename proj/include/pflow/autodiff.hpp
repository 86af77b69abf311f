#pragma once

// Reverse-mode automatic differentiation over dense 2-D tensors.
//
// A Tape records every operation of one training step. Nodes are appended in
// evaluation order, which is already a topological order, so the backward
// sweep simply walks the node list in reverse. Tapes are cheap to create and
// are meant to be thrown away after each backward pass.

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pflow/errors.hpp"
#include "pflow/tensor.hpp"

namespace pflow {

/// Trainable tensor that outlives any single tape.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad = Tensor(value.shape()); }
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that does not require a gradient.
  Var constant(Tensor value) { return push(std::move(value), false, nullptr, {}); }

  /// Leaf whose gradient is tracked (inputs we want d/dx of).
  Var variable(Tensor value) { return push(std::move(value), true, nullptr, {}); }

  /// Leaf bound to a Parameter. Repeated calls for the same parameter return
  /// the same node so gradients accumulate in one place.
  Var param(Parameter& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
    Var v = push(p.value, true, &p, {});
    param_nodes_.emplace(&p, v.id());
    return v;
  }

  /// Result of an operation. `requires_grad` should be true iff any input
  /// requires a gradient; otherwise the backward closure is dropped.
  Var record(Tensor value, bool requires_grad, BackwardFn backward, const char* op) {
    if (!value.all_finite()) throw NumericError(std::string("non-finite value produced by ") + op);
    return push(std::move(value), requires_grad, nullptr, requires_grad ? std::move(backward) : BackwardFn{});
  }

  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  std::size_t size() const { return nodes_.size(); }

  /// Adds `g` into the gradient slot of node `id`.
  void accumulate(std::size_t id, const Tensor& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (!n.has_grad) {
      n.grad = g;
      n.has_grad = true;
    } else {
      n.grad.mat() += g.mat();
    }
  }
  void accumulate(std::size_t id, Tensor&& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (!n.has_grad) {
      n.grad = std::move(g);
      n.has_grad = true;
    } else {
      n.grad.mat() += g.mat();
    }
  }

  /// Propagates d(out)/d(node) to every node and adds parameter gradients
  /// into Parameter::grad. Parameters registered on this tape but not
  /// reachable from `out` receive a zero contribution.
  void backward(Var out) {
    if (out.value().size() != 1) {
      throw UsageError("backward needs a scalar output, got shape " + shape_string(out.value().shape()));
    }
    if (backward_done_) throw UsageError("tape already consumed by a backward pass");
    backward_done_ = true;
    accumulate(out.id(), Tensor::scalar(1.0));
    for (std::size_t i = out.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.has_grad) continue;
      if (n.backward) n.backward(*this, n.grad);
    }
    for (auto& [param, id] : param_nodes_) {
      const Node& n = nodes_[id];
      if (param->grad.shape() != param->value.shape()) param->zero_grad();
      if (n.has_grad) param->grad.mat() += n.grad.mat();
    }
  }

  /// Gradient of the last backward output w.r.t. `v` (zeros if unreachable).
  Tensor grad(Var v) const {
    const Node& n = nodes_[v.id()];
    return n.has_grad ? n.grad : Tensor(n.value.shape());
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
  };

  Var push(Tensor value, bool requires_grad, Parameter* param, BackwardFn backward) {
    nodes_.push_back(Node{std::move(value), Tensor{}, false, requires_grad, param, std::move(backward)});
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  std::unordered_map<Parameter*, std::size_t> param_nodes_;
  bool backward_done_ = false;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

namespace detail {

inline Tape& same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw UsageError("operands live on different tapes");
  return a.tape();
}

inline std::size_t broadcast_extent(std::size_t a, std::size_t b, const char* op) {
  if (a == b || b == 1) return a;
  if (a == 1) return b;
  throw DimensionError(std::string(op) + ": cannot broadcast extents " + std::to_string(a) + " and " +
                       std::to_string(b));
}

inline RowMatrix expand(const Tensor& t, std::size_t rows, std::size_t cols) {
  const auto r = static_cast<Eigen::Index>(rows);
  const auto c = static_cast<Eigen::Index>(cols);
  ConstMatrixMap m = t.mat();
  if (m.rows() == r && m.cols() == c) return m;
  if (m.rows() == 1 && m.cols() == 1) return RowMatrix::Constant(r, c, m(0, 0));
  if (m.rows() == 1) return m.replicate(r, 1);
  return m.replicate(1, c);
}

// Sums a full-size gradient back down to the operand's (broadcast) shape.
inline Tensor reduce_to(const RowMatrix& g, const Tensor& like) {
  Tensor out(like.shape(), Uninitialized{});
  MatrixMap o = out.mat();
  if (o.rows() == g.rows() && o.cols() == g.cols()) {
    o = g;
  } else if (o.rows() == 1 && o.cols() == 1) {
    o(0, 0) = g.sum();
  } else if (o.rows() == 1) {
    o = g.colwise().sum();
  } else {
    o = g.rowwise().sum();
  }
  return out;
}

// Broadcasting binary op. `bwd(g, a, b)` receives the output gradient and
// both operands expanded to the output shape, and returns full-size
// gradients for a and b; they are reduced back to the operand shapes here.
template <typename Fwd, typename Bwd>
Var binary(Var a, Var b, const char* op, Fwd fwd, Bwd bwd) {
  Tape& t = same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t r = broadcast_extent(av.rows(), bv.rows(), op);
  const std::size_t c = broadcast_extent(av.cols(), bv.cols(), op);
  Tensor out({r, c}, Uninitialized{});
  out.mat() = fwd(expand(av, r, c), expand(bv, r, c));
  const bool req = t.requires_grad(a) || t.requires_grad(b);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(
      std::move(out), req,
      [ia, ib, r, c, bwd](Tape& tp, const Tensor& g) {
        auto [ga, gb] = bwd(g.mat(), expand(tp.value(ia), r, c), expand(tp.value(ib), r, c));
        if (tp.requires_grad(Var(&tp, ia))) tp.accumulate(ia, reduce_to(ga, tp.value(ia)));
        if (tp.requires_grad(Var(&tp, ib))) tp.accumulate(ib, reduce_to(gb, tp.value(ib)));
      },
      op);
}

// Elementwise unary op; `deriv(x, y)` returns dy/dx given input and output.
template <typename Fwd, typename Deriv>
Var unary(Var a, const char* op, Fwd fwd, Deriv deriv) {
  Tape& t = a.tape();
  const Tensor& av = a.value();
  Tensor out(av.shape(), Uninitialized{});
  out.mat() = fwd(av.mat());
  const std::size_t ia = a.id();
  const std::size_t io = t.size();  // id the output node is about to get
  return t.record(
      std::move(out), t.requires_grad(a),
      [ia, io, deriv](Tape& tp, const Tensor& g) {
        Tensor gi(tp.value(ia).shape(), Uninitialized{});
        gi.mat() = g.mat().cwiseProduct(deriv(tp.value(ia).mat(), tp.value(io).mat()));
        tp.accumulate(ia, std::move(gi));
      },
      op);
}

}  // namespace detail

inline Var operator+(Var a, Var b) {
  return detail::binary(
      a, b, "add", [](const RowMatrix& x, const RowMatrix& y) -> RowMatrix { return x + y; },
      [](const ConstMatrixMap& g, const RowMatrix&, const RowMatrix&) {
        return std::pair<RowMatrix, RowMatrix>(g, g);
      });
}

inline Var operator-(Var a, Var b) {
  return detail::binary(
      a, b, "sub", [](const RowMatrix& x, const RowMatrix& y) -> RowMatrix { return x - y; },
      [](const ConstMatrixMap& g, const RowMatrix&, const RowMatrix&) {
        return std::pair<RowMatrix, RowMatrix>(g, -g);
      });
}

inline Var operator*(Var a, Var b) {
  return detail::binary(
      a, b, "mul", [](const RowMatrix& x, const RowMatrix& y) -> RowMatrix { return x.cwiseProduct(y); },
      [](const ConstMatrixMap& g, const RowMatrix& x, const RowMatrix& y) {
        return std::pair<RowMatrix, RowMatrix>(g.cwiseProduct(y), g.cwiseProduct(x));
      });
}

inline Var operator/(Var a, Var b) {
  return detail::binary(
      a, b, "div", [](const RowMatrix& x, const RowMatrix& y) -> RowMatrix { return x.cwiseQuotient(y); },
      [](const ConstMatrixMap& g, const RowMatrix& x, const RowMatrix& y) {
        RowMatrix gx = g.cwiseQuotient(y);
        RowMatrix gy = -gx.cwiseProduct(x).cwiseQuotient(y);
        return std::pair<RowMatrix, RowMatrix>(std::move(gx), std::move(gy));
      });
}

/// k * a
inline Var scale(Var a, double k) {
  Tape& t = a.tape();
  Tensor out(a.value().shape(), Uninitialized{});
  out.mat() = a.value().mat() * k;
  const std::size_t ia = a.id();
  return t.record(
      std::move(out), t.requires_grad(a),
      [ia, k](Tape& tp, const Tensor& g) {
        Tensor gi(g.shape(), Uninitialized{});
        gi.mat() = g.mat() * k;
        tp.accumulate(ia, std::move(gi));
      },
      "scale");
}

inline Var operator-(Var a) { return scale(a, -1.0); }

/// a + k
inline Var add_scalar(Var a, double k) {
  Tape& t = a.tape();
  Tensor out(a.value().shape(), Uninitialized{});
  out.mat() = a.value().mat().array() + k;
  const std::size_t ia = a.id();
  return t.record(
      std::move(out), t.requires_grad(a), [ia](Tape& tp, const Tensor& g) { tp.accumulate(ia, g); }, "add_scalar");
}

inline Var matmul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: " + shape_string(av.shape()) + " x " + shape_string(bv.shape()));
  }
  Tensor out({av.rows(), bv.cols()}, Uninitialized{});
  out.mat().noalias() = av.mat() * bv.mat();
  const std::size_t ia = a.id(), ib = b.id();
  const bool ra = t.requires_grad(a), rb = t.requires_grad(b);
  return t.record(
      std::move(out), ra || rb,
      [ia, ib, ra, rb](Tape& tp, const Tensor& g) {
        if (ra) {
          const Tensor& bv = tp.value(ib);
          Tensor ga({g.rows(), bv.rows()}, Uninitialized{});
          ga.mat().noalias() = g.mat() * bv.mat().transpose();
          tp.accumulate(ia, std::move(ga));
        }
        if (rb) {
          const Tensor& av = tp.value(ia);
          Tensor gb({av.cols(), g.cols()}, Uninitialized{});
          gb.mat().noalias() = av.mat().transpose() * g.mat();
          tp.accumulate(ib, std::move(gb));
        }
      },
      "matmul");
}

/// x * W + b with b (1 x m) broadcast over rows; one node instead of three.
inline Var affine(Var x, Var w, Var b) {
  Tape& t = detail::same_tape(x, w);
  detail::same_tape(x, b);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  if (xv.cols() != wv.rows() || bv.rows() != 1 || bv.cols() != wv.cols()) {
    throw DimensionError("affine: " + shape_string(xv.shape()) + " x " + shape_string(wv.shape()) + " + " +
                         shape_string(bv.shape()));
  }
  Tensor out({xv.rows(), wv.cols()}, Uninitialized{});
  out.mat().noalias() = xv.mat() * wv.mat();
  out.mat().rowwise() += bv.mat().row(0);
  const std::size_t ix = x.id(), iw = w.id(), ib = b.id();
  const bool rx = t.requires_grad(x), rw = t.requires_grad(w), rb = t.requires_grad(b);
  return t.record(
      std::move(out), rx || rw || rb,
      [ix, iw, ib, rx, rw, rb](Tape& tp, const Tensor& g) {
        if (rx) {
          const Tensor& wv = tp.value(iw);
          Tensor gx({g.rows(), wv.rows()}, Uninitialized{});
          gx.mat().noalias() = g.mat() * wv.mat().transpose();
          tp.accumulate(ix, std::move(gx));
        }
        if (rw) {
          const Tensor& xv = tp.value(ix);
          Tensor gw({xv.cols(), g.cols()}, Uninitialized{});
          gw.mat().noalias() = xv.mat().transpose() * g.mat();
          tp.accumulate(iw, std::move(gw));
        }
        if (rb) {
          Tensor gb({1, g.cols()}, Uninitialized{});
          gb.mat() = g.mat().colwise().sum();
          tp.accumulate(ib, std::move(gb));
        }
      },
      "affine");
}

inline Var exp(Var a) {
  return detail::unary(
      a, "exp", [](const ConstMatrixMap& x) -> RowMatrix { return x.array().exp().matrix(); },
      [](const ConstMatrixMap&, const ConstMatrixMap& y) -> RowMatrix { return y; });
}

inline Var log(Var a) {
  return detail::unary(
      a, "log", [](const ConstMatrixMap& x) -> RowMatrix { return x.array().log().matrix(); },
      [](const ConstMatrixMap& x, const ConstMatrixMap&) -> RowMatrix { return x.cwiseInverse(); });
}

inline Var tanh(Var a) {
  return detail::unary(
      a, "tanh", [](const ConstMatrixMap& x) -> RowMatrix { return x.array().tanh().matrix(); },
      [](const ConstMatrixMap&, const ConstMatrixMap& y) -> RowMatrix {
        return (1.0 - y.array().square()).matrix();
      });
}

inline Var square(Var a) {
  return detail::unary(
      a, "square", [](const ConstMatrixMap& x) -> RowMatrix { return x.array().square().matrix(); },
      [](const ConstMatrixMap& x, const ConstMatrixMap&) -> RowMatrix { return 2.0 * x; });
}

inline Var sqrt(Var a) {
  return detail::unary(
      a, "sqrt", [](const ConstMatrixMap& x) -> RowMatrix { return x.array().sqrt().matrix(); },
      [](const ConstMatrixMap&, const ConstMatrixMap& y) -> RowMatrix { return (0.5 / y.array()).matrix(); });
}

// log(1 + e^x), switching to the asymptotes x and 0 beyond |x| > 30.
inline double softplus_scalar(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return 0.0;
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Vectorized softplus. The logistic derivative is produced in the same pass
// from the shared exp(-|x|) and kept for the backward sweep.
inline Var softplus(Var a) {
  Tape& t = a.tape();
  const Tensor& av = a.value();
  const auto n = static_cast<Eigen::Index>(av.size());
  Eigen::Map<const Eigen::ArrayXd> x(av.data(), n);
  const Eigen::ArrayXd e = (-x.abs()).exp();
  const Eigen::ArrayXd u = 1.0 + e;
  // log1p(e) as log(u) minus the first-order effect of rounding u; both
  // terms vectorize, unlike libm log1p.
  const Eigen::ArrayXd l1p = u.log() - ((u - 1.0) - e) / u;
  Tensor out(av.shape(), Uninitialized{});
  Eigen::Map<Eigen::ArrayXd> o(out.data(), n);
  o = x.max(0.0) + l1p;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (x[i] > 30.0) o[i] = x[i];
    else if (x[i] < -30.0) o[i] = 0.0;
  }
  const bool req = t.requires_grad(a);
  Tensor slope;
  if (req) {
    slope = Tensor(av.shape(), Uninitialized{});
    Eigen::Map<Eigen::ArrayXd> sl(slope.data(), n);
    sl = u.inverse();
    for (Eigen::Index i = 0; i < n; ++i) {
      if (x[i] > 30.0) sl[i] = 1.0;
      else if (x[i] < -30.0) sl[i] = 0.0;
      else if (x[i] < 0.0) sl[i] *= e[i];
    }
  }
  const std::size_t ia = a.id();
  return t.record(
      std::move(out), req,
      [ia, slope = std::move(slope)](Tape& tp, const Tensor& g) {
        Tensor gi(g.shape(), Uninitialized{});
        gi.mat() = g.mat().cwiseProduct(slope.mat());
        tp.accumulate(ia, std::move(gi));
      },
      "softplus");
}

inline Var sigmoid(Var a) {
  return detail::unary(
      a, "sigmoid", [](const ConstMatrixMap& x) -> RowMatrix { return x.unaryExpr(&sigmoid_scalar); },
      [](const ConstMatrixMap&, const ConstMatrixMap& y) -> RowMatrix {
        return y.cwiseProduct((1.0 - y.array()).matrix());
      });
}

inline Var relu(Var a) {
  return detail::unary(
      a, "relu", [](const ConstMatrixMap& x) -> RowMatrix { return x.cwiseMax(0.0); },
      [](const ConstMatrixMap& x, const ConstMatrixMap&) -> RowMatrix {
        return (x.array() > 0.0).cast<double>().matrix();
      });
}

/// Hard clamp; the gradient is zero wherever the input was clipped.
inline Var clamp(Var a, double lo, double hi) {
  return detail::unary(
      a, "clamp", [lo, hi](const ConstMatrixMap& x) -> RowMatrix { return x.cwiseMax(lo).cwiseMin(hi); },
      [lo, hi](const ConstMatrixMap& x, const ConstMatrixMap&) -> RowMatrix {
        return ((x.array() >= lo) && (x.array() <= hi)).cast<double>().matrix();
      });
}

/// alpha * tanh(a / alpha): smooth clamp into (-alpha, alpha).
inline Var soft_clamp(Var a, double alpha) { return scale(tanh(scale(a, 1.0 / alpha)), alpha); }

/// Sum of all entries as a 1x1 tensor.
inline Var sum(Var a) {
  Tape& t = a.tape();
  const std::size_t ia = a.id();
  return t.record(
      Tensor::scalar(a.value().mat().sum()), t.requires_grad(a),
      [ia](Tape& tp, const Tensor& g) {
        Tensor gi(tp.value(ia).shape(), g[0]);
        tp.accumulate(ia, std::move(gi));
      },
      "sum");
}

inline Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

/// Per-row sum: (n x m) -> (n x 1).
inline Var row_sum(Var a) {
  Tape& t = a.tape();
  const Tensor& av = a.value();
  Tensor out({av.rows(), 1}, Uninitialized{});
  out.mat() = av.mat().rowwise().sum();
  const std::size_t ia = a.id();
  return t.record(
      std::move(out), t.requires_grad(a),
      [ia](Tape& tp, const Tensor& g) {
        const Tensor& av = tp.value(ia);
        Tensor gi(av.shape(), Uninitialized{});
        gi.mat() = g.mat().replicate(1, static_cast<Eigen::Index>(av.cols()));
        tp.accumulate(ia, std::move(gi));
      },
      "row_sum");
}

/// Columns [begin, end).
inline Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  Tape& t = a.tape();
  const Tensor& av = a.value();
  if (begin >= end || end > av.cols()) {
    throw DimensionError("slice_cols [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                         shape_string(av.shape()));
  }
  Tensor out = av.col_slice(begin, end);
  const std::size_t ia = a.id();
  return t.record(
      std::move(out), t.requires_grad(a),
      [ia, begin, end](Tape& tp, const Tensor& g) {
        Tensor gi(tp.value(ia).shape());
        gi.mat().middleCols(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(end - begin)) = g.mat();
        tp.accumulate(ia, std::move(gi));
      },
      "slice_cols");
}

/// Horizontal concatenation of equally tall operands.
inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw UsageError("concat_cols of nothing");
  if (parts.size() == 1) return parts.front();
  Tape& t = parts.front().tape();
  const std::size_t rows = parts.front().value().rows();
  std::size_t cols = 0;
  bool req = false;
  for (const Var& p : parts) {
    if (&p.tape() != &t) throw UsageError("operands live on different tapes");
    if (p.value().rows() != rows) throw DimensionError("concat_cols row mismatch");
    cols += p.value().cols();
    req = req || t.requires_grad(p);
  }
  Tensor out({rows, cols}, Uninitialized{});
  std::vector<std::pair<std::size_t, std::size_t>> spans;  // (node id, first column)
  std::size_t at = 0;
  for (const Var& p : parts) {
    const auto w = static_cast<Eigen::Index>(p.value().cols());
    out.mat().middleCols(static_cast<Eigen::Index>(at), w) = p.value().mat();
    spans.emplace_back(p.id(), at);
    at += p.value().cols();
  }
  return t.record(
      std::move(out), req,
      [spans](Tape& tp, const Tensor& g) {
        for (auto [id, first] : spans) {
          if (!tp.requires_grad(Var(&tp, id))) continue;
          const auto w = static_cast<Eigen::Index>(tp.value(id).cols());
          Tensor gi(tp.value(id).shape(), Uninitialized{});
          gi.mat() = g.mat().middleCols(static_cast<Eigen::Index>(first), w);
          tp.accumulate(id, std::move(gi));
        }
      },
      "concat_cols");
}

/// Column gather: out[:, j] = a[:, perm[j]]. `perm` must be a permutation.
inline Var permute_cols(Var a, const std::vector<std::size_t>& perm) {
  Tape& t = a.tape();
  const Tensor& av = a.value();
  if (perm.size() != av.cols()) throw DimensionError("permute_cols: permutation length mismatch");
  Tensor out(av.shape(), Uninitialized{});
  for (std::size_t j = 0; j < perm.size(); ++j) {
    out.mat().col(static_cast<Eigen::Index>(j)) = av.mat().col(static_cast<Eigen::Index>(perm[j]));
  }
  const std::size_t ia = a.id();
  return t.record(
      std::move(out), t.requires_grad(a),
      [ia, perm](Tape& tp, const Tensor& g) {
        Tensor gi(tp.value(ia).shape());
        for (std::size_t j = 0; j < perm.size(); ++j) {
          gi.mat().col(static_cast<Eigen::Index>(perm[j])) = g.mat().col(static_cast<Eigen::Index>(j));
        }
        tp.accumulate(ia, std::move(gi));
      },
      "permute_cols");
}

/// Elementwise Bernoulli cross-entropy of `targets` under `logits`:
/// softplus(l) - t*l, which never overflows.
inline Var bce_with_logits(Var logits, const Tensor& targets) {
  Tape& t = logits.tape();
  const Tensor& lv = logits.value();
  if (!lv.same_shape(targets)) throw DimensionError("bce_with_logits shape mismatch");
  Tensor out(lv.shape());
  for (std::size_t i = 0; i < lv.size(); ++i) out[i] = softplus_scalar(lv[i]) - targets[i] * lv[i];
  const std::size_t il = logits.id();
  return t.record(
      std::move(out), t.requires_grad(logits),
      [il, targets](Tape& tp, const Tensor& g) {
        const Tensor& lv = tp.value(il);
        Tensor gi(lv.shape());
        for (std::size_t i = 0; i < lv.size(); ++i) gi[i] = g[i] * (sigmoid_scalar(lv[i]) - targets[i]);
        tp.accumulate(il, std::move(gi));
      },
      "bce_with_logits");
}

}  // namespace pflow
