#pragma once

// Recorded-operation tape. Each op evaluates its forward immediately, stores
// the result as a node and, when any input needs a gradient, records a
// closure that applies the op's backward rule. Nodes are created in
// topological order, so backward() simply walks them in reverse.

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "sarpf/attention.hpp"
#include "sarpf/convkit.hpp"
#include "sarpf/tensor.hpp"

namespace sarpf {

struct Var {
  std::size_t id = 0;
  friend bool operator==(Var, Var) = default;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor4& dout)>;

  Var parameter(Tensor4 value) { return push(std::move(value), true, {}); }
  Var constant(Tensor4 value) { return push(std::move(value), false, {}); }

  const Tensor4& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  /// Gradient accumulated by the last backward(); zeros if none reached v.
  Tensor4 grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.grad ? *n.grad : Tensor4(n.value.shape());
  }

  std::size_t size() const noexcept { return nodes_.size(); }

  /// Records a node computed from inputs. The backward closure is kept only
  /// if some input needs a gradient.
  Var record(Tensor4 value, std::initializer_list<Var> inputs, Backward backward) {
    bool needs = false;
    for (Var in : inputs) needs = needs || requires_grad(in);
    return push(std::move(value), needs, needs ? std::move(backward) : Backward{});
  }

  Var record(Tensor4 value, std::span<const Var> inputs, Backward backward) {
    bool needs = false;
    for (Var in : inputs) needs = needs || requires_grad(in);
    return push(std::move(value), needs, needs ? std::move(backward) : Backward{});
  }

  void accumulate(Var v, const Tensor4& g) {
    Node& n = nodes_.at(v.id);
    if (!n.requires_grad) return;
    if (!(g.shape() == n.value.shape())) {
      throw ShapeError("tape: gradient shape " + g.shape().str() + " != value shape " + n.value.shape().str());
    }
    if (!n.grad) {
      n.grad = g;
      return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) (*n.grad)[i] += g[i];
  }

  /// Seeds d(root) = seed and propagates to every node that needs a gradient.
  void backward(Var root, const Tensor4& seed) {
    for (auto& n : nodes_) n.grad.reset();
    accumulate(root, seed);
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.grad || !n.backward) continue;
      const Tensor4 dout = *n.grad;
      n.backward(*this, dout);
    }
  }

  /// Convenience for scalar roots: seed with ones.
  void backward(Var root) { backward(root, Tensor4::ones(value(root).shape())); }

 private:
  struct Node {
    Tensor4 value;
    bool requires_grad = false;
    Backward backward;
    std::optional<Tensor4> grad;
  };

  Var push(Tensor4 value, bool requires_grad, Backward backward) {
    nodes_.push_back({std::move(value), requires_grad, std::move(backward), std::nullopt});
    return {nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Differentiable ops on the tape

namespace ops {

inline Var elementwise(Tape& t, ElementwiseOp op, Var a, Var b) {
  Tensor4 out = sarpf::elementwise(op, t.value(a), t.value(b));
  return t.record(std::move(out), {a, b}, [op, a, b](Tape& tp, const Tensor4& dout) {
    auto g = elementwise_backward(op, tp.value(a), tp.value(b), dout);
    tp.accumulate(a, g.da);
    tp.accumulate(b, g.db);
  });
}

inline Var add(Tape& t, Var a, Var b) { return elementwise(t, ElementwiseOp::add, a, b); }
inline Var mul(Tape& t, Var a, Var b) { return elementwise(t, ElementwiseOp::mul, a, b); }

inline Var logistic(Tape& t, Var a) {
  Tensor4 out = sarpf::logistic(t.value(a));
  const std::size_t self = t.size();
  return t.record(std::move(out), {a}, [a, self](Tape& tp, const Tensor4& dout) {
    tp.accumulate(a, logistic_backward(tp.value(Var{self}), dout));
  });
}

inline Var global_avg_pool(Tape& t, Var a) {
  Tensor4 out = sarpf::global_avg_pool(t.value(a));
  return t.record(std::move(out), {a}, [a](Tape& tp, const Tensor4& dout) {
    tp.accumulate(a, global_avg_pool_backward(tp.value(a).shape(), dout));
  });
}

inline Var concat_channels(Tape& t, std::vector<Var> parts) {
  std::vector<Tensor4> values;
  values.reserve(parts.size());
  for (Var p : parts) values.push_back(t.value(p));
  Tensor4 out = sarpf::concat_channels(values);
  return t.record(std::move(out), parts, [parts](Tape& tp, const Tensor4& dout) {
    std::vector<Shape4> shapes;
    for (Var p : parts) shapes.push_back(tp.value(p).shape());
    auto grads = concat_channels_backward(shapes, dout);
    for (std::size_t i = 0; i < parts.size(); ++i) tp.accumulate(parts[i], grads[i]);
  });
}

/// Sum of all entries as a (1,1,1,1) node.
inline Var sum(Tape& t, Var a) {
  Tensor4 out({1, 1, 1, 1}, sarpf::sum(t.value(a)));
  return t.record(std::move(out), {a}, [a](Tape& tp, const Tensor4& dout) {
    tp.accumulate(a, Tensor4::full(tp.value(a).shape(), dout[0]));
  });
}

/// Leading sub-block [0:n, 0:c, 0:h, 0:w] of a; gradient scatters back.
inline Var leading_block(Tape& t, Var a, Shape4 target) {
  const Tensor4& src = t.value(a);
  const Shape4& s = src.shape();
  if (target.n > s.n || target.c > s.c || target.h > s.h || target.w > s.w) {
    throw ShapeError("leading_block: " + target.str() + " exceeds " + s.str());
  }
  Tensor4 out(target);
  for (std::size_t b = 0; b < target.n; ++b)
    for (std::size_t c = 0; c < target.c; ++c)
      for (std::size_t y = 0; y < target.h; ++y)
        for (std::size_t x = 0; x < target.w; ++x) out(b, c, y, x) = src(b, c, y, x);
  return t.record(std::move(out), {a}, [a, target](Tape& tp, const Tensor4& dout) {
    Tensor4 g(tp.value(a).shape());
    for (std::size_t b = 0; b < target.n; ++b)
      for (std::size_t c = 0; c < target.c; ++c)
        for (std::size_t y = 0; y < target.h; ++y)
          for (std::size_t x = 0; x < target.w; ++x) g(b, c, y, x) = dout(b, c, y, x);
    tp.accumulate(a, g);
  });
}

namespace detail {
inline Tensor4 bias_tensor(std::span<const double> b) {
  return Tensor4({1, b.size(), 1, 1}, std::vector<double>(b.begin(), b.end()));
}
inline std::vector<double> to_vector(const Tensor4& t) { return {t.data().begin(), t.data().end()}; }
}  // namespace detail

/// Weights (out, in, kh, kw), bias (1, out, 1, 1).
inline Var conv2d(Tape& t, Var x, Var weights, Var bias, ConvGeometry g) {
  Tensor4 out = sarpf::conv2d(t.value(x), t.value(weights), t.value(bias).data(), g);
  return t.record(std::move(out), {x, weights, bias}, [x, weights, bias, g](Tape& tp, const Tensor4& dout) {
    auto gr = conv2d_backward(tp.value(x), tp.value(weights), g, dout);
    tp.accumulate(x, gr.dx);
    tp.accumulate(weights, gr.dweights);
    tp.accumulate(bias, detail::bias_tensor(gr.dbias));
  });
}

/// Weights (in, out, 2, 2), bias (1, out, 1, 1).
inline Var deconv2x(Tape& t, Var x, Var weights, Var bias) {
  Tensor4 out = sarpf::deconv2x(t.value(x), t.value(weights), t.value(bias).data());
  return t.record(std::move(out), {x, weights, bias}, [x, weights, bias](Tape& tp, const Tensor4& dout) {
    auto gr = deconv2x_backward(tp.value(x), tp.value(weights), dout);
    tp.accumulate(x, gr.dx);
    tp.accumulate(weights, gr.dweights);
    tp.accumulate(bias, detail::bias_tensor(gr.dbias));
  });
}

struct ScseVars {
  Var reduce_w, reduce_b, expand_w, expand_b, spatial_w, spatial_b;
};

inline ScseParams scse_params_from(const Tape& t, const ScseVars& v) {
  auto kernel = [&](Var w, Var b) { return ConvKernel{t.value(w), detail::to_vector(t.value(b)), 1, 0}; };
  return {kernel(v.reduce_w, v.reduce_b), kernel(v.expand_w, v.expand_b), kernel(v.spatial_w, v.spatial_b)};
}

inline Var scse(Tape& t, Var x, ScseVars v) {
  const ScseParams p = scse_params_from(t, v);
  auto trace = std::make_shared<ScseTrace>(scse_forward_traced(t.value(x), p));
  Tensor4 out = trace->output;
  const Var inputs[] = {x, v.reduce_w, v.reduce_b, v.expand_w, v.expand_b, v.spatial_w, v.spatial_b};
  return t.record(std::move(out), inputs, [x, v, trace](Tape& tp, const Tensor4& dout) {
    const ScseParams p = scse_params_from(tp, v);
    auto g = scse_backward(tp.value(x), p, *trace, dout);
    tp.accumulate(x, g.dx);
    tp.accumulate(v.reduce_w, g.channel_reduce.dweights);
    tp.accumulate(v.reduce_b, detail::bias_tensor(g.channel_reduce.dbias));
    tp.accumulate(v.expand_w, g.channel_expand.dweights);
    tp.accumulate(v.expand_b, detail::bias_tensor(g.channel_expand.dbias));
    tp.accumulate(v.spatial_w, g.spatial.dweights);
    tp.accumulate(v.spatial_b, detail::bias_tensor(g.spatial.dbias));
  });
}

struct MhsaVars {
  Var wq, wk, wv;              // (1, 1, D, D)
  std::optional<Var> r_qk;     // (1, N, HW, HW)
  std::optional<Var> r_v;      // (1, N, d_k, HW)
  std::size_t head_count = 1;
};

inline MhsaParams mhsa_params_from(const Tape& t, const MhsaVars& v) {
  return {as_matrix(t.value(v.wq)), as_matrix(t.value(v.wk)), as_matrix(t.value(v.wv)), v.head_count};
}

inline RegisterTokens registers_from(const Tensor4& qk, const Tensor4& rv) {
  RegisterTokens r;
  const Shape4& sq = qk.shape();
  const Shape4& sv = rv.shape();
  if (sq.n != 1 || sv.n != 1 || sq.c != sv.c) throw ShapeError("registers: expected (1,N,HW,HW) and (1,N,d_k,HW)");
  for (std::size_t i = 0; i < sq.c; ++i) {
    auto pq = qk.plane(0, i);
    auto pv = rv.plane(0, i);
    r.qk.emplace_back(sq.h, sq.w, std::vector<double>(pq.begin(), pq.end()));
    r.v.emplace_back(sv.h, sv.w, std::vector<double>(pv.begin(), pv.end()));
  }
  return r;
}

inline Tensor4 registers_tensor(const std::vector<Matrix>& mats) {
  if (mats.empty()) return {};
  const std::size_t rows = mats.front().rows(), cols = mats.front().cols();
  Tensor4 t({1, mats.size(), rows, cols});
  for (std::size_t i = 0; i < mats.size(); ++i) {
    auto dst = t.plane(0, i);
    std::copy(mats[i].data().begin(), mats[i].data().end(), dst.begin());
  }
  return t;
}

struct MhsaResult {
  Var out;
  std::shared_ptr<const MhsaTrace> trace;
};

inline MhsaResult mhsa(Tape& t, Var x, const MhsaVars& v) {
  if (v.r_qk.has_value() != v.r_v.has_value()) throw ContractError("mhsa: registers need both R_qk and R_v");
  const MhsaParams p = mhsa_params_from(t, v);
  std::shared_ptr<const RegisterTokens> reg;
  if (v.r_qk) reg = std::make_shared<RegisterTokens>(registers_from(t.value(*v.r_qk), t.value(*v.r_v)));
  auto trace = std::make_shared<const MhsaTrace>(mhsa_forward_traced(t.value(x), p, reg.get()));
  std::vector<Var> inputs{x, v.wq, v.wk, v.wv};
  if (reg) {
    inputs.push_back(*v.r_qk);
    inputs.push_back(*v.r_v);
  }
  Var out = t.record(trace->output, inputs, [x, v, trace, reg](Tape& tp, const Tensor4& dout) {
    const MhsaParams p = mhsa_params_from(tp, v);
    auto g = mhsa_backward(tp.value(x), p, reg.get(), *trace, dout);
    tp.accumulate(x, g.dx);
    tp.accumulate(v.wq, as_tensor(g.dwq));
    tp.accumulate(v.wk, as_tensor(g.dwk));
    tp.accumulate(v.wv, as_tensor(g.dwv));
    if (reg) {
      tp.accumulate(*v.r_qk, registers_tensor(g.dr_qk));
      tp.accumulate(*v.r_v, registers_tensor(g.dr_v));
    }
  });
  return {out, trace};
}

}  // namespace ops
}  // namespace sarpf
