#pragma once

// Global multi-head self-attention over flattened spatial positions with
// additive register biases, and concurrent spatial + channel recalibration.
//
// Token layout: for batch item b the H*W positions become rows of an
// (HW x D) matrix X with X[t][c] = x(b, c, t / W, t % W). Heads split the
// D columns into contiguous groups of d_k = D / heads.
//
// Registers are biases, one pair per head: R_qk[h] (HW x HW) is added to the
// raw scores Q_h K_h^T before the 1/sqrt(d_k) scaling, and R_v[h] (d_k x HW)
// is added to V_h in transposed (token-major) layout. The same registers are
// applied to every batch item and never reach the output shape.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "sarpf/convkit.hpp"
#include "sarpf/rng.hpp"
#include "sarpf/tensor.hpp"

namespace sarpf {

struct MhsaParams {
  Matrix wq;  // D x D
  Matrix wk;
  Matrix wv;
  std::size_t head_count = 1;

  std::size_t embed_dim() const noexcept { return wq.rows(); }
  std::size_t head_dim() const noexcept { return head_count == 0 ? 0 : embed_dim() / head_count; }

  void validate() const {
    const std::size_t d = embed_dim();
    for (const Matrix* m : {&wq, &wk, &wv}) {
      if (m->rows() != d || m->cols() != d) throw ShapeError("MhsaParams: projections must all be DxD");
    }
    if (head_count == 0 || d % head_count != 0) {
      throw ContractError("MhsaParams: embed dim " + std::to_string(d) + " not divisible by head count " +
                          std::to_string(head_count));
    }
  }
};

struct RegisterTokens {
  std::vector<Matrix> qk;  // one HW x HW logit bias per head
  std::vector<Matrix> v;   // one d_k x HW value bias per head

  std::size_t count() const noexcept { return qk.size(); }
  std::size_t hw() const noexcept { return qk.empty() ? 0 : qk.front().rows(); }

  static RegisterTokens zeros(std::size_t head_count, std::size_t hw, std::size_t d_head) {
    RegisterTokens r;
    r.qk.assign(head_count, Matrix(hw, hw));
    r.v.assign(head_count, Matrix(d_head, hw));
    return r;
  }
};

/// N = head_count registers with i.i.d. Gaussian(0, sigma^2) entries.
inline RegisterTokens build_registers(Rng& rng, std::size_t head_count, std::size_t hw, std::size_t d_head,
                                      double sigma) {
  if (head_count == 0 || hw == 0 || d_head == 0) throw ContractError("build_registers: dimensions must be positive");
  RegisterTokens r = RegisterTokens::zeros(head_count, hw, d_head);
  for (auto& m : r.qk)
    for (double& v : m.data()) v = sigma * rng.normal();
  for (auto& m : r.v)
    for (double& v : m.data()) v = sigma * rng.normal();
  return r;
}

/// Forward intermediates kept for the backward pass and for diagnostics.
struct MhsaTrace {
  std::vector<Matrix> q, k;         // per batch item, HW x D
  std::vector<Matrix> values;       // per (batch, head), HW x d_k, registers included
  std::vector<Matrix> attention;    // per (batch, head), HW x HW, row-stochastic
  Tensor4 output;
  std::size_t heads = 0;

  const Matrix& attention_of(std::size_t b, std::size_t h) const { return attention[b * heads + h]; }
};

namespace detail {

inline Matrix tokens_of(const Tensor4& x, std::size_t b) {
  const Shape4& s = x.shape();
  Matrix m(s.plane(), s.c);
  for (std::size_t c = 0; c < s.c; ++c) {
    const auto p = x.plane(b, c);
    for (std::size_t t = 0; t < p.size(); ++t) m(t, c) = p[t];
  }
  return m;
}

inline void check_registers(const MhsaParams& p, const RegisterTokens& reg, std::size_t hw) {
  if (reg.count() != p.head_count || reg.v.size() != p.head_count) {
    throw ShapeError("mhsa: register count " + std::to_string(reg.count()) + " must equal head count " +
                     std::to_string(p.head_count));
  }
  for (std::size_t h = 0; h < reg.count(); ++h) {
    if (reg.qk[h].rows() != hw || reg.qk[h].cols() != hw) {
      throw ShapeError("mhsa: R_qk is instantiated for " + std::to_string(reg.qk[h].rows()) + " tokens, input has " +
                       std::to_string(hw));
    }
    if (reg.v[h].rows() != p.head_dim() || reg.v[h].cols() != hw) {
      throw ShapeError("mhsa: R_v must be d_k x HW");
    }
  }
}

}  // namespace detail

inline MhsaTrace mhsa_forward_traced(const Tensor4& x, const MhsaParams& p, const RegisterTokens* reg) {
  p.validate();
  const Shape4& s = x.shape();
  const std::size_t d = p.embed_dim();
  if (s.c != d) {
    throw ShapeError("mhsa: input has " + std::to_string(s.c) + " channels, embed dim is " + std::to_string(d));
  }
  const std::size_t hw = s.plane();
  if (hw == 0) throw ShapeError("mhsa: empty spatial grid");
  if (reg != nullptr) detail::check_registers(p, *reg, hw);

  const std::size_t heads = p.head_count;
  const std::size_t dk = p.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  MhsaTrace tr;
  tr.heads = heads;
  tr.output = Tensor4(s);
  for (std::size_t b = 0; b < s.n; ++b) {
    const Matrix tokens = detail::tokens_of(x, b);
    Matrix q = matmul(tokens, p.wq);
    Matrix k = matmul(tokens, p.wk);
    const Matrix v = matmul(tokens, p.wv);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t c0 = h * dk;
      Matrix logits(hw, hw);
      for (std::size_t i = 0; i < hw; ++i) {
        for (std::size_t j = 0; j < hw; ++j) {
          double acc = 0.0;
          for (std::size_t c = 0; c < dk; ++c) acc += q(i, c0 + c) * k(j, c0 + c);
          if (reg != nullptr) acc += reg->qk[h](i, j);
          logits(i, j) = acc * scale;
        }
      }
      Matrix a = softmax_rows(logits);
      Matrix vr(hw, dk);
      for (std::size_t t = 0; t < hw; ++t) {
        for (std::size_t c = 0; c < dk; ++c) {
          vr(t, c) = v(t, c0 + c) + (reg != nullptr ? reg->v[h](c, t) : 0.0);
        }
      }
      const Matrix y = matmul(a, vr);
      for (std::size_t c = 0; c < dk; ++c) {
        auto dst = tr.output.plane(b, c0 + c);
        for (std::size_t t = 0; t < hw; ++t) dst[t] = y(t, c);
      }
      tr.attention.push_back(std::move(a));
      tr.values.push_back(std::move(vr));
    }
    tr.q.push_back(std::move(q));
    tr.k.push_back(std::move(k));
  }
  return tr;
}

inline Tensor4 mhsa_forward(const Tensor4& x, const MhsaParams& p) { return mhsa_forward_traced(x, p, nullptr).output; }

inline Tensor4 mhsa_forward(const Tensor4& x, const MhsaParams& p, const RegisterTokens& reg) {
  return mhsa_forward_traced(x, p, &reg).output;
}

struct MhsaGrads {
  Tensor4 dx;
  Matrix dwq, dwk, dwv;
  std::vector<Matrix> dr_qk;  // empty when run without registers
  std::vector<Matrix> dr_v;
};

inline MhsaGrads mhsa_backward(const Tensor4& x, const MhsaParams& p, const RegisterTokens* reg,
                               const MhsaTrace& tr, const Tensor4& dout) {
  const Shape4& s = x.shape();
  if (!(dout.shape() == s)) throw ShapeError("mhsa_backward: dout shape " + dout.shape().str());
  const std::size_t d = p.embed_dim();
  const std::size_t hw = s.plane();
  const std::size_t heads = p.head_count;
  const std::size_t dk = p.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  MhsaGrads g{Tensor4(s), Matrix(d, d), Matrix(d, d), Matrix(d, d), {}, {}};
  if (reg != nullptr) {
    g.dr_qk.assign(heads, Matrix(hw, hw));
    g.dr_v.assign(heads, Matrix(dk, hw));
  }
  const Matrix wq_t = p.wq.transposed();
  const Matrix wk_t = p.wk.transposed();
  const Matrix wv_t = p.wv.transposed();

  for (std::size_t b = 0; b < s.n; ++b) {
    const Matrix tokens = detail::tokens_of(x, b);
    const Matrix& q = tr.q[b];
    const Matrix& k = tr.k[b];
    Matrix dq(hw, d), dk_m(hw, d), dv(hw, d);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t c0 = h * dk;
      const Matrix& a = tr.attention_of(b, h);
      const Matrix& vr = tr.values[b * heads + h];
      Matrix dy(hw, dk);
      for (std::size_t c = 0; c < dk; ++c) {
        const auto src = dout.plane(b, c0 + c);
        for (std::size_t t = 0; t < hw; ++t) dy(t, c) = src[t];
      }
      const Matrix da = matmul(dy, vr.transposed());
      const Matrix dvr = matmul(a.transposed(), dy);
      Matrix dscore = softmax_rows_backward(a, da);
      for (double& v : dscore.data()) v *= scale;
      for (std::size_t i = 0; i < hw; ++i) {
        for (std::size_t j = 0; j < hw; ++j) {
          const double gs = dscore(i, j);
          for (std::size_t c = 0; c < dk; ++c) {
            dq(i, c0 + c) += gs * k(j, c0 + c);
            dk_m(j, c0 + c) += gs * q(i, c0 + c);
          }
        }
      }
      for (std::size_t t = 0; t < hw; ++t)
        for (std::size_t c = 0; c < dk; ++c) dv(t, c0 + c) = dvr(t, c);
      if (reg != nullptr) {
        auto& rq = g.dr_qk[h];
        for (std::size_t i = 0; i < rq.data().size(); ++i) rq.data()[i] += dscore.data()[i];
        for (std::size_t c = 0; c < dk; ++c)
          for (std::size_t t = 0; t < hw; ++t) g.dr_v[h](c, t) += dvr(t, c);
      }
    }
    const Matrix tokens_t = tokens.transposed();
    const Matrix gq = matmul(tokens_t, dq);
    const Matrix gk = matmul(tokens_t, dk_m);
    const Matrix gv = matmul(tokens_t, dv);
    for (std::size_t i = 0; i < d * d; ++i) {
      g.dwq.data()[i] += gq.data()[i];
      g.dwk.data()[i] += gk.data()[i];
      g.dwv.data()[i] += gv.data()[i];
    }
    const Matrix dtok_q = matmul(dq, wq_t);
    const Matrix dtok_k = matmul(dk_m, wk_t);
    const Matrix dtok_v = matmul(dv, wv_t);
    for (std::size_t c = 0; c < d; ++c) {
      auto dst = g.dx.plane(b, c);
      for (std::size_t t = 0; t < hw; ++t) dst[t] = dtok_q(t, c) + dtok_k(t, c) + dtok_v(t, c);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Attention mass

/// Column sums of a row-stochastic attention matrix: the total attention each
/// token receives.
inline std::vector<double> attention_mass(const Matrix& a) {
  for (std::size_t r = 0; r < a.rows(); ++r) {
    double s = 0.0;
    for (double v : a.row(r)) s += v;
    if (std::abs(s - 1.0) > 1e-9) {
      throw ContractError("attention_mass: row " + std::to_string(r) + " sums to " + std::to_string(s));
    }
  }
  std::vector<double> mass(a.cols(), 0.0);
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) mass[c] += a(r, c);
  return mass;
}

// ---------------------------------------------------------------------------
// Concurrent spatial and channel squeeze-and-excitation

struct ScseParams {
  ConvKernel channel_reduce;  // 1x1, C -> C/r
  ConvKernel channel_expand;  // 1x1, C/r -> C
  ConvKernel spatial;         // 1x1, C -> 1

  std::size_t channels() const noexcept { return spatial.in_channels(); }

  static ScseParams zeros(std::size_t channels, std::size_t reduction) {
    if (reduction == 0 || channels % reduction != 0) {
      throw ContractError("ScseParams: reduction " + std::to_string(reduction) + " must divide " +
                          std::to_string(channels));
    }
    const std::size_t mid = channels / reduction;
    return {ConvKernel::zeros(mid, channels, 1, 1), ConvKernel::zeros(channels, mid, 1, 1),
            ConvKernel::zeros(1, channels, 1, 1)};
  }

  void validate() const {
    const std::size_t c = channels();
    channel_reduce.validate();
    channel_expand.validate();
    spatial.validate();
    if (channel_reduce.in_channels() != c || channel_expand.out_channels() != c ||
        channel_expand.in_channels() != channel_reduce.out_channels() || spatial.out_channels() != 1) {
      throw ShapeError("ScseParams: inconsistent channel counts");
    }
  }
};

struct ScseTrace {
  Tensor4 pooled;        // (B, C, 1, 1)
  Tensor4 reduced_pre;   // (B, C/r, 1, 1)
  Tensor4 reduced;       // relu(reduced_pre)
  Tensor4 channel_gate;  // (B, C, 1, 1), logistic
  Tensor4 spatial_gate;  // (B, 1, H, W), logistic
  Tensor4 output;
};

inline ScseTrace scse_forward_traced(const Tensor4& x, const ScseParams& p) {
  p.validate();
  if (x.shape().c != p.channels()) {
    throw ShapeError("scse: input has " + std::to_string(x.shape().c) + " channels, params expect " +
                     std::to_string(p.channels()));
  }
  ScseTrace tr;
  tr.pooled = global_avg_pool(x);
  tr.reduced_pre = pointwise_conv(tr.pooled, p.channel_reduce);
  tr.reduced = relu(tr.reduced_pre);
  tr.channel_gate = logistic(pointwise_conv(tr.reduced, p.channel_expand));
  tr.spatial_gate = logistic(pointwise_conv(x, p.spatial));

  const Shape4& s = x.shape();
  tr.output = Tensor4(s);
  for (std::size_t b = 0; b < s.n; ++b) {
    const auto gs = tr.spatial_gate.plane(b, 0);
    for (std::size_t c = 0; c < s.c; ++c) {
      const double gc = tr.channel_gate(b, c, 0, 0);
      const auto src = x.plane(b, c);
      auto dst = tr.output.plane(b, c);
      for (std::size_t t = 0; t < src.size(); ++t) dst[t] = gs[t] * src[t] + gc * src[t];
    }
  }
  return tr;
}

/// out = g_s * x + g_c * x with g_s a per-pixel and g_c a per-channel gate.
inline Tensor4 scse_recalibrate(const Tensor4& x, const ScseParams& p) { return scse_forward_traced(x, p).output; }

struct ScseGrads {
  Tensor4 dx;
  ConvGrads channel_reduce;  // dx members hold gradients w.r.t. each sub-map's own input
  ConvGrads channel_expand;
  ConvGrads spatial;
};

inline ScseGrads scse_backward(const Tensor4& x, const ScseParams& p, const ScseTrace& tr, const Tensor4& dout) {
  const Shape4& s = x.shape();
  if (!(dout.shape() == s)) throw ShapeError("scse_backward: dout shape " + dout.shape().str());
  Tensor4 dx(s);
  Tensor4 d_spatial_gate({s.n, 1, s.h, s.w});
  Tensor4 d_channel_gate({s.n, s.c, 1, 1});
  for (std::size_t b = 0; b < s.n; ++b) {
    const auto gs = tr.spatial_gate.plane(b, 0);
    auto dgs = d_spatial_gate.plane(b, 0);
    for (std::size_t c = 0; c < s.c; ++c) {
      const double gc = tr.channel_gate(b, c, 0, 0);
      const auto src = x.plane(b, c);
      const auto go = dout.plane(b, c);
      auto dst = dx.plane(b, c);
      double acc = 0.0;
      for (std::size_t t = 0; t < src.size(); ++t) {
        dst[t] = go[t] * (gs[t] + gc);
        dgs[t] += go[t] * src[t];
        acc += go[t] * src[t];
      }
      d_channel_gate(b, c, 0, 0) = acc;
    }
  }

  ScseGrads g;
  g.spatial = conv2d_backward(x, p.spatial, logistic_backward(tr.spatial_gate, d_spatial_gate));
  g.channel_expand = conv2d_backward(tr.reduced, p.channel_expand, logistic_backward(tr.channel_gate, d_channel_gate));
  g.channel_reduce = conv2d_backward(tr.pooled, p.channel_reduce, relu_backward(tr.reduced_pre, g.channel_expand.dx));
  const Tensor4 d_from_pool = global_avg_pool_backward(s, g.channel_reduce.dx);
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g.spatial.dx[i] + d_from_pool[i];
  g.dx = std::move(dx);
  return g;
}

}  // namespace sarpf
