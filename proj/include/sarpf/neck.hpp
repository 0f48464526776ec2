#pragma once

// Three-level top-down feature fusion neck.
//
//   l5 = APAC(proj5(c5))                 p5 = l5
//   t4 = up4(p5)   l4 = APAC(proj4(c4))  p4 = l4 + t4
//   t3 = up3(p4)   l3 = APAC(proj3(c3))  p3 = l3 + t3
//
// APAC: parallel 3x3 atrous convs (one per dilation, "same" padding),
// channel concat, 1x1 fuse back to C, then scSE recalibration.
// up: out = gate * deconv2x(top) with gate = GAP(MHSA(top)) (optionally
// squashed); the MHSA runs at the coarse grid with the step's registers.
//
// Every forward is recorded on a Tape so the same code path serves value
// evaluation and gradients.

#include <algorithm>
#include <array>
#include <cstddef>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sarpf/attention.hpp"
#include "sarpf/convkit.hpp"
#include "sarpf/rng.hpp"
#include "sarpf/tape.hpp"
#include "sarpf/tensor.hpp"

namespace sarpf {

enum class GatingMode { raw, logistic };
enum class AtrousMode { standard, atrous, attention_atrous };

inline std::string_view to_string(GatingMode m) { return m == GatingMode::raw ? "raw" : "logistic"; }

inline std::string_view to_string(AtrousMode m) {
  switch (m) {
    case AtrousMode::standard: return "standard";
    case AtrousMode::atrous: return "atrous";
    case AtrousMode::attention_atrous: return "attention_atrous";
  }
  return "?";
}

struct NeckConfig {
  std::size_t pyramid_width = 8;
  std::size_t head_count = 2;
  std::size_t register_count = 2;
  std::vector<std::size_t> dilations{1, 2, 3};
  GatingMode gating = GatingMode::logistic;
  bool use_mhsa = true;
  bool use_registers = true;
  AtrousMode atrous_mode = AtrousMode::attention_atrous;
  double init_sigma = 0.01;
  std::size_t reduction = 4;
  std::array<std::size_t, 3> in_channels{16, 32, 64};  // C3, C4, C5
  std::size_t max_base_hw = 1024;                      // largest H*W accepted at c3

  /// Register capacity (tokens) of the attention site feeding level 4 or 3.
  std::size_t register_capacity(int level) const { return level == 4 ? max_base_hw / 16 : max_base_hw / 4; }

  void validate() const {
    auto fail = [](const std::string& m) { throw ContractError("NeckConfig: " + m); };
    if (pyramid_width == 0) fail("pyramid_width must be positive");
    if (head_count == 0 || pyramid_width % head_count != 0) fail("pyramid_width must be divisible by head_count");
    if (register_count != head_count) fail("register_count must equal head_count");
    if (dilations.empty()) fail("dilations must be nonempty");
    for (auto d : dilations)
      if (d < 1) fail("dilations must be >= 1");
    if (!(init_sigma >= 0.0) || !std::isfinite(init_sigma)) fail("init_sigma must be finite and >= 0");
    if (reduction == 0 || pyramid_width % reduction != 0) fail("reduction must divide pyramid_width");
    for (auto c : in_channels)
      if (c == 0) fail("input channel counts must be positive");
    if (max_base_hw == 0 || max_base_hw % 16 != 0) fail("max_base_hw must be a positive multiple of 16");
  }

  friend bool operator==(const NeckConfig&, const NeckConfig&) = default;
};

struct PyramidIn {
  Tensor4 c3, c4, c5;
};

struct PyramidOut {
  Tensor4 p3, p4, p5;
};

struct NamedTensor {
  std::string name;
  Tensor4 value;
  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

/// All learnables of the neck as an ordered list of named tensors. Biases
/// are stored as (1, out, 1, 1); projection matrices as (1, 1, D, D);
/// registers as (1, N, cap, cap) and (1, N, d_k, cap).
struct NeckParams {
  std::vector<NamedTensor> tensors;

  std::size_t index_of(std::string_view name) const {
    for (std::size_t i = 0; i < tensors.size(); ++i)
      if (tensors[i].name == name) return i;
    throw ContractError("NeckParams: no tensor named '" + std::string(name) + "'");
  }
  const Tensor4& at(std::string_view name) const { return tensors[index_of(name)].value; }
  Tensor4& at(std::string_view name) { return tensors[index_of(name)].value; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.value.size();
    return n;
  }

  friend bool operator==(const NeckParams&, const NeckParams&) = default;
};

inline std::string level_prefix(int level) { return "l" + std::to_string(level) + "."; }
inline std::string step_prefix(int level) { return "up" + std::to_string(level) + "."; }

/// Expected (name, shape) list for a config, in storage order.
inline std::vector<std::pair<std::string, Shape4>> param_layout(const NeckConfig& cfg) {
  cfg.validate();
  const std::size_t c = cfg.pyramid_width;
  const std::size_t mid = c / cfg.reduction;
  const std::size_t nd = cfg.dilations.size();
  const std::size_t heads = cfg.head_count;
  const std::size_t dk = c / heads;
  std::vector<std::pair<std::string, Shape4>> out;
  for (int level : {3, 4, 5}) {
    const std::string p = level_prefix(level);
    const std::size_t cin = cfg.in_channels[static_cast<std::size_t>(level - 3)];
    out.push_back({p + "proj.weight", {c, cin, 1, 1}});
    out.push_back({p + "proj.bias", {1, c, 1, 1}});
    for (std::size_t i = 0; i < nd; ++i) {
      out.push_back({p + "branch" + std::to_string(i) + ".weight", {c, c, 3, 3}});
      out.push_back({p + "branch" + std::to_string(i) + ".bias", {1, c, 1, 1}});
    }
    out.push_back({p + "fuse.weight", {c, nd * c, 1, 1}});
    out.push_back({p + "fuse.bias", {1, c, 1, 1}});
    out.push_back({p + "scse.reduce.weight", {mid, c, 1, 1}});
    out.push_back({p + "scse.reduce.bias", {1, mid, 1, 1}});
    out.push_back({p + "scse.expand.weight", {c, mid, 1, 1}});
    out.push_back({p + "scse.expand.bias", {1, c, 1, 1}});
    out.push_back({p + "scse.spatial.weight", {1, c, 1, 1}});
    out.push_back({p + "scse.spatial.bias", {1, 1, 1, 1}});
  }
  for (int level : {4, 3}) {
    const std::string p = step_prefix(level);
    const std::size_t cap = cfg.register_capacity(level);
    out.push_back({p + "mhsa.wq", {1, 1, c, c}});
    out.push_back({p + "mhsa.wk", {1, 1, c, c}});
    out.push_back({p + "mhsa.wv", {1, 1, c, c}});
    out.push_back({p + "reg.qk", {1, heads, cap, cap}});
    out.push_back({p + "reg.v", {1, heads, dk, cap}});
    out.push_back({p + "deconv.weight", {c, c, 2, 2}});
    out.push_back({p + "deconv.bias", {1, c, 1, 1}});
  }
  return out;
}

inline bool is_bias(std::string_view name) { return name.ends_with(".bias"); }

inline NeckParams zero_params(const NeckConfig& cfg) {
  NeckParams p;
  for (auto& [name, shape] : param_layout(cfg)) p.tensors.push_back({name, Tensor4(shape)});
  return p;
}

/// Weights ~ Gaussian(0, init_sigma^2), biases 0. Each tensor draws from its
/// own stream split off by name, so tensors are independent of layout order.
inline NeckParams init_params(const NeckConfig& cfg, const Rng& rng) {
  NeckParams p = zero_params(cfg);
  for (auto& t : p.tensors) {
    if (is_bias(t.name)) continue;
    Rng stream = rng.split(t.name);
    for (double& v : t.value.data()) v = cfg.init_sigma * stream.normal();
  }
  return p;
}

// ---------------------------------------------------------------------------
// Typed views of one lateral level / one top-down step

struct LevelParams {
  ConvKernel projection;            // 1x1, C_in -> C
  std::vector<ConvKernel> branches; // 3x3, C -> C, dilation = padding = d_i
  ConvKernel fuse;                  // 1x1, nC -> C
  ScseParams scse;
};

struct StepParams {
  MhsaParams mhsa;
  Tensor4 registers_qk;  // (1, N, cap, cap)
  Tensor4 registers_v;   // (1, N, d_k, cap)
  DeconvKernel deconv;
};

namespace detail {
inline std::vector<double> flat(const Tensor4& t) { return {t.data().begin(), t.data().end()}; }
}  // namespace detail

inline LevelParams level_params(const NeckParams& p, const NeckConfig& cfg, int level) {
  const std::string pre = level_prefix(level);
  auto kernel = [&](const std::string& name, std::size_t d, std::size_t pad) {
    return ConvKernel{p.at(pre + name + ".weight"), detail::flat(p.at(pre + name + ".bias")), d, pad};
  };
  LevelParams lp;
  lp.projection = kernel("proj", 1, 0);
  for (std::size_t i = 0; i < cfg.dilations.size(); ++i) {
    lp.branches.push_back(kernel("branch" + std::to_string(i), cfg.dilations[i], cfg.dilations[i]));
  }
  lp.fuse = kernel("fuse", 1, 0);
  lp.scse = {kernel("scse.reduce", 1, 0), kernel("scse.expand", 1, 0), kernel("scse.spatial", 1, 0)};
  return lp;
}

inline StepParams step_params(const NeckParams& p, const NeckConfig& cfg, int level) {
  const std::string pre = step_prefix(level);
  return {MhsaParams{as_matrix(p.at(pre + "mhsa.wq")), as_matrix(p.at(pre + "mhsa.wk")),
                     as_matrix(p.at(pre + "mhsa.wv")), cfg.head_count},
          p.at(pre + "reg.qk"), p.at(pre + "reg.v"),
          DeconvKernel{p.at(pre + "deconv.weight"), detail::flat(p.at(pre + "deconv.bias"))}};
}

// ---------------------------------------------------------------------------
// Tape-level building blocks

namespace ops {

struct LevelVars {
  Var proj_w, proj_b;
  std::vector<Var> branch_w, branch_b;
  Var fuse_w, fuse_b;
  ScseVars scse;
};

struct StepVars {
  Var wq, wk, wv;
  Var reg_qk, reg_v;  // capacity-sized storage
  Var deconv_w, deconv_b;
};

inline LevelVars level_vars(const std::vector<Var>& vars, const NeckParams& p, const NeckConfig& cfg, int level) {
  const std::string pre = level_prefix(level);
  auto v = [&](const std::string& n) { return vars[p.index_of(pre + n)]; };
  LevelVars lv{v("proj.weight"), v("proj.bias"), {}, {}, v("fuse.weight"), v("fuse.bias"),
               ScseVars{v("scse.reduce.weight"), v("scse.reduce.bias"), v("scse.expand.weight"),
                        v("scse.expand.bias"), v("scse.spatial.weight"), v("scse.spatial.bias")}};
  for (std::size_t i = 0; i < cfg.dilations.size(); ++i) {
    lv.branch_w.push_back(v("branch" + std::to_string(i) + ".weight"));
    lv.branch_b.push_back(v("branch" + std::to_string(i) + ".bias"));
  }
  return lv;
}

inline StepVars step_vars(const std::vector<Var>& vars, const NeckParams& p, int level) {
  const std::string pre = step_prefix(level);
  auto v = [&](const std::string& n) { return vars[p.index_of(pre + n)]; };
  return {v("mhsa.wq"), v("mhsa.wk"), v("mhsa.wv"), v("reg.qk"), v("reg.v"), v("deconv.weight"), v("deconv.bias")};
}

inline Var lateral_projection(Tape& t, Var x, const LevelVars& lv) {
  return conv2d(t, x, lv.proj_w, lv.proj_b, {1, 0});
}

inline Var apac(Tape& t, Var f, const LevelVars& lv, const NeckConfig& cfg) {
  const std::size_t c = cfg.pyramid_width;
  if (t.value(f).shape().c != c) {
    throw ShapeError("apac_block: input has " + std::to_string(t.value(f).shape().c) + " channels, expected " +
                     std::to_string(c));
  }
  if (cfg.atrous_mode == AtrousMode::standard) {
    return conv2d(t, f, lv.branch_w.front(), lv.branch_b.front(), {1, 1});
  }
  std::vector<Var> branches;
  for (std::size_t i = 0; i < cfg.dilations.size(); ++i) {
    const std::size_t d = cfg.dilations[i];
    branches.push_back(conv2d(t, f, lv.branch_w[i], lv.branch_b[i], {d, d}));
  }
  const Var fused = conv2d(t, concat_channels(t, branches), lv.fuse_w, lv.fuse_b, {1, 0});
  if (cfg.atrous_mode == AtrousMode::atrous) return fused;
  return scse(t, fused, lv.scse);
}

struct UpsampleResult {
  Var out;
  std::shared_ptr<const MhsaTrace> trace;  // null when the MHSA path is disabled
  Var mhsa_out{};
};

inline UpsampleResult attention_upsample(Tape& t, Var top, const StepVars& sv, const NeckConfig& cfg, int level) {
  const Shape4 s = t.value(top).shape();
  const Var up = deconv2x(t, top, sv.deconv_w, sv.deconv_b);
  if (!cfg.use_mhsa) return {up, nullptr};

  MhsaVars mv{sv.wq, sv.wk, sv.wv, std::nullopt, std::nullopt, cfg.head_count};
  if (cfg.use_registers) {
    const std::size_t hw = s.plane();
    const std::size_t cap = t.value(sv.reg_qk).shape().h;
    if (hw > cap) {
      throw ShapeError("attention_upsample: " + std::to_string(hw) + " tokens exceed register capacity " +
                       std::to_string(cap) + " for level " + std::to_string(level));
    }
    const std::size_t dk = cfg.pyramid_width / cfg.head_count;
    mv.r_qk = leading_block(t, sv.reg_qk, {1, cfg.head_count, hw, hw});
    mv.r_v = leading_block(t, sv.reg_v, {1, cfg.head_count, dk, hw});
  }
  const MhsaResult y = mhsa(t, top, mv);
  Var gate = global_avg_pool(t, y.out);
  if (cfg.gating == GatingMode::logistic) gate = logistic(t, gate);
  return {mul(t, up, gate), y.trace, y.out};
}

}  // namespace ops

// ---------------------------------------------------------------------------
// Whole-neck graph

struct AttentionSite {
  std::string name;  // "up4" (p5 -> p4) or "up3" (p4 -> p3)
  std::shared_ptr<const MhsaTrace> trace;
};

struct NeckGraph {
  Var c3, c4, c5;
  std::vector<Var> params;  // aligned with NeckParams::tensors
  Var p3, p4, p5;
  std::vector<AttentionSite> sites;
};

inline void check_pyramid(const PyramidIn& in, const NeckConfig& cfg) {
  const Shape4& s3 = in.c3.shape();
  const Shape4& s4 = in.c4.shape();
  const Shape4& s5 = in.c5.shape();
  if (s3.h % 4 != 0 || s3.w % 4 != 0 || s3.h == 0 || s3.w == 0) {
    throw ShapeError("level c3: H and W must be positive multiples of 4, got " + s3.str());
  }
  if (s3.c != cfg.in_channels[0]) throw ShapeError("level c3: expected " + std::to_string(cfg.in_channels[0]) + " channels, got " + s3.str());
  if (!(s4 == Shape4{s3.n, cfg.in_channels[1], s3.h / 2, s3.w / 2})) {
    throw ShapeError("level c4: expected " + Shape4{s3.n, cfg.in_channels[1], s3.h / 2, s3.w / 2}.str() + ", got " + s4.str());
  }
  if (!(s5 == Shape4{s3.n, cfg.in_channels[2], s3.h / 4, s3.w / 4})) {
    throw ShapeError("level c5: expected " + Shape4{s3.n, cfg.in_channels[2], s3.h / 4, s3.w / 4}.str() + ", got " + s5.str());
  }
  if (cfg.use_mhsa && cfg.use_registers && s3.plane() > cfg.max_base_hw) {
    throw ShapeError("level c3: H*W = " + std::to_string(s3.plane()) + " exceeds max_base_hw " +
                     std::to_string(cfg.max_base_hw));
  }
}

inline void check_params(const NeckParams& p, const NeckConfig& cfg) {
  const auto layout = param_layout(cfg);
  if (layout.size() != p.tensors.size()) throw ShapeError("NeckParams: tensor count does not match config");
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (p.tensors[i].name != layout[i].first || !(p.tensors[i].value.shape() == layout[i].second)) {
      throw ShapeError("NeckParams: tensor '" + p.tensors[i].name + "' does not match expected '" + layout[i].first +
                       "' " + layout[i].second.str());
    }
  }
}

/// Records the full neck on t. Inputs and params are leaves that receive
/// gradients.
inline NeckGraph neck_graph(Tape& t, const PyramidIn& in, const NeckParams& params, const NeckConfig& cfg) {
  cfg.validate();
  check_params(params, cfg);
  check_pyramid(in, cfg);
  NeckGraph g;
  g.c3 = t.parameter(in.c3);
  g.c4 = t.parameter(in.c4);
  g.c5 = t.parameter(in.c5);
  for (const auto& nt : params.tensors) g.params.push_back(t.parameter(nt.value));

  auto lateral = [&](Var c, int level) {
    const auto lv = ops::level_vars(g.params, params, cfg, level);
    return ops::apac(t, ops::lateral_projection(t, c, lv), lv, cfg);
  };
  auto top_down = [&](Var top, int level) {
    auto r = ops::attention_upsample(t, top, ops::step_vars(g.params, params, level), cfg, level);
    if (r.trace) g.sites.push_back({step_prefix(level).substr(0, 3), r.trace});
    return r.out;
  };

  g.p5 = lateral(g.c5, 5);
  const Var t4 = top_down(g.p5, 4);
  g.p4 = ops::add(t, lateral(g.c4, 4), t4);
  const Var t3 = top_down(g.p4, 3);
  g.p3 = ops::add(t, lateral(g.c3, 3), t3);
  return g;
}

struct NeckForward {
  PyramidOut out;
  std::vector<AttentionSite> sites;
};

inline NeckForward neck_forward_detailed(const PyramidIn& in, const NeckParams& params, const NeckConfig& cfg) {
  Tape t;
  const NeckGraph g = neck_graph(t, in, params, cfg);
  return {{t.value(g.p3), t.value(g.p4), t.value(g.p5)}, g.sites};
}

inline PyramidOut neck_forward(const PyramidIn& in, const NeckParams& params, const NeckConfig& cfg) {
  return neck_forward_detailed(in, params, cfg).out;
}

/// Gradients of sum(p3) + sum(p4) + sum(p5) for every parameter tensor.
inline std::vector<Tensor4> neck_sum_loss_gradients(const PyramidIn& in, const NeckParams& params,
                                                    const NeckConfig& cfg) {
  Tape t;
  const NeckGraph g = neck_graph(t, in, params, cfg);
  const Var loss = ops::add(t, ops::add(t, ops::sum(t, g.p3), ops::sum(t, g.p4)), ops::sum(t, g.p5));
  t.backward(loss);
  std::vector<Tensor4> grads;
  for (Var v : g.params) grads.push_back(t.grad(v));
  return grads;
}

inline double neck_sum_loss(const PyramidIn& in, const NeckParams& params, const NeckConfig& cfg) {
  const PyramidOut out = neck_forward(in, params, cfg);
  return sum(out.p3) + sum(out.p4) + sum(out.p5);
}

// ---------------------------------------------------------------------------
// Single-block entry points

/// APAC on an already projected map f (C channels).
inline Tensor4 apac_block(const Tensor4& f, const LevelParams& lp, const NeckConfig& cfg) {
  Tape t;
  ops::LevelVars lv;
  lv.proj_w = t.constant(lp.projection.weights);
  lv.proj_b = t.constant(ops::detail::bias_tensor(lp.projection.bias));
  for (const auto& k : lp.branches) {
    lv.branch_w.push_back(t.constant(k.weights));
    lv.branch_b.push_back(t.constant(ops::detail::bias_tensor(k.bias)));
  }
  lv.fuse_w = t.constant(lp.fuse.weights);
  lv.fuse_b = t.constant(ops::detail::bias_tensor(lp.fuse.bias));
  auto kv = [&](const ConvKernel& k) {
    return std::pair{t.constant(k.weights), t.constant(ops::detail::bias_tensor(k.bias))};
  };
  auto [rw, rb] = kv(lp.scse.channel_reduce);
  auto [ew, eb] = kv(lp.scse.channel_expand);
  auto [sw, sb] = kv(lp.scse.spatial);
  lv.scse = {rw, rb, ew, eb, sw, sb};
  return t.value(ops::apac(t, t.constant(f), lv, cfg));
}

inline Tensor4 attention_upsample(const Tensor4& top, const StepParams& sp, const NeckConfig& cfg) {
  Tape t;
  ops::StepVars sv{t.constant(as_tensor(sp.mhsa.wq)), t.constant(as_tensor(sp.mhsa.wk)),
                   t.constant(as_tensor(sp.mhsa.wv)), t.constant(sp.registers_qk), t.constant(sp.registers_v),
                   t.constant(sp.deconv.weights), t.constant(ops::detail::bias_tensor(sp.deconv.bias))};
  return t.value(ops::attention_upsample(t, t.constant(top), sv, cfg, 0).out);
}

/// Seeded standard-Gaussian pyramid standing in for backbone features.
inline PyramidIn synthetic_pyramid(Rng rng, std::size_t batch, const NeckConfig& cfg, std::size_t h, std::size_t w) {
  Rng r3 = rng.split("c3"), r4 = rng.split("c4"), r5 = rng.split("c5");
  return {random_normal(r3, {batch, cfg.in_channels[0], h, w}),
          random_normal(r4, {batch, cfg.in_channels[1], h / 2, w / 2}),
          random_normal(r5, {batch, cfg.in_channels[2], h / 4, w / 4})};
}

}  // namespace sarpf
