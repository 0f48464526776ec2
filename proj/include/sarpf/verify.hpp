#pragma once

// Fixed-seed verification suites: finite-difference gradient checks for every
// differentiable op and the composed neck, and oracle equivalences for the
// convolution kernels, the AP computation, receptive-field arithmetic and the
// zero-register collapse of attention.

#include <chrono>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "sarpf/attention.hpp"
#include "sarpf/convkit.hpp"
#include "sarpf/detmetrics.hpp"
#include "sarpf/gradcheck.hpp"
#include "sarpf/neck.hpp"
#include "sarpf/rng.hpp"
#include "sarpf/tape.hpp"
#include "sarpf/tensor.hpp"

namespace sarpf::verify {

enum class SuiteKind { grad, oracle };

struct SuiteResult {
  std::string name;
  SuiteKind kind = SuiteKind::grad;
  std::size_t cases = 0;
  double max_error = 0.0;
  double tolerance = 0.0;
  double seconds = 0.0;
  std::vector<std::string> failures;

  bool passed() const noexcept { return failures.empty(); }
};

struct Options {
  bool grad = true;
  bool oracle = true;
  std::size_t grad_seeds = 20;
  double epsilon = 1e-6;
  double primitive_tolerance = 1e-5;
  double neck_tolerance = 1e-4;
  std::uint64_t base_seed = 20240917;
  /// Test fixture: scales the analytic gradient of the named grad suite so
  /// the suite must fail.
  std::string corrupt_op;
};

struct GradCase {
  std::vector<Tensor4> params;
  DifferentiableFn fn;
};

using GradCaseFactory = std::function<GradCase(Rng&)>;

namespace detail {

inline std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)));
}

inline Tensor4 bias_of(std::span<const double> b) { return ops::detail::bias_tensor(b); }

inline std::vector<double> vec_of(const Tensor4& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace detail

// ---------------------------------------------------------------------------
// Gradient case factories. Each objective is a fixed random weighting
// <W, op(params)> so every output entry contributes.

inline GradCase elementwise_case(Rng& rng, ElementwiseOp op, bool broadcast) {
  const Shape4 s{detail::pick(rng, 1, 2), detail::pick(rng, 1, 3), detail::pick(rng, 1, 4), detail::pick(rng, 1, 4)};
  const Shape4 sb = broadcast ? Shape4{s.n, s.c, 1, 1} : s;
  const Tensor4 w = random_normal(rng, s);
  GradCase c;
  c.params = {random_normal(rng, s), random_normal(rng, sb)};
  c.fn.value = [op, w](std::span<const Tensor4> p) { return dot(elementwise(op, p[0], p[1]), w); };
  c.fn.gradient = [op, w](std::span<const Tensor4> p) {
    auto g = elementwise_backward(op, p[0], p[1], w);
    return std::vector<Tensor4>{g.da, g.db};
  };
  return c;
}

inline GradCase matmul_case(Rng& rng) {
  const std::size_t m = detail::pick(rng, 1, 5), k = detail::pick(rng, 1, 5), n = detail::pick(rng, 1, 5);
  const Matrix w = random_matrix(rng, m, n);
  GradCase c;
  c.params = {random_normal(rng, {1, 1, m, k}), random_normal(rng, {1, 1, k, n})};
  c.fn.value = [w](std::span<const Tensor4> p) {
    return dot(as_tensor(matmul(as_matrix(p[0]), as_matrix(p[1]))), as_tensor(w));
  };
  c.fn.gradient = [w](std::span<const Tensor4> p) {
    auto g = matmul_backward(as_matrix(p[0]), as_matrix(p[1]), w);
    return std::vector<Tensor4>{as_tensor(g.da), as_tensor(g.db)};
  };
  return c;
}

inline GradCase softmax_case(Rng& rng) {
  const std::size_t r = detail::pick(rng, 1, 5), cols = detail::pick(rng, 2, 6);
  const Matrix w = random_matrix(rng, r, cols);
  GradCase c;
  c.params = {random_normal(rng, {1, 1, r, cols}, 2.0)};
  c.fn.value = [w](std::span<const Tensor4> p) {
    return dot(as_tensor(softmax_rows(as_matrix(p[0]))), as_tensor(w));
  };
  c.fn.gradient = [w](std::span<const Tensor4> p) {
    return std::vector<Tensor4>{as_tensor(softmax_rows_backward(softmax_rows(as_matrix(p[0])), w))};
  };
  return c;
}

inline GradCase gap_case(Rng& rng) {
  const Shape4 s{detail::pick(rng, 1, 2), detail::pick(rng, 1, 4), detail::pick(rng, 1, 5), detail::pick(rng, 1, 5)};
  const Tensor4 w = random_normal(rng, {s.n, s.c, 1, 1});
  GradCase c;
  c.params = {random_normal(rng, s)};
  c.fn.value = [w](std::span<const Tensor4> p) { return dot(global_avg_pool(p[0]), w); };
  c.fn.gradient = [w](std::span<const Tensor4> p) {
    return std::vector<Tensor4>{global_avg_pool_backward(p[0].shape(), w)};
  };
  return c;
}

inline GradCase concat_case(Rng& rng) {
  const std::size_t n = detail::pick(rng, 1, 2), h = detail::pick(rng, 1, 4), wd = detail::pick(rng, 1, 4);
  GradCase c;
  std::size_t total = 0;
  for (int i = 0; i < 3; ++i) {
    const std::size_t ch = detail::pick(rng, 1, 3);
    total += ch;
    c.params.push_back(random_normal(rng, {n, ch, h, wd}));
  }
  const Tensor4 w = random_normal(rng, {n, total, h, wd});
  c.fn.value = [w](std::span<const Tensor4> p) { return dot(concat_channels(p), w); };
  c.fn.gradient = [w](std::span<const Tensor4> p) {
    std::vector<Shape4> shapes;
    for (const auto& t : p) shapes.push_back(t.shape());
    return concat_channels_backward(shapes, w);
  };
  return c;
}

inline GradCase conv2d_case(Rng& rng) {
  const std::size_t d = detail::pick(rng, 1, 3);
  const Shape4 xs{detail::pick(rng, 1, 2), detail::pick(rng, 1, 3), detail::pick(rng, 2, 6), detail::pick(rng, 2, 6)};
  const std::size_t out = detail::pick(rng, 1, 3);
  const ConvGeometry g{d, d};
  const Tensor4 w = random_normal(rng, {xs.n, out, xs.h, xs.w});
  GradCase c;
  c.params = {random_normal(rng, xs), random_normal(rng, {out, xs.c, 3, 3}), random_normal(rng, {1, out, 1, 1})};
  c.fn.value = [w, g](std::span<const Tensor4> p) { return dot(conv2d(p[0], p[1], p[2].data(), g), w); };
  c.fn.gradient = [w, g](std::span<const Tensor4> p) {
    auto gr = conv2d_backward(p[0], p[1], g, w);
    return std::vector<Tensor4>{gr.dx, gr.dweights, detail::bias_of(gr.dbias)};
  };
  return c;
}

inline GradCase pointwise_case(Rng& rng) {
  const Shape4 xs{detail::pick(rng, 1, 2), detail::pick(rng, 1, 4), detail::pick(rng, 1, 5), detail::pick(rng, 1, 5)};
  const std::size_t out = detail::pick(rng, 1, 4);
  const Tensor4 w = random_normal(rng, {xs.n, out, xs.h, xs.w});
  GradCase c;
  c.params = {random_normal(rng, xs), random_normal(rng, {out, xs.c, 1, 1}), random_normal(rng, {1, out, 1, 1})};
  auto kernel = [](std::span<const Tensor4> p) { return ConvKernel{p[1], detail::vec_of(p[2]), 1, 0}; };
  c.fn.value = [w, kernel](std::span<const Tensor4> p) { return dot(pointwise_conv(p[0], kernel(p)), w); };
  c.fn.gradient = [w, kernel](std::span<const Tensor4> p) {
    auto gr = pointwise_conv_backward(p[0], kernel(p), w);
    return std::vector<Tensor4>{gr.dx, gr.dweights, detail::bias_of(gr.dbias)};
  };
  return c;
}

inline GradCase deconv_case(Rng& rng) {
  const Shape4 xs{detail::pick(rng, 1, 2), detail::pick(rng, 1, 3), detail::pick(rng, 1, 4), detail::pick(rng, 1, 4)};
  const std::size_t out = detail::pick(rng, 1, 3);
  const Tensor4 w = random_normal(rng, {xs.n, out, 2 * xs.h, 2 * xs.w});
  GradCase c;
  c.params = {random_normal(rng, xs), random_normal(rng, {xs.c, out, 2, 2}), random_normal(rng, {1, out, 1, 1})};
  c.fn.value = [w](std::span<const Tensor4> p) { return dot(deconv2x(p[0], p[1], p[2].data()), w); };
  c.fn.gradient = [w](std::span<const Tensor4> p) {
    auto gr = deconv2x_backward(p[0], p[1], w);
    return std::vector<Tensor4>{gr.dx, gr.dweights, detail::bias_of(gr.dbias)};
  };
  return c;
}

inline GradCase scse_case(Rng& rng) {
  const std::size_t ch = 2 * detail::pick(rng, 1, 3);
  const std::size_t mid = ch / 2;
  const Shape4 xs{detail::pick(rng, 1, 2), ch, detail::pick(rng, 1, 4), detail::pick(rng, 1, 4)};
  const Tensor4 w = random_normal(rng, xs);
  GradCase c;
  c.params = {random_normal(rng, xs),
              random_normal(rng, {mid, ch, 1, 1}), random_normal(rng, {1, mid, 1, 1}),
              random_normal(rng, {ch, mid, 1, 1}), random_normal(rng, {1, ch, 1, 1}),
              random_normal(rng, {1, ch, 1, 1}), random_normal(rng, {1, 1, 1, 1})};
  auto params = [](std::span<const Tensor4> p) {
    return ScseParams{ConvKernel{p[1], detail::vec_of(p[2]), 1, 0}, ConvKernel{p[3], detail::vec_of(p[4]), 1, 0},
                      ConvKernel{p[5], detail::vec_of(p[6]), 1, 0}};
  };
  c.fn.value = [w, params](std::span<const Tensor4> p) { return dot(scse_recalibrate(p[0], params(p)), w); };
  c.fn.gradient = [w, params](std::span<const Tensor4> p) {
    const ScseParams sp = params(p);
    const auto tr = scse_forward_traced(p[0], sp);
    auto g = scse_backward(p[0], sp, tr, w);
    return std::vector<Tensor4>{g.dx,
                                g.channel_reduce.dweights, detail::bias_of(g.channel_reduce.dbias),
                                g.channel_expand.dweights, detail::bias_of(g.channel_expand.dbias),
                                g.spatial.dweights, detail::bias_of(g.spatial.dbias)};
  };
  return c;
}

inline GradCase mhsa_case(Rng& rng, bool with_registers) {
  const std::size_t heads = detail::pick(rng, 1, 2);
  const std::size_t dk = detail::pick(rng, 1, 3);
  const std::size_t d = heads * dk;
  const Shape4 xs{detail::pick(rng, 1, 2), d, detail::pick(rng, 1, 3), detail::pick(rng, 1, 3)};
  const std::size_t hw = xs.plane();
  const Tensor4 w = random_normal(rng, xs);
  GradCase c;
  c.params = {random_normal(rng, xs), random_normal(rng, {1, 1, d, d}, 0.7), random_normal(rng, {1, 1, d, d}, 0.7),
              random_normal(rng, {1, 1, d, d}, 0.7)};
  if (with_registers) {
    c.params.push_back(random_normal(rng, {1, heads, hw, hw}));
    c.params.push_back(random_normal(rng, {1, heads, dk, hw}));
  }
  auto params = [heads](std::span<const Tensor4> p) {
    return MhsaParams{as_matrix(p[1]), as_matrix(p[2]), as_matrix(p[3]), heads};
  };
  auto registers = [](std::span<const Tensor4> p) {
    return p.size() > 4 ? std::optional<RegisterTokens>(ops::registers_from(p[4], p[5])) : std::nullopt;
  };
  c.fn.value = [w, params, registers](std::span<const Tensor4> p) {
    const auto reg = registers(p);
    return dot(mhsa_forward_traced(p[0], params(p), reg ? &*reg : nullptr).output, w);
  };
  c.fn.gradient = [w, params, registers](std::span<const Tensor4> p) {
    const auto reg = registers(p);
    const MhsaParams mp = params(p);
    const auto tr = mhsa_forward_traced(p[0], mp, reg ? &*reg : nullptr);
    auto g = mhsa_backward(p[0], mp, reg ? &*reg : nullptr, tr, w);
    std::vector<Tensor4> out{g.dx, as_tensor(g.dwq), as_tensor(g.dwk), as_tensor(g.dwv)};
    if (reg) {
      out.push_back(ops::registers_tensor(g.dr_qk));
      out.push_back(ops::registers_tensor(g.dr_v));
    }
    return out;
  };
  return c;
}

/// Small random neck whose parameters are the grad-check variables; the
/// objective is sum(p3) + sum(p4) + sum(p5).
inline NeckConfig small_neck_config(Rng& rng) {
  NeckConfig cfg;
  cfg.pyramid_width = 4;
  cfg.head_count = detail::pick(rng, 1, 2);
  cfg.register_count = cfg.head_count;
  cfg.reduction = 2;
  cfg.in_channels = {detail::pick(rng, 1, 4), detail::pick(rng, 1, 4), detail::pick(rng, 1, 4)};
  cfg.gating = rng.uniform() < 0.5 ? GatingMode::logistic : GatingMode::raw;
  cfg.init_sigma = 0.4;
  cfg.max_base_hw = 64;
  return cfg;
}

inline GradCase neck_case(Rng& rng) {
  const NeckConfig cfg = small_neck_config(rng);
  const std::size_t side = rng.uniform() < 0.5 ? 4 : 8;
  const PyramidIn in = synthetic_pyramid(rng.split("input"), 1, cfg, side, side);
  NeckParams base = init_params(cfg, rng.split("params"));
  // Nonzero biases so every bias gradient path is exercised.
  for (auto& t : base.tensors)
    if (is_bias(t.name))
      for (double& v : t.value.data()) v = 0.1 * rng.normal();
  GradCase c;
  for (const auto& t : base.tensors) c.params.push_back(t.value);
  auto rebuild = [base](std::span<const Tensor4> p) {
    NeckParams np = base;
    for (std::size_t i = 0; i < p.size(); ++i) np.tensors[i].value = p[i];
    return np;
  };
  c.fn.value = [in, cfg, rebuild](std::span<const Tensor4> p) { return neck_sum_loss(in, rebuild(p), cfg); };
  c.fn.gradient = [in, cfg, rebuild](std::span<const Tensor4> p) {
    return neck_sum_loss_gradients(in, rebuild(p), cfg);
  };
  return c;
}

struct GradSuite {
  std::string name;
  GradCaseFactory factory;
  bool composed = false;
};

inline std::vector<GradSuite> grad_suites() {
  return {
      {"elementwise.add", [](Rng& r) { return elementwise_case(r, ElementwiseOp::add, r.uniform() < 0.5); }},
      {"elementwise.sub", [](Rng& r) { return elementwise_case(r, ElementwiseOp::sub, r.uniform() < 0.5); }},
      {"elementwise.mul", [](Rng& r) { return elementwise_case(r, ElementwiseOp::mul, r.uniform() < 0.5); }},
      {"matmul", matmul_case},
      {"softmax_rows", softmax_case},
      {"global_avg_pool", gap_case},
      {"concat_channels", concat_case},
      {"conv2d", conv2d_case},
      {"pointwise_conv", pointwise_case},
      {"deconv2x", deconv_case},
      {"scse_recalibrate", scse_case},
      {"mhsa", [](Rng& r) { return mhsa_case(r, false); }},
      {"mhsa_registers", [](Rng& r) { return mhsa_case(r, true); }},
      {"neck_forward", neck_case, true},
  };
}

inline SuiteResult run_grad_suite(const GradSuite& suite, const Options& opt) {
  const auto start = std::chrono::steady_clock::now();
  SuiteResult r;
  r.name = suite.name;
  r.kind = SuiteKind::grad;
  r.tolerance = suite.composed ? opt.neck_tolerance : opt.primitive_tolerance;
  const Rng root(opt.base_seed);
  for (std::size_t s = 0; s < opt.grad_seeds; ++s) {
    Rng rng = root.split(suite.name).split(s);
    GradCase gc = suite.factory(rng);
    if (opt.corrupt_op == suite.name) {
      auto original = gc.fn.gradient;
      gc.fn.gradient = [original](std::span<const Tensor4> p) {
        auto g = original(p);
        for (double& v : g.front().data()) v *= 1.01;
        return g;
      };
    }
    const auto res = grad_check_detailed(gc.fn, gc.params, opt.epsilon);
    ++r.cases;
    r.max_error = std::max(r.max_error, res.max_error);
    if (!(res.max_error < r.tolerance)) {
      r.failures.push_back(suite.name + " seed " + std::to_string(s) + ": relative error " +
                           std::to_string(res.max_error) + " at param " + std::to_string(res.param) + "[" +
                           std::to_string(res.index) + "]");
    }
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

// ---------------------------------------------------------------------------
// Oracle suites

inline ConvKernel random_conv_kernel(Rng& rng, std::size_t out, std::size_t in, std::size_t k, std::size_t d,
                                     std::size_t pad) {
  ConvKernel kr{random_normal(rng, {out, in, k, k}), {}, d, pad};
  for (std::size_t i = 0; i < out; ++i) kr.bias.push_back(rng.normal());
  return kr;
}

template <typename Fn>
SuiteResult timed_oracle(const std::string& name, double tolerance, Fn&& body) {
  const auto start = std::chrono::steady_clock::now();
  SuiteResult r;
  r.name = name;
  r.kind = SuiteKind::oracle;
  r.tolerance = tolerance;
  body(r);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

inline void record(SuiteResult& r, double err, const std::string& label, bool inclusive = false) {
  ++r.cases;
  r.max_error = std::max(r.max_error, err);
  const bool ok = inclusive ? err <= r.tolerance : err < r.tolerance;
  if (!ok) r.failures.push_back(r.name + " " + label + ": error " + std::to_string(err));
}

/// conv2d vs naive_conv2d on random shapes (dims <= 8), d in {1,2,3}, same padding.
inline SuiteResult conv_oracle_suite(std::uint64_t seed, std::size_t cases = 60) {
  return timed_oracle("conv2d_vs_naive", 1e-12, [&](SuiteResult& r) {
    Rng rng(seed);
    for (std::size_t i = 0; i < cases; ++i) {
      const std::size_t d = 1 + i % 3;
      const Shape4 xs{detail::pick(rng, 1, 2), detail::pick(rng, 1, 8), detail::pick(rng, 1, 8), detail::pick(rng, 1, 8)};
      const ConvKernel k = random_conv_kernel(rng, detail::pick(rng, 1, 8), xs.c, 3, d, d);
      const Tensor4 x = random_normal(rng, xs);
      record(r, max_abs_diff(conv2d(x, k), naive_conv2d(x, k)), "case " + std::to_string(i));
    }
  });
}

inline SuiteResult pointwise_oracle_suite(std::uint64_t seed, std::size_t cases = 20) {
  return timed_oracle("pointwise_vs_naive", 1e-12, [&](SuiteResult& r) {
    Rng rng(seed);
    for (std::size_t i = 0; i < cases; ++i) {
      const Shape4 xs{detail::pick(rng, 1, 2), detail::pick(rng, 1, 8), detail::pick(rng, 1, 8), detail::pick(rng, 1, 8)};
      const ConvKernel k = random_conv_kernel(rng, detail::pick(rng, 1, 8), xs.c, 1, 1, 0);
      const Tensor4 x = random_normal(rng, xs);
      record(r, max_abs_diff(pointwise_conv(x, k), naive_conv2d(x, k)), "case " + std::to_string(i));
    }
  });
}

inline SuiteResult deconv_oracle_suite(std::uint64_t seed, std::size_t cases = 20) {
  return timed_oracle("deconv2x_vs_naive", 1e-12, [&](SuiteResult& r) {
    Rng rng(seed);
    for (std::size_t i = 0; i < cases; ++i) {
      const Shape4 xs{detail::pick(rng, 1, 2), detail::pick(rng, 1, 6), detail::pick(rng, 1, 8), detail::pick(rng, 1, 8)};
      const std::size_t out = detail::pick(rng, 1, 6);
      DeconvKernel k{random_normal(rng, {xs.c, out, 2, 2}), {}};
      for (std::size_t o = 0; o < out; ++o) k.bias.push_back(rng.normal());
      const Tensor4 x = random_normal(rng, xs);
      record(r, max_abs_diff(deconv2x(x, k), naive_deconv2x(x, k)), "case " + std::to_string(i));
    }
  });
}

/// Random single-class scene with at most 6 boxes in total. Detections are
/// either jittered copies of ground truths or free boxes.
struct Scene {
  std::vector<Detection> dets;
  std::vector<GroundTruth> gts;
};

inline Scene random_scene(Rng& rng, std::size_t max_boxes = 6) {
  Scene s;
  const std::size_t n_gt = detail::pick(rng, 1, max_boxes - 1);
  const std::size_t n_det = detail::pick(rng, 1, max_boxes - n_gt);
  auto box = [&]() {
    const double x = rng.uniform(0, 10), y = rng.uniform(0, 10);
    return Box{x, y, x + rng.uniform(1, 4), y + rng.uniform(1, 4)};
  };
  for (std::size_t i = 0; i < n_gt; ++i) s.gts.push_back({box(), 0, 0});
  for (std::size_t i = 0; i < n_det; ++i) {
    Box b;
    if (rng.uniform() < 0.6) {
      const Box& g = s.gts[detail::pick(rng, 0, n_gt - 1)].box;
      const double j = rng.uniform(0, 1.2);
      b = {g.x_min + rng.uniform(-j, j), g.y_min + rng.uniform(-j, j), g.x_max + rng.uniform(-j, j),
           g.y_max + rng.uniform(-j, j)};
      if (b.x_max < b.x_min) std::swap(b.x_max, b.x_min);
      if (b.y_max < b.y_min) std::swap(b.y_max, b.y_min);
    } else {
      b = box();
    }
    s.dets.push_back({b, rng.uniform(), 0, 0});
  }
  return s;
}

inline SuiteResult ap_oracle_suite(std::uint64_t seed, std::size_t scenes = 200) {
  return timed_oracle("ap_vs_brute_force", 0.0, [&](SuiteResult& r) {
    Rng rng(seed);
    for (std::size_t i = 0; i < scenes; ++i) {
      const Scene s = random_scene(rng);
      for (double t : {0.3, 0.5, 0.75}) {
        const double a = average_precision(s.dets, s.gts, t);
        const double b = brute_force_ap(s.dets, s.gts, t);
        record(r, std::abs(a - b), "scene " + std::to_string(i), true);
      }
    }
  });
}

/// Chains of 3x3 steps over random dilations in {1,2,3} against r0 + 2 * sum(d).
inline SuiteResult receptive_field_suite(std::uint64_t seed, std::size_t chains = 100) {
  return timed_oracle("receptive_field_closed_form", 0.0, [&](SuiteResult& r) {
    Rng rng(seed);
    for (std::size_t i = 0; i < chains; ++i) {
      const std::int64_t r0 = rng.uniform_int(1, 50);
      ReceptiveFieldState st{r0, 0};
      std::int64_t dsum = 0;
      const auto len = rng.uniform_int(1, 12);
      for (std::int64_t k = 0; k < len; ++k) {
        const auto d = rng.uniform_int(1, 3);
        st = receptive_field_step(st, 3, d);
        dsum += d;
      }
      const bool ok = st.r == r0 + 2 * dsum && st.layer == len;
      record(r, ok ? 0.0 : static_cast<double>(std::llabs(st.r - (r0 + 2 * dsum)) + 1), "chain " + std::to_string(i),
             true);
    }
  });
}

/// mhsa with all-zero registers against mhsa without registers.
inline SuiteResult register_collapse_suite(std::uint64_t seed, std::size_t inputs = 50) {
  return timed_oracle("zero_register_collapse", 1e-12, [&](SuiteResult& r) {
    Rng rng(seed);
    for (std::size_t i = 0; i < inputs; ++i) {
      const std::size_t heads = detail::pick(rng, 1, 4), dk = detail::pick(rng, 1, 4), d = heads * dk;
      const Shape4 xs{detail::pick(rng, 1, 2), d, detail::pick(rng, 1, 5), detail::pick(rng, 1, 5)};
      const MhsaParams p{random_matrix(rng, d, d), random_matrix(rng, d, d), random_matrix(rng, d, d), heads};
      const Tensor4 x = random_normal(rng, xs);
      const auto zeros = RegisterTokens::zeros(heads, xs.plane(), dk);
      record(r, max_abs_diff(mhsa_forward(x, p, zeros), mhsa_forward(x, p)), "input " + std::to_string(i));
    }
  });
}

inline std::vector<SuiteResult> run(const Options& opt) {
  std::vector<SuiteResult> out;
  if (opt.grad) {
    for (const auto& s : grad_suites()) out.push_back(run_grad_suite(s, opt));
  }
  if (opt.oracle) {
    out.push_back(conv_oracle_suite(opt.base_seed + 1));
    out.push_back(pointwise_oracle_suite(opt.base_seed + 2));
    out.push_back(deconv_oracle_suite(opt.base_seed + 3));
    out.push_back(ap_oracle_suite(opt.base_seed + 4));
    out.push_back(receptive_field_suite(opt.base_seed + 5));
    out.push_back(register_collapse_suite(opt.base_seed + 6));
  }
  return out;
}

}  // namespace sarpf::verify
