// Acceptance runner. Prints one PASS/FAIL line per criterion and exits
// nonzero if any line fails.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "sarpf/detio.hpp"
#include "sarpf/detmetrics.hpp"
#include "sarpf/report.hpp"
#include "sarpf/serialize.hpp"
#include "sarpf/verify.hpp"

using namespace sarpf;

namespace {

int g_failures = 0;

void line(const std::string& id, bool ok, const std::string& detail) {
  std::cout << (ok ? "PASS " : "FAIL ") << id << "  " << detail << std::endl;
  if (!ok) ++g_failures;
}

template <class Fn>
double seconds(Fn&& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  fn();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

std::string data(const std::string& name) { return std::string(SARPF_DATA_DIR) + "/" + name; }

void criterion_1() {
  const auto r = verify::conv_oracle_suite(101, 60);
  line("1 conv2d oracle", r.passed() && r.cases >= 50 && r.max_error < 1e-12 && r.seconds < 10.0,
       std::to_string(r.cases) + " cases, max dev " + fmt(r.max_error) + ", " + fmt(r.seconds) + " s");
}

void criterion_2() {
  verify::Options opt;
  opt.grad_seeds = 20;
  bool ok = true;
  double worst_prim = 0, worst_neck = 0;
  std::string first_failure;
  const double t = seconds([&] {
    for (const auto& s : verify::grad_suites()) {
      const auto r = verify::run_grad_suite(s, opt);
      const double tol = s.composed ? 1e-4 : 1e-5;
      const bool suite_ok = r.passed() && r.cases >= 20 && r.tolerance <= tol;
      if (!suite_ok && first_failure.empty()) first_failure = r.failures.empty() ? s.name : r.failures.front();
      ok = ok && suite_ok;
      (s.composed ? worst_neck : worst_prim) = std::max(s.composed ? worst_neck : worst_prim, r.max_error);
    }
  });
  line("2 gradient suites", ok && t < 60.0,
       "worst primitive " + fmt(worst_prim) + ", neck " + fmt(worst_neck) + ", " + fmt(t) + " s" +
           (first_failure.empty() ? "" : ", " + first_failure));
}

void criterion_3() {
  const auto r = verify::register_collapse_suite(303, 50);
  line("3 zero-register collapse", r.passed() && r.cases == 50,
       std::to_string(r.cases) + " inputs, max dev " + fmt(r.max_error));
}

void criterion_4() {
  Rng rng(404);
  int bad = 0;
  for (int t = 0; t < 25; ++t) {
    NeckConfig cfg;
    cfg.pyramid_width = 2 * static_cast<std::size_t>(rng.uniform_int(1, 6));
    cfg.head_count = cfg.register_count = cfg.pyramid_width % 4 == 0 ? 2 : 1;
    cfg.reduction = 2;
    cfg.in_channels = {static_cast<std::size_t>(rng.uniform_int(1, 6)), static_cast<std::size_t>(rng.uniform_int(1, 6)),
                       static_cast<std::size_t>(rng.uniform_int(1, 6))};
    cfg.max_base_hw = 1024;
    const std::size_t b = static_cast<std::size_t>(rng.uniform_int(1, 3));
    const std::size_t h = 4 * static_cast<std::size_t>(rng.uniform_int(1, 4));
    const std::size_t w = 4 * static_cast<std::size_t>(rng.uniform_int(1, 4));
    const auto out = neck_forward(synthetic_pyramid(rng, b, cfg, h, w), init_params(cfg, rng), cfg);
    const std::size_t c = cfg.pyramid_width;
    if (out.p3.shape() != Shape4{b, c, h, w} || out.p4.shape() != Shape4{b, c, h / 2, w / 2} ||
        out.p5.shape() != Shape4{b, c, h / 4, w / 4})
      ++bad;
  }
  int bad_deconv = 0;
  for (int t = 0; t < 25; ++t) {
    const Shape4 xs{static_cast<std::size_t>(rng.uniform_int(1, 2)), static_cast<std::size_t>(rng.uniform_int(1, 4)),
                    static_cast<std::size_t>(rng.uniform_int(1, 9)), static_cast<std::size_t>(rng.uniform_int(1, 9))};
    const std::size_t o = static_cast<std::size_t>(rng.uniform_int(1, 4));
    const auto y = deconv2x(random_normal(rng, xs), DeconvKernel::zeros(xs.c, o));
    if (y.shape() != Shape4{xs.n, o, 2 * xs.h, 2 * xs.w}) ++bad_deconv;
  }
  line("4 shape contract", bad == 0 && bad_deconv == 0,
       "25 neck configs (" + std::to_string(bad) + " wrong), 25 deconv2x (" + std::to_string(bad_deconv) + " wrong)");
}

void criterion_5() {
  const auto r = verify::receptive_field_suite(505, 100);
  line("5 receptive field closed form", r.passed() && r.cases == 100,
       std::to_string(r.cases) + " chains, " + std::to_string(r.failures.size()) + " mismatches");
}

void criterion_6() {
  const auto a = verify::ap_oracle_suite(606, 200);
  line("6a ap equals brute force", a.passed() && a.cases >= 200,
       std::to_string(a.cases) + " scene/threshold pairs, max dev " + fmt(a.max_error));

  // 2 ground truths; ranked detections hit, miss, hit.
  const Box g0{0, 0, 1, 1}, g1{10, 0, 11, 1}, miss{20, 0, 21, 1};
  const std::vector<GroundTruth> gts{{g0, 0, 0}, {g1, 0, 0}};
  const std::vector<Detection> dets{{g0, 0.9, 0, 0}, {miss, 0.8, 0, 0}, {g1, 0.7, 0, 0}};
  const double ap = average_precision(dets, gts, 0.5);
  line("6b three-detection example", std::abs(ap - 0.8182) <= 1e-4, "ap " + fmt(ap) + ", expected 0.8182 +- 1e-4");

  std::ifstream df(data("fourclass_detections.txt")), gf(data("fourclass_ground_truth.txt"));
  const auto r = evaluate(read_detections(df), read_ground_truth(gf));
  line("6c four-class fixture", std::abs(r.map - 0.6966) <= 5e-4, "mAP " + fmt(r.map) + ", expected 0.6966 +- 5e-4");
}

void criterion_7() {
  Rng rng(707);
  int bad = 0;
  for (int t = 0; t < 10; ++t) {
    NeckConfig cfg;
    cfg.pyramid_width = 8;
    cfg.in_channels = {3, 5, 6};
    cfg.init_sigma = 0.3;
    cfg.gating = rng.uniform() < 0.5 ? GatingMode::logistic : GatingMode::raw;
    const auto params = init_params(cfg, rng.split(static_cast<std::uint64_t>(t)));
    const auto in = synthetic_pyramid(rng, 1, cfg, 8, 8);
    const auto base = neck_forward(in, params, cfg);
    auto c3 = in;
    for (double& v : c3.c3.data()) v += rng.normal();
    const auto a = neck_forward(c3, params, cfg);
    auto c5 = in;
    for (double& v : c5.c5.data()) v += rng.normal();
    const auto b = neck_forward(c5, params, cfg);
    if (!(a.p4 == base.p4) || !(a.p5 == base.p5) || !(max_abs_diff(b.p3, base.p3) > 0.0)) ++bad;
  }
  line("7 top-down directionality", bad == 0, "10 parameterizations, " + std::to_string(bad) + " violations");
}

void criterion_8() {
  Rng rng(808);
  double worst = 0;
  for (int t = 0; t < 20; ++t) {
    const std::size_t heads = 2, dk = 2, d = heads * dk;
    const MhsaParams p{random_matrix(rng, d, d, 0.5), random_matrix(rng, d, d, 0.5), random_matrix(rng, d, d, 0.5), heads};
    const auto x = random_normal(rng, {1, d, 3, 3});
    auto reg = build_registers(rng, heads, 9, dk, 0.3);
    const std::size_t j = static_cast<std::size_t>(rng.uniform_int(0, 8));
    const auto base = mhsa_forward_traced(x, p, &reg);
    for (auto& m : reg.qk)
      for (std::size_t i = 0; i < 9; ++i) m(i, j) += -1e6;
    const auto steered = mhsa_forward_traced(x, p, &reg);
    for (std::size_t h = 0; h < heads; ++h) {
      const double before = attention_mass(base.attention[h])[j];
      const double after = attention_mass(steered.attention[h])[j];
      worst = std::max(worst, before > 0 ? after / before : 1.0);
    }
  }
  line("8 register steering", worst < 1e-6, "20 inputs, worst after/before " + fmt(worst));
}

void criterion_9() {
  RunConfig rc;
  rc.neck.pyramid_width = 8;
  rc.batch = 1;
  rc.height = rc.width = 16;
  rc.seed = 909;
  auto render = [&] { return forward_report(rc, neck_forward_detailed(run_inputs(rc), run_params(rc), rc.neck)).dump(2); };
  const bool reports_equal = render() == render();

  const NeckParams p = run_params(rc);
  const std::string bytes = save_params(p, rc.neck);
  const NeckParams back = load_params(bytes, rc.neck);
  bool bit_exact = back.tensors.size() == p.tensors.size();
  for (std::size_t i = 0; bit_exact && i < p.tensors.size(); ++i) {
    const std::span<const double> a = p.tensors[i].value.data(), b = back.tensors[i].value.data();
    bit_exact = p.tensors[i].name == back.tensors[i].name && a.size() == b.size() &&
                std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
  }

  // Corrupt the declared shape of one manifest entry.
  const auto nl1 = bytes.find('\n'), nl2 = bytes.find('\n', nl1 + 1);
  auto manifest = nlohmann::ordered_json::parse(bytes.substr(nl1 + 1, nl2 - nl1 - 1));
  const std::string victim = manifest["tensors"][3]["name"];
  manifest["tensors"][3]["shape"] = {9, 9, 9, 9};
  const std::string corrupted = bytes.substr(0, nl1 + 1) + manifest.dump() + bytes.substr(nl2);
  std::string named;
  try {
    load_params(corrupted, rc.neck);
  } catch (const LoadError& e) {
    named = e.tensor();
  }
  line("9 determinism and serialization", reports_equal && bit_exact && named == victim,
       std::string("reports ") + (reports_equal ? "identical" : "differ") + ", round trip " +
           (bit_exact ? "bit-exact" : "lossy") + ", corrupted manifest named '" + named + "'");
}

void criterion_10() {
  RunConfig rc;
  rc.neck.pyramid_width = 64;
  rc.neck.head_count = rc.neck.register_count = 4;
  rc.batch = 2;
  rc.height = rc.width = 32;
  rc.seed = 1010;
  const auto in = run_inputs(rc);
  const auto params = run_params(rc);
  const double t_forward = seconds([&] { (void)neck_forward(in, params, rc.neck); });

  int code = -1;
  const double t_verify = seconds([&] {
    const int status = std::system((std::string(SARPF_CLI_PATH) + " verify --scope all > /dev/null 2>&1").c_str());
    code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  });
  line("10 desk-scale performance", t_forward < 2.0 && code == 0 && t_verify < 120.0,
       "forward B=2 C=64 32x32 " + fmt(t_forward) + " s, verify all " + fmt(t_verify) + " s (exit " +
           std::to_string(code) + ")");
}

}  // namespace

int main() {
  const std::pair<const char*, void (*)()> criteria[] = {
      {"1", criterion_1}, {"2", criterion_2}, {"3", criterion_3}, {"4", criterion_4},  {"5", criterion_5},
      {"6", criterion_6}, {"7", criterion_7}, {"8", criterion_8}, {"9", criterion_9}, {"10", criterion_10},
  };
  for (const auto& [id, fn] : criteria) {
    try {
      fn();
    } catch (const std::exception& e) {
      line(id, false, std::string("threw: ") + e.what());
    }
  }
  std::cout << (g_failures == 0 ? "all criteria passed" : std::to_string(g_failures) + " failing") << std::endl;
  return g_failures == 0 ? 0 : 1;
}
