// sarpf_cli: synthetic forwards, verification suites, metric evaluation and
// parameter files.
//
// Exit codes: 0 success, 1 verification failure, 2 input/config error,
// 3 shape error.

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sarpf/detio.hpp"
#include "sarpf/report.hpp"
#include "sarpf/serialize.hpp"
#include "sarpf/verify.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kVerifyFailed = 1;
constexpr int kInputError = 2;
constexpr int kShapeError = 3;

// Flags mirror RunConfig one-to-one; only flags given on the command line
// override values from --config.
struct RunFlags {
  std::string config_path;
  std::size_t pyramid_width = 0, heads = 0, register_count = 0, reduction = 0, max_base_hw = 0;
  std::size_t c3 = 0, c4 = 0, c5 = 0, batch = 0, height = 0, width = 0;
  std::vector<std::size_t> dilations;
  std::string gating, atrous_mode;
  bool use_mhsa = true, use_registers = true;
  double init_sigma = 0, artifact_k = 0;
  std::uint64_t seed = 0;
  std::vector<std::pair<CLI::Option*, std::function<void(sarpf::RunConfig&)>>> bound;

  template <typename T, typename Apply>
  void bind(CLI::App* app, const std::string& name, T& var, const std::string& help, Apply apply) {
    CLI::Option* opt = app->add_option(name, var, help);
    bound.emplace_back(opt, [&var, apply](sarpf::RunConfig& rc) { apply(rc, var); });
  }

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "JSON file with the same keys as the flags (or a report)");
    bind(app, "--pyramid-width", pyramid_width, "pyramid channel width C",
         [](auto& rc, auto v) { rc.neck.pyramid_width = v; });
    bind(app, "--heads", heads, "attention heads", [](auto& rc, auto v) { rc.neck.head_count = v; });
    bind(app, "--register-count", register_count, "register tokens (must equal heads)",
         [](auto& rc, auto v) { rc.neck.register_count = v; });
    bind(app, "--dilations", dilations, "atrous dilation rates", [](auto& rc, const auto& v) { rc.neck.dilations = v; });
    bind(app, "--gating", gating, "raw | logistic",
         [](auto& rc, const auto& v) { rc.neck.gating = sarpf::parse_gating(v); });
    bind(app, "--use-mhsa", use_mhsa, "true | false", [](auto& rc, auto v) { rc.neck.use_mhsa = v; });
    bind(app, "--use-registers", use_registers, "true | false", [](auto& rc, auto v) { rc.neck.use_registers = v; });
    bind(app, "--atrous-mode", atrous_mode, "standard | atrous | attention_atrous",
         [](auto& rc, const auto& v) { rc.neck.atrous_mode = sarpf::parse_atrous_mode(v); });
    bind(app, "--init-sigma", init_sigma, "weight init std", [](auto& rc, auto v) { rc.neck.init_sigma = v; });
    bind(app, "--reduction", reduction, "channel-gate reduction ratio", [](auto& rc, auto v) { rc.neck.reduction = v; });
    bind(app, "--c3", c3, "c3 input channels", [](auto& rc, auto v) { rc.neck.in_channels[0] = v; });
    bind(app, "--c4", c4, "c4 input channels", [](auto& rc, auto v) { rc.neck.in_channels[1] = v; });
    bind(app, "--c5", c5, "c5 input channels", [](auto& rc, auto v) { rc.neck.in_channels[2] = v; });
    bind(app, "--max-base-hw", max_base_hw, "largest c3 H*W (register capacity)",
         [](auto& rc, auto v) { rc.neck.max_base_hw = v; });
    bind(app, "--seed", seed, "RNG seed", [](auto& rc, auto v) { rc.seed = v; });
    bind(app, "--batch", batch, "batch size B", [](auto& rc, auto v) { rc.batch = v; });
    bind(app, "--height", height, "c3 height (multiple of 4)", [](auto& rc, auto v) { rc.height = v; });
    bind(app, "--width", width, "c3 width (multiple of 4)", [](auto& rc, auto v) { rc.width = v; });
    bind(app, "--artifact-k", artifact_k, "high-norm threshold in stds", [](auto& rc, auto v) { rc.artifact_k = v; });
  }

  sarpf::RunConfig resolve() const {
    sarpf::RunConfig rc;
    if (!config_path.empty()) {
      try {
        sarpf::apply_config_json(rc, nlohmann::ordered_json::parse(sarpf::read_file(config_path)));
      } catch (const nlohmann::json::exception& e) {
        throw sarpf::ContractError("config '" + config_path + "': " + e.what());
      }
    }
    for (const auto& [opt, apply] : bound)
      if (opt->count() > 0) apply(rc);
    rc.validate();
    return rc;
  }
};

void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    sarpf::write_file(path, text);
  }
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

int cmd_forward(const RunFlags& flags, const std::string& params_path, const std::string& report_path) {
  const sarpf::RunConfig rc = flags.resolve();
  const sarpf::NeckParams params = params_path.empty()
                                       ? sarpf::run_params(rc)
                                       : sarpf::load_params(sarpf::read_file(params_path), rc.neck);
  const auto fw = sarpf::neck_forward_detailed(sarpf::run_inputs(rc), params, rc.neck);
  emit(report_path, sarpf::forward_report(rc, fw).dump(2) + "\n");
  return kOk;
}

int cmd_verify(const std::string& scope, std::size_t seeds, const std::string& corrupt) {
  sarpf::verify::Options opt;
  opt.grad = scope == "grad" || scope == "all";
  opt.oracle = scope == "oracle" || scope == "all";
  opt.grad_seeds = seeds;
  opt.corrupt_op = corrupt;
  const auto results = sarpf::verify::run(opt);
  std::vector<std::string> failures;
  std::printf("%-28s %-6s %6s %12s %10s %8s %s\n", "suite", "kind", "cases", "max_error", "tolerance", "seconds",
              "status");
  for (const auto& r : results) {
    std::printf("%-28s %-6s %6zu %12.3e %10.1e %8.2f %s\n", r.name.c_str(),
                r.kind == sarpf::verify::SuiteKind::grad ? "grad" : "oracle", r.cases, r.max_error, r.tolerance,
                r.seconds, r.passed() ? "ok" : "FAILED");
    failures.insert(failures.end(), r.failures.begin(), r.failures.end());
  }
  if (!failures.empty()) {
    std::printf("\n%zu failing case(s):\n", failures.size());
    for (const auto& f : failures) std::printf("  %s\n", f.c_str());
    return kVerifyFailed;
  }
  return kOk;
}

template <typename Reader>
auto read_records(const std::string& path, Reader reader) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  try {
    return reader(in);
  } catch (const sarpf::ParseError& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

int cmd_eval(const std::string& det_path, const std::string& gt_path, const std::string& thresholds,
             double small_max, double medium_max, const std::string& report_path) {
  const auto dets = read_records(det_path, [](std::istream& in) { return sarpf::read_detections(in); });
  const auto gts = read_records(gt_path, [](std::istream& in) { return sarpf::read_ground_truth(in); });
  std::vector<double> ts;
  if (thresholds.empty()) {
    ts = sarpf::coco_thresholds();
  } else {
    for (const auto& s : split_list(thresholds)) {
      try {
        std::size_t used = 0;
        ts.push_back(std::stod(s, &used));
        if (used != s.size()) throw std::invalid_argument(s);
      } catch (const std::exception&) {
        throw sarpf::ContractError("bad threshold '" + s + "'");
      }
    }
  }
  const auto r = sarpf::evaluate(dets, gts, ts, {small_max, medium_max});
  emit(report_path, sarpf::eval_report(r).dump(2) + "\n");
  return kOk;
}

int cmd_params_save(const RunFlags& flags, const std::string& out_path) {
  const sarpf::RunConfig rc = flags.resolve();
  sarpf::write_file(out_path, sarpf::save_params(sarpf::run_params(rc), rc.neck));
  return kOk;
}

// Checks a parameter file against its own manifest config, or against the
// flag config when any neck flag or --config is given.
int cmd_params_load(const RunFlags& flags, const std::string& in_path) {
  const std::string bytes = sarpf::read_file(in_path);
  bool overridden = !flags.config_path.empty();
  for (const auto& [opt, _] : flags.bound) overridden = overridden || opt->count() > 0;
  sarpf::NeckConfig cfg;
  if (overridden) {
    cfg = flags.resolve().neck;
  } else {
    const auto manifest = sarpf::inspect_params(bytes);
    if (!manifest.contains("config")) throw sarpf::LoadError("", "manifest has no config");
    cfg = sarpf::neck_config_from_json(manifest["config"]);
  }
  const auto params = sarpf::load_params(bytes, cfg);
  std::printf("loaded %zu tensors, %zu scalars\n", params.tensors.size(), params.scalar_count());
  return kOk;
}

int cmd_params_inspect(const std::string& in_path) {
  std::cout << sarpf::inspect_params(sarpf::read_file(in_path)).dump(2) << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Feature-fusion neck toolkit"};
  app.require_subcommand(1);

  RunFlags fwd_flags;
  std::string fwd_params, fwd_report;
  auto* forward = app.add_subcommand("forward", "Run the neck on a seeded synthetic pyramid and write a report");
  fwd_flags.attach(forward);
  forward->add_option("--params", fwd_params, "parameter file (default: seeded init)");
  forward->add_option("--report,-o", fwd_report, "report path (default: stdout)");

  std::string scope = "all", corrupt;
  std::size_t seeds = 20;
  auto* verify = app.add_subcommand("verify", "Run gradient-check and oracle suites");
  verify->add_option("--scope", scope, "grad | oracle | all")->check(CLI::IsMember({"grad", "oracle", "all"}));
  verify->add_option("--seeds", seeds, "seeds per gradient suite")->check(CLI::PositiveNumber);
  verify->add_option("--corrupt-backward", corrupt, "test fixture: corrupt the named op's gradient")
      ->group("");

  std::string det_path, gt_path, thresholds, eval_report_path;
  double small_max = 32.0 * 32.0, medium_max = 96.0 * 96.0;
  auto* eval = app.add_subcommand("eval", "Evaluate detections against ground truth");
  eval->add_option("--detections", det_path, "detections file")->required();
  eval->add_option("--ground-truth", gt_path, "ground-truth file")->required();
  eval->add_option("--thresholds", thresholds, "comma-separated IoU thresholds (default 0.50:0.05:0.95)");
  eval->add_option("--small-max", small_max, "areas below this are small");
  eval->add_option("--medium-max", medium_max, "areas below this (and not small) are medium");
  eval->add_option("--report,-o", eval_report_path, "report path (default: stdout)");

  auto* params = app.add_subcommand("params", "Parameter files");
  params->require_subcommand(1);
  RunFlags save_flags, load_flags;
  std::string save_out, load_in, inspect_in;
  auto* save = params->add_subcommand("save", "Write seeded initial parameters");
  save_flags.attach(save);
  save->add_option("--out,-o", save_out, "output file")->required();
  auto* load = params->add_subcommand("load", "Load and validate a parameter file");
  load_flags.attach(load);
  load->add_option("file", load_in, "parameter file")->required();
  auto* inspect = params->add_subcommand("inspect", "Print a parameter file's manifest");
  inspect->add_option("file", inspect_in, "parameter file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kInputError;
  }

  try {
    if (*forward) return cmd_forward(fwd_flags, fwd_params, fwd_report);
    if (*verify) return cmd_verify(scope, seeds, corrupt);
    if (*eval) return cmd_eval(det_path, gt_path, thresholds, small_max, medium_max, eval_report_path);
    if (*save) return cmd_params_save(save_flags, save_out);
    if (*load) return cmd_params_load(load_flags, load_in);
    if (*inspect) return cmd_params_inspect(inspect_in);
  } catch (const sarpf::ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return kShapeError;
  } catch (const sarpf::LoadError& e) {
    std::cerr << "load error: " << e.what() << "\n";
    return kInputError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInputError;
  }
  return kInputError;
}
