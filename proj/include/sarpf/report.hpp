#pragma once

// Run configuration and structured reports for the command-line tools.
// Reports are ordered JSON so identical runs serialize byte-identically.

#include <bit>
#include <cstdint>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "sarpf/detmetrics.hpp"
#include "sarpf/diagnostics.hpp"
#include "sarpf/neck.hpp"
#include "sarpf/serialize.hpp"

namespace sarpf {

inline constexpr int kReportFormatVersion = 1;

struct RunConfig {
  NeckConfig neck;
  std::uint64_t seed = 0;
  std::size_t batch = 2;
  std::size_t height = 32;
  std::size_t width = 32;
  double artifact_k = 3.0;

  void validate() const {
    neck.validate();
    if (batch == 0) throw ContractError("batch must be positive");
    if (height == 0 || width == 0 || height % 4 != 0 || width % 4 != 0) {
      throw ContractError("height and width must be positive multiples of 4");
    }
    if (!(artifact_k > 0.0)) throw ContractError("artifact-k must be positive");
  }

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

inline nlohmann::ordered_json to_json(const RunConfig& rc) {
  auto j = to_json(rc.neck);
  j["seed"] = rc.seed;
  j["batch"] = rc.batch;
  j["height"] = rc.height;
  j["width"] = rc.width;
  j["artifact-k"] = rc.artifact_k;
  return j;
}

/// Overlays the keys present in j onto rc. Accepts either a flat config
/// object or a report carrying one under "config". Unknown keys are errors.
inline void apply_config_json(RunConfig& rc, const nlohmann::ordered_json& in) {
  const auto& j = (in.is_object() && in.contains("config") && in["config"].is_object()) ? in["config"] : in;
  if (!j.is_object()) throw ContractError("config: expected a JSON object");
  static const std::set<std::string> known{"pyramid-width", "heads", "register-count", "dilations", "gating",
                                           "use-mhsa", "use-registers", "atrous-mode", "init-sigma", "reduction",
                                           "c3", "c4", "c5", "max-base-hw", "seed", "batch", "height", "width",
                                           "artifact-k"};
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) throw ContractError("config: unknown key '" + key + "'");
  try {
    auto take = [&](const char* key, auto& dst) {
      if (j.contains(key)) dst = j[key].get<std::remove_reference_t<decltype(dst)>>();
    };
    NeckConfig& n = rc.neck;
    take("pyramid-width", n.pyramid_width);
    take("heads", n.head_count);
    take("register-count", n.register_count);
    take("dilations", n.dilations);
    if (j.contains("gating")) n.gating = parse_gating(j["gating"].get<std::string>());
    take("use-mhsa", n.use_mhsa);
    take("use-registers", n.use_registers);
    if (j.contains("atrous-mode")) n.atrous_mode = parse_atrous_mode(j["atrous-mode"].get<std::string>());
    take("init-sigma", n.init_sigma);
    take("reduction", n.reduction);
    take("c3", n.in_channels[0]);
    take("c4", n.in_channels[1]);
    take("c5", n.in_channels[2]);
    take("max-base-hw", n.max_base_hw);
    take("seed", rc.seed);
    take("batch", rc.batch);
    take("height", rc.height);
    take("width", rc.width);
    take("artifact-k", rc.artifact_k);
  } catch (const nlohmann::json::exception& e) {
    throw ContractError(std::string("config: ") + e.what());
  }
}

/// FNV-1a 64 over the little-endian binary64 bytes of every entry.
inline std::uint64_t fnv1a64(const Tensor4& t) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double v : t.data()) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) {
      h ^= bits & 0xFFu;
      h *= 0x100000001b3ULL;
      bits >>= 8;
    }
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

inline nlohmann::ordered_json shape_json(const Shape4& s) { return {s.n, s.c, s.h, s.w}; }

inline nlohmann::ordered_json to_json(const LevelStats& st) {
  nlohmann::ordered_json j;
  j["level"] = st.level;
  j["shape"] = shape_json(st.shape);
  j["min"] = st.min;
  j["max"] = st.max;
  j["channel_mean"] = st.channel_mean;
  j["channel_std"] = st.channel_std;
  j["energy_shape"] = shape_json(st.energy.shape());
  j["energy"] = std::vector<double>(st.energy.data().begin(), st.energy.data().end());
  return j;
}

inline nlohmann::ordered_json to_json(const ArtifactReport& r) {
  nlohmann::ordered_json j;
  j["tokens"] = r.token_norms.size();
  j["norm_mean"] = r.norm_mean;
  j["norm_std"] = r.norm_std;
  j["threshold"] = r.threshold;
  j["high_norm_fraction"] = r.high_norm_fraction;
  j["gini"] = r.gini;
  j["attention_mass"] = r.attention_mass;
  j["token_norms"] = r.token_norms;
  return j;
}

/// Pyramid and parameter streams derived from the run seed.
inline PyramidIn run_inputs(const RunConfig& rc) {
  return synthetic_pyramid(Rng(rc.seed).split("input"), rc.batch, rc.neck, rc.height, rc.width);
}

inline NeckParams run_params(const RunConfig& rc) { return init_params(rc.neck, Rng(rc.seed).split("params")); }

inline nlohmann::ordered_json forward_report(const RunConfig& rc, const NeckForward& fw) {
  nlohmann::ordered_json j;
  j["format_version"] = kReportFormatVersion;
  j["command"] = "forward";
  j["config"] = to_json(rc);
  auto levels = nlohmann::ordered_json::array();
  const std::pair<const char*, const Tensor4*> outs[] = {{"p3", &fw.out.p3}, {"p4", &fw.out.p4}, {"p5", &fw.out.p5}};
  for (const auto& [name, t] : outs) levels.push_back(to_json(level_stats(*t, name)));
  j["levels"] = std::move(levels);
  if (rc.neck.use_mhsa) {
    auto sites = nlohmann::ordered_json::array();
    for (const auto& site : fw.sites) {
      auto a = to_json(artifact_report(site.trace->attention, site.trace->output, rc.artifact_k));
      nlohmann::ordered_json s;
      s["site"] = site.name;
      s["heads"] = site.trace->heads;
      for (auto& [k, v] : a.items()) s[k] = v;
      sites.push_back(std::move(s));
    }
    j["attention_sites"] = std::move(sites);
  }
  nlohmann::ordered_json sums;
  for (const auto& [name, t] : outs) sums[name] = {{"sum", sum(*t)}, {"fnv1a64", hex64(fnv1a64(*t))}};
  j["checksums"] = std::move(sums);
  return j;
}

inline nlohmann::ordered_json eval_report(const ApResult& r) {
  nlohmann::ordered_json j;
  j["format_version"] = kReportFormatVersion;
  j["command"] = "eval";
  auto per = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < r.classes.size(); ++i) {
    const auto& c = r.per_class[i];
    per.push_back({{"class", r.classes[i]}, {"ap", c.ap}, {"detections", c.detections},
                   {"ground_truths", c.ground_truths}, {"degenerate", c.degenerate}});
  }
  j["per_class"] = std::move(per);
  j["map"] = r.map;
  j["ap"] = r.ap;
  j["ap50"] = r.ap50;
  j["ap75"] = r.ap75;
  j["ap_small"] = r.ap_small;
  j["ap_medium"] = r.ap_medium;
  j["ap_large"] = r.ap_large;
  j["thresholds"] = r.thresholds;
  return j;
}

}  // namespace sarpf
