#pragma once

// Parameter file layout:
//
//   line 1   "SARPF-PARAMS"
//   line 2   JSON manifest on one line:
//              {"format":"sarpf-params","version":1,"config":{...},
//               "tensors":[{"name":..,"shape":[n,c,h,w],"offset":..,"bytes":..},...],
//               "payload_bytes":..}
//   rest     payload: every tensor's values as little-endian IEEE-754
//            binary64, concatenated in manifest order. Offsets are relative
//            to the first payload byte.

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "sarpf/neck.hpp"

namespace sarpf {

inline constexpr std::string_view kParamsMagic = "SARPF-PARAMS";
inline constexpr int kParamsVersion = 1;

inline nlohmann::ordered_json to_json(const NeckConfig& cfg) {
  nlohmann::ordered_json j;
  j["pyramid-width"] = cfg.pyramid_width;
  j["heads"] = cfg.head_count;
  j["register-count"] = cfg.register_count;
  j["dilations"] = cfg.dilations;
  j["gating"] = std::string(to_string(cfg.gating));
  j["use-mhsa"] = cfg.use_mhsa;
  j["use-registers"] = cfg.use_registers;
  j["atrous-mode"] = std::string(to_string(cfg.atrous_mode));
  j["init-sigma"] = cfg.init_sigma;
  j["reduction"] = cfg.reduction;
  j["c3"] = cfg.in_channels[0];
  j["c4"] = cfg.in_channels[1];
  j["c5"] = cfg.in_channels[2];
  j["max-base-hw"] = cfg.max_base_hw;
  return j;
}

inline GatingMode parse_gating(std::string_view s) {
  if (s == "raw") return GatingMode::raw;
  if (s == "logistic") return GatingMode::logistic;
  throw ContractError("unknown gating mode '" + std::string(s) + "'");
}

inline AtrousMode parse_atrous_mode(std::string_view s) {
  if (s == "standard") return AtrousMode::standard;
  if (s == "atrous") return AtrousMode::atrous;
  if (s == "attention_atrous") return AtrousMode::attention_atrous;
  throw ContractError("unknown atrous mode '" + std::string(s) + "'");
}

inline NeckConfig neck_config_from_json(const nlohmann::ordered_json& j) {
  NeckConfig cfg;
  try {
    cfg.pyramid_width = j.at("pyramid-width").get<std::size_t>();
    cfg.head_count = j.at("heads").get<std::size_t>();
    cfg.register_count = j.at("register-count").get<std::size_t>();
    cfg.dilations = j.at("dilations").get<std::vector<std::size_t>>();
    cfg.gating = parse_gating(j.at("gating").get<std::string>());
    cfg.use_mhsa = j.at("use-mhsa").get<bool>();
    cfg.use_registers = j.at("use-registers").get<bool>();
    cfg.atrous_mode = parse_atrous_mode(j.at("atrous-mode").get<std::string>());
    cfg.init_sigma = j.at("init-sigma").get<double>();
    cfg.reduction = j.at("reduction").get<std::size_t>();
    cfg.in_channels = {j.at("c3").get<std::size_t>(), j.at("c4").get<std::size_t>(), j.at("c5").get<std::size_t>()};
    cfg.max_base_hw = j.at("max-base-hw").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ContractError(std::string("config: ") + e.what());
  }
  return cfg;
}

namespace detail {

inline void append_f64_le(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>(bits & 0xFFu));
    bits >>= 8;
  }
}

inline double read_f64_le(std::string_view in, std::size_t pos) {
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) {
    bits = (bits << 8) | static_cast<unsigned char>(in[pos + static_cast<std::size_t>(i)]);
  }
  return std::bit_cast<double>(bits);
}

struct ParsedStream {
  nlohmann::ordered_json manifest;
  std::string_view payload;
};

inline ParsedStream split_stream(std::string_view bytes) {
  const auto nl1 = bytes.find('\n');
  if (nl1 == std::string_view::npos || bytes.substr(0, nl1) != kParamsMagic) {
    throw LoadError("", "not a parameter file (missing " + std::string(kParamsMagic) + " header)");
  }
  const auto nl2 = bytes.find('\n', nl1 + 1);
  if (nl2 == std::string_view::npos) throw LoadError("", "truncated manifest");
  ParsedStream ps;
  try {
    ps.manifest = nlohmann::ordered_json::parse(bytes.substr(nl1 + 1, nl2 - nl1 - 1));
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("", std::string("malformed manifest: ") + e.what());
  }
  ps.payload = bytes.substr(nl2 + 1);
  return ps;
}

}  // namespace detail

inline std::string save_params(const NeckParams& params, const NeckConfig& cfg) {
  check_params(params, cfg);
  nlohmann::ordered_json manifest;
  manifest["format"] = "sarpf-params";
  manifest["version"] = kParamsVersion;
  manifest["config"] = to_json(cfg);
  auto tensors = nlohmann::ordered_json::array();
  std::size_t offset = 0;
  for (const auto& t : params.tensors) {
    const Shape4& s = t.value.shape();
    const std::size_t bytes = t.value.size() * 8;
    tensors.push_back({{"name", t.name}, {"shape", {s.n, s.c, s.h, s.w}}, {"offset", offset}, {"bytes", bytes}});
    offset += bytes;
  }
  manifest["tensors"] = std::move(tensors);
  manifest["payload_bytes"] = offset;

  std::string out(kParamsMagic);
  out += '\n';
  out += manifest.dump();
  out += '\n';
  out.reserve(out.size() + offset);
  for (const auto& t : params.tensors)
    for (double v : t.value.data()) detail::append_f64_le(out, v);
  return out;
}

/// Manifest of a parameter stream (no config check).
inline nlohmann::ordered_json inspect_params(std::string_view bytes) {
  auto ps = detail::split_stream(bytes);
  auto m = ps.manifest;
  m["payload_bytes_present"] = ps.payload.size();
  return m;
}

inline NeckParams load_params(std::string_view bytes, const NeckConfig& cfg) {
  auto ps = detail::split_stream(bytes);
  const auto& m = ps.manifest;
  if (!m.contains("version") || !m["version"].is_number_integer() || m["version"].get<int>() != kParamsVersion) {
    throw LoadError("", "version mismatch: expected " + std::to_string(kParamsVersion) + ", found " +
                            (m.contains("version") ? m["version"].dump() : std::string("none")));
  }
  if (!m.contains("tensors") || !m["tensors"].is_array()) throw LoadError("", "manifest has no tensor index");

  const auto layout = param_layout(cfg);
  const auto& entries = m["tensors"];
  NeckParams params;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    const std::string name = e.value("name", std::string("#") + std::to_string(i));
    if (i >= layout.size()) throw LoadError(name, "unexpected tensor for this config");
    if (name != layout[i].first) throw LoadError(name, "expected tensor '" + layout[i].first + "' at this position");
    Shape4 shape;
    std::size_t offset = 0;
    try {
      const auto dims = e.at("shape").get<std::vector<std::size_t>>();
      if (dims.size() != 4) throw LoadError(name, "shape must have 4 dims");
      shape = {dims[0], dims[1], dims[2], dims[3]};
      offset = e.at("offset").get<std::size_t>();
    } catch (const nlohmann::json::exception& ex) {
      throw LoadError(name, std::string("malformed index entry: ") + ex.what());
    }
    if (!(shape == layout[i].second)) {
      throw LoadError(name, "shape " + shape.str() + " does not match config shape " + layout[i].second.str());
    }
    const std::size_t bytes = shape.size() * 8;
    if (offset + bytes > ps.payload.size()) {
      throw LoadError(name, "truncated payload (needs bytes [" + std::to_string(offset) + ", " +
                                std::to_string(offset + bytes) + "), have " + std::to_string(ps.payload.size()) + ")");
    }
    Tensor4 t(shape);
    for (std::size_t k = 0; k < shape.size(); ++k) t[k] = detail::read_f64_le(ps.payload, offset + 8 * k);
    params.tensors.push_back({name, std::move(t)});
  }
  if (params.tensors.size() != layout.size()) {
    throw LoadError(layout[params.tensors.size()].first, "missing from manifest");
  }
  return params;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace sarpf
