#include <gtest/gtest.h>

#include <cstring>
#include <limits>

#include "sarpf/report.hpp"
#include "sarpf/serialize.hpp"

using namespace sarpf;

namespace {

NeckConfig small_config() {
  NeckConfig cfg;
  cfg.pyramid_width = 4;
  cfg.in_channels = {2, 3, 5};
  cfg.max_base_hw = 64;
  return cfg;
}

struct Split {
  nlohmann::ordered_json manifest;
  std::string payload;
};

Split split(const std::string& bytes) {
  const auto a = bytes.find('\n');
  const auto b = bytes.find('\n', a + 1);
  return {nlohmann::ordered_json::parse(bytes.substr(a + 1, b - a - 1)), bytes.substr(b + 1)};
}

std::string join(const Split& s) { return "SARPF-PARAMS\n" + s.manifest.dump() + "\n" + s.payload; }

std::string expect_load_error(const std::string& bytes, const NeckConfig& cfg) {
  try {
    load_params(bytes, cfg);
  } catch (const LoadError& e) {
    return e.tensor() + "|" + e.what();
  }
  ADD_FAILURE() << "stream was accepted";
  return {};
}

}  // namespace

TEST(Params, RoundTripBitExact) {
  const NeckConfig cfg = small_config();
  NeckParams p = init_params(cfg, Rng(1));
  p.at("l4.proj.bias")[0] = -0.0;
  p.at("l4.proj.bias")[1] = 1e-310;  // subnormal
  p.at("l4.proj.bias")[2] = std::numeric_limits<double>::infinity();
  const auto loaded = load_params(save_params(p, cfg), cfg);
  ASSERT_EQ(loaded.tensors.size(), p.tensors.size());
  for (std::size_t i = 0; i < p.tensors.size(); ++i) {
    EXPECT_EQ(loaded.tensors[i].name, p.tensors[i].name);
    const std::span<const double> a = p.tensors[i].value.data(), b = loaded.tensors[i].value.data();
    ASSERT_EQ(a.size(), b.size());
    EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)), 0) << p.tensors[i].name;
  }
}

TEST(Params, SaveIsDeterministic) {
  const NeckConfig cfg = small_config();
  EXPECT_EQ(save_params(init_params(cfg, Rng(2)), cfg), save_params(init_params(cfg, Rng(2)), cfg));
}

TEST(Params, PayloadLengthIsEightBytesPerScalar) {
  const NeckConfig cfg = small_config();
  const NeckParams p = init_params(cfg, Rng(3));
  const auto s = split(save_params(p, cfg));
  std::size_t expected = 0;
  for (const auto& t : p.tensors) expected += t.value.size() * 8;
  EXPECT_EQ(s.payload.size(), expected);
  EXPECT_EQ(s.manifest["payload_bytes"].get<std::size_t>(), expected);
  std::size_t offset = 0;
  for (const auto& e : s.manifest["tensors"]) {
    EXPECT_EQ(e["offset"].get<std::size_t>(), offset);
    offset += e["bytes"].get<std::size_t>();
  }
  EXPECT_EQ(s.manifest["config"], to_json(cfg));
}

TEST(Params, CorruptShapeNamesTensor) {
  const NeckConfig cfg = small_config();
  auto s = split(save_params(init_params(cfg, Rng(4)), cfg));
  s.manifest["tensors"][5]["shape"] = {4, 4, 3, 2};
  const std::string name = s.manifest["tensors"][5]["name"];
  const auto err = expect_load_error(join(s), cfg);
  EXPECT_EQ(err.substr(0, name.size() + 1), name + "|");
  EXPECT_NE(err.find("shape"), std::string::npos);
}

TEST(Params, VersionMismatch) {
  const NeckConfig cfg = small_config();
  auto s = split(save_params(init_params(cfg, Rng(5)), cfg));
  s.manifest["version"] = 2;
  EXPECT_NE(expect_load_error(join(s), cfg).find("version"), std::string::npos);
}

TEST(Params, TruncatedPayloadNamesTensor) {
  const NeckConfig cfg = small_config();
  const std::string bytes = save_params(init_params(cfg, Rng(6)), cfg);
  const auto err = expect_load_error(bytes.substr(0, bytes.size() - 3), cfg);
  EXPECT_EQ(err.substr(0, err.find('|')), "up3.deconv.bias");
}

TEST(Params, ConfigMismatchNamesTensor) {
  const NeckConfig cfg = small_config();
  NeckConfig other = cfg;
  other.in_channels[0] = 7;
  const auto err = expect_load_error(save_params(init_params(cfg, Rng(7)), cfg), other);
  EXPECT_EQ(err.substr(0, err.find('|')), "l3.proj.weight");
}

TEST(Params, RenamedOrMissingTensor) {
  const NeckConfig cfg = small_config();
  auto s = split(save_params(init_params(cfg, Rng(8)), cfg));
  s.manifest["tensors"][2]["name"] = "l3.mystery";
  EXPECT_EQ(expect_load_error(join(s), cfg).substr(0, 11), "l3.mystery|");
  s = split(save_params(init_params(cfg, Rng(8)), cfg));
  s.manifest["tensors"].erase(s.manifest["tensors"].size() - 1);
  EXPECT_EQ(expect_load_error(join(s), cfg).substr(0, 16), "up3.deconv.bias|");
}

TEST(Params, NotAParameterFile) {
  EXPECT_THROW(load_params("hello\n{}\n", small_config()), LoadError);
  EXPECT_THROW(load_params("SARPF-PARAMS\n{not json\n", small_config()), LoadError);
  EXPECT_THROW(inspect_params("SARPF-PARAMS"), LoadError);
}

TEST(Params, InspectReportsPresentBytes) {
  const NeckConfig cfg = small_config();
  const std::string bytes = save_params(init_params(cfg, Rng(9)), cfg);
  const auto m = inspect_params(bytes.substr(0, bytes.size() - 8));
  EXPECT_EQ(m["payload_bytes_present"].get<std::size_t>() + 8, m["payload_bytes"].get<std::size_t>());
}

TEST(Config, JsonRoundTrip) {
  NeckConfig cfg = small_config();
  cfg.gating = GatingMode::raw;
  cfg.atrous_mode = AtrousMode::atrous;
  cfg.dilations = {2, 5};
  cfg.use_registers = false;
  EXPECT_EQ(neck_config_from_json(to_json(cfg)), cfg);
  auto j = to_json(cfg);
  j.erase("heads");
  EXPECT_THROW(neck_config_from_json(j), ContractError);
  j = to_json(cfg);
  j["gating"] = "sigmoid";
  EXPECT_THROW(neck_config_from_json(j), ContractError);
}

TEST(RunConfigJson, PartialOverlayAndReportEcho) {
  RunConfig rc;
  apply_config_json(rc, nlohmann::ordered_json::parse(R"({"heads": 4, "register-count": 4, "seed": 12})"));
  EXPECT_EQ(rc.neck.head_count, 4u);
  EXPECT_EQ(rc.seed, 12u);
  EXPECT_EQ(rc.neck.pyramid_width, NeckConfig{}.pyramid_width);

  RunConfig from_report;
  apply_config_json(from_report, nlohmann::ordered_json{{"format_version", 1}, {"config", to_json(rc)}});
  EXPECT_EQ(from_report, rc);

  EXPECT_THROW(apply_config_json(rc, nlohmann::ordered_json::parse(R"({"head": 4})")), ContractError);
  EXPECT_THROW(apply_config_json(rc, nlohmann::ordered_json::parse(R"({"heads": "four"})")), ContractError);
}

TEST(Report, ForwardReportDeterministicAndEchoesConfig) {
  RunConfig rc;
  rc.neck.pyramid_width = 4;
  rc.neck.in_channels = {2, 3, 4};
  rc.batch = 1;
  rc.height = rc.width = 8;
  rc.seed = 21;
  auto render = [](const RunConfig& c) {
    return forward_report(c, neck_forward_detailed(run_inputs(c), run_params(c), c.neck)).dump(2);
  };
  const std::string a = render(rc);
  EXPECT_EQ(a, render(rc));
  const auto j = nlohmann::ordered_json::parse(a);
  RunConfig echoed;
  apply_config_json(echoed, j);
  EXPECT_EQ(echoed, rc);
  EXPECT_EQ(j["attention_sites"].size(), 2u);
  EXPECT_EQ(j["levels"][0]["level"], "p3");

  rc.neck.use_mhsa = false;
  EXPECT_FALSE(nlohmann::ordered_json::parse(render(rc)).contains("attention_sites"));
}

TEST(Report, Fnv1aKnownValues) {
  // FNV-1a 64 offset basis for empty input.
  EXPECT_EQ(hex64(fnv1a64(Tensor4({0, 0, 0, 0}))), "cbf29ce484222325");
  // Eight zero bytes, folded by hand.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (int i = 0; i < 8; ++i) h *= 0x100000001b3ULL;
  EXPECT_EQ(fnv1a64(Tensor4({1, 1, 1, 1})), h);
}
