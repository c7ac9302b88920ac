#include <cmath>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "counting_scalar.hpp"
#include "doctest.h"
#include "lsat/gradcheck.hpp"
#include "lsat/network.hpp"
#include "lsat/profiler.hpp"
#include "oracles.hpp"

using namespace lsat;
using counting::CountingScalar;

namespace {

LsatConfig tiny_config() {
  LsatConfig cfg;
  cfg.stage_channels = {4, 8, 16, 32};
  cfg.stage_depths = {1, 1, 1, 1};
  cfg.tile = 32;
  return cfg;
}

LsatConfig micro_config() {  // three stages, fast in double
  LsatConfig cfg;
  cfg.stage_channels = {4, 8, 16};
  cfg.stage_depths = {1, 1, 1};
  cfg.tile = 16;
  return cfg;
}

template <typename S>
Tensor<S> checkerboard(Index side) {
  std::vector<S> buf(static_cast<std::size_t>(3 * side * side));
  for (Index c = 0; c < 3; ++c)
    for (Index h = 0; h < side; ++h)
      for (Index w = 0; w < side; ++w)
        buf[static_cast<std::size_t>((c * side + h) * side + w)] = S(((h + w) & 1) ? 1.0 : 0.0);
  return reshape(Tensor<S>::from({3, side, side}, std::move(buf)), {1, 3, side, side});
}

// Closed-form parameter tally, kept independent of the library counters.
Index block_params(Index c, Index k) {
  const Index norms = 2 * (2 * c);
  const Index dws = 3 * (c * k * k + c * c + c);
  const Index cisa_rest = 1 + 2 * 3 + c * c + c;  // temperature, two gates, out proj
  const Index ffn = (2 * c * c + 2 * c) + (c * 2 * c + c);
  return norms + dws + cisa_rest + ffn;
}

Index expected_params(const LsatConfig& cfg) {
  const auto& ch = cfg.stage_channels;
  const Index n = cfg.stages();
  Index total = ch[0] * 3 * 16 + ch[0];  // stem
  for (Index i = 0; i < n; ++i) {
    if (i > 0)
      total += ch[static_cast<std::size_t>(i)] * ch[static_cast<std::size_t>(i - 1)] * 4 +
               ch[static_cast<std::size_t>(i)];
    total += cfg.stage_depths[static_cast<std::size_t>(i)] *
             block_params(ch[static_cast<std::size_t>(i)], cfg.qkv_kernel);
  }
  for (Index i = 0; i + 1 < n; ++i) {
    const Index c = ch[static_cast<std::size_t>(i)];
    total += (c * c * 9 + c) + (c * c + c) + (2 * c * c + c);
  }
  const Index cd = ch.back();
  total += (cd * 2 * cd + cd) + (cd / 4 * cd + cd / 4) + (cd * (cd / 4) + cd) + (2 + 1);  // afm
  for (Index level = n - 2; level >= 0; --level) {
    const Index c = ch[static_cast<std::size_t>(level)];
    const Index deep = ch[static_cast<std::size_t>(level + 1)];
    total += c * (deep + c) + c + block_params(c, cfg.qkv_kernel);
  }
  total += cfg.head_mid_channels * ch[0] * 9 + cfg.head_mid_channels;  // head conv1
  total += cfg.head_mid_channels * 9 + 1;                              // head conv2
  return total;
}

}  // namespace

TEST_SUITE("network") {

TEST_CASE("config validation") {
  auto cfg = tiny_config();
  CHECK_NOTHROW(cfg.validate());
  auto bad = cfg;
  bad.tile = 48;  // not a multiple of 32
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.stage_channels = {8, 8, 16, 32};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.stage_channels = {4, 8, 16, 30};  // fusion reduction needs /4
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.stage_depths = {1, 1};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("siamese encoding is bitwise identical on identical inputs") {
  auto m = make_lsat_model<double>(tiny_config(), 5);
  RandomSource rng(6);
  auto x = rand_uniform<double>({1, 3, 32, 32}, rng);
  auto feats = encode_siamese(x, x, m, nullptr);
  REQUIRE(feats.a.size() == 4);
  for (std::size_t i = 0; i < feats.a.size(); ++i)
    CHECK(oracle::to_vec(feats.a[i]) == oracle::to_vec(feats.b[i]));  // bit-exact
}

TEST_CASE("level shapes follow tile / 2^(i+1) halving from the stem") {
  LsatConfig cfg;
  cfg.stage_channels = {8, 16, 32, 64};
  cfg.tile = 64;
  auto m = make_lsat_model<double>(cfg, 1);
  RandomSource rng(2);
  auto xa = rand_uniform<double>({2, 3, 64, 64}, rng);
  auto xb = rand_uniform<double>({2, 3, 64, 64}, rng);
  auto feats = encode_siamese(xa, xb, m, nullptr);
  const Index sides[4] = {16, 8, 4, 2};
  for (Index i = 0; i < 4; ++i) {
    CHECK(feats.a[static_cast<std::size_t>(i)].shape() ==
          Shape{2, cfg.stage_channels[static_cast<std::size_t>(i)], sides[i], sides[i]});
  }
  for (const auto& level : feats.a)
    for (double v : level.elems()) CHECK(std::isfinite(v));

  CHECK_THROWS_AS(encode_siamese(rand_uniform<double>({1, 3, 32, 32}, rng), xb, m, nullptr),
                  std::invalid_argument);
  CHECK_THROWS_AS(encode_siamese(rand_uniform<double>({2, 1, 64, 64}, rng), xb, m, nullptr),
                  std::invalid_argument);
}

TEST_CASE("decode emits one logit channel at tile resolution and survives zero skips") {
  for (auto cfg : {tiny_config(), micro_config()}) {
    auto m = make_lsat_model<double>(cfg, 3);
    const Index n = cfg.stages();
    std::vector<Tensor<double>> skips;
    for (Index i = 0; i + 1 < n; ++i)
      skips.push_back(Tensor<double>::zeros(
          {1, cfg.stage_channels[static_cast<std::size_t>(i)], cfg.level_side(i),
           cfg.level_side(i)}));
    auto fused = Tensor<double>::zeros(
        {1, cfg.stage_channels.back(), cfg.level_side(n - 1), cfg.level_side(n - 1)});
    auto logits = decode(skips, fused, m, nullptr);
    CHECK(logits.shape() == Shape{1, 1, cfg.tile, cfg.tile});
    for (double v : logits.elems()) CHECK(std::isfinite(v));

    auto short_skips = skips;
    short_skips.pop_back();
    CHECK_THROWS_AS(decode(short_skips, fused, m, nullptr), std::invalid_argument);
  }
}

TEST_CASE("lsat_forward is deterministic and finite, including identical inputs") {
  auto m = make_lsat_model<float>(tiny_config(), 11);
  RandomSource rng(12);
  auto xa = rand_uniform<float>({1, 3, 32, 32}, rng);
  auto xb = rand_uniform<float>({1, 3, 32, 32}, rng);
  auto l1 = lsat_forward(xa, xb, m, nullptr);
  auto l2 = lsat_forward(xa, xb, m, nullptr);
  CHECK(l1.shape() == Shape{1, 1, 32, 32});
  CHECK(std::vector<float>(l1.elems().begin(), l1.elems().end()) ==
        std::vector<float>(l2.elems().begin(), l2.elems().end()));

  auto same = lsat_forward(xa, xa, m, nullptr);
  for (float v : same.elems()) CHECK(std::isfinite(v));
}

TEST_CASE("adversarial inputs keep float32 logits finite") {
  auto m = make_lsat_model<float>(tiny_config(), 21);
  auto zeros = Tensor<float>::zeros({1, 3, 32, 32});
  auto ones = Tensor<float>::full({1, 3, 32, 32}, 1.0f);
  auto board = checkerboard<float>(32);
  for (const auto* xa : {&zeros, &ones, &board})
    for (const auto* xb : {&zeros, &ones, &board}) {
      auto logits = lsat_forward(*xa, *xb, m, nullptr);
      for (float v : logits.elems()) CHECK(std::isfinite(v));
    }
}

TEST_CASE("golden logits for the fixed-seed tiny model") {
  std::ifstream in(std::string(LSAT_GOLDEN_DIR) + "/tiny_logits.json");
  REQUIRE_MESSAGE(in.good(), "golden file missing; regenerate with lsat_make_goldens");
  nlohmann::json golden = nlohmann::json::parse(in);
  auto cfg = golden.at("config").get<LsatConfig>();
  auto m = make_lsat_model<float>(cfg, golden.at("model_seed").get<std::uint64_t>());
  RandomSource rng(golden.at("input_seed").get<std::uint64_t>());
  auto xa = rand_uniform<float>({1, 3, cfg.tile, cfg.tile}, rng);
  auto xb = rand_uniform<float>({1, 3, cfg.tile, cfg.tile}, rng);
  auto logits = lsat_forward(xa, xb, m, nullptr);
  auto want = golden.at("logits").get<std::vector<float>>();
  REQUIRE(static_cast<Index>(want.size()) == logits.size());
  for (Index i = 0; i < logits.size(); ++i)
    CHECK(logits.data()[i] ==
          doctest::Approx(want[static_cast<std::size_t>(i)]).epsilon(1e-6));
}

TEST_CASE("count_params matches the closed-form tally and the 1x1 conv example") {
  RandomSource rng(31);
  auto lone = make_conv<double>(rng, "lone", 8, 3, 1, 1, 0, 1, true);
  CHECK(lone.param_count() == 3 * 8 + 8);

  auto cfg = tiny_config();
  auto m = make_lsat_model<double>(cfg, 1);
  auto report = count_params(m);
  CHECK(report.total == expected_params(cfg));

  // SimAM contributes nothing: the SAEM module count is its convs alone
  for (Index i = 0; i + 1 < cfg.stages(); ++i) {
    const Index c = cfg.stage_channels[static_cast<std::size_t>(i)];
    CHECK(report.by_module.at("saem.level" + std::to_string(i + 1)) ==
          (c * c * 9 + c) + (c * c + c) + (2 * c * c + c));
  }
}

TEST_CASE("count_flops closed forms and identities") {
  // 1x1 conv on C_in=2, C_out=3, 4x4 output: 2*3*16 = 96
  CHECK(cost::conv(3, 2, 1, 1, 4, 4) == 96);

  // block = attention + two norms + ffn terms, term by term
  const Index c = 8, side = 16, k = 3;
  const auto attn = count_attention_macs(AttentionKind::Cisa, c, side, side, k);
  CHECK(cost::block(c, side, side, k) ==
        attn.macs_total + 2 * cost::layer_norm(c, side, side) +
            cost::conv(2 * c, c, 1, 1, side, side) + cost::gelu(2 * c * side * side) +
            cost::conv(c, 2 * c, 1, 1, side, side));

  // doubling the tile multiplies stem MACs by 4
  auto cfg = tiny_config();
  auto c32 = count_flops(cfg, 32);
  auto c64 = count_flops(cfg, 64);
  CHECK(c64.macs_by_module.at("stem") == 4 * c32.macs_by_module.at("stem"));
}

TEST_CASE("count_flops is monotone in channels and tile") {
  auto cfg = tiny_config();
  const auto base = count_flops(cfg).macs_total;
  CHECK(count_flops(cfg, 64).macs_total > base);
  // widen one stage at a time (keeping the config valid) and recount
  {
    auto grown = cfg;
    grown.stage_channels = {6, 8, 16, 32};
    CHECK(count_flops(grown).macs_total > base);
  }
  {
    auto grown = cfg;
    grown.stage_channels = {4, 12, 16, 32};
    CHECK(count_flops(grown).macs_total > base);
  }
  {
    auto grown = cfg;
    grown.stage_channels = {4, 8, 24, 32};
    CHECK(count_flops(grown).macs_total > base);
  }
  {
    auto grown = cfg;
    grown.stage_channels = {4, 8, 16, 36};
    CHECK(count_flops(grown).macs_total > base);
  }
}

TEST_CASE("attention-core flops grow linearly in tile^2") {
  auto cfg = tiny_config();
  std::vector<std::pair<double, double>> pts;
  for (Index tile : {32, 64, 128, 256}) {
    auto cost = count_flops(cfg, tile);
    pts.push_back(
        {static_cast<double>(tile) * tile, static_cast<double>(cost.macs_attention_core)});
  }
  const double slope = fit_loglog_slope(pts);
  CHECK(std::fabs(slope - 1.0) < 0.05);
}

TEST_CASE("whole-model instrumented multiply trace equals the static walk") {
  auto cfg = tiny_config();
  auto m = make_lsat_model<CountingScalar>(cfg, 17);
  RandomSource rng(18);
  auto xa = rand_uniform<CountingScalar>({1, 3, 32, 32}, rng);
  auto xb = rand_uniform<CountingScalar>({1, 3, 32, 32}, rng);
  CountingScalar::reset();
  lsat_forward(xa, xb, m, nullptr);
  const auto traced = CountingScalar::multiplies;
  const auto walked = count_flops(cfg).macs_total;
  CHECK(traced == static_cast<std::uint64_t>(walked));
}

TEST_CASE("submodule instrumented traces equal their closed forms") {
  RandomSource rng(19);
  {
    auto w = make_saem_weights<CountingScalar>(4, rng, "saem");
    SimamParams p;
    auto f1 = rand_uniform<CountingScalar>({1, 4, 6, 6}, rng);
    auto f2 = rand_uniform<CountingScalar>({1, 4, 6, 6}, rng);
    CountingScalar::reset();
    saem_forward(f1, f2, w, p, nullptr);
    CHECK(CountingScalar::multiplies == static_cast<std::uint64_t>(cost::saem(4, 6, 6)));
  }
  {
    auto w = make_afm_weights<CountingScalar>(8, rng, "afm");
    auto f1 = rand_uniform<CountingScalar>({1, 8, 2, 2}, rng);
    auto f2 = rand_uniform<CountingScalar>({1, 8, 2, 2}, rng);
    CountingScalar::reset();
    afm_forward(f1, f2, w, nullptr);
    CHECK(CountingScalar::multiplies == static_cast<std::uint64_t>(cost::afm(8, 2, 2)));
  }
  {
    CisaConfig cfg;
    cfg.channels = 4;
    auto w = make_block_weights<CountingScalar>(cfg, rng, "block");
    auto x = rand_uniform<CountingScalar>({1, 4, 4, 4}, rng);
    CountingScalar::reset();
    block_forward(x, w, nullptr);
    CHECK(CountingScalar::multiplies == static_cast<std::uint64_t>(cost::block(4, 4, 4, 3)));
  }
}

TEST_CASE("end-to-end gradients on a micro model match finite differences") {
  auto m = make_lsat_model<double>(micro_config(), 23);
  RandomSource rng(24);
  auto xa = rand_uniform<double>({1, 3, 16, 16}, rng);
  auto xb = rand_uniform<double>({1, 3, 16, 16}, rng);
  auto wsum = randn<double>({1, 1, 16, 16}, rng);
  auto loss_fn = [&](Tape<double>* tape) {
    return sum_all(mul(lsat_forward(xa, xb, m, tape), wsum));
  };
  auto report = check_param_gradients(loss_fn, m.parameters(), 20, 29);
  INFO(report.note, " rel err ", report.max_rel_err);
  CHECK(report.pass);
  CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("profiler report json carries the convention and aligned modules") {
  auto m = make_lsat_model<float>(tiny_config(), 2);
  auto j = cost_report_json(m);
  CHECK(j.at("convention").get<std::string>() == "1 MAC = 2 FLOPs");
  const auto& per = j.at("per_module");
  CHECK(per.contains("stem"));
  CHECK(per.contains("afm"));
  CHECK(per.contains("encoder.stage0"));
  CHECK(per.contains("decoder.level1"));
  for (const auto& [key, entry] : per.items()) {
    CHECK(entry.at("flops").get<std::int64_t>() == 2 * entry.at("macs").get<std::int64_t>());
    CHECK(entry.at("params").get<std::int64_t>() > 0);
  }
  CHECK(j.at("totals").at("params").get<Index>() == expected_params(tiny_config()));
}

}  // TEST_SUITE
