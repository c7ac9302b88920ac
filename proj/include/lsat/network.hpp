// The full change-detection network: a weight-sharing encoder of CISA blocks
// over a stride-4 stem, structure-aware enhancement on the skip levels,
// attention fusion of the deepest bi-temporal features, and a single-branch
// decoder that upsamples back to one logit channel per pixel.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "lsat/cisa.hpp"
#include "lsat/saem.hpp"
#include "lsat/serialize.hpp"

namespace lsat {

struct LsatConfig {
  std::vector<Index> stage_channels{16, 32, 64, 128};
  std::vector<Index> stage_depths{1, 1, 1, 1};
  Index tile = 64;
  std::array<double, 3> lambda_ratio{2.0, 1.0, 1.0};
  bool normalize_lambdas = true;
  Index head_mid_channels = 16;
  Index qkv_kernel = 3;
  double simam_lambda = 1e-4;

  Index stages() const { return static_cast<Index>(stage_channels.size()); }

  // Spatial side of level i (0-based): tile / 2^(i+2).
  Index level_side(Index level) const { return tile >> (level + 2); }

  void validate() const {
    if (stage_channels.empty())
      throw std::invalid_argument("LsatConfig: stage_channels must not be empty");
    if (stage_channels.size() != stage_depths.size())
      throw std::invalid_argument("LsatConfig: stage_channels and stage_depths lengths differ");
    for (std::size_t i = 0; i < stage_channels.size(); ++i) {
      if (stage_channels[i] < 1)
        throw std::invalid_argument("LsatConfig: stage_channels must be positive");
      if (i > 0 && stage_channels[i] <= stage_channels[i - 1])
        throw std::invalid_argument("LsatConfig: stage_channels must be strictly increasing");
      if (stage_depths[i] < 1)
        throw std::invalid_argument("LsatConfig: stage_depths must be positive");
    }
    const Index div = Index(1) << (stages() + 1);
    if (tile < div || tile % div != 0)
      throw std::invalid_argument("LsatConfig: tile " + std::to_string(tile) +
                                  " must be a positive multiple of " + std::to_string(div));
    if (stage_channels.back() % 4 != 0)
      throw std::invalid_argument(
          "LsatConfig: deepest stage channels must be divisible by 4 (fusion gate reduction)");
    if (head_mid_channels < 1)
      throw std::invalid_argument("LsatConfig: head_mid_channels must be positive");
    CisaConfig probe = cisa_at(0);
    probe.validate();
  }

  CisaConfig cisa_at(Index stage) const {
    CisaConfig c;
    c.channels = stage_channels[static_cast<std::size_t>(stage)];
    c.lambda_ratio = lambda_ratio;
    c.normalize_lambdas = normalize_lambdas;
    c.qkv_kernel = qkv_kernel;
    return c;
  }
};

inline void to_json(nlohmann::json& j, const LsatConfig& c) {
  j = nlohmann::json{{"stage_channels", c.stage_channels},
                     {"stage_depths", c.stage_depths},
                     {"tile", c.tile},
                     {"lambda_ratio", c.lambda_ratio},
                     {"normalize_lambdas", c.normalize_lambdas},
                     {"head_mid_channels", c.head_mid_channels},
                     {"qkv_kernel", c.qkv_kernel},
                     {"simam_lambda", c.simam_lambda}};
}

inline void from_json(const nlohmann::json& j, LsatConfig& c) {
  j.at("stage_channels").get_to(c.stage_channels);
  j.at("stage_depths").get_to(c.stage_depths);
  j.at("tile").get_to(c.tile);
  j.at("lambda_ratio").get_to(c.lambda_ratio);
  j.at("normalize_lambdas").get_to(c.normalize_lambdas);
  j.at("head_mid_channels").get_to(c.head_mid_channels);
  j.at("qkv_kernel").get_to(c.qkv_kernel);
  j.at("simam_lambda").get_to(c.simam_lambda);
}

template <typename S>
struct EncoderStage {
  std::optional<Conv2dLayer<S>> downsample;  // absent on stage 0, fed by the stem
  std::vector<BlockWeights<S>> blocks;
};

template <typename S>
struct DecoderStage {
  Conv2dLayer<S> merge;  // 1x1 (deep + skip channels) -> skip channels
  BlockWeights<S> block;
};

template <typename S>
struct LsatModel {
  LsatConfig config;
  std::uint64_t seed = 0;
  Conv2dLayer<S> stem;  // 3 -> c0, 4x4 stride 4 patch embed
  std::vector<EncoderStage<S>> stages;
  std::vector<SaemWeights<S>> saems;  // skip levels 1..stages-1 (the deepest level feeds the fusion)
  AfmWeights<S> afm;
  std::vector<DecoderStage<S>> decoder;  // deep -> shallow
  Conv2dLayer<S> head_conv1, head_conv2;
  SimamParams simam;

  template <typename F>
  void for_each_param(F&& f) {
    stem.for_each_param(f);
    for (auto& st : stages) {
      if (st.downsample) st.downsample->for_each_param(f);
      for (auto& b : st.blocks) b.for_each_param(f);
    }
    for (auto& s : saems) s.for_each_param(f);
    afm.for_each_param(f);
    for (auto& d : decoder) {
      d.merge.for_each_param(f);
      d.block.for_each_param(f);
    }
    head_conv1.for_each_param(f);
    head_conv2.for_each_param(f);
  }

  std::vector<Parameter<S>*> parameters() {
    std::vector<Parameter<S>*> out;
    for_each_param([&](Parameter<S>& p) { out.push_back(&p); });
    return out;
  }
};

template <typename S>
LsatModel<S> make_lsat_model(const LsatConfig& config, std::uint64_t seed) {
  config.validate();
  LsatModel<S> m;
  m.config = config;
  m.seed = seed;
  m.simam.lambda_s = config.simam_lambda;
  RandomSource rng(seed);
  const auto& ch = config.stage_channels;
  const Index n = config.stages();
  m.stem = make_conv<S>(rng, "stem", ch[0], 3, 4, 4, 0, 1, true);
  for (Index i = 0; i < n; ++i) {
    EncoderStage<S> st;
    const std::string base = "encoder.stage" + std::to_string(i);
    if (i > 0)
      st.downsample = make_conv<S>(rng, base + ".downsample", ch[static_cast<std::size_t>(i)],
                                   ch[static_cast<std::size_t>(i - 1)], 2, 2, 0, 1, true);
    for (Index d = 0; d < config.stage_depths[static_cast<std::size_t>(i)]; ++d)
      st.blocks.push_back(
          make_block_weights<S>(config.cisa_at(i), rng, base + ".block" + std::to_string(d)));
    m.stages.push_back(std::move(st));
  }
  for (Index i = 0; i + 1 < n; ++i)
    m.saems.push_back(make_saem_weights<S>(ch[static_cast<std::size_t>(i)], rng,
                                           "saem.level" + std::to_string(i + 1)));
  m.afm = make_afm_weights<S>(ch.back(), rng, "afm", 4);
  for (Index level = n - 2; level >= 0; --level) {
    DecoderStage<S> d;
    const std::string base = "decoder.level" + std::to_string(level + 1);
    d.merge = make_conv<S>(rng, base + ".merge", ch[static_cast<std::size_t>(level)],
                           ch[static_cast<std::size_t>(level + 1)] +
                               ch[static_cast<std::size_t>(level)],
                           1, 1, 0, 1, true);
    d.block = make_block_weights<S>(config.cisa_at(level), rng, base + ".block");
    m.decoder.push_back(std::move(d));
  }
  m.head_conv1 =
      make_conv<S>(rng, "head.conv1", config.head_mid_channels, ch[0], 3, 1, 1, 1, true);
  m.head_conv2 = make_conv<S>(rng, "head.conv2", 1, config.head_mid_channels, 3, 1, 1, 1, true);
  return m;
}

template <typename S>
struct SiameseFeatures {
  std::vector<Tensor<S>> a, b;  // per level, shallow -> deep
};

// One weight set applied to both temporal inputs.
template <typename S>
SiameseFeatures<S> encode_siamese(const Tensor<S>& xa, const Tensor<S>& xb, LsatModel<S>& m,
                                  Tape<std::type_identity_t<S>>* tape) {
  for (const auto* x : {&xa, &xb}) {
    if (x->rank() != 4 || x->dim(1) != 3)
      throw std::invalid_argument("encode_siamese: inputs must be Bx3xHxW, got " +
                                  shape_str(x->shape()));
    if (x->dim(2) != m.config.tile || x->dim(3) != m.config.tile)
      throw std::invalid_argument("encode_siamese: input side " + std::to_string(x->dim(2)) +
                                  "x" + std::to_string(x->dim(3)) + " does not match tile " +
                                  std::to_string(m.config.tile));
  }
  if (xa.dim(0) != xb.dim(0))
    throw std::invalid_argument("encode_siamese: batch sizes differ");
  auto run = [&](const Tensor<S>& x) {
    std::vector<Tensor<S>> levels;
    Tensor<S> h = m.stem.apply(x, tape);
    for (auto& st : m.stages) {
      if (st.downsample) h = st.downsample->apply(h, tape);
      for (auto& b : st.blocks) h = block_forward(h, b, tape);
      levels.push_back(h);
    }
    return levels;
  };
  SiameseFeatures<S> out;
  out.a = run(xa);
  out.b = run(xb);
  return out;
}

// Decodes from the fused deepest features, consuming one enhancement skip
// per upsampling step, then predicts one logit channel at tile resolution.
template <typename S>
Tensor<S> decode(const std::vector<Tensor<S>>& skips, const Tensor<S>& fused, LsatModel<S>& m,
                 Tape<std::type_identity_t<S>>* tape) {
  const Index n = m.config.stages();
  if (static_cast<Index>(skips.size()) != n - 1)
    throw std::invalid_argument("decode: expected " + std::to_string(n - 1) + " skips, got " +
                                std::to_string(skips.size()));
  Tensor<S> h = fused;
  for (Index step = 0; step < n - 1; ++step) {
    const Index level = n - 2 - step;
    const auto& skip = skips[static_cast<std::size_t>(level)];
    h = upsample_bilinear2x(h);
    if (skip.shape() != Shape{h.dim(0), m.config.stage_channels[static_cast<std::size_t>(level)],
                              h.dim(2), h.dim(3)})
      throw std::invalid_argument("decode: skip at level " + std::to_string(level + 1) +
                                  " has shape " + shape_str(skip.shape()) + ", expected " +
                                  shape_str({h.dim(0),
                                             m.config.stage_channels[static_cast<std::size_t>(level)],
                                             h.dim(2), h.dim(3)}));
    h = concat<S>({h, skip}, 1);
    auto& stage = m.decoder[static_cast<std::size_t>(step)];
    h = stage.merge.apply(h, tape);
    h = block_forward(h, stage.block, tape);
  }
  h = upsample_bilinear2x(upsample_bilinear2x(h));
  return m.head_conv2.apply(gelu(m.head_conv1.apply(h, tape)), tape);
}

template <typename S>
Tensor<S> lsat_forward(const Tensor<S>& xa, const Tensor<S>& xb, LsatModel<S>& m,
                       Tape<std::type_identity_t<S>>* tape) {
  auto feats = encode_siamese(xa, xb, m, tape);
  const Index n = m.config.stages();
  std::vector<Tensor<S>> skips;
  for (Index i = 0; i + 1 < n; ++i)
    skips.push_back(saem_forward(feats.a[static_cast<std::size_t>(i)],
                                 feats.b[static_cast<std::size_t>(i)],
                                 m.saems[static_cast<std::size_t>(i)], m.simam, tape));
  auto fused = afm_forward(feats.a.back(), feats.b.back(), m.afm, tape);
  return decode(skips, fused, m, tape);
}

// ---------------------------------------------------------------------------
// Checkpoints: tensor container + JSON sidecar (config, seed, metadata)
// ---------------------------------------------------------------------------

inline std::filesystem::path checkpoint_sidecar(const std::filesystem::path& path) {
  return path.string() + ".json";
}

template <typename S>
void save_checkpoint(LsatModel<S>& m, const std::filesystem::path& path,
                     const nlohmann::json& metadata = {}) {
  std::vector<std::pair<std::string, Tensor<S>>> entries;
  m.for_each_param([&](Parameter<S>& p) { entries.emplace_back(p.name, p.value); });
  save_tensors(path, entries);
  nlohmann::json sidecar;
  sidecar["config"] = m.config;
  sidecar["seed"] = m.seed;
  sidecar["dtype"] = dtype_name<S>();
  sidecar["metadata"] = metadata;  // timestamps etc. live here, not in the container
  std::ofstream out(checkpoint_sidecar(path));
  if (!out) throw std::runtime_error("save_checkpoint: cannot write sidecar for " + path.string());
  out << sidecar.dump(2) << "\n";
}

template <typename S>
LsatModel<S> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(checkpoint_sidecar(path));
  if (!in)
    throw std::runtime_error("load_checkpoint: missing sidecar " +
                             checkpoint_sidecar(path).string());
  nlohmann::json sidecar = nlohmann::json::parse(in);
  if (sidecar.at("dtype").get<std::string>() != dtype_name<S>())
    throw std::runtime_error("load_checkpoint: checkpoint dtype " +
                             sidecar.at("dtype").get<std::string>() + " does not match " +
                             dtype_name<S>());
  LsatModel<S> m = make_lsat_model<S>(sidecar.at("config").get<LsatConfig>(),
                                      sidecar.at("seed").get<std::uint64_t>());
  auto entries = load_tensors<S>(path);
  std::map<std::string, Tensor<S>> by_name(entries.begin(), entries.end());
  m.for_each_param([&](Parameter<S>& p) {
    auto it = by_name.find(p.name);
    if (it == by_name.end())
      throw std::runtime_error("load_checkpoint: missing tensor '" + p.name + "'");
    if (it->second.shape() != p.value.shape())
      throw std::runtime_error("load_checkpoint: shape mismatch for '" + p.name + "': file has " +
                               shape_str(it->second.shape()) + ", model needs " +
                               shape_str(p.value.shape()));
    p.value = it->second;
    by_name.erase(it);
  });
  if (!by_name.empty())
    throw std::runtime_error("load_checkpoint: unexpected tensor '" + by_name.begin()->first +
                             "' in " + path.string());
  return m;
}

}  // namespace lsat
