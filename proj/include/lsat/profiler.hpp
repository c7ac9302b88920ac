// Static cost accounting. Each formula mirrors the corresponding forward
// implementation multiply-for-multiply (the instrumented-multiply tests pin
// the parity), so a profile is exactly what one forward pass of the real
// code performs. Reports state the convention: 1 MAC = 2 FLOPs.
#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lsat/cisa.hpp"
#include "lsat/network.hpp"

namespace lsat {

namespace cost {

using Macs = std::int64_t;

inline Macs conv(Index out_c, Index in_c_per_group, Index kh, Index kw, Index out_h, Index out_w,
                 Index batch = 1) {
  return batch * out_c * in_c_per_group * kh * kw * out_h * out_w;
}

// 2 N + 4 per channel: mean scale, squared deviations, variance scale,
// the 4(v + lambda) product, and the weight multiply.
inline Macs simam(Index c, Index h, Index w, Index batch = 1) {
  return batch * (2 * c * h * w + 4 * c);
}

inline Macs layer_norm(Index c, Index h, Index w, Index batch = 1) {
  return batch * h * w * (3 * c + 2);
}

inline Macs gelu(Index numel) { return 3 * numel; }

inline Macs upsample2x(Index out_numel) { return 4 * out_numel; }

inline Macs cisa(Index c, Index h, Index w, Index qkv_kernel, Index batch = 1) {
  return batch * count_attention_macs(AttentionKind::Cisa, c, h, w, qkv_kernel).macs_total;
}

inline Macs cisa_core(Index c, Index h, Index w, Index qkv_kernel, Index batch = 1) {
  return batch *
         count_attention_macs(AttentionKind::Cisa, c, h, w, qkv_kernel).macs_attention_core;
}

// Pre-norm block: two layer norms, the attention, and a 2x GELU ffn.
inline Macs block(Index c, Index h, Index w, Index qkv_kernel, Index batch = 1) {
  return 2 * layer_norm(c, h, w, batch) + cisa(c, h, w, qkv_kernel, batch) +
         conv(2 * c, c, 1, 1, h, w, batch) + gelu(batch * 2 * c * h * w) +
         conv(c, 2 * c, 1, 1, h, w, batch);
}

// Shared pre-convs, six SimAM applications, and the two reductions.
inline Macs saem(Index c, Index h, Index w, Index batch = 1) {
  return 2 * conv(c, c, 3, 3, h, w, batch) + 6 * simam(c, h, w, batch) +
         conv(c, c, 1, 1, h, w, batch) + conv(c, 2 * c, 1, 1, h, w, batch);
}

inline Macs afm(Index c, Index h, Index w, Index batch = 1) {
  return conv(c, 2 * c, 1, 1, h, w, batch)       // fuse
         + batch * (c * w + c)                   // spatial average descriptor
         + conv(c / 4, c, 1, 1, 1, 1, batch)     // gate down
         + conv(c, c / 4, 1, 1, 1, 1, batch)     // gate up
         + batch * (h * w)                       // channel average map
         + conv(1, 2, 1, 1, h, w, batch)         // spatial gate
         + 2 * batch * c * h * w;                // two gated multiplies
}

}  // namespace cost

struct ModelCost {
  std::map<std::string, cost::Macs> macs_by_module;
  cost::Macs macs_total = 0;
  cost::Macs macs_attention_core = 0;  // summed over every block, both streams
};

// Walks the architecture for one forward pass of a bi-temporal pair
// (encoder runs twice under weight sharing).
inline ModelCost count_flops(const LsatConfig& config, Index tile = 0, Index batch = 1) {
  LsatConfig cfg = config;
  if (tile > 0) cfg.tile = tile;
  cfg.validate();
  const auto& ch = cfg.stage_channels;
  const Index n = cfg.stages();
  ModelCost out;
  auto add = [&](const std::string& key, cost::Macs macs) {
    out.macs_by_module[key] += macs;
    out.macs_total += macs;
  };

  const Index stem_side = cfg.tile / 4;
  add("stem", 2 * cost::conv(ch[0], 3, 4, 4, stem_side, stem_side, batch));
  for (Index i = 0; i < n; ++i) {
    const Index side = cfg.level_side(i);
    const Index c = ch[static_cast<std::size_t>(i)];
    const std::string key = "encoder.stage" + std::to_string(i);
    cost::Macs macs = 0;
    if (i > 0)
      macs += cost::conv(c, ch[static_cast<std::size_t>(i - 1)], 2, 2, side, side, batch);
    for (Index d = 0; d < cfg.stage_depths[static_cast<std::size_t>(i)]; ++d)
      macs += cost::block(c, side, side, cfg.qkv_kernel, batch);
    add(key, 2 * macs);  // both temporal streams
    out.macs_attention_core += 2 * cfg.stage_depths[static_cast<std::size_t>(i)] *
                               cost::cisa_core(c, side, side, cfg.qkv_kernel, batch);
  }
  for (Index i = 0; i + 1 < n; ++i) {
    const Index side = cfg.level_side(i);
    add("saem.level" + std::to_string(i + 1),
        cost::saem(ch[static_cast<std::size_t>(i)], side, side, batch));
  }
  {
    const Index side = cfg.level_side(n - 1);
    add("afm", cost::afm(ch.back(), side, side, batch));
  }
  for (Index step = 0; step < n - 1; ++step) {
    const Index level = n - 2 - step;
    const Index side = cfg.level_side(level);
    const Index c = ch[static_cast<std::size_t>(level)];
    const Index c_deep = ch[static_cast<std::size_t>(level + 1)];
    cost::Macs macs = cost::upsample2x(batch * c_deep * side * side) +
                      cost::conv(c, c_deep + c, 1, 1, side, side, batch) +
                      cost::block(c, side, side, cfg.qkv_kernel, batch);
    out.macs_attention_core += cost::cisa_core(c, side, side, cfg.qkv_kernel, batch);
    add("decoder.level" + std::to_string(level + 1), macs);
  }
  {
    const Index half = cfg.tile / 2;
    cost::Macs macs = cost::upsample2x(batch * ch[0] * half * half) +
                      cost::upsample2x(batch * ch[0] * cfg.tile * cfg.tile) +
                      cost::conv(cfg.head_mid_channels, ch[0], 3, 3, cfg.tile, cfg.tile, batch) +
                      cost::gelu(batch * cfg.head_mid_channels * cfg.tile * cfg.tile) +
                      cost::conv(1, cfg.head_mid_channels, 3, 3, cfg.tile, cfg.tile, batch);
    add("head", macs);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parameter counting
// ---------------------------------------------------------------------------

// "encoder.stage0.block0.cisa.q_proj.depthwise" -> "encoder.stage0";
// "stem.weight" -> "stem".
inline std::string module_key(const std::string& param_name) {
  const auto first_dot = param_name.find('.');
  const std::string first = param_name.substr(0, first_dot);
  if (first != "encoder" && first != "decoder" && first != "saem") return first;
  const auto second_dot = param_name.find('.', first_dot + 1);
  return param_name.substr(0, second_dot);
}

struct ParamReport {
  std::map<std::string, Index> by_module;
  Index total = 0;
};

template <typename S>
ParamReport count_params(LsatModel<S>& m) {
  ParamReport report;
  m.for_each_param([&](Parameter<S>& p) {
    report.by_module[module_key(p.name)] += p.value.size();
    report.total += p.value.size();
  });
  return report;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

inline double fit_loglog_slope(const std::vector<std::pair<double, double>>& xy) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (auto [x, y] : xy) {
    const double lx = std::log(x), ly = std::log(y);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double n = static_cast<double>(xy.size());
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

// kind,C,H,W,macs_total,macs_attention_core,params
inline std::string attention_scaling_csv(Index channels, const std::vector<Index>& sides,
                                         Index qkv_kernel = 3) {
  std::ostringstream os;
  os << "kind,C,H,W,macs_total,macs_attention_core,params\n";
  for (const char* kind : {"cisa", "vanilla"}) {
    for (Index side : sides) {
      const auto cost = count_attention_macs(
          kind == std::string("cisa") ? AttentionKind::Cisa : AttentionKind::Vanilla, channels,
          side, side, qkv_kernel);
      os << kind << ',' << channels << ',' << side << ',' << side << ',' << cost.macs_total
         << ',' << cost.macs_attention_core << ',' << cost.params << '\n';
    }
  }
  return os.str();
}

template <typename S>
nlohmann::json cost_report_json(LsatModel<S>& m, Index batch = 1) {
  const ModelCost cost = count_flops(m.config, 0, batch);
  const ParamReport params = count_params(m);
  nlohmann::json per_module;
  for (const auto& [key, macs] : cost.macs_by_module) {
    per_module[key] = {{"macs", macs},
                       {"flops", 2 * macs},
                       {"params", params.by_module.count(key) ? params.by_module.at(key) : 0}};
  }
  return nlohmann::json{
      {"convention", "1 MAC = 2 FLOPs"},
      {"batch", batch},
      {"tile", m.config.tile},
      {"per_module", per_module},
      {"totals",
       {{"macs", cost.macs_total},
        {"flops", 2 * cost.macs_total},
        {"macs_attention_core", cost.macs_attention_core},
        {"params", params.total}}}};
}

}  // namespace lsat
