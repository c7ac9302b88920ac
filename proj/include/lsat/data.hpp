// Bi-temporal sample handling: a seeded synthetic change-pair generator
// (integer rasterization, so masks are exact), the on-disk A/B/label layout,
// grid tiling, right-angle augmentation, and dataset manifests.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "lsat/png_io.hpp"
#include "lsat/random.hpp"
#include "lsat/tensor.hpp"

namespace lsat {

enum class SampleSource { Synthetic, Disk };

struct BiTemporalSample {
  Tensor<float> image_a;  // {3,H,W} in [0,1]
  Tensor<float> image_b;  // {3,H,W} in [0,1]
  Tensor<float> mask;     // {1,H,W}, strictly 0/1
  std::string id;
  SampleSource source = SampleSource::Synthetic;

  Index height() const { return image_a.dim(1); }
  Index width() const { return image_a.dim(2); }
};

template <typename S = float>
void require_binary_mask(const Tensor<float>& mask, const char* where) {
  for (float v : mask.elems())
    if (v != 0.0f && v != 1.0f)
      throw std::invalid_argument(std::string(where) + ": mask is not strictly binary");
}

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

enum class ObjectKind { Rectangle, Ellipse, Triangle };
enum class ChangeOp { Add, Remove, Recolor };

struct SynthConfig {
  Index canvas = 64;
  Index min_objects = 3;
  Index max_objects = 7;
  std::vector<ObjectKind> kinds{ObjectKind::Rectangle, ObjectKind::Ellipse, ObjectKind::Triangle};
  std::vector<ChangeOp> change_ops{ChangeOp::Add, ChangeOp::Remove, ChangeOp::Recolor};
  double brightness_jitter = 0.05;
  double contrast_jitter = 0.05;
  double noise_sigma = 0.01;
  std::uint64_t seed = 1;

  void validate() const {
    if (canvas < 16) throw std::invalid_argument("SynthConfig: canvas must be at least 16");
    if (min_objects < 1 || max_objects < min_objects)
      throw std::invalid_argument("SynthConfig: object count range is empty");
    if (kinds.empty()) throw std::invalid_argument("SynthConfig: no object kinds enabled");
    if (brightness_jitter < 0 || contrast_jitter < 0 || noise_sigma < 0)
      throw std::invalid_argument("SynthConfig: jitter magnitudes must be non-negative");
  }
};

namespace synth_detail {

struct Object {
  ObjectKind kind;
  // rectangle: x0,y0,x1,y1; ellipse: cx,cy,rx,ry; triangle: 3 vertices
  double p[8] = {0};
  float color[3] = {0};

  bool covers(Index x, Index y) const {
    const double fx = static_cast<double>(x), fy = static_cast<double>(y);
    switch (kind) {
      case ObjectKind::Rectangle:
        return fx >= p[0] && fx < p[2] && fy >= p[1] && fy < p[3];
      case ObjectKind::Ellipse: {
        const double dx = (fx - p[0]) / p[2], dy = (fy - p[1]) / p[3];
        return dx * dx + dy * dy <= 1.0;
      }
      case ObjectKind::Triangle: {
        auto edge = [&](double ax, double ay, double bx, double by) {
          return (bx - ax) * (fy - ay) - (by - ay) * (fx - ax);
        };
        const double e0 = edge(p[0], p[1], p[2], p[3]);
        const double e1 = edge(p[2], p[3], p[4], p[5]);
        const double e2 = edge(p[4], p[5], p[0], p[1]);
        return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
      }
    }
    return false;
  }
};

inline Object random_object(RandomSource& rng, const SynthConfig& cfg,
                            const float background[3]) {
  Object o;
  o.kind = cfg.kinds[static_cast<std::size_t>(rng.uniform_int(
      0, static_cast<std::int64_t>(cfg.kinds.size()) - 1))];
  const double side = static_cast<double>(cfg.canvas);
  switch (o.kind) {
    case ObjectKind::Rectangle: {
      const double w = rng.uniform(side * 0.12, side * 0.4);
      const double h = rng.uniform(side * 0.12, side * 0.4);
      o.p[0] = rng.uniform(0, side - w);
      o.p[1] = rng.uniform(0, side - h);
      o.p[2] = o.p[0] + w;
      o.p[3] = o.p[1] + h;
      break;
    }
    case ObjectKind::Ellipse: {
      o.p[2] = rng.uniform(side * 0.07, side * 0.2);  // rx
      o.p[3] = rng.uniform(side * 0.07, side * 0.2);  // ry
      o.p[0] = rng.uniform(o.p[2], side - o.p[2]);
      o.p[1] = rng.uniform(o.p[3], side - o.p[3]);
      break;
    }
    case ObjectKind::Triangle: {
      for (int attempt = 0; attempt < 16; ++attempt) {
        for (int v = 0; v < 3; ++v) {
          o.p[2 * v] = rng.uniform(0, side - 1);
          o.p[2 * v + 1] = rng.uniform(0, side - 1);
        }
        const double area2 = std::fabs((o.p[2] - o.p[0]) * (o.p[5] - o.p[1]) -
                                       (o.p[4] - o.p[0]) * (o.p[3] - o.p[1]));
        if (area2 >= side * side * 0.05) break;
      }
      break;
    }
  }
  // colors kept visibly apart from the background
  for (int attempt = 0; attempt < 16; ++attempt) {
    double dist = 0;
    for (int c = 0; c < 3; ++c) {
      o.color[c] = static_cast<float>(rng.uniform(0.0, 1.0));
      dist += std::fabs(static_cast<double>(o.color[c]) - background[c]);
    }
    if (dist > 0.45) break;
  }
  return o;
}

}  // namespace synth_detail

// image_a renders a background plus objects; image_b applies per-object
// changes (remove, recolor) and optionally adds fresh objects. The mask
// marks pixels whose visible object identity changed; recoloring keeps
// identity, so it contributes nothing (a pseudo-change distractor).
// Photometric jitter and noise touch the images only. Fully determined by
// (cfg.seed, index).
inline BiTemporalSample generate_one(const SynthConfig& cfg, Index index) {
  cfg.validate();
  RandomSource rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(index)));
  const Index side = cfg.canvas;
  const Index plane = side * side;

  float background[3];
  for (auto& c : background) c = static_cast<float>(rng.uniform(0.15, 0.55));
  const double grad_x = rng.uniform(-0.1, 0.1), grad_y = rng.uniform(-0.1, 0.1);

  const Index n_objects = rng.uniform_int(cfg.min_objects, cfg.max_objects);
  std::vector<synth_detail::Object> base;
  for (Index i = 0; i < n_objects; ++i)
    base.push_back(synth_detail::random_object(rng, cfg, background));

  const bool can_add =
      std::find(cfg.change_ops.begin(), cfg.change_ops.end(), ChangeOp::Add) != cfg.change_ops.end();
  const bool can_remove = std::find(cfg.change_ops.begin(), cfg.change_ops.end(),
                                    ChangeOp::Remove) != cfg.change_ops.end();
  const bool can_recolor = std::find(cfg.change_ops.begin(), cfg.change_ops.end(),
                                     ChangeOp::Recolor) != cfg.change_ops.end();

  // plan: 0 keep, 1 remove, 2 recolor
  std::vector<int> plan(static_cast<std::size_t>(n_objects), 0);
  bool any_geometry_change = false;
  for (auto& p : plan) {
    const double roll = rng.uniform();
    if (can_remove && roll < 0.25) {
      p = 1;
      any_geometry_change = true;
    } else if (can_recolor && roll < 0.5) {
      p = 2;
    }
  }
  Index n_added = can_add ? rng.uniform_int(1, 2) : 0;
  if (can_remove && !any_geometry_change && n_added == 0) plan.back() = 1;

  std::vector<synth_detail::Object> objects_b;
  std::vector<Index> identity_b;  // base index, or -1 for fresh objects
  for (Index i = 0; i < n_objects; ++i) {
    if (plan[static_cast<std::size_t>(i)] == 1) continue;
    synth_detail::Object o = base[static_cast<std::size_t>(i)];
    if (plan[static_cast<std::size_t>(i)] == 2)
      for (int attempt = 0; attempt < 16; ++attempt) {
        float fresh[3];
        double dist = 0;
        for (int c = 0; c < 3; ++c) {
          fresh[c] = static_cast<float>(rng.uniform(0.0, 1.0));
          dist += std::fabs(fresh[c] - o.color[c]);
        }
        if (dist > 0.45) {
          std::copy(fresh, fresh + 3, o.color);
          break;
        }
      }
    objects_b.push_back(o);
    identity_b.push_back(i);
  }
  for (Index i = 0; i < n_added; ++i) {
    objects_b.push_back(synth_detail::random_object(rng, cfg, background));
    identity_b.push_back(-1 - i);  // unique fresh identity
  }

  // render: topmost object wins; identity raster drives the mask
  auto render = [&](const std::vector<synth_detail::Object>& objs,
                    const std::vector<Index>& ids, std::vector<float>& rgb,
                    std::vector<Index>& top) {
    rgb.assign(static_cast<std::size_t>(3 * plane), 0.0f);
    top.assign(static_cast<std::size_t>(plane), std::numeric_limits<Index>::min());
    for (Index y = 0; y < side; ++y)
      for (Index x = 0; x < side; ++x) {
        const Index pix = y * side + x;
        float col[3];
        for (int c = 0; c < 3; ++c) {
          double v = background[c] + grad_x * (double(x) / side - 0.5) +
                     grad_y * (double(y) / side - 0.5);
          col[c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
        Index ident = std::numeric_limits<Index>::min();
        for (std::size_t k = 0; k < objs.size(); ++k)
          if (objs[k].covers(x, y)) {
            std::copy(objs[k].color, objs[k].color + 3, col);
            ident = ids.empty() ? static_cast<Index>(k) : ids[k];
          }
        top[static_cast<std::size_t>(pix)] = ident;
        for (int c = 0; c < 3; ++c)
          rgb[static_cast<std::size_t>(c * plane + pix)] = col[c];
      }
  };

  std::vector<Index> ids_a(static_cast<std::size_t>(n_objects));
  for (Index i = 0; i < n_objects; ++i) ids_a[static_cast<std::size_t>(i)] = i;
  std::vector<float> rgb_a, rgb_b;
  std::vector<Index> top_a, top_b;
  render(base, ids_a, rgb_a, top_a);
  render(objects_b, identity_b, rgb_b, top_b);

  std::vector<float> mask(static_cast<std::size_t>(plane));
  for (Index i = 0; i < plane; ++i)
    mask[static_cast<std::size_t>(i)] =
        top_a[static_cast<std::size_t>(i)] != top_b[static_cast<std::size_t>(i)] ? 1.0f : 0.0f;

  // photometric shift on the post image, then independent sensor noise
  const double dbright = rng.uniform(-cfg.brightness_jitter, cfg.brightness_jitter);
  const double dcontrast = rng.uniform(-cfg.contrast_jitter, cfg.contrast_jitter);
  for (auto& v : rgb_b)
    v = static_cast<float>((v - 0.5) * (1.0 + dcontrast) + 0.5 + dbright);
  if (cfg.noise_sigma > 0) {
    for (auto& v : rgb_a) v += static_cast<float>(rng.normal(0.0, cfg.noise_sigma));
    for (auto& v : rgb_b) v += static_cast<float>(rng.normal(0.0, cfg.noise_sigma));
  }
  for (auto& v : rgb_a) v = std::clamp(v, 0.0f, 1.0f);
  for (auto& v : rgb_b) v = std::clamp(v, 0.0f, 1.0f);

  BiTemporalSample s;
  s.image_a = Tensor<float>::from({3, side, side}, std::move(rgb_a));
  s.image_b = Tensor<float>::from({3, side, side}, std::move(rgb_b));
  s.mask = Tensor<float>::from({1, side, side}, std::move(mask));
  s.id = "synth" + std::to_string(index);
  s.source = SampleSource::Synthetic;
  return s;
}

inline std::vector<BiTemporalSample> generate_synthetic(const SynthConfig& cfg, Index n) {
  if (n < 1) throw std::invalid_argument("generate_synthetic: sample count must be >= 1");
  std::vector<BiTemporalSample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) out.push_back(generate_one(cfg, i));
  return out;
}

// ---------------------------------------------------------------------------
// Disk layout: A/<id>.png, B/<id>.png, label/<id>.png
// ---------------------------------------------------------------------------

inline BiTemporalSample load_sample(const std::filesystem::path& root, const std::string& id) {
  namespace fs = std::filesystem;
  const fs::path pa = root / "A" / (id + ".png");
  const fs::path pb = root / "B" / (id + ".png");
  const fs::path pl = root / "label" / (id + ".png");
  for (const auto& p : {pa, pb, pl})
    if (!fs::exists(p)) throw std::runtime_error("load_sample: missing file " + p.string());
  ImageU8 a = read_png(pa), b = read_png(pb), label = read_png(pl);
  if (a.width != b.width || a.height != b.height || a.width != label.width ||
      a.height != label.height)
    throw std::runtime_error("load_sample: dimension mismatch between " + pa.string() + " (" +
                             std::to_string(a.width) + "x" + std::to_string(a.height) + "), " +
                             pb.string() + " (" + std::to_string(b.width) + "x" +
                             std::to_string(b.height) + ") and " + pl.string() + " (" +
                             std::to_string(label.width) + "x" + std::to_string(label.height) +
                             ")");
  if (a.channels != 3 || b.channels != 3)
    throw std::runtime_error("load_sample: " + pa.string() + " and " + pb.string() +
                             " must be RGB");
  if (label.channels != 1)
    throw std::runtime_error("load_sample: label " + pl.string() + " must be single-channel");
  for (unsigned char v : label.pixels)
    if (v != 0 && v != 255)
      throw std::runtime_error("load_sample: label " + pl.string() +
                               " has non-binary value " + std::to_string(int(v)));
  BiTemporalSample s;
  s.image_a = image_to_chw(a);
  s.image_b = image_to_chw(b);
  std::vector<float> mask(label.pixels.size());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = label.pixels[i] == 255 ? 1.0f : 0.0f;
  s.mask = Tensor<float>::from({1, label.height, label.width}, std::move(mask));
  s.id = id;
  s.source = SampleSource::Disk;
  return s;
}

inline void save_sample(const std::filesystem::path& root, const BiTemporalSample& s) {
  namespace fs = std::filesystem;
  fs::create_directories(root / "A");
  fs::create_directories(root / "B");
  fs::create_directories(root / "label");
  write_png(root / "A" / (s.id + ".png"), chw_to_image(s.image_a));
  write_png(root / "B" / (s.id + ".png"), chw_to_image(s.image_b));
  write_png(root / "label" / (s.id + ".png"), chw_to_image(s.mask));
}

// ---------------------------------------------------------------------------
// Tiling
// ---------------------------------------------------------------------------

namespace data_detail {

inline Tensor<float> crop_chw(const Tensor<float>& t, Index y0, Index x0, Index h, Index w) {
  const Index C = t.dim(0), H = t.dim(1), W = t.dim(2);
  std::vector<float> buf(static_cast<std::size_t>(C * h * w));
  for (Index c = 0; c < C; ++c)
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x)
        buf[static_cast<std::size_t>((c * h + y) * w + x)] =
            t.data()[(c * H + (y0 + y)) * W + (x0 + x)];
  return Tensor<float>::from({C, h, w}, std::move(buf));
}

}  // namespace data_detail

// Deterministic grid tiling; trailing tiles anchor to the border, so the
// last tile in each axis may overlap its neighbor.
inline std::vector<BiTemporalSample> tile_sample(const BiTemporalSample& s, Index tile,
                                                 Index stride) {
  if (tile < 1 || stride < 1) throw std::invalid_argument("tile_sample: bad tile/stride");
  const Index H = s.height(), W = s.width();
  if (tile > H || tile > W)
    throw std::invalid_argument("tile_sample: tile " + std::to_string(tile) +
                                " exceeds sample size " + std::to_string(H) + "x" +
                                std::to_string(W));
  auto positions = [&](Index extent) {
    std::vector<Index> ps;
    if (extent == tile) {
      ps.push_back(0);
      return ps;
    }
    const Index count = (extent - tile + stride - 1) / stride + 1;
    for (Index i = 0; i < count; ++i) ps.push_back(std::min(i * stride, extent - tile));
    return ps;
  };
  std::vector<BiTemporalSample> out;
  const auto rows = positions(H), cols = positions(W);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < cols.size(); ++c) {
      BiTemporalSample t;
      t.image_a = data_detail::crop_chw(s.image_a, rows[r], cols[c], tile, tile);
      t.image_b = data_detail::crop_chw(s.image_b, rows[r], cols[c], tile, tile);
      t.mask = data_detail::crop_chw(s.mask, rows[r], cols[c], tile, tile);
      t.id = s.id + "_r" + std::to_string(r) + "_c" + std::to_string(c);
      t.source = s.source;
      out.push_back(std::move(t));
    }
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

struct AugmentationConfig {
  std::vector<int> rotations{0, 90, 180, 270};
  bool hflip = true;
  bool vflip = true;
  Index crop = 0;  // 0 disables cropping
  double brightness = 0.0;
  double contrast = 0.0;

  void validate() const {
    if (rotations.empty()) throw std::invalid_argument("AugmentationConfig: empty rotation set");
    for (int r : rotations)
      if (r != 0 && r != 90 && r != 180 && r != 270)
        throw std::invalid_argument("AugmentationConfig: rotations must be right angles");
    if (crop < 0) throw std::invalid_argument("AugmentationConfig: crop must be non-negative");
    if (brightness < 0 || contrast < 0)
      throw std::invalid_argument("AugmentationConfig: jitter magnitudes must be non-negative");
  }
};

namespace data_detail {

inline Tensor<float> rotate90k(const Tensor<float>& t, int quarter_turns) {
  const Index C = t.dim(0), H = t.dim(1), W = t.dim(2);
  const int k = ((quarter_turns % 4) + 4) % 4;
  if (k == 0) return t;
  const Index Ho = (k % 2 == 0) ? H : W;
  const Index Wo = (k % 2 == 0) ? W : H;
  std::vector<float> buf(static_cast<std::size_t>(C * Ho * Wo));
  for (Index c = 0; c < C; ++c)
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) {
        Index ny = 0, nx = 0;
        // counter-clockwise quarter turns
        if (k == 1) {
          ny = W - 1 - x;
          nx = y;
        } else if (k == 2) {
          ny = H - 1 - y;
          nx = W - 1 - x;
        } else {
          ny = x;
          nx = H - 1 - y;
        }
        buf[static_cast<std::size_t>((c * Ho + ny) * Wo + nx)] =
            t.data()[(c * H + y) * W + x];
      }
  return Tensor<float>::from({C, Ho, Wo}, std::move(buf));
}

inline Tensor<float> flip(const Tensor<float>& t, bool horizontal, bool vertical) {
  if (!horizontal && !vertical) return t;
  const Index C = t.dim(0), H = t.dim(1), W = t.dim(2);
  std::vector<float> buf(static_cast<std::size_t>(C * H * W));
  for (Index c = 0; c < C; ++c)
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) {
        const Index ny = vertical ? H - 1 - y : y;
        const Index nx = horizontal ? W - 1 - x : x;
        buf[static_cast<std::size_t>((c * H + ny) * W + nx)] = t.data()[(c * H + y) * W + x];
      }
  return Tensor<float>::from({C, H, W}, std::move(buf));
}

}  // namespace data_detail

// One rotation, optional flips, one crop applied identically to both images
// and the mask; photometric jitter on the images only. Deterministic in the
// seed.
inline BiTemporalSample augment(const BiTemporalSample& s, const AugmentationConfig& cfg,
                                std::uint64_t seed) {
  cfg.validate();
  if (cfg.crop > 0 && (cfg.crop > s.height() || cfg.crop > s.width()))
    throw std::invalid_argument("augment: crop " + std::to_string(cfg.crop) +
                                " exceeds sample size");
  RandomSource rng(seed);
  const int rot = cfg.rotations[static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<std::int64_t>(cfg.rotations.size()) - 1))];
  const bool hf = cfg.hflip && rng.uniform() < 0.5;
  const bool vf = cfg.vflip && rng.uniform() < 0.5;

  auto geometric = [&](const Tensor<float>& t) {
    return data_detail::flip(data_detail::rotate90k(t, rot / 90), hf, vf);
  };
  Tensor<float> a = geometric(s.image_a);
  Tensor<float> b = geometric(s.image_b);
  Tensor<float> m = geometric(s.mask);

  if (cfg.crop > 0 && (cfg.crop < a.dim(1) || cfg.crop < a.dim(2))) {
    const Index y0 = rng.uniform_int(0, a.dim(1) - cfg.crop);
    const Index x0 = rng.uniform_int(0, a.dim(2) - cfg.crop);
    a = data_detail::crop_chw(a, y0, x0, cfg.crop, cfg.crop);
    b = data_detail::crop_chw(b, y0, x0, cfg.crop, cfg.crop);
    m = data_detail::crop_chw(m, y0, x0, cfg.crop, cfg.crop);
  }

  auto jitter = [&](Tensor<float> img) {
    if (cfg.brightness == 0 && cfg.contrast == 0) return img;
    const double db = rng.uniform(-cfg.brightness, cfg.brightness);
    const double dc = rng.uniform(-cfg.contrast, cfg.contrast);
    std::vector<float> buf(img.elems().begin(), img.elems().end());
    for (auto& v : buf)
      v = std::clamp(static_cast<float>((v - 0.5) * (1.0 + dc) + 0.5 + db), 0.0f, 1.0f);
    return Tensor<float>::from(img.shape(), std::move(buf));
  };

  BiTemporalSample out;
  out.image_a = jitter(a);
  out.image_b = jitter(b);
  out.mask = m;
  out.id = s.id;
  out.source = s.source;
  return out;
}

// ---------------------------------------------------------------------------
// Manifests
// ---------------------------------------------------------------------------

struct ManifestEntry {
  std::string id;
  std::string split;  // train | val | test
  std::int64_t synth_index = -1;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;

  std::vector<std::string> ids_for(const std::string& split) const {
    std::vector<std::string> out;
    for (const auto& e : entries)
      if (e.split == split) out.push_back(e.id);
    return out;
  }

  void validate() const {
    std::set<std::string> seen;
    for (const auto& e : entries) {
      if (!seen.insert(e.id).second)
        throw std::invalid_argument("DatasetManifest: duplicate id " + e.id);
      if (e.split != "train" && e.split != "val" && e.split != "test")
        throw std::invalid_argument("DatasetManifest: unknown split " + e.split + " for " + e.id);
    }
  }
};

inline void to_json(nlohmann::json& j, const DatasetManifest& m) {
  j = nlohmann::json::array();
  for (const auto& e : m.entries)
    j.push_back({{"id", e.id}, {"split", e.split}, {"synth_index", e.synth_index}});
}

inline void from_json(const nlohmann::json& j, DatasetManifest& m) {
  m.entries.clear();
  for (const auto& e : j) {
    ManifestEntry entry;
    entry.id = e.at("id").get<std::string>();
    entry.split = e.at("split").get<std::string>();
    entry.synth_index = e.value("synth_index", std::int64_t(-1));
    m.entries.push_back(std::move(entry));
  }
  m.validate();
}

inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_manifest: cannot write " + path.string());
  nlohmann::json j = m;
  out << j.dump(2) << "\n";
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_manifest: cannot open " + path.string());
  return nlohmann::json::parse(in).get<DatasetManifest>();
}

// Seeded shuffle then contiguous split; train and val take the floor of
// their fraction, test takes the remainder.
inline DatasetManifest split_manifest(std::vector<std::string> ids,
                                      const std::array<double, 3>& fractions,
                                      std::uint64_t seed) {
  const double sum = fractions[0] + fractions[1] + fractions[2];
  if (std::fabs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("split_manifest: fractions must sum to 1");
  RandomSource rng(seed);
  for (std::size_t i = ids.size(); i > 1; --i)
    std::swap(ids[i - 1], ids[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
  const Index n = static_cast<Index>(ids.size());
  const Index n_train = static_cast<Index>(std::floor(fractions[0] * n));
  const Index n_val = static_cast<Index>(std::floor(fractions[1] * n));
  DatasetManifest m;
  for (Index i = 0; i < n; ++i) {
    ManifestEntry e;
    e.id = ids[static_cast<std::size_t>(i)];
    e.split = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
    m.entries.push_back(std::move(e));
  }
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// Feature-map dumps (one grayscale PNG per channel, min-max normalized)
// ---------------------------------------------------------------------------

// For BCHW input, the first batch element is dumped.
inline void dump_feature_png(const Tensor<float>& feature, const std::filesystem::path& dir,
                             const std::string& prefix) {
  if (feature.rank() != 4 && feature.rank() != 3)
    throw std::invalid_argument("dump_feature_png: expected CHW or BCHW feature");
  const Index C = feature.rank() == 4 ? feature.dim(1) : feature.dim(0);
  const Index H = feature.rank() == 4 ? feature.dim(2) : feature.dim(1);
  const Index W = feature.rank() == 4 ? feature.dim(3) : feature.dim(2);
  std::filesystem::create_directories(dir);
  for (Index c = 0; c < C; ++c) {
    const float* plane = feature.data() + c * H * W;
    float lo = plane[0], hi = plane[0];
    for (Index i = 0; i < H * W; ++i) {
      lo = std::min(lo, plane[i]);
      hi = std::max(hi, plane[i]);
    }
    const float span = hi - lo > 1e-12f ? hi - lo : 1.0f;
    std::vector<float> norm(static_cast<std::size_t>(H * W));
    for (Index i = 0; i < H * W; ++i) norm[static_cast<std::size_t>(i)] = (plane[i] - lo) / span;
    write_png(dir / (prefix + "_c" + std::to_string(c) + ".png"),
              chw_to_image(Tensor<float>::from({1, H, W}, std::move(norm))));
  }
}

}  // namespace lsat
