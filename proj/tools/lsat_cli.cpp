// Command-line entry point: dataset synthesis, training, evaluation,
// prediction, cost profiling, and gradient checking.
//
// Exit codes: 0 success, 1 validation/usage error, 2 runtime failure.
#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "lsat/data.hpp"
#include "lsat/gradcheck_suite.hpp"
#include "lsat/metrics.hpp"
#include "lsat/network.hpp"
#include "lsat/optim.hpp"
#include "lsat/profiler.hpp"
#include "lsat/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lsat;

namespace {

// ---------------------------------------------------------------------------
// Run configuration: one JSON file, unknown keys rejected with their path.
// Defaults follow the training recipe (lr 1e-4, wd 5e-4, betas 0.9/0.99).
// ---------------------------------------------------------------------------

struct RunConfig {
  LsatConfig model;
  LossConfig loss;
  AdamWConfig optim;
  AugmentationConfig augment;
  SynthConfig synth;
  std::array<double, 3> split{0.7, 0.15, 0.15};
  int epochs = 300;
  Index batch_size = 4;
  std::uint64_t seed = 1;
  double threshold = 0.5;
  bool augment_enabled = true;
};

void require_keys(const json& j, const std::string& path,
                  std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw std::invalid_argument("config: " + path + " must be an object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || key == a;
    if (!known) throw std::invalid_argument("config: unknown key '" + path + "." + key + "'");
  }
}

template <typename T>
void read_field(const json& j, const std::string& path, const char* key, T& into) {
  if (!j.contains(key)) return;
  try {
    j.at(key).get_to(into);
  } catch (const json::exception& e) {
    throw std::invalid_argument("config: bad value at '" + path + "." + key + "': " + e.what());
  }
}

ObjectKind parse_kind(const std::string& s, const std::string& path) {
  if (s == "rectangle") return ObjectKind::Rectangle;
  if (s == "ellipse") return ObjectKind::Ellipse;
  if (s == "triangle") return ObjectKind::Triangle;
  throw std::invalid_argument("config: unknown object kind '" + s + "' at " + path);
}

ChangeOp parse_change_op(const std::string& s, const std::string& path) {
  if (s == "add") return ChangeOp::Add;
  if (s == "remove") return ChangeOp::Remove;
  if (s == "recolor") return ChangeOp::Recolor;
  throw std::invalid_argument("config: unknown change op '" + s + "' at " + path);
}

RunConfig load_run_config(const std::optional<std::string>& path) {
  RunConfig cfg;
  if (!path) {
    cfg.model.validate();
    return cfg;
  }
  std::ifstream in(*path);
  if (!in) throw std::invalid_argument("config: cannot open " + *path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw std::invalid_argument("config: " + *path + " is not valid JSON: " + e.what());
  }
  require_keys(j, "config", {"model", "loss", "optim", "train", "augment", "synth", "split"});

  if (j.contains("model")) {
    const auto& m = j.at("model");
    require_keys(m, "config.model",
                 {"stage_channels", "stage_depths", "tile", "lambda_ratio", "normalize_lambdas",
                  "head_mid_channels", "qkv_kernel", "simam_lambda"});
    read_field(m, "config.model", "stage_channels", cfg.model.stage_channels);
    read_field(m, "config.model", "stage_depths", cfg.model.stage_depths);
    read_field(m, "config.model", "tile", cfg.model.tile);
    read_field(m, "config.model", "lambda_ratio", cfg.model.lambda_ratio);
    read_field(m, "config.model", "normalize_lambdas", cfg.model.normalize_lambdas);
    read_field(m, "config.model", "head_mid_channels", cfg.model.head_mid_channels);
    read_field(m, "config.model", "qkv_kernel", cfg.model.qkv_kernel);
    read_field(m, "config.model", "simam_lambda", cfg.model.simam_lambda);
  }
  if (j.contains("loss")) {
    const auto& l = j.at("loss");
    require_keys(l, "config.loss", {"bce_weight", "dice_weight", "dice_smooth"});
    read_field(l, "config.loss", "bce_weight", cfg.loss.bce_weight);
    read_field(l, "config.loss", "dice_weight", cfg.loss.dice_weight);
    read_field(l, "config.loss", "dice_smooth", cfg.loss.dice_smooth);
  }
  if (j.contains("optim")) {
    const auto& o = j.at("optim");
    require_keys(o, "config.optim", {"lr", "beta1", "beta2", "weight_decay", "eps"});
    read_field(o, "config.optim", "lr", cfg.optim.lr);
    read_field(o, "config.optim", "beta1", cfg.optim.beta1);
    read_field(o, "config.optim", "beta2", cfg.optim.beta2);
    read_field(o, "config.optim", "weight_decay", cfg.optim.weight_decay);
    read_field(o, "config.optim", "eps", cfg.optim.eps);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    require_keys(t, "config.train", {"epochs", "batch_size", "seed", "threshold", "augment"});
    read_field(t, "config.train", "epochs", cfg.epochs);
    read_field(t, "config.train", "batch_size", cfg.batch_size);
    read_field(t, "config.train", "seed", cfg.seed);
    read_field(t, "config.train", "threshold", cfg.threshold);
    read_field(t, "config.train", "augment", cfg.augment_enabled);
  }
  if (j.contains("augment")) {
    const auto& a = j.at("augment");
    require_keys(a, "config.augment",
                 {"rotations", "hflip", "vflip", "crop", "brightness", "contrast"});
    read_field(a, "config.augment", "rotations", cfg.augment.rotations);
    read_field(a, "config.augment", "hflip", cfg.augment.hflip);
    read_field(a, "config.augment", "vflip", cfg.augment.vflip);
    read_field(a, "config.augment", "crop", cfg.augment.crop);
    read_field(a, "config.augment", "brightness", cfg.augment.brightness);
    read_field(a, "config.augment", "contrast", cfg.augment.contrast);
  }
  if (j.contains("synth")) {
    const auto& s = j.at("synth");
    require_keys(s, "config.synth",
                 {"canvas", "min_objects", "max_objects", "kinds", "change_ops",
                  "brightness_jitter", "contrast_jitter", "noise_sigma", "seed"});
    read_field(s, "config.synth", "canvas", cfg.synth.canvas);
    read_field(s, "config.synth", "min_objects", cfg.synth.min_objects);
    read_field(s, "config.synth", "max_objects", cfg.synth.max_objects);
    if (s.contains("kinds")) {
      cfg.synth.kinds.clear();
      for (const auto& k : s.at("kinds"))
        cfg.synth.kinds.push_back(parse_kind(k.get<std::string>(), "config.synth.kinds"));
    }
    if (s.contains("change_ops")) {
      cfg.synth.change_ops.clear();
      for (const auto& k : s.at("change_ops"))
        cfg.synth.change_ops.push_back(
            parse_change_op(k.get<std::string>(), "config.synth.change_ops"));
    }
    read_field(s, "config.synth", "brightness_jitter", cfg.synth.brightness_jitter);
    read_field(s, "config.synth", "contrast_jitter", cfg.synth.contrast_jitter);
    read_field(s, "config.synth", "noise_sigma", cfg.synth.noise_sigma);
    read_field(s, "config.synth", "seed", cfg.synth.seed);
  }
  read_field(j, "config", "split", cfg.split);

  cfg.model.validate();
  cfg.loss.validate();
  cfg.optim.validate();
  cfg.augment.validate();
  cfg.synth.validate();
  if (cfg.epochs < 1) throw std::invalid_argument("config: train.epochs must be >= 1");
  if (cfg.batch_size < 1) throw std::invalid_argument("config: train.batch_size must be >= 1");
  if (!(cfg.threshold > 0 && cfg.threshold < 1))
    throw std::invalid_argument("config: train.threshold must lie in (0, 1)");
  return cfg;
}

std::string default_out_dir() {
  const char* env = std::getenv("LSAT_OUT_DIR");
  return env ? env : "out";
}

std::vector<BiTemporalSample> load_split(const fs::path& data_dir, const std::string& split) {
  auto manifest = load_manifest(data_dir / "manifest.json");
  std::vector<BiTemporalSample> out;
  for (const auto& id : manifest.ids_for(split)) out.push_back(load_sample(data_dir, id));
  return out;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_synth(const RunConfig& cfg, const std::string& out_dir, Index n) {
  if (n < 1) throw std::invalid_argument("synth: --n must be >= 1");
  auto samples = generate_synthetic(cfg.synth, n);
  std::vector<std::string> ids;
  for (const auto& s : samples) ids.push_back(s.id);
  auto manifest = split_manifest(ids, cfg.split, cfg.synth.seed);
  for (auto& e : manifest.entries)
    e.synth_index = std::stoll(e.id.substr(5));  // ids are "synth<index>"
  const fs::path root = out_dir;
  for (const auto& s : samples) save_sample(root, s);
  save_manifest(manifest, root / "manifest.json");
  std::cout << "wrote " << samples.size() << " pairs (canvas " << cfg.synth.canvas << ", seed "
            << cfg.synth.seed << ") to " << root.string() << " [train/val/test = "
            << manifest.ids_for("train").size() << "/" << manifest.ids_for("val").size() << "/"
            << manifest.ids_for("test").size() << "]\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& data_dir, const std::string& out_dir) {
  auto train_set = load_split(data_dir, "train");
  if (train_set.empty()) throw std::runtime_error("train: no training samples in " + data_dir);
  auto val_set = load_split(data_dir, "val");
  for (const auto& s : train_set)
    if (s.height() != cfg.model.tile || s.width() != cfg.model.tile)
      throw std::invalid_argument("train: sample " + s.id + " is " + std::to_string(s.height()) +
                                  "x" + std::to_string(s.width()) + " but model tile is " +
                                  std::to_string(cfg.model.tile));

  fs::create_directories(out_dir);
  std::ofstream log(fs::path(out_dir) / "train_log.jsonl");
  if (!log) throw std::runtime_error("train: cannot write log in " + out_dir);

  auto model = make_lsat_model<float>(cfg.model, cfg.seed);
  AdamW<float> optim(model.parameters(), cfg.optim);
  const AugmentationConfig* aug = cfg.augment_enabled ? &cfg.augment : nullptr;

  double best_score = -1e300;
  int best_epoch = -1;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double loss = train_epoch(model, train_set, optim, cfg.loss,
                                    derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)),
                                    cfg.batch_size, aug);
    json line{{"epoch", epoch}, {"loss", loss}};
    double val_f1 = -1.0;
    if (!val_set.empty()) {
      val_f1 = evaluate(model, val_set, cfg.threshold).f1;
      line["val_f1"] = val_f1;
    } else {
      line["val_f1"] = nullptr;
    }
    log << line.dump() << "\n";
    log.flush();
    std::cout << line.dump() << "\n";
    const double score = val_set.empty() ? -loss : val_f1;
    if (score > best_score) {
      best_score = score;
      best_epoch = epoch;
      save_checkpoint(model, fs::path(out_dir) / "best.ckpt",
                      {{"epoch", epoch}, {"val_f1", val_set.empty() ? json() : json(val_f1)}});
    }
  }
  save_checkpoint(model, fs::path(out_dir) / "last.ckpt", {{"epoch", cfg.epochs}});
  std::cout << "kept best checkpoint from epoch " << best_epoch << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir,
             const std::string& split, double threshold, const std::string& json_out) {
  auto model = load_checkpoint<float>(checkpoint);
  auto samples = load_split(data_dir, split);
  if (samples.empty())
    throw std::runtime_error("eval: split '" + split + "' in " + data_dir + " is empty");
  auto report = evaluate(model, samples, threshold);
  std::cout << metrics_table(report, "lsat");
  std::cout << metrics_json(report).dump() << "\n";
  if (!json_out.empty()) {
    std::ofstream out(json_out);
    if (!out) throw std::runtime_error("eval: cannot write " + json_out);
    out << metrics_json(report).dump(2) << "\n";
  }
  return 0;
}

int cmd_predict(const std::string& checkpoint, const std::string& a_path,
                const std::string& b_path, const std::string& out_path,
                const std::string& prob_path, double threshold,
                const std::string& features_dir) {
  auto model = load_checkpoint<float>(checkpoint);
  auto a_img = read_png(a_path);
  auto b_img = read_png(b_path);
  if (a_img.channels != 3 || b_img.channels != 3)
    throw std::invalid_argument("predict: inputs must be RGB images");
  if (a_img.width != b_img.width || a_img.height != b_img.height)
    throw std::invalid_argument("predict: input sizes differ: " + std::to_string(a_img.width) +
                                "x" + std::to_string(a_img.height) + " vs " +
                                std::to_string(b_img.width) + "x" + std::to_string(b_img.height));
  auto a = image_to_chw(a_img);
  auto b = image_to_chw(b_img);
  const Index tile = model.config.tile;
  const Index H = a.dim(1), W = a.dim(2);
  if (H < tile || W < tile)
    throw std::invalid_argument("predict: input " + std::to_string(W) + "x" + std::to_string(H) +
                                " is smaller than the model tile " + std::to_string(tile));

  // grid over the image, trailing tiles anchored at the border
  auto positions = [&](Index extent) {
    std::vector<Index> ps;
    if (extent == tile) return std::vector<Index>{0};
    const Index count = (extent - tile + tile - 1) / tile + 1;
    for (Index i = 0; i < count; ++i) ps.push_back(std::min(i * tile, extent - tile));
    return ps;
  };
  std::vector<float> prob_map(static_cast<std::size_t>(H * W), 0.0f);
  BiTemporalSample window;
  window.id = "window";
  for (Index y0 : positions(H))
    for (Index x0 : positions(W)) {
      window.image_a = data_detail::crop_chw(a, y0, x0, tile, tile);
      window.image_b = data_detail::crop_chw(b, y0, x0, tile, tile);
      auto [prob, mask] = predict_pair(model, window, threshold);
      for (Index y = 0; y < tile; ++y)
        for (Index x = 0; x < tile; ++x)
          prob_map[static_cast<std::size_t>((y0 + y) * W + (x0 + x))] =
              prob.data()[y * tile + x];
    }

  std::vector<float> mask(prob_map.size());
  Index changed = 0;
  for (std::size_t i = 0; i < prob_map.size(); ++i) {
    mask[i] = prob_map[i] >= static_cast<float>(threshold) ? 1.0f : 0.0f;
    changed += mask[i] != 0.0f;
  }
  if (!out_path.empty())
    write_png(out_path, chw_to_image(Tensor<float>::from({1, H, W}, std::move(mask))));
  if (!prob_path.empty())
    write_png(prob_path,
              chw_to_image(Tensor<float>::from(
                  {1, H, W}, std::vector<float>(prob_map.begin(), prob_map.end()))));
  std::cout << "change pixels: " << changed << " / " << H * W << " ("
            << 100.0 * double(changed) / double(H * W) << "%)\n";

  if (!features_dir.empty()) {
    // enhancement maps for the top-left tile
    window.image_a = data_detail::crop_chw(a, 0, 0, tile, tile);
    window.image_b = data_detail::crop_chw(b, 0, 0, tile, tile);
    std::vector<const Tensor<float>*> wa{&window.image_a}, wb{&window.image_b};
    auto xa = train_detail::stack_chw<float>(wa);
    auto xb = train_detail::stack_chw<float>(wb);
    auto feats = encode_siamese(xa, xb, model, static_cast<Tape<float>*>(nullptr));
    for (Index i = 0; i + 1 < model.config.stages(); ++i) {
      auto& saem = model.saems[static_cast<std::size_t>(i)];
      auto f1 = feats.a[static_cast<std::size_t>(i)];
      auto f2 = feats.b[static_cast<std::size_t>(i)];
      const std::string level = "level" + std::to_string(i + 1);
      auto f_diff = diff_refine(f1, f2, saem, model.simam, static_cast<Tape<float>*>(nullptr));
      auto f_a1 = aggr_path_add(f1, f2, saem, static_cast<Tape<float>*>(nullptr));
      auto f_a2 = aggr_path_concat(f1, f2, saem, model.simam, static_cast<Tape<float>*>(nullptr));
      auto f_aggr = detail_aggregate(f_a1, f_a2, model.simam);
      dump_feature_png(f_diff, features_dir, level + "_f_diff");
      dump_feature_png(f_aggr, features_dir, level + "_f_aggr");
      dump_feature_png(add(f_diff, f_aggr), features_dir, level + "_f_out");
    }
    std::cout << "wrote enhancement feature maps to " << features_dir << "\n";
  }
  return 0;
}

int cmd_profile(const RunConfig& cfg, bool attention_only, Index channels,
                const std::string& sizes_csv, const std::string& out_path) {
  if (attention_only) {
    std::vector<Index> sides;
    std::stringstream ss(sizes_csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        sides.push_back(std::stoll(item));
      } catch (...) {
        throw std::invalid_argument("profile: bad --sizes entry '" + item + "'");
      }
      if (sides.back() < 1) throw std::invalid_argument("profile: sizes must be positive");
    }
    if (sides.empty()) throw std::invalid_argument("profile: --sizes is empty");
    const std::string csv = attention_scaling_csv(channels, sides);
    if (!out_path.empty()) {
      std::ofstream out(out_path);
      if (!out) throw std::runtime_error("profile: cannot write " + out_path);
      out << csv;
    }
    std::cout << csv;
    if (sides.size() >= 2) {
      std::vector<std::pair<double, double>> cisa_pts, vanilla_pts;
      for (Index side : sides) {
        const double n = double(side) * double(side);
        cisa_pts.push_back({n, double(count_attention_macs(AttentionKind::Cisa, channels, side,
                                                           side).macs_attention_core)});
        vanilla_pts.push_back({n, double(count_attention_macs(AttentionKind::Vanilla, channels,
                                                              side, side).macs_attention_core)});
      }
      std::cout << "attention-core log-log slope vs N: cisa " << fit_loglog_slope(cisa_pts)
                << ", vanilla " << fit_loglog_slope(vanilla_pts) << "\n";
    }
    return 0;
  }
  auto model = make_lsat_model<float>(cfg.model, cfg.seed);
  auto report = cost_report_json(model);
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("profile: cannot write " + out_path);
    out << report.dump(2) << "\n";
  }
  std::cout << report.dump(2) << "\n";
  return 0;
}

int cmd_gradcheck(const std::string& scope, std::uint64_t seed) {
  auto checks = run_gradient_checks(scope, seed);
  bool all_pass = true;
  std::cout << std::left << std::setw(36) << "check" << std::setw(14) << "max_rel_err"
            << std::setw(10) << "tol" << "result\n";
  for (const auto& c : checks) {
    all_pass = all_pass && c.pass;
    std::cout << std::left << std::setw(36) << c.name << std::setw(14) << std::scientific
              << std::setprecision(3) << c.max_rel_err << std::setw(10) << c.tolerance
              << (c.pass ? "pass" : "FAIL") << "\n";
    std::cout.unsetf(std::ios::scientific);
  }
  std::cout << (all_pass ? "all gradient checks passed\n" : "gradient checks FAILED\n");
  return all_pass ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lsat: linear-attention siamese change detection"};
  app.require_subcommand(1);

  std::optional<std::string> config_path;
  app.add_option("--config", config_path, "JSON run configuration")->envname("LSAT_CONFIG");

  auto* synth = app.add_subcommand("synth", "materialize a synthetic dataset");
  std::string synth_out = default_out_dir();
  Index synth_n = 0;
  synth->add_option("--out", synth_out, "output dataset directory");
  synth->add_option("--n", synth_n, "number of pairs")->required()->check(CLI::PositiveNumber);

  auto* train = app.add_subcommand("train", "train a model on a materialized dataset");
  std::string train_data, train_out = default_out_dir();
  train->add_option("--data", train_data, "dataset directory (manifest.json + A/B/label)")
      ->required();
  train->add_option("--out", train_out, "output directory for checkpoints and logs");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  std::string eval_ckpt, eval_data, eval_split = "test", eval_json;
  double eval_threshold = 0.5;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint path")->required();
  eval->add_option("--data", eval_data, "dataset directory")->required();
  eval->add_option("--split", eval_split, "train|val|test")
      ->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("--threshold", eval_threshold, "binarization threshold");
  eval->add_option("--json", eval_json, "write the metrics report to this JSON file");

  auto* predict = app.add_subcommand("predict", "predict a change mask for one image pair");
  std::string pr_ckpt, pr_a, pr_b, pr_out, pr_prob, pr_features;
  double pr_threshold = 0.5;
  predict->add_option("--checkpoint", pr_ckpt)->required();
  predict->add_option("--a", pr_a, "pre-temporal image (PNG)")->required();
  predict->add_option("--b", pr_b, "post-temporal image (PNG)")->required();
  predict->add_option("--out", pr_out, "output mask PNG")->required();
  predict->add_option("--prob", pr_prob, "optional probability-map PNG");
  predict->add_option("--threshold", pr_threshold);
  predict->add_option("--dump-features", pr_features,
                      "dump per-level enhancement feature maps to this directory");

  auto* profile = app.add_subcommand("profile", "static MAC/FLOP and parameter accounting");
  bool attention_only = false;
  Index prof_channels = 32;
  std::string prof_sizes = "8,16,32,64", prof_out;
  profile->add_flag("--attention-only", attention_only,
                    "profile the attention kernels instead of the full model");
  profile->add_option("--channels", prof_channels, "channel count for --attention-only");
  profile->add_option("--sizes", prof_sizes, "comma-separated square sides for --attention-only");
  profile->add_option("--out", prof_out, "write the report (JSON or CSV) here too");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  std::string gc_scope = "all";
  std::uint64_t gc_seed = 1;
  gradcheck->add_option("--scope", gc_scope, "op|module|model|all")
      ->check(CLI::IsMember({"op", "module", "model", "all"}));
  gradcheck->add_option("--seed", gc_seed, "seed for the random check instances");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }

  try {
    RunConfig cfg = load_run_config(config_path);
    if (synth->parsed()) return cmd_synth(cfg, synth_out, synth_n);
    if (train->parsed()) return cmd_train(cfg, train_data, train_out);
    if (eval->parsed())
      return cmd_eval(eval_ckpt, eval_data, eval_split, eval_threshold, eval_json);
    if (predict->parsed())
      return cmd_predict(pr_ckpt, pr_a, pr_b, pr_out, pr_prob, pr_threshold, pr_features);
    if (profile->parsed())
      return cmd_profile(cfg, attention_only, prof_channels, prof_sizes, prof_out);
    if (gradcheck->parsed()) return cmd_gradcheck(gc_scope, gc_seed);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
