// Regenerates the checked-in golden files. Run manually after an intentional
// numeric change, then review the diff:
//   ./lsat_make_goldens <repo>/tests/golden
#include <fstream>
#include <iostream>
#include <vector>

#include <json.hpp>

#include "lsat/network.hpp"
#include "lsat/random.hpp"

using namespace lsat;

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: lsat_make_goldens <golden-dir>\n";
    return 1;
  }
  const std::filesystem::path dir = argv[1];
  std::filesystem::create_directories(dir);

  LsatConfig cfg;
  cfg.stage_channels = {4, 8, 16, 32};
  cfg.stage_depths = {1, 1, 1, 1};
  cfg.tile = 32;

  const std::uint64_t model_seed = 7, input_seed = 9;
  auto model = make_lsat_model<float>(cfg, model_seed);
  RandomSource rng(input_seed);
  auto xa = rand_uniform<float>({1, 3, cfg.tile, cfg.tile}, rng);
  auto xb = rand_uniform<float>({1, 3, cfg.tile, cfg.tile}, rng);
  auto logits = lsat_forward(xa, xb, model, nullptr);

  nlohmann::json j;
  j["config"] = cfg;
  j["model_seed"] = model_seed;
  j["input_seed"] = input_seed;
  j["logits"] = std::vector<float>(logits.elems().begin(), logits.elems().end());
  std::ofstream out(dir / "tiny_logits.json");
  out << j.dump() << "\n";
  std::cout << "wrote " << (dir / "tiny_logits.json") << "\n";
  return 0;
}
