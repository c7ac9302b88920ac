#include <filesystem>
#include <vector>

#include "doctest.h"
#include "lsat/network.hpp"
#include "lsat/serialize.hpp"
#include "oracles.hpp"

using namespace lsat;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("lsat_ser_test_" + std::to_string(std::rand()) + std::to_string(std::rand()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_SUITE("serialize") {

TEST_CASE("tensor container round trip preserves names, shapes, and bits") {
  TempDir dir;
  RandomSource rng(81);
  std::vector<std::pair<std::string, Tensor<double>>> entries{
      {"alpha", randn<double>({2, 3}, rng)},
      {"beta.weight", randn<double>({4, 1, 3, 3}, rng)},
      {"gamma", Tensor<double>::scalar(-2.5)},
  };
  save_tensors(dir.path / "t.bin", entries);
  auto loaded = load_tensors<double>(dir.path / "t.bin");
  REQUIRE(loaded.size() == entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    CHECK(loaded[i].first == entries[i].first);
    CHECK(loaded[i].second.shape() == entries[i].second.shape());
    CHECK(oracle::to_vec(loaded[i].second) == oracle::to_vec(entries[i].second));
  }
}

TEST_CASE("container rejects wrong dtype and foreign files") {
  TempDir dir;
  RandomSource rng(82);
  save_tensors<double>(dir.path / "d.bin", {{"x", randn<double>({3}, rng)}});
  CHECK_THROWS_WITH_AS(load_tensors<float>(dir.path / "d.bin"), doctest::Contains("dtype"),
                       std::runtime_error);

  std::ofstream junk(dir.path / "junk.bin", std::ios::binary);
  junk << "definitely not a tensor container";
  junk.close();
  CHECK_THROWS_AS(load_tensors<double>(dir.path / "junk.bin"), std::runtime_error);
  CHECK_THROWS_AS(load_tensors<double>(dir.path / "absent.bin"), std::runtime_error);
}

TEST_CASE("checkpoint round trip restores identical logits") {
  TempDir dir;
  LsatConfig cfg;
  cfg.stage_channels = {4, 8, 16};
  cfg.stage_depths = {1, 1, 1};
  cfg.tile = 16;
  auto model = make_lsat_model<float>(cfg, 33);
  RandomSource rng(34);
  auto xa = rand_uniform<float>({1, 3, 16, 16}, rng);
  auto xb = rand_uniform<float>({1, 3, 16, 16}, rng);
  auto before = lsat_forward(xa, xb, model, nullptr);

  save_checkpoint(model, dir.path / "model.ckpt", {{"epoch", 7}});
  auto restored = load_checkpoint<float>(dir.path / "model.ckpt");
  auto after = lsat_forward(xa, xb, restored, nullptr);
  CHECK(std::vector<float>(before.elems().begin(), before.elems().end()) ==
        std::vector<float>(after.elems().begin(), after.elems().end()));

  // sidecar carries config + seed + metadata
  std::ifstream side(checkpoint_sidecar(dir.path / "model.ckpt"));
  auto j = nlohmann::json::parse(side);
  CHECK(j.at("seed").get<std::uint64_t>() == 33);
  CHECK(j.at("metadata").at("epoch").get<int>() == 7);
  CHECK(j.at("config").get<LsatConfig>().tile == 16);

  // loading into a double model is a dtype error
  CHECK_THROWS_WITH_AS(load_checkpoint<double>(dir.path / "model.ckpt"),
                       doctest::Contains("dtype"), std::runtime_error);
}

}  // TEST_SUITE
