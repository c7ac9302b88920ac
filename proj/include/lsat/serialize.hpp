// Flat binary tensor container used for checkpoints.
//
// Layout:
//   bytes 0..7    magic "LSTENS01"
//   bytes 8..15   u64 little-endian JSON header length
//   header        UTF-8 JSON: {"tensors": [{"name": str, "dtype": "f32"|"f64",
//                 "shape": [ints], "offset": u64, "nbytes": u64}, ...]}
//   payload       raw little-endian buffers; offsets are relative to the
//                 payload start (16 + header length)
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lsat/tensor.hpp"

namespace lsat {

static_assert(std::endian::native == std::endian::little,
              "tensor container IO assumes a little-endian host");

template <typename S>
const char* dtype_name();
template <>
inline const char* dtype_name<float>() { return "f32"; }
template <>
inline const char* dtype_name<double>() { return "f64"; }

template <typename S>
void save_tensors(const std::filesystem::path& path,
                  const std::vector<std::pair<std::string, Tensor<S>>>& entries) {
  nlohmann::json header;
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, tensor] : entries) {
    const std::uint64_t nbytes = static_cast<std::uint64_t>(tensor.size()) * sizeof(S);
    header["tensors"].push_back({{"name", name},
                                 {"dtype", dtype_name<S>()},
                                 {"shape", tensor.shape()},
                                 {"offset", offset},
                                 {"nbytes", nbytes}});
    offset += nbytes;
  }
  const std::string hs = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("save_tensors: cannot open " + path.string());
  out.write("LSTENS01", 8);
  const std::uint64_t hlen = hs.size();
  out.write(reinterpret_cast<const char*>(&hlen), 8);
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& [name, tensor] : entries)
    out.write(reinterpret_cast<const char*>(tensor.data()),
              static_cast<std::streamsize>(tensor.size() * sizeof(S)));
  if (!out) throw std::runtime_error("save_tensors: write failed for " + path.string());
}

template <typename S>
std::vector<std::pair<std::string, Tensor<S>>> load_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_tensors: cannot open " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "LSTENS01", 8) != 0)
    throw std::runtime_error("load_tensors: " + path.string() + " is not a tensor container");
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), 8);
  std::string hs(hlen, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw std::runtime_error("load_tensors: truncated header in " + path.string());
  nlohmann::json header = nlohmann::json::parse(hs);
  const std::uint64_t payload_start = 16 + hlen;
  std::vector<std::pair<std::string, Tensor<S>>> out;
  for (const auto& e : header.at("tensors")) {
    const std::string name = e.at("name").get<std::string>();
    const std::string dtype = e.at("dtype").get<std::string>();
    if (dtype != dtype_name<S>())
      throw std::runtime_error("load_tensors: tensor '" + name + "' has dtype " + dtype +
                               ", expected " + dtype_name<S>());
    Shape shape = e.at("shape").get<Shape>();
    const std::uint64_t offset = e.at("offset").get<std::uint64_t>();
    const std::uint64_t nbytes = e.at("nbytes").get<std::uint64_t>();
    if (nbytes != static_cast<std::uint64_t>(numel(shape)) * sizeof(S))
      throw std::runtime_error("load_tensors: byte count mismatch for '" + name + "'");
    std::vector<S> buf(static_cast<std::size_t>(numel(shape)));
    in.seekg(static_cast<std::streamoff>(payload_start + offset));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(nbytes));
    if (!in) throw std::runtime_error("load_tensors: truncated payload for '" + name + "'");
    out.emplace_back(name, Tensor<S>::from(std::move(shape), std::move(buf)));
  }
  return out;
}

}  // namespace lsat
