// Copyright 2026 The varlora Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "varlora/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "varlora/errors.hpp"

namespace varlora {

namespace {

constexpr const char* kMagic = "VARLORA-TENSORS 1";

std::uint64_t to_little_endian(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  std::uint64_t out = 0;
  for (int i = 0; i < 8; ++i) out |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
  return out;
}

}  // namespace

const Tensor& TensorArchive::at(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw ContractError("archive has no tensor '" + name + "'");
}

void write_archive(const TensorArchive& archive, const std::filesystem::path& path) {
  nlohmann::json header{{"meta", archive.meta}, {"tensors", nlohmann::json::array()}};
  for (const auto& [name, t] : archive.tensors)
    header["tensors"].push_back({{"name", name}, {"shape", t.shape()}});
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), "cannot write " + path.string());
  os << kMagic << '\n' << header.dump() << '\n';
  for (const auto& [_, t] : archive.tensors) {
    for (double v : t.raw()) {
      std::uint64_t bits = to_little_endian(std::bit_cast<std::uint64_t>(v));
      os.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  }
  require(static_cast<bool>(os), "write failed for " + path.string());
}

TensorArchive read_archive(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), "cannot read " + path.string());
  std::string line;
  std::getline(is, line);
  require(line == kMagic, "not a tensor archive: " + path.string());
  std::getline(is, line);
  const auto header = nlohmann::json::parse(line);
  TensorArchive a;
  a.meta = header.at("meta");
  for (const auto& entry : header.at("tensors")) {
    Tensor t(entry.at("shape").get<std::vector<std::size_t>>());
    for (double& v : t.raw()) {
      std::uint64_t bits = 0;
      is.read(reinterpret_cast<char*>(&bits), sizeof bits);
      require(static_cast<bool>(is), "truncated tensor data in " + path.string());
      v = std::bit_cast<double>(to_little_endian(bits));
    }
    a.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
  }
  return a;
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"embed_dim", c.embed_dim},
          {"n_layers", c.n_layers},     {"n_heads", c.n_heads},
          {"context_len", c.context_len}, {"seed", c.seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.context_len = j.value("context_len", c.context_len);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

void save_checkpoint(const ParamSet& params, const std::filesystem::path& path) {
  TensorArchive a;
  a.meta = {{"kind", "checkpoint"}, {"config", to_json(params.config)}};
  for (const auto& [name, t] : params.tensors) a.tensors.emplace_back(name, t);
  write_archive(a, path);
}

ParamSet load_checkpoint(const std::filesystem::path& path) {
  TensorArchive a = read_archive(path);
  require(a.meta.value("kind", "") == "checkpoint", path.string() + " is not a checkpoint");
  ParamSet p;
  p.config = model_config_from_json(a.meta.at("config"));
  const auto shapes = param_shapes(p.config);
  for (auto& [name, t] : a.tensors) {
    auto it = shapes.find(name);
    require(it != shapes.end(), "unexpected tensor '" + name + "' in checkpoint");
    require_shape(it->second == t.shape(), "checkpoint shape mismatch for " + name);
    p.tensors.emplace(name, std::move(t));
  }
  require(p.tensors.size() == shapes.size(), "checkpoint is missing tensors");
  return p;
}

void save_adapters(const AdapterSet& adapters, const std::filesystem::path& path) {
  TensorArchive a;
  nlohmann::json sigma = nlohmann::json::object();
  for (const auto& [name, p] : adapters) {
    a.tensors.emplace_back(name + ".B", p.B);
    a.tensors.emplace_back(name + ".A", p.A);
    sigma[name] = p.sigma;
  }
  a.meta = {{"kind", "adapters"}, {"sigma", sigma}};
  write_archive(a, path);
}

AdapterSet load_adapters(const std::filesystem::path& path) {
  TensorArchive a = read_archive(path);
  require(a.meta.value("kind", "") == "adapters", path.string() + " is not an adapter file");
  AdapterSet out;
  for (const auto& [name, sigma] : a.meta.at("sigma").items()) {
    AdapterPair p{a.at(name + ".B"), a.at(name + ".A"), sigma.get<double>()};
    out.emplace(name, std::move(p));
  }
  return out;
}

std::string file_digest(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), "cannot read " + path.string());
  std::uint64_t h = 1469598103934665603ull;
  char buf[4096];
  while (is.read(buf, sizeof buf) || is.gcount() > 0) {
    for (std::streamsize i = 0; i < is.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace varlora
