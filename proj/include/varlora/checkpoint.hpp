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

#pragma once

// Tensor container: a magic line, one line of JSON header (metadata plus the
// ordered name -> shape manifest), then raw little-endian float64 buffers in
// manifest order.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "varlora/lora.hpp"
#include "varlora/params.hpp"
#include "varlora/tensor.hpp"

namespace varlora {

struct TensorArchive {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& at(const std::string& name) const;
};

void write_archive(const TensorArchive& archive, const std::filesystem::path& path);
TensorArchive read_archive(const std::filesystem::path& path);

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

void save_checkpoint(const ParamSet& params, const std::filesystem::path& path);
ParamSet load_checkpoint(const std::filesystem::path& path);

void save_adapters(const AdapterSet& adapters, const std::filesystem::path& path);
AdapterSet load_adapters(const std::filesystem::path& path);

/// FNV-1a over the file bytes, hex encoded.
std::string file_digest(const std::filesystem::path& path);

}  // namespace varlora
