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

#include <map>
#include <string>

#include "varlora/tensor.hpp"

namespace varlora {

enum class Schedule { kLinear, kConstant };

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  Schedule schedule = Schedule::kLinear;
};

/// Learning rate at a 0-based step. Linear decays to 0 at total_steps.
double scheduled_lr(const AdamConfig& config, std::size_t step, std::size_t total_steps);

/// Adam with decoupled weight decay. State is keyed by parameter name.
class AdamW {
 public:
  explicit AdamW(AdamConfig config) : config_(config) {}

  void begin_step() { ++t_; }
  void apply(const std::string& key, Tensor& param, const Tensor& grad, double lr,
             bool decay = true);
  std::size_t steps() const { return t_; }

 private:
  AdamConfig config_;
  std::size_t t_ = 0;
  std::map<std::string, Tensor> m_;
  std::map<std::string, Tensor> v_;
};

}  // namespace varlora
