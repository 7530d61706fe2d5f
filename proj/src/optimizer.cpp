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

#include "varlora/optimizer.hpp"

#include <cmath>

#include "varlora/errors.hpp"

namespace varlora {

double scheduled_lr(const AdamConfig& config, std::size_t step, std::size_t total_steps) {
  if (config.schedule == Schedule::kConstant || total_steps == 0) return config.lr;
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return config.lr * std::max(0.0, 1.0 - frac);
}

void AdamW::apply(const std::string& key, Tensor& param, const Tensor& grad, double lr,
                  bool decay) {
  require_shape(param.same_shape(grad), "AdamW: gradient shape mismatch for " + key);
  require(t_ > 0, "AdamW::apply before begin_step");
  auto mit = m_.try_emplace(key, Tensor::zeros_like(param)).first;
  auto vit = v_.try_emplace(key, Tensor::zeros_like(param)).first;
  Tensor& m = mit->second;
  Tensor& v = vit->second;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double wd = decay ? config_.weight_decay : 0.0;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    m[i] = b1 * m[i] + (1.0 - b1) * g;
    v[i] = b2 * v[i] + (1.0 - b2) * g * g;
    const double mhat = m[i] / c1;
    const double vhat = v[i] / c2;
    param[i] -= lr * wd * param[i];
    param[i] -= lr * mhat / (std::sqrt(vhat) + config_.eps);
  }
}

}  // namespace varlora
