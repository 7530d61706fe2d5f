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

// Linear-tape reverse-mode differentiation over Tensor values.
//
// Every primitive appends one node holding its forward value and a closure
// that pushes the output gradient to its inputs. backward() walks the tape in
// exact reverse recording order. Nodes that do not depend on a
// gradient-requiring leaf are skipped.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "varlora/tensor.hpp"

namespace varlora {

class Tape;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = std::numeric_limits<std::size_t>::max();

  const Tensor& value() const;
  bool valid() const { return tape != nullptr; }
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf node. Parameters pass requires_grad = true.
  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  /// Gradient of the last backward() target w.r.t. v; zeros when v is not on
  /// any path to the loss.
  Tensor grad(Var v) const;

  /// Reverse sweep from a scalar node. Throws ContractError on non-scalars.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

  // Used by primitive implementations.
  using Backprop = std::function<void(Tape&, const Tensor& out_grad)>;
  Var record(Tensor value, std::vector<std::size_t> inputs, Backprop fn);
  void accumulate(std::size_t id, const Tensor& g);
  Tensor& grad_slot(std::size_t id);
  bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    std::vector<std::size_t> inputs;
    Backprop backprop;
  };
  std::vector<Node> nodes_;
};

// ---- primitives -----------------------------------------------------------

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double s);
Var mul(Var a, Var b);
Var gelu(Var a);
/// Row-wise softmax with per-row max subtraction. With causal = true, entry
/// (i, j) for j > i is excluded (probability exactly 0).
Var softmax_rows(Var a, bool causal = false);
Var embedding(Var table, std::span<const int> ids);
/// Per-row normalization: (x - mean) / sqrt(var + eps) * gain + bias, with
/// gain and bias of shape {1, d}.
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
/// Per-row negative log-softmax at the target column, shape {N, 1}.
Var cross_entropy_rows(Var logits, std::span<const int> targets);
Var slice_rows(Var a, std::size_t begin, std::size_t end);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var reshape(Var a, std::vector<std::size_t> shape);
/// out(i, 0) = a(i, cols[i]).
Var gather_cols(Var a, std::span<const int> cols);
/// out[s] = sum over rows i with segment[i] == s of weight[i] * a(i, 0).
/// Rows with segment -1 are ignored. Output shape {n_segments, 1}.
Var segment_sum(Var a, std::span<const int> segment, std::span<const double> weight,
                std::size_t n_segments);
Var log_sigmoid(Var a);
/// Sum of all entries, shape {1}.
Var sum(Var a);

/// Mean masked next-token cross-entropy. An all-false mask yields a zero
/// loss node and sets empty_mask.
struct MaskedLoss {
  Var loss;
  bool empty_mask = false;
};
MaskedLoss cross_entropy_logits(Var logits, std::span<const int> targets,
                                std::span<const std::uint8_t> mask);

}  // namespace varlora
