// Copyright 2026 The edpc Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "edpc/tensor.hpp"

// Forward/backward primitives for the predictor. Every backward function
// returns the gradient w.r.t. its input and accumulates (+=) into the grad
// field of the parameters it touched. Reductions run in a fixed order so that
// results are bitwise reproducible.
namespace edpc {

// out = x * w + b, with b broadcast over rows.
Tensor2 linear_forward(const Tensor2& x, const Parameter& w, const Parameter& b);
Tensor2 linear_backward(const Tensor2& x, Parameter& w, Parameter& b, const Tensor2& upstream);

struct LayerNormCache {
  Tensor2 normalized;           // (x - mean) / sqrt(var + eps), before the affine step
  std::vector<double> inv_std;  // one entry per row
};

struct LayerNormOutput {
  Tensor2 out;
  LayerNormCache cache;
};

LayerNormOutput layer_norm_forward(const Tensor2& x, const Parameter& gain, const Parameter& bias,
                                   double eps);
Tensor2 layer_norm_backward(const LayerNormCache& cache, Parameter& gain, Parameter& bias,
                            const Tensor2& upstream);

// Exact GeLU, x * Phi(x).
double gelu(double x);
double gelu_derivative(double x);

struct GeluOutput {
  Tensor2 out;
  Tensor2 input;  // cache
};

GeluOutput gelu_forward(const Tensor2& x);
Tensor2 gelu_backward(const Tensor2& input, const Tensor2& upstream);

Tensor2 hadamard_forward(const Tensor2& a, const Tensor2& b);
// Returns (grad_a, grad_b).
std::pair<Tensor2, Tensor2> hadamard_backward(const Tensor2& a, const Tensor2& b,
                                              const Tensor2& upstream);

// Row i of the result is x_i * U_i, where u stores rows(x) square matrices
// of size cols(x) stacked vertically.
Tensor2 per_row_matmul_forward(const Tensor2& x, const Parameter& u);
Tensor2 per_row_matmul_backward(const Tensor2& x, Parameter& u, const Tensor2& upstream);

// Row-wise softmax with max subtraction.
Tensor2 softmax(const Tensor2& logits);

struct CrossEntropyOutput {
  double loss = 0.0;  // mean over rows, nats
  Tensor2 probs;
  Tensor2 grad_logits;
};

CrossEntropyOutput softmax_cross_entropy(const Tensor2& logits, std::span<const std::uint8_t> targets);
// Same loss and gradient from already computed probabilities.
CrossEntropyOutput cross_entropy_from_probs(const Tensor2& probs, std::span<const std::uint8_t> targets);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam update; zeroes the gradient afterwards.
void adam_step(Parameter& p, const AdamConfig& cfg);

}  // namespace edpc
