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

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "edpc/layers.hpp"
#include "edpc/tensor.hpp"

namespace edpc {

inline constexpr std::size_t kVocab = 256;
inline constexpr double kLayerNormEps = 1e-5;

// Hyperparameters of the predictor. Everything here is recorded in the
// container header, so a decoder can rebuild the identical model.
struct ModelConfig {
  std::uint32_t context_len = 16;
  std::uint32_t embed_dim = 16;
  std::uint32_t hidden_local = 2048;
  std::uint32_t hidden_global = 4096;
  std::uint32_t lte_ratio = 4;
  std::uint32_t branches = 2;
  std::uint32_t lanes = 64;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;

  std::size_t feature_dim() const { return std::size_t{context_len} * embed_dim; }
  std::size_t latent_dim() const { return feature_dim() / lte_ratio; }
  AdamConfig adam() const { return {lr, beta1, beta2, adam_eps}; }

  // Throws std::invalid_argument naming the first violated constraint.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Residual block: LN -> k parallel linears -> elementwise product -> GeLU ->
// output linear -> + input.
class MbrbBlock {
 public:
  struct Cache {
    LayerNormCache ln;
    Tensor2 normalized;               // LN output, input of every branch
    std::vector<Tensor2> branches;    // X_1 .. X_k
    std::vector<Tensor2> partial;     // X_1 ⊙ .. ⊙ X_i, partial[k-1] is the fused tensor
    Tensor2 activated;                // GeLU(fused)
    Tensor2 input;                    // skip path
  };

  MbrbBlock(std::size_t features, std::size_t hidden, std::size_t branches, Rng& rng);

  Tensor2 forward(const Tensor2& x, Cache& cache) const;
  Tensor2 backward(const Cache& cache, const Tensor2& upstream);

  std::size_t features() const { return ln_gain_.value.cols(); }
  std::size_t hidden() const { return out_w_.value.rows(); }
  std::size_t branch_count() const { return branch_w_.size(); }

  void append_parameters(std::vector<Parameter*>& out);
  void append_parameters(std::vector<const Parameter*>& out) const;
  std::size_t param_count() const;
  static std::size_t param_count(std::size_t features, std::size_t hidden, std::size_t branches);

  Parameter& out_weight() { return out_w_; }
  Parameter& out_bias() { return out_b_; }
  Parameter& branch_weight(std::size_t i) { return branch_w_.at(i); }
  Parameter& branch_bias(std::size_t i) { return branch_b_.at(i); }
  Parameter& ln_gain() { return ln_gain_; }
  Parameter& ln_bias() { return ln_bias_; }

 private:
  Parameter ln_gain_;
  Parameter ln_bias_;
  std::vector<Parameter> branch_w_;
  std::vector<Parameter> branch_b_;
  Parameter out_w_;
  Parameter out_b_;
};

// Down-projection to F/r, one learnable F'xF' matrix per lane (the FDM),
// up-projection back to F.
class LteBlock {
 public:
  struct Cache {
    Tensor2 input;
    Tensor2 latent;       // X'
    Tensor2 transformed;  // Y
  };

  LteBlock(std::size_t features, std::size_t ratio, std::size_t lanes, Rng& rng);

  Tensor2 forward(const Tensor2& x, Cache& cache) const;
  Tensor2 backward(const Cache& cache, const Tensor2& upstream);

  std::size_t features() const { return w1_.value.rows(); }
  std::size_t latent() const { return w1_.value.cols(); }
  std::size_t lanes() const { return fdm_.value.rows() / latent(); }

  void append_parameters(std::vector<Parameter*>& out);
  void append_parameters(std::vector<const Parameter*>& out) const;
  std::size_t param_count() const;
  static std::size_t param_count(std::size_t features, std::size_t ratio, std::size_t lanes);
  // FDM alone, and the dense per-lane FxF alternative it replaces.
  static std::size_t fdm_param_count(std::size_t features, std::size_t ratio, std::size_t lanes);
  static std::size_t full_fdm_param_count(std::size_t features, std::size_t lanes);

  Parameter& w1() { return w1_; }
  Parameter& b1() { return b1_; }
  Parameter& fdm() { return fdm_; }
  Parameter& w2() { return w2_; }
  Parameter& b2() { return b2_; }

 private:
  Parameter w1_;
  Parameter b1_;
  Parameter fdm_;
  Parameter w2_;
  Parameter b2_;
};

struct ParamCounts {
  std::size_t embedding = 0;
  std::size_t local = 0;
  std::size_t lte = 0;
  std::size_t global = 0;
  std::size_t head = 0;
  std::size_t total = 0;
};

// Closed-form counts for a configuration; with_lte=false swaps the LTE for a
// single dense FxF linear layer.
ParamCounts param_counts(const ModelConfig& cfg, bool with_lte = true);

class EdpcModel;

// Everything train_step needs from the preceding predict.
struct ModelCache {
  std::uint64_t version = 0;
  std::vector<std::uint8_t> contexts;
  Tensor2 embedded;
  MbrbBlock::Cache local;
  LteBlock::Cache lte;
  MbrbBlock::Cache global;
  Tensor2 head_input;  // global block output
};

struct Prediction {
  Tensor2 probs;  // lanes x 256
  ModelCache cache;
};

// embedding -> local MBRB -> LTE -> global MBRB -> linear head -> softmax.
class EdpcModel {
 public:
  explicit EdpcModel(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }

  // contexts: lanes rows of context_len bytes, row-major.
  Prediction predict(std::span<const std::uint8_t> contexts) const;
  // One backward pass and one Adam step on every parameter; returns the loss
  // in nats. The cache must come from predict on the current parameters.
  double train_step(const Prediction& prediction, std::span<const std::uint8_t> targets);
  // The backward half of train_step: adds the loss gradient to every
  // parameter's grad and returns the loss, leaving the values untouched.
  double accumulate_gradients(const Prediction& prediction, std::span<const std::uint8_t> targets);

  ParamCounts param_count() const;
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  // FNV-1a over the bytes of every parameter value.
  std::uint64_t checksum() const;
  std::uint64_t version() const { return version_; }

  Parameter& embedding() { return embedding_; }
  MbrbBlock& local() { return local_; }
  LteBlock& lte() { return lte_; }
  MbrbBlock& global() { return global_; }
  Parameter& head_weight() { return head_w_; }
  Parameter& head_bias() { return head_b_; }

 private:
  EdpcModel(const ModelConfig& cfg, Rng&& rng);

  ModelConfig cfg_;
  Parameter embedding_;
  MbrbBlock local_;
  LteBlock lte_;
  MbrbBlock global_;
  Parameter head_w_;
  Parameter head_b_;
  std::uint64_t version_ = 0;
};

}  // namespace edpc
