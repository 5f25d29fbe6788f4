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

#include "edpc/model.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>

namespace edpc {
namespace {

constexpr std::uint32_t kMaxDim = 1u << 16;
constexpr std::size_t kMaxParams = std::size_t{1} << 25;

Parameter make_uniform(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
  Parameter p(rows, cols);
  init_uniform(p, bound, rng);
  return p;
}

double fan_in_bound(std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

Tensor2 add(const Tensor2& a, const Tensor2& b) {
  Tensor2 out = a;
  auto o = out.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  return out;
}

void fnv1a(std::uint64_t& h, const Tensor2& t) {
  for (double d : t.values()) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &d, sizeof(double));
    for (unsigned char c : bytes) {
      h ^= c;
      h *= 0x100000001B3ULL;
    }
  }
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("invalid model config: " + msg); };
  if (context_len < 1 || context_len > kMaxDim) fail("context length must be in [1, 65536]");
  if (embed_dim < 1 || embed_dim > kMaxDim) fail("embedding dim must be in [1, 65536]");
  if (hidden_local < 1 || hidden_local > kMaxDim) fail("local hidden dim must be in [1, 65536]");
  if (hidden_global < 1 || hidden_global > kMaxDim) fail("global hidden dim must be in [1, 65536]");
  if (branches < 1 || branches > 8) fail("branch count must be in [1, 8]");
  if (lanes < 1 || lanes > kMaxDim) fail("lane count must be in [1, 65536]");
  if (lte_ratio < 1) fail("lte ratio must be >= 1");
  if (feature_dim() % lte_ratio != 0) fail("lte ratio must divide context_len * embed_dim");
  if (!(lr > 0.0) || !std::isfinite(lr)) fail("learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("adam betas must be in [0, 1)");
  if (!(adam_eps > 0.0) || !std::isfinite(adam_eps)) fail("adam eps must be positive");
  if (feature_dim() > kMaxDim) fail("context_len * embed_dim too large");
  if (param_counts(*this).total > kMaxParams) fail("model exceeds 2^25 parameters");
}

// --- MBRB -------------------------------------------------------------------

MbrbBlock::MbrbBlock(std::size_t features, std::size_t hidden, std::size_t branches, Rng& rng)
    : ln_gain_(1, features), ln_bias_(1, features) {
  if (branches < 1) throw std::invalid_argument("MbrbBlock: at least one branch");
  ln_gain_.value.fill(1.0);
  const double in_bound = fan_in_bound(features);
  for (std::size_t i = 0; i < branches; ++i) {
    branch_w_.push_back(make_uniform(features, hidden, in_bound, rng));
    branch_b_.push_back(make_uniform(1, hidden, in_bound, rng));
  }
  const double hid_bound = fan_in_bound(hidden);
  out_w_ = make_uniform(hidden, features, hid_bound, rng);
  out_b_ = make_uniform(1, features, hid_bound, rng);
}

Tensor2 MbrbBlock::forward(const Tensor2& x, Cache& cache) const {
  if (x.cols() != features()) throw std::invalid_argument("MbrbBlock::forward: feature mismatch");
  auto ln = layer_norm_forward(x, ln_gain_, ln_bias_, kLayerNormEps);
  cache.ln = std::move(ln.cache);
  cache.normalized = std::move(ln.out);
  cache.input = x;

  const std::size_t k = branch_w_.size();
  cache.branches.clear();
  cache.partial.clear();
  for (std::size_t i = 0; i < k; ++i) {
    cache.branches.push_back(linear_forward(cache.normalized, branch_w_[i], branch_b_[i]));
    cache.partial.push_back(i == 0 ? cache.branches[0]
                                   : hadamard_forward(cache.partial[i - 1], cache.branches[i]));
  }
  cache.activated = gelu_forward(cache.partial.back()).out;
  return add(linear_forward(cache.activated, out_w_, out_b_), x);
}

Tensor2 MbrbBlock::backward(const Cache& cache, const Tensor2& upstream) {
  Tensor2 grad_act = linear_backward(cache.activated, out_w_, out_b_, upstream);
  Tensor2 grad = gelu_backward(cache.partial.back(), grad_act);

  const std::size_t k = branch_w_.size();
  std::vector<Tensor2> grad_branch(k);
  for (std::size_t i = k - 1; i >= 1; --i) {
    auto [g_prefix, g_branch] = hadamard_backward(cache.partial[i - 1], cache.branches[i], grad);
    grad_branch[i] = std::move(g_branch);
    grad = std::move(g_prefix);
  }
  grad_branch[0] = std::move(grad);

  Tensor2 grad_norm(cache.normalized.rows(), cache.normalized.cols());
  for (std::size_t i = 0; i < k; ++i) {
    Tensor2 g = linear_backward(cache.normalized, branch_w_[i], branch_b_[i], grad_branch[i]);
    grad_norm = add(grad_norm, g);
  }
  return add(layer_norm_backward(cache.ln, ln_gain_, ln_bias_, grad_norm), upstream);
}

void MbrbBlock::append_parameters(std::vector<Parameter*>& out) {
  out.push_back(&ln_gain_);
  out.push_back(&ln_bias_);
  for (std::size_t i = 0; i < branch_w_.size(); ++i) {
    out.push_back(&branch_w_[i]);
    out.push_back(&branch_b_[i]);
  }
  out.push_back(&out_w_);
  out.push_back(&out_b_);
}

void MbrbBlock::append_parameters(std::vector<const Parameter*>& out) const {
  out.push_back(&ln_gain_);
  out.push_back(&ln_bias_);
  for (std::size_t i = 0; i < branch_w_.size(); ++i) {
    out.push_back(&branch_w_[i]);
    out.push_back(&branch_b_[i]);
  }
  out.push_back(&out_w_);
  out.push_back(&out_b_);
}

std::size_t MbrbBlock::param_count() const {
  return param_count(features(), hidden(), branch_count());
}

std::size_t MbrbBlock::param_count(std::size_t features, std::size_t hidden, std::size_t branches) {
  return 2 * features + branches * (features * hidden + hidden) + hidden * features + features;
}

// --- LTE --------------------------------------------------------------------

LteBlock::LteBlock(std::size_t features, std::size_t ratio, std::size_t lanes, Rng& rng) {
  if (ratio == 0 || features % ratio != 0) {
    throw std::invalid_argument("LteBlock: ratio must divide the feature dimension");
  }
  const std::size_t latent = features / ratio;
  const double down = fan_in_bound(features);
  const double lat = fan_in_bound(latent);
  w1_ = make_uniform(features, latent, down, rng);
  b1_ = make_uniform(1, latent, down, rng);
  fdm_ = make_uniform(lanes * latent, latent, lat, rng);
  w2_ = make_uniform(latent, features, lat, rng);
  b2_ = make_uniform(1, features, lat, rng);
}

Tensor2 LteBlock::forward(const Tensor2& x, Cache& cache) const {
  if (x.cols() != features()) throw std::invalid_argument("LteBlock::forward: feature mismatch");
  if (x.rows() != lanes()) {
    throw std::invalid_argument("LteBlock::forward: row count must equal the lane count (" +
                                std::to_string(lanes()) + ")");
  }
  cache.input = x;
  cache.latent = linear_forward(x, w1_, b1_);
  cache.transformed = per_row_matmul_forward(cache.latent, fdm_);
  return linear_forward(cache.transformed, w2_, b2_);
}

Tensor2 LteBlock::backward(const Cache& cache, const Tensor2& upstream) {
  Tensor2 g_y = linear_backward(cache.transformed, w2_, b2_, upstream);
  Tensor2 g_latent = per_row_matmul_backward(cache.latent, fdm_, g_y);
  return linear_backward(cache.input, w1_, b1_, g_latent);
}

void LteBlock::append_parameters(std::vector<Parameter*>& out) {
  for (Parameter* p : {&w1_, &b1_, &fdm_, &w2_, &b2_}) out.push_back(p);
}

void LteBlock::append_parameters(std::vector<const Parameter*>& out) const {
  for (const Parameter* p : {&w1_, &b1_, &fdm_, &w2_, &b2_}) out.push_back(p);
}

std::size_t LteBlock::param_count() const { return param_count(features(), features() / latent(), lanes()); }

std::size_t LteBlock::param_count(std::size_t features, std::size_t ratio, std::size_t lanes) {
  const std::size_t latent = features / ratio;
  return features * latent + latent + lanes * latent * latent + latent * features + features;
}

std::size_t LteBlock::fdm_param_count(std::size_t features, std::size_t ratio, std::size_t lanes) {
  const std::size_t latent = features / ratio;
  return lanes * latent * latent;
}

std::size_t LteBlock::full_fdm_param_count(std::size_t features, std::size_t lanes) {
  return lanes * features * features;
}

ParamCounts param_counts(const ModelConfig& cfg, bool with_lte) {
  const std::size_t f = cfg.feature_dim();
  ParamCounts c;
  c.embedding = kVocab * cfg.embed_dim;
  c.local = MbrbBlock::param_count(f, cfg.hidden_local, cfg.branches);
  c.lte = with_lte ? LteBlock::param_count(f, cfg.lte_ratio, cfg.lanes) : f * f + f;
  c.global = MbrbBlock::param_count(f, cfg.hidden_global, cfg.branches);
  c.head = f * kVocab + kVocab;
  c.total = c.embedding + c.local + c.lte + c.global + c.head;
  return c;
}

// --- Model ------------------------------------------------------------------

namespace {

struct SeededInit {
  explicit SeededInit(const ModelConfig& cfg) : rng(cfg.seed) { cfg.validate(); }
  Rng rng;
};

}  // namespace

EdpcModel::EdpcModel(const ModelConfig& cfg)
    : EdpcModel(cfg, SeededInit(cfg).rng) {}

EdpcModel::EdpcModel(const ModelConfig& cfg, Rng&& rng)
    : cfg_(cfg),
      // A lookup is a one-hot linear layer with a single active input.
      embedding_(make_uniform(kVocab, cfg.embed_dim, 1.0, rng)),
      local_(cfg.feature_dim(), cfg.hidden_local, cfg.branches, rng),
      lte_(cfg.feature_dim(), cfg.lte_ratio, cfg.lanes, rng),
      global_(cfg.feature_dim(), cfg.hidden_global, cfg.branches, rng),
      head_w_(make_uniform(cfg.feature_dim(), kVocab, fan_in_bound(cfg.feature_dim()), rng)),
      head_b_(make_uniform(1, kVocab, fan_in_bound(cfg.feature_dim()), rng)) {}

Prediction EdpcModel::predict(std::span<const std::uint8_t> contexts) const {
  const std::size_t lanes = cfg_.lanes;
  const std::size_t t = cfg_.context_len;
  const std::size_t d = cfg_.embed_dim;
  if (contexts.size() != lanes * t) {
    throw std::invalid_argument("EdpcModel::predict: expected " + std::to_string(lanes) +
                                " context rows of " + std::to_string(t) + " bytes");
  }
  Prediction pred;
  ModelCache& c = pred.cache;
  c.version = version_;
  c.contexts.assign(contexts.begin(), contexts.end());
  c.embedded = Tensor2(lanes, t * d);
  for (std::size_t r = 0; r < lanes; ++r) {
    for (std::size_t p = 0; p < t; ++p) {
      const auto e = embedding_.value.row(contexts[r * t + p]);
      std::copy(e.begin(), e.end(), c.embedded.row(r).begin() + static_cast<std::ptrdiff_t>(p * d));
    }
  }
  Tensor2 h = local_.forward(c.embedded, c.local);
  h = lte_.forward(h, c.lte);
  c.head_input = global_.forward(h, c.global);
  pred.probs = softmax(linear_forward(c.head_input, head_w_, head_b_));
  return pred;
}

double EdpcModel::accumulate_gradients(const Prediction& prediction,
                                       std::span<const std::uint8_t> targets) {
  const ModelCache& c = prediction.cache;
  if (c.version != version_) {
    throw std::logic_error("EdpcModel::train_step: cache was produced by a different parameter state");
  }
  if (targets.size() != cfg_.lanes) {
    throw std::invalid_argument("EdpcModel::train_step: expected one target per lane");
  }
  const CrossEntropyOutput ce = cross_entropy_from_probs(prediction.probs, targets);
  if (!std::isfinite(ce.loss)) throw std::runtime_error("EdpcModel::train_step: non-finite loss");

  Tensor2 g = linear_backward(c.head_input, head_w_, head_b_, ce.grad_logits);
  g = global_.backward(c.global, g);
  g = lte_.backward(c.lte, g);
  g = local_.backward(c.local, g);

  const std::size_t t = cfg_.context_len;
  const std::size_t d = cfg_.embed_dim;
  for (std::size_t r = 0; r < cfg_.lanes; ++r) {
    for (std::size_t p = 0; p < t; ++p) {
      double* dst = embedding_.grad.row(c.contexts[r * t + p]).data();
      const double* src = g.row(r).data() + p * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  }
  return ce.loss;
}

double EdpcModel::train_step(const Prediction& prediction, std::span<const std::uint8_t> targets) {
  const double loss = accumulate_gradients(prediction, targets);
  const AdamConfig adam = cfg_.adam();
  for (Parameter* p : parameters()) adam_step(*p, adam);
  ++version_;
  return loss;
}

ParamCounts EdpcModel::param_count() const {
  ParamCounts c;
  c.embedding = embedding_.size();
  c.local = local_.param_count();
  c.lte = lte_.param_count();
  c.global = global_.param_count();
  c.head = head_w_.size() + head_b_.size();
  c.total = c.embedding + c.local + c.lte + c.global + c.head;
  return c;
}

std::vector<Parameter*> EdpcModel::parameters() {
  std::vector<Parameter*> out{&embedding_};
  local_.append_parameters(out);
  lte_.append_parameters(out);
  global_.append_parameters(out);
  out.push_back(&head_w_);
  out.push_back(&head_b_);
  return out;
}

std::vector<const Parameter*> EdpcModel::parameters() const {
  std::vector<const Parameter*> out{&embedding_};
  local_.append_parameters(out);
  lte_.append_parameters(out);
  global_.append_parameters(out);
  out.push_back(&head_w_);
  out.push_back(&head_b_);
  return out;
}

std::uint64_t EdpcModel::checksum() const {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const Parameter* p : parameters()) fnv1a(h, p->value);
  return h;
}

}  // namespace edpc
