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

#include "edpc/layers.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace edpc {
namespace {

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(std::string("shape mismatch: ") + what);
}

// y += a * x
inline void axpy(double* __restrict y, double a, const double* __restrict x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

// y += a0 * x0 + a1 * x1 + a2 * x2 + a3 * x3, added one term at a time.
inline void axpy4(double* __restrict y, double a0, const double* __restrict x0, double a1,
                  const double* __restrict x1, double a2, const double* __restrict x2, double a3,
                  const double* __restrict x3, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    double v = y[i];
    v += a0 * x0[i];
    v += a1 * x1[i];
    v += a2 * x2[i];
    v += a3 * x3[i];
    y[i] = v;
  }
}

// Sixteen interleaved partial sums reduced in a fixed tree, so the result is
// reproducible while still vectorizing.
inline double dot(const double* __restrict a, const double* __restrict b, std::size_t n) {
  double s[16] = {};
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    for (std::size_t j = 0; j < 16; ++j) s[j] += a[i + j] * b[i + j];
  }
  for (std::size_t j = 0; i < n; ++i, ++j) s[j] += a[i] * b[i];
  for (std::size_t w = 8; w > 0; w /= 2) {
    for (std::size_t j = 0; j < w; ++j) s[j] += s[j + w];
  }
  return s[0];
}

}  // namespace

Tensor2 linear_forward(const Tensor2& x, const Parameter& w, const Parameter& b) {
  const std::size_t batch = x.rows();
  const std::size_t in = x.cols();
  const std::size_t out_dim = w.value.cols();
  require(w.value.rows() == in, "linear_forward: x.cols != w.rows");
  require(b.value.rows() == 1 && b.value.cols() == out_dim, "linear_forward: bias shape");

  Tensor2 out(batch, out_dim);
  // Four weight rows per pass over each output row; every output element
  // still accumulates in ascending k.
  std::size_t k = 0;
  for (; k + 4 <= in; k += 4) {
    const double* w0 = w.value.row(k).data();
    const double* w1 = w.value.row(k + 1).data();
    const double* w2 = w.value.row(k + 2).data();
    const double* w3 = w.value.row(k + 3).data();
    for (std::size_t r = 0; r < batch; ++r) {
      const double* xr = x.row(r).data() + k;
      axpy4(out.row(r).data(), xr[0], w0, xr[1], w1, xr[2], w2, xr[3], w3, out_dim);
    }
  }
  for (; k < in; ++k) {
    const double* wk = w.value.row(k).data();
    for (std::size_t r = 0; r < batch; ++r) axpy(out.row(r).data(), x(r, k), wk, out_dim);
  }
  const double* bias = b.value.data();
  for (std::size_t r = 0; r < batch; ++r) {
    double* o = out.row(r).data();
    for (std::size_t j = 0; j < out_dim; ++j) o[j] += bias[j];
  }
  return out;
}

Tensor2 linear_backward(const Tensor2& x, Parameter& w, Parameter& b, const Tensor2& upstream) {
  const std::size_t batch = x.rows();
  const std::size_t in = x.cols();
  const std::size_t out_dim = w.value.cols();
  require(w.value.rows() == in, "linear_backward: x.cols != w.rows");
  require(upstream.rows() == batch && upstream.cols() == out_dim, "linear_backward: upstream");
  require(b.value.rows() == 1 && b.value.cols() == out_dim, "linear_backward: bias shape");

  Tensor2 grad_x(batch, in);
  for (std::size_t k = 0; k < in; ++k) {
    const double* wk = w.value.row(k).data();
    double* gwk = w.grad.row(k).data();
    std::size_t r = 0;
    for (; r + 4 <= batch; r += 4) {
      const double* u0 = upstream.row(r).data();
      const double* u1 = upstream.row(r + 1).data();
      const double* u2 = upstream.row(r + 2).data();
      const double* u3 = upstream.row(r + 3).data();
      grad_x(r, k) = dot(u0, wk, out_dim);
      grad_x(r + 1, k) = dot(u1, wk, out_dim);
      grad_x(r + 2, k) = dot(u2, wk, out_dim);
      grad_x(r + 3, k) = dot(u3, wk, out_dim);
      axpy4(gwk, x(r, k), u0, x(r + 1, k), u1, x(r + 2, k), u2, x(r + 3, k), u3, out_dim);
    }
    for (; r < batch; ++r) {
      const double* up = upstream.row(r).data();
      grad_x(r, k) = dot(up, wk, out_dim);
      axpy(gwk, x(r, k), up, out_dim);
    }
  }
  double* gb = b.grad.data();
  for (std::size_t r = 0; r < batch; ++r) {
    const double* up = upstream.row(r).data();
    for (std::size_t j = 0; j < out_dim; ++j) gb[j] += up[j];
  }
  return grad_x;
}

LayerNormOutput layer_norm_forward(const Tensor2& x, const Parameter& gain, const Parameter& bias,
                                   double eps) {
  const std::size_t n = x.cols();
  require(gain.value.rows() == 1 && gain.value.cols() == n, "layer_norm: gain");
  require(bias.value.rows() == 1 && bias.value.cols() == n, "layer_norm: bias");

  LayerNormOutput res{Tensor2(x.rows(), n), {Tensor2(x.rows(), n), std::vector<double>(x.rows())}};
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto xr = x.row(r);
    double mean = 0.0;
    for (double v : xr) mean += v;
    mean *= inv_n;
    double var = 0.0;
    for (double v : xr) var += (v - mean) * (v - mean);
    var *= inv_n;
    const double inv_std = 1.0 / std::sqrt(var + eps);
    res.cache.inv_std[r] = inv_std;
    auto nr = res.cache.normalized.row(r);
    auto out = res.out.row(r);
    for (std::size_t j = 0; j < n; ++j) {
      nr[j] = (xr[j] - mean) * inv_std;
      out[j] = nr[j] * gain.value(0, j) + bias.value(0, j);
    }
  }
  return res;
}

Tensor2 layer_norm_backward(const LayerNormCache& cache, Parameter& gain, Parameter& bias,
                            const Tensor2& upstream) {
  const Tensor2& xhat = cache.normalized;
  require(upstream.same_shape(xhat), "layer_norm_backward: upstream");
  const std::size_t n = xhat.cols();
  const double inv_n = 1.0 / static_cast<double>(n);

  Tensor2 grad_x(xhat.rows(), n);
  std::vector<double> g(n);
  for (std::size_t r = 0; r < xhat.rows(); ++r) {
    const auto up = upstream.row(r);
    const auto xh = xhat.row(r);
    double sum_g = 0.0;
    double sum_gx = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      gain.grad(0, j) += up[j] * xh[j];
      bias.grad(0, j) += up[j];
      g[j] = up[j] * gain.value(0, j);
      sum_g += g[j];
      sum_gx += g[j] * xh[j];
    }
    const double mean_g = sum_g * inv_n;
    const double mean_gx = sum_gx * inv_n;
    auto gx = grad_x.row(r);
    for (std::size_t j = 0; j < n; ++j) {
      gx[j] = cache.inv_std[r] * (g[j] - mean_g - xh[j] * mean_gx);
    }
  }
  return grad_x;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 * 0.5)); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 * 0.5));
  const double pdf = std::exp(-0.5 * x * x) * (std::numbers::inv_sqrtpi * std::numbers::sqrt2 * 0.5);
  return cdf + x * pdf;
}

GeluOutput gelu_forward(const Tensor2& x) {
  GeluOutput res{Tensor2(x.rows(), x.cols()), x};
  auto in = x.values();
  auto out = res.out.values();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = gelu(in[i]);
  return res;
}

Tensor2 gelu_backward(const Tensor2& input, const Tensor2& upstream) {
  require(input.same_shape(upstream), "gelu_backward");
  Tensor2 grad(input.rows(), input.cols());
  auto in = input.values();
  auto up = upstream.values();
  auto g = grad.values();
  for (std::size_t i = 0; i < in.size(); ++i) g[i] = up[i] * gelu_derivative(in[i]);
  return grad;
}

Tensor2 hadamard_forward(const Tensor2& a, const Tensor2& b) {
  require(a.same_shape(b), "hadamard_forward");
  Tensor2 out(a.rows(), a.cols());
  auto av = a.values();
  auto bv = b.values();
  auto o = out.values();
  for (std::size_t i = 0; i < av.size(); ++i) o[i] = av[i] * bv[i];
  return out;
}

std::pair<Tensor2, Tensor2> hadamard_backward(const Tensor2& a, const Tensor2& b,
                                              const Tensor2& upstream) {
  require(a.same_shape(b) && a.same_shape(upstream), "hadamard_backward");
  return {hadamard_forward(upstream, b), hadamard_forward(upstream, a)};
}

Tensor2 per_row_matmul_forward(const Tensor2& x, const Parameter& u) {
  const std::size_t n = x.cols();
  require(u.value.cols() == n && u.value.rows() == x.rows() * n,
          "per_row_matmul: expected rows(x) stacked cols(x) x cols(x) matrices");
  Tensor2 out(x.rows(), n);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double* o = out.row(i).data();
    for (std::size_t k = 0; k < n; ++k) axpy(o, x(i, k), u.value.row(i * n + k).data(), n);
  }
  return out;
}

Tensor2 per_row_matmul_backward(const Tensor2& x, Parameter& u, const Tensor2& upstream) {
  const std::size_t n = x.cols();
  require(u.value.cols() == n && u.value.rows() == x.rows() * n, "per_row_matmul_backward: u");
  require(upstream.same_shape(x), "per_row_matmul_backward: upstream");
  Tensor2 grad_x(x.rows(), n);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double* up = upstream.row(i).data();
    for (std::size_t k = 0; k < n; ++k) {
      grad_x(i, k) = dot(up, u.value.row(i * n + k).data(), n);
      axpy(u.grad.row(i * n + k).data(), x(i, k), up, n);
    }
  }
  return grad_x;
}

Tensor2 softmax(const Tensor2& logits) {
  Tensor2 probs(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto z = logits.row(r);
    auto p = probs.row(r);
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j) {
      p[j] = std::exp(z[j] - mx);
      sum += p[j];
    }
    const double inv = 1.0 / sum;
    for (double& v : p) v *= inv;
  }
  return probs;
}

CrossEntropyOutput cross_entropy_from_probs(const Tensor2& probs, std::span<const std::uint8_t> targets) {
  if (targets.size() != probs.rows()) {
    throw std::invalid_argument("cross_entropy: one target per row required");
  }
  CrossEntropyOutput res{0.0, probs, probs};
  const double inv_b = 1.0 / static_cast<double>(probs.rows());
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    const std::size_t t = targets[r];
    if (t >= probs.cols()) throw std::out_of_range("cross_entropy: target out of range");
    // Probabilities below the smallest normal would give -log(0).
    res.loss -= std::log(std::max(probs(r, t), 1e-300));
    auto g = res.grad_logits.row(r);
    g[t] -= 1.0;
    for (double& v : g) v *= inv_b;
  }
  res.loss *= inv_b;
  return res;
}

CrossEntropyOutput softmax_cross_entropy(const Tensor2& logits, std::span<const std::uint8_t> targets) {
  return cross_entropy_from_probs(softmax(logits), targets);
}

void adam_step(Parameter& p, const AdamConfig& cfg) {
  p.step_count += 1;
  const double t = static_cast<double>(p.step_count);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  const double step = cfg.lr / bc1;
  const double inv_bc2 = 1.0 / bc2;

  double* w = p.value.data();
  double* g = p.grad.data();
  double* m = p.m.data();
  double* v = p.v.data();
  const std::size_t n = p.size();
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
    w[i] -= step * m[i] / (std::sqrt(v[i] * inv_bc2) + cfg.eps);
    g[i] = 0.0;
  }
}

}  // namespace edpc
