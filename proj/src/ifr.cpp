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

#include "edpc/ifr.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>

#include "edpc/pipeline.hpp"

namespace edpc::ifr {
namespace {

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

std::uint64_t content_hash(const SampleMatrix& m) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (double d : m.values().values()) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, sizeof bits);
    h = (h ^ bits) * 0x100000001B3ULL;
  }
  return h;
}

SampleMatrix jittered(const SampleMatrix& m, std::uint64_t seed) {
  Rng rng(seed ^ content_hash(m));
  SampleMatrix out = m;
  for (std::size_t c = 0; c < m.d(); ++c) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t i = 0; i < m.n(); ++i) {
      lo = std::min(lo, m(i, c));
      hi = std::max(hi, m(i, c));
    }
    const double range = hi - lo;
    const double amp = 1e-10 * (range > 0.0 ? range : 1.0);
    for (std::size_t i = 0; i < m.n(); ++i) out(i, c) += rng.uniform(-amp, amp);
  }
  return out;
}

double chebyshev(const SampleMatrix& m, std::size_t a, std::size_t b) {
  double d = 0.0;
  for (std::size_t c = 0; c < m.d(); ++c) d = std::max(d, std::abs(m(a, c) - m(b, c)));
  return d;
}

}  // namespace

double digamma(double x) {
  if (!(x > 0.0) || !std::isfinite(x)) throw std::domain_error("digamma: argument must be positive");
  double acc = 0.0;
  while (x < 6.0) {
    acc -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  // Asymptotic expansion with Bernoulli-number coefficients.
  const double tail =
      inv2 * (1.0 / 12 -
              inv2 * (1.0 / 120 -
                      inv2 * (1.0 / 252 - inv2 * (1.0 / 240 - inv2 * (1.0 / 132 - inv2 * (691.0 / 32760 - inv2 / 12))))));
  return acc + std::log(x) - 0.5 * inv - tail;
}

SampleMatrix::SampleMatrix(Tensor2 values) : values_(std::move(values)) {}

SampleMatrix SampleMatrix::leading_columns(std::size_t count) const {
  if (count > d()) throw std::invalid_argument("SampleMatrix: not enough columns");
  SampleMatrix out(n(), count);
  for (std::size_t i = 0; i < n(); ++i) {
    for (std::size_t c = 0; c < count; ++c) out(i, c) = (*this)(i, c);
  }
  return out;
}

MIEstimate ksg_mi(const SampleMatrix& z, const SampleMatrix& y, std::size_t neighbors,
                  std::uint64_t jitter_seed) {
  const std::size_t n = z.n();
  if (y.n() != n) throw std::invalid_argument("ksg_mi: sample counts differ");
  if (neighbors < 1) throw std::invalid_argument("ksg_mi: need at least one neighbour");
  if (n < neighbors + 1) throw std::invalid_argument("ksg_mi: need more samples than neighbours");
  if (!z.values().all_finite() || !y.values().all_finite()) {
    throw std::invalid_argument("ksg_mi: samples must be finite");
  }

  const SampleMatrix zj = jittered(z, jitter_seed);
  const SampleMatrix yj = jittered(y, jitter_seed);

  std::vector<double> psi_int(n + 2);
  for (std::size_t i = 1; i < psi_int.size(); ++i) psi_int[i] = digamma(static_cast<double>(i));

  std::vector<double> dz(n), dy(n), joint(n);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      dz[j] = chebyshev(zj, i, j);
      dy[j] = chebyshev(yj, i, j);
      joint[j] = std::max(dz[j], dy[j]);
    }
    joint[i] = std::numeric_limits<double>::infinity();
    std::nth_element(joint.begin(), joint.begin() + static_cast<std::ptrdiff_t>(neighbors - 1), joint.end());
    const double eps = joint[neighbors - 1];
    std::size_t nz = 0;
    std::size_t ny = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      nz += dz[j] < eps;
      ny += dy[j] < eps;
    }
    sum += psi_int[nz + 1] + psi_int[ny + 1];
  }

  MIEstimate est;
  est.neighbors = neighbors;
  est.samples = n;
  const double psi_v = digamma(static_cast<double>(neighbors));
  const double psi_n = digamma(static_cast<double>(n));
  est.value = psi_v + psi_n - sum / static_cast<double>(n);
  est.negative = est.value < 0.0;
  est.saturated = est.value >= psi_n - psi_v - 1e-9;
  return est;
}

IfrRatio ifr_ratio(const MIEstimate& from, std::size_t from_branches, const MIEstimate& to,
                   std::size_t to_branches) {
  if (from.neighbors != to.neighbors || from.samples != to.samples) {
    throw std::invalid_argument("ifr_ratio: estimates use different k or n");
  }
  if (!(to.value > 0.0)) throw std::domain_error("ifr_ratio: denominator estimate must be positive");
  return {from.value / to.value, from_branches, to_branches};
}

BlockActivations capture_global_activations(const ModelConfig& cfg, std::size_t branches,
                                            std::span<const std::uint8_t> probe_data,
                                            const BranchProbe& probe) {
  ModelConfig c = cfg;
  c.branches = static_cast<std::uint32_t>(branches);
  c.validate();
  if (probe.dims == 0 || probe.dims > c.feature_dim()) {
    throw std::invalid_argument("branch probe: dims must be in [1, feature dim]");
  }
  if (probe.samples < probe.neighbors + 1) throw std::invalid_argument("branch probe: insufficient samples");

  const LaneSplit split = split_lanes(probe_data, c.lanes);
  const std::size_t t = c.context_len;
  if (split.lane_len <= t) {
    throw std::invalid_argument("branch probe: probe data too short for the lane/context geometry");
  }
  const std::size_t positions = split.lane_len - t;
  EdpcModel model(c);

  std::vector<std::uint8_t> contexts(c.lanes * t);
  std::vector<std::uint8_t> targets(c.lanes);
  auto load_step = [&](std::size_t s) {
    const std::size_t i = t + s % positions;
    for (std::size_t j = 0; j < c.lanes; ++j) {
      const auto lane = split.lane(j);
      std::copy(lane.begin() + static_cast<std::ptrdiff_t>(i - t), lane.begin() + static_cast<std::ptrdiff_t>(i),
                contexts.begin() + static_cast<std::ptrdiff_t>(j * t));
      targets[j] = lane[i];
    }
  };

  std::size_t s = 0;
  for (; s < probe.train_steps; ++s) {
    load_step(s);
    model.train_step(model.predict(contexts), targets);
  }

  BlockActivations act{SampleMatrix(probe.samples, probe.dims), SampleMatrix(probe.samples, probe.dims)};
  std::size_t row = 0;
  for (; row < probe.samples; ++s) {
    load_step(s);
    const Prediction pred = model.predict(contexts);
    const Tensor2& skip = pred.cache.global.input;
    const Tensor2& fused = pred.cache.head_input;
    for (std::size_t j = 0; j < c.lanes && row < probe.samples; ++j, ++row) {
      for (std::size_t k = 0; k < probe.dims; ++k) {
        act.skip(row, k) = skip(j, k);
        act.fused(row, k) = fused(j, k);
      }
    }
  }
  return act;
}

MIEstimate branch_mi(const ModelConfig& cfg, std::size_t branches, std::span<const std::uint8_t> probe_data,
                     const BranchProbe& probe) {
  const BlockActivations act = capture_global_activations(cfg, branches, probe_data, probe);
  return ksg_mi(act.skip, act.fused, probe.neighbors, cfg.seed);
}

StudyReport run_study(const ModelConfig& cfg, std::span<const std::uint8_t> probe_data,
                      std::span<const std::uint64_t> seeds, const BranchProbe& probe) {
  StudyReport report;
  auto safe_ratio = [](const MIEstimate& a, std::size_t ka, const MIEstimate& b, std::size_t kb) {
    try {
      return ifr_ratio(a, ka, b, kb).value;
    } catch (const std::domain_error&) {
      return std::numeric_limits<double>::quiet_NaN();
    }
  };
  for (std::uint64_t seed : seeds) {
    ModelConfig c = cfg;
    c.seed = seed;
    StudyRow row;
    row.seed = seed;
    for (std::size_t k = 1; k <= 3; ++k) row.mi[k - 1] = branch_mi(c, k, probe_data, probe);
    row.ifr_1_2 = safe_ratio(row.mi[0], 1, row.mi[1], 2);
    row.ifr_1_3 = safe_ratio(row.mi[0], 1, row.mi[2], 3);
    row.ifr_2_3 = safe_ratio(row.mi[1], 2, row.mi[2], 3);
    report.rows.push_back(row);
  }
  for (std::size_t k = 0; k < 3; ++k) {
    std::vector<double> v;
    for (const auto& r : report.rows) v.push_back(r.mi[k].value);
    report.median_mi[k] = median(v);
  }
  report.trend_1_2_holds = report.median_mi[1] <= report.median_mi[0];
  report.trend_holds = report.trend_1_2_holds && report.median_mi[2] <= report.median_mi[1];
  return report;
}

void write_csv(const StudyReport& report, std::ostream& out) {
  out << "seed,mi_k1,mi_k2,mi_k3,ifr_1_2,ifr_1_3,ifr_2_3\n";
  out << std::setprecision(6) << std::fixed;
  for (const auto& r : report.rows) {
    out << r.seed << ',' << r.mi[0].value << ',' << r.mi[1].value << ',' << r.mi[2].value << ','
        << r.ifr_1_2 << ',' << r.ifr_1_3 << ',' << r.ifr_2_3 << '\n';
  }
  out.unsetf(std::ios::floatfield);
}

GaussianCheck gaussian_self_test(std::uint64_t seed) {
  constexpr std::size_t kSamples = 5000;
  constexpr std::size_t kNeighbors = 5;
  constexpr double kRho = 0.9;
  Rng rng(seed);
  SampleMatrix z(kSamples, 1), y(kSamples, 1), w(kSamples, 1);
  for (std::size_t i = 0; i < kSamples; ++i) {
    z(i, 0) = rng.normal();
    const double e = rng.normal();
    y(i, 0) = kRho * z(i, 0) + std::sqrt(1.0 - kRho * kRho) * e;
    w(i, 0) = rng.normal();
  }
  GaussianCheck check;
  check.analytic = -0.5 * std::log(1.0 - kRho * kRho);
  check.estimate_correlated = ksg_mi(z, y, kNeighbors, seed).value;
  check.estimate_independent = ksg_mi(z, w, kNeighbors, seed).value;
  check.passed = std::abs(check.estimate_correlated - check.analytic) <= 0.08 &&
                 std::abs(check.estimate_independent) < 0.05;
  return check;
}

}  // namespace edpc::ifr
