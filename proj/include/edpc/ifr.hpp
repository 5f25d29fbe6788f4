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
#include <iosfwd>
#include <span>
#include <vector>

#include "edpc/model.hpp"
#include "edpc/tensor.hpp"

// Mutual-information tooling: a Kraskov (KSG) kNN estimator and the
// information-flow-refinement ratio built on it.
namespace edpc::ifr {

// Digamma for x > 0; throws std::domain_error otherwise.
double digamma(double x);

// n samples of dimension d, one per row.
class SampleMatrix {
 public:
  SampleMatrix() = default;
  explicit SampleMatrix(Tensor2 values);
  SampleMatrix(std::size_t n, std::size_t d) : values_(n, d) {}

  std::size_t n() const { return values_.rows(); }
  std::size_t d() const { return values_.cols(); }
  double& operator()(std::size_t i, std::size_t j) { return values_(i, j); }
  double operator()(std::size_t i, std::size_t j) const { return values_(i, j); }
  const Tensor2& values() const { return values_; }

  // First `count` columns.
  SampleMatrix leading_columns(std::size_t count) const;

 private:
  Tensor2 values_;
};

struct MIEstimate {
  double value = 0.0;  // nats
  std::size_t neighbors = 0;
  std::size_t samples = 0;
  bool negative = false;   // raw estimate below zero, reported unclamped
  bool saturated = false;  // hit the psi(n) - psi(v) ceiling (e.g. y == z)
};

// KSG estimator 1 under the max norm:
//   psi(v) + psi(n) - mean(psi(n_z + 1) + psi(n_y + 1)),
// with n_z, n_y counting marginal neighbours strictly closer than the
// distance to the v-th joint neighbour. Before estimation each matrix gets a
// deterministic jitter of 1e-10 * (column range), seeded from jitter_seed and
// the matrix contents, which breaks ties and keeps the estimate symmetric.
MIEstimate ksg_mi(const SampleMatrix& z, const SampleMatrix& y, std::size_t neighbors,
                  std::uint64_t jitter_seed = 0);

struct IfrRatio {
  double value = 0.0;
  std::size_t from_branches = 0;
  std::size_t to_branches = 0;
};

// I^(k1) / I^(k2). Both estimates must share k and n and the denominator
// must be positive.
IfrRatio ifr_ratio(const MIEstimate& from, std::size_t from_branches, const MIEstimate& to,
                   std::size_t to_branches);

struct BranchProbe {
  std::size_t samples = 2000;
  std::size_t train_steps = 1000;
  std::size_t neighbors = 5;
  std::size_t dims = 8;
};

// Activations of the global block: its input (the skip path S) and its
// output (S + X), truncated to the leading `dims` coordinates.
struct BlockActivations {
  SampleMatrix skip;
  SampleMatrix fused;
};

// Trains a fresh model with `branches` branches online on the probe bytes
// for probe.train_steps steps, then freezes it and records activations over
// subsequent positions (wrapping around) until probe.samples rows exist.
BlockActivations capture_global_activations(const ModelConfig& cfg, std::size_t branches,
                                            std::span<const std::uint8_t> probe_data,
                                            const BranchProbe& probe);

MIEstimate branch_mi(const ModelConfig& cfg, std::size_t branches, std::span<const std::uint8_t> probe_data,
                     const BranchProbe& probe);

struct StudyRow {
  std::uint64_t seed = 0;
  MIEstimate mi[3];  // k = 1, 2, 3
  double ifr_1_2 = 0.0;
  double ifr_1_3 = 0.0;
  double ifr_2_3 = 0.0;
};

struct StudyReport {
  std::vector<StudyRow> rows;
  double median_mi[3] = {0.0, 0.0, 0.0};
  // Median MI non-increasing from 1 to 2 to 3 branches.
  bool trend_holds = false;
  bool trend_1_2_holds = false;
};

StudyReport run_study(const ModelConfig& cfg, std::span<const std::uint8_t> probe_data,
                      std::span<const std::uint64_t> seeds, const BranchProbe& probe);

void write_csv(const StudyReport& report, std::ostream& out);

struct GaussianCheck {
  double estimate_correlated = 0.0;
  double analytic = 0.0;
  double estimate_independent = 0.0;
  bool passed = false;
};

// rho = 0.9 and rho = 0 bivariate Gaussians, n = 5000, v = 5.
GaussianCheck gaussian_self_test(std::uint64_t seed);

}  // namespace edpc::ifr
