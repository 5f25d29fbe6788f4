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
#include <string>
#include <vector>

#include "edpc/model.hpp"
#include "edpc/pipeline.hpp"

namespace edpc::cli {

// Stable process exit codes.
enum ExitCode : int {
  kExitOk = 0,
  kExitMismatch = 1,
  kExitIo = 2,
  kExitCorrupt = 3,
  kExitUsage = 64,
};

struct Profile {
  ModelConfig model;
  std::size_t segments = 32;
};

// "full", "desk" or "tiny"; throws std::invalid_argument otherwise.
Profile profile_by_name(const std::string& name);

// Size of coding every byte against the file's own byte histogram, rounded
// up to whole bytes.
double order0_entropy_bits(std::span<const std::uint8_t> data);
std::size_t order0_bound_bytes(std::span<const std::uint8_t> data);

struct Metrics {
  std::string file;
  std::size_t original_bytes = 0;
  std::size_t compressed_bytes = 0;  // header included
  double ratio = 0.0;
  double wall_seconds = 0.0;
  double model_seconds = 0.0;
  double coding_seconds = 0.0;
  double throughput_kb_per_min = 0.0;
  std::size_t param_count = 0;
  std::size_t peak_queue_depth = 0;
  double mean_loss_bits = 0.0;  // per trained symbol
};

Metrics make_metrics(const std::string& file, std::size_t original, std::size_t compressed,
                     const PipelineStats& stats, std::size_t params);
std::string to_json_line(const Metrics& m);

// Runs the command line; args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace edpc::cli
