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
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "edpc/container.hpp"
#include "edpc/model.hpp"
#include "edpc/tensor.hpp"

namespace edpc {

// The input cut into lane_count contiguous slices of lane_len bytes. Only
// the last lane carries zero padding.
struct LaneSplit {
  std::size_t lane_count = 0;
  std::size_t lane_len = 0;
  std::size_t original_len = 0;
  std::vector<std::uint8_t> padded;  // lane_count * lane_len bytes, lane-major

  std::span<const std::uint8_t> lane(std::size_t j) const {
    return std::span<const std::uint8_t>(padded).subspan(j * lane_len, lane_len);
  }
};

LaneSplit split_lanes(std::span<const std::uint8_t> data, std::size_t lanes);
std::vector<std::uint8_t> join_lanes(const LaneSplit& split);

// Lane j is coded by segment j / lanes_per_segment.
struct SegmentPlan {
  std::size_t segment_count = 1;
  std::size_t lanes_per_segment = 1;

  // Throws std::invalid_argument unless segments divides lanes.
  static SegmentPlan make(std::size_t lanes, std::size_t segments);
  std::size_t segment_of(std::size_t lane) const { return lane / lanes_per_segment; }
  std::size_t first_lane(std::size_t segment) const { return segment * lanes_per_segment; }
};

// One autoregressive step for all lanes. probs is empty for the bootstrap
// steps, which are coded under the uniform distribution.
struct StepBatch {
  std::size_t step_index = 0;
  bool uniform = false;
  Tensor2 probs;
  std::vector<std::uint8_t> targets;
};

struct PipelineOptions {
  // Only read by compress; decompress takes it from the container.
  std::size_t segments = 1;
  // Run prediction, training and coding on the calling thread in order.
  bool serial = false;
  // Coding workers; 0 picks std::thread::hardware_concurrency().
  std::size_t threads = 0;
  std::size_t queue_capacity = 4;
  // Record the model checksum every N trained steps (0 disables).
  std::size_t checksum_interval = 0;
  // Called on the model thread for every step, in order.
  std::function<void(const StepBatch&)> observer;
};

struct PipelineStats {
  double wall_seconds = 0.0;
  double model_seconds = 0.0;   // predict + train
  double coding_seconds = 0.0;  // quantize + arithmetic coding, summed over workers
  std::size_t steps = 0;
  std::size_t trained_steps = 0;
  double mean_loss = 0.0;  // nats per trained symbol
  std::size_t peak_queue_depth = 0;
  std::size_t worker_count = 0;
  std::vector<std::uint64_t> checksums;
};

class DecodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Throws std::invalid_argument on a bad config or segment count, before any
// work is done.
Container compress(std::span<const std::uint8_t> data, const ModelConfig& cfg,
                   const PipelineOptions& options, PipelineStats* stats = nullptr);

// Throws ContainerError for structurally invalid containers and DecodeError
// when the payload cannot be decoded.
std::vector<std::uint8_t> decompress(const Container& container, const PipelineOptions& options,
                                     PipelineStats* stats = nullptr);

std::size_t resolve_worker_count(std::size_t requested, std::size_t segments);

}  // namespace edpc
