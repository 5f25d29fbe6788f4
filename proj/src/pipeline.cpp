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

#include "edpc/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <exception>
#include <memory>
#include <mutex>
#include <thread>

#include "edpc/bounded_queue.hpp"
#include "edpc/coder.hpp"

namespace edpc {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Runs job(w) for w in [0, workers) each round; worker 0 is the caller.
class ForkJoin {
 public:
  explicit ForkJoin(std::size_t workers) : errors_(workers) {
    for (std::size_t w = 1; w < workers; ++w) threads_.emplace_back([this, w] { loop(w); });
  }

  ~ForkJoin() {
    {
      std::lock_guard lock(mu_);
      stop_ = true;
    }
    start_cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  ForkJoin(const ForkJoin&) = delete;
  ForkJoin& operator=(const ForkJoin&) = delete;

  void run(const std::function<void(std::size_t)>& job) {
    if (threads_.empty()) {
      job(0);
      return;
    }
    {
      std::lock_guard lock(mu_);
      job_ = &job;
      pending_ = threads_.size();
      ++generation_;
    }
    start_cv_.notify_all();
    try {
      job(0);
    } catch (...) {
      errors_[0] = std::current_exception();
    }
    std::unique_lock lock(mu_);
    done_cv_.wait(lock, [&] { return pending_ == 0; });
    for (auto& e : errors_) {
      if (e) {
        auto err = e;
        for (auto& x : errors_) x = nullptr;
        std::rethrow_exception(err);
      }
    }
  }

 private:
  void loop(std::size_t w) {
    std::uint64_t seen = 0;
    for (;;) {
      const std::function<void(std::size_t)>* job = nullptr;
      {
        std::unique_lock lock(mu_);
        start_cv_.wait(lock, [&] { return stop_ || generation_ != seen; });
        if (stop_) return;
        seen = generation_;
        job = job_;
      }
      try {
        (*job)(w);
      } catch (...) {
        errors_[w] = std::current_exception();
      }
      {
        std::lock_guard lock(mu_);
        --pending_;
      }
      done_cv_.notify_one();
    }
  }

  std::vector<std::thread> threads_;
  std::vector<std::exception_ptr> errors_;
  std::mutex mu_;
  std::condition_variable start_cv_;
  std::condition_variable done_cv_;
  const std::function<void(std::size_t)>* job_ = nullptr;
  std::size_t pending_ = 0;
  std::uint64_t generation_ = 0;
  bool stop_ = false;
};

std::size_t lane_len_for(std::size_t original_len, std::size_t lanes) {
  return (original_len + lanes - 1) / lanes;
}

void gather_contexts(const std::vector<std::uint8_t>& lanes_buf, std::size_t lane_len, std::size_t lanes,
                     std::size_t t, std::size_t step, std::vector<std::uint8_t>& out) {
  out.resize(lanes * t);
  for (std::size_t j = 0; j < lanes; ++j) {
    const std::uint8_t* src = lanes_buf.data() + j * lane_len + (step - t);
    std::copy(src, src + t, out.begin() + static_cast<std::ptrdiff_t>(j * t));
  }
}

// Codes the lanes owned by `segment` for one step.
void encode_segment(const StepBatch& batch, const SegmentPlan& plan, std::size_t segment,
                    ArithEncoder& enc) {
  static const QuantizedDistribution kUniform = QuantizedDistribution::uniform();
  const std::size_t first = plan.first_lane(segment);
  for (std::size_t j = first; j < first + plan.lanes_per_segment; ++j) {
    if (batch.uniform) {
      enc.encode(kUniform, batch.targets[j]);
    } else {
      enc.encode(quantize(batch.probs.row(j)), batch.targets[j]);
    }
  }
}

}  // namespace

LaneSplit split_lanes(std::span<const std::uint8_t> data, std::size_t lanes) {
  if (lanes == 0) throw std::invalid_argument("split_lanes: lane count must be >= 1");
  LaneSplit s;
  s.lane_count = lanes;
  s.original_len = data.size();
  s.lane_len = lane_len_for(data.size(), lanes);
  s.padded.assign(lanes * s.lane_len, 0);
  std::copy(data.begin(), data.end(), s.padded.begin());
  return s;
}

std::vector<std::uint8_t> join_lanes(const LaneSplit& split) {
  return {split.padded.begin(), split.padded.begin() + static_cast<std::ptrdiff_t>(split.original_len)};
}

SegmentPlan SegmentPlan::make(std::size_t lanes, std::size_t segments) {
  if (segments == 0 || lanes == 0 || lanes % segments != 0) {
    throw std::invalid_argument("segments must divide lanes");
  }
  return {segments, lanes / segments};
}

std::size_t resolve_worker_count(std::size_t requested, std::size_t segments) {
  std::size_t n = requested;
  if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
  return std::clamp<std::size_t>(n, 1, std::max<std::size_t>(segments, 1));
}

Container compress(std::span<const std::uint8_t> data, const ModelConfig& cfg,
                   const PipelineOptions& options, PipelineStats* stats) {
  cfg.validate();
  const SegmentPlan plan = SegmentPlan::make(cfg.lanes, options.segments);
  if (options.queue_capacity == 0) throw std::invalid_argument("queue capacity must be >= 1");
  const auto wall_start = Clock::now();

  PipelineStats local_stats;
  PipelineStats& st = stats ? *stats : local_stats;
  st = {};

  Container c;
  c.header.config = cfg;
  c.header.original_len = data.size();
  if (data.empty()) {
    st.wall_seconds = seconds_since(wall_start);
    return c;
  }
  c.header.segment_count = static_cast<std::uint32_t>(plan.segment_count);

  const LaneSplit split = split_lanes(data, cfg.lanes);
  const std::size_t lanes = cfg.lanes;
  const std::size_t t = cfg.context_len;
  const std::size_t steps = split.lane_len;
  std::vector<ArithEncoder> encoders(plan.segment_count);

  const std::size_t workers = options.serial ? 0 : resolve_worker_count(options.threads, plan.segment_count);
  st.worker_count = workers;
  std::vector<std::unique_ptr<BoundedQueue<std::shared_ptr<const StepBatch>>>> queues;
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> worker_errors(workers);
  std::vector<double> worker_seconds(workers, 0.0);
  for (std::size_t w = 0; w < workers; ++w) {
    queues.push_back(std::make_unique<BoundedQueue<std::shared_ptr<const StepBatch>>>(options.queue_capacity));
  }
  auto close_all = [&] {
    for (auto& q : queues) q->close();
  };
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&, w] {
      try {
        while (auto batch = queues[w]->pop()) {
          const auto t0 = Clock::now();
          for (std::size_t s = w; s < plan.segment_count; s += workers) {
            encode_segment(**batch, plan, s, encoders[s]);
          }
          worker_seconds[w] += seconds_since(t0);
        }
      } catch (...) {
        worker_errors[w] = std::current_exception();
        close_all();
      }
    });
  }

  auto dispatch = [&](StepBatch&& batch) {
    if (options.observer) options.observer(batch);
    if (workers == 0) {
      const auto t0 = Clock::now();
      for (std::size_t s = 0; s < plan.segment_count; ++s) encode_segment(batch, plan, s, encoders[s]);
      st.coding_seconds += seconds_since(t0);
      return true;
    }
    auto shared = std::make_shared<const StepBatch>(std::move(batch));
    for (auto& q : queues) {
      if (!q->push(shared)) return false;
    }
    return true;
  };

  try {
    EdpcModel model(cfg);
    std::vector<std::uint8_t> contexts;
    double loss_sum = 0.0;
    for (std::size_t i = 0; i < steps; ++i) {
      StepBatch batch;
      batch.step_index = i;
      batch.targets.resize(lanes);
      for (std::size_t j = 0; j < lanes; ++j) batch.targets[j] = split.padded[j * steps + i];
      if (i < t) {
        batch.uniform = true;
        if (!dispatch(std::move(batch))) break;
        continue;
      }
      const auto t0 = Clock::now();
      gather_contexts(split.padded, steps, lanes, t, i, contexts);
      Prediction pred = model.predict(contexts);
      batch.probs = pred.probs;
      std::vector<std::uint8_t> targets = batch.targets;
      st.model_seconds += seconds_since(t0);
      // Coding of step i overlaps with the parameter update below.
      if (!dispatch(std::move(batch))) break;
      const auto t1 = Clock::now();
      loss_sum += model.train_step(pred, targets);
      st.model_seconds += seconds_since(t1);
      ++st.trained_steps;
      if (options.checksum_interval > 0 && st.trained_steps % options.checksum_interval == 0) {
        st.checksums.push_back(model.checksum());
      }
    }
    st.steps = steps;
    st.mean_loss = st.trained_steps ? loss_sum / static_cast<double>(st.trained_steps) : 0.0;
  } catch (...) {
    close_all();
    for (auto& th : threads) th.join();
    throw;
  }
  close_all();
  for (auto& th : threads) th.join();
  for (auto& e : worker_errors) {
    if (e) std::rethrow_exception(e);
  }
  for (std::size_t w = 0; w < workers; ++w) {
    st.coding_seconds += worker_seconds[w];
    st.peak_queue_depth = std::max(st.peak_queue_depth, queues[w]->peak_depth());
  }

  for (std::size_t s = 0; s < plan.segment_count; ++s) {
    Bitstream bs = encoders[s].finish();
    c.header.segment_bits.push_back(bs.bit_length);
    c.segments.push_back(std::move(bs.bytes));
  }
  st.wall_seconds = seconds_since(wall_start);
  return c;
}

std::vector<std::uint8_t> decompress(const Container& container, const PipelineOptions& options,
                                     PipelineStats* stats) {
  validate(container);
  const auto wall_start = Clock::now();
  PipelineStats local_stats;
  PipelineStats& st = stats ? *stats : local_stats;
  st = {};

  const Header& h = container.header;
  const ModelConfig& cfg = h.config;
  if (h.original_len == 0) return {};

  const std::size_t lanes = cfg.lanes;
  const std::size_t t = cfg.context_len;
  const SegmentPlan plan = SegmentPlan::make(lanes, h.segment_count);

  // Every coded symbol costs at least -log2(65281/65536) > 1/178 bit, which
  // bounds how many symbols the payload can hold.
  std::uint64_t payload_bits = 0;
  for (std::uint64_t b : h.segment_bits) payload_bits += b + ArithDecoder::kLookaheadBits;
  if (h.original_len / 178 > payload_bits) {
    throw DecodeError("declared length " + std::to_string(h.original_len) +
                      " is inconsistent with the payload size");
  }

  const std::size_t steps = lane_len_for(static_cast<std::size_t>(h.original_len), lanes);
  std::vector<std::uint8_t> out(lanes * steps, 0);
  std::vector<ArithDecoder> decoders;
  decoders.reserve(plan.segment_count);
  for (std::size_t s = 0; s < plan.segment_count; ++s) {
    decoders.emplace_back(container.segments[s], h.segment_bits[s]);
  }

  const std::size_t workers = options.serial ? 1 : resolve_worker_count(options.threads, plan.segment_count);
  st.worker_count = workers;
  ForkJoin pool(workers);

  const QuantizedDistribution uniform = QuantizedDistribution::uniform();
  const Prediction* current = nullptr;
  std::size_t step = 0;
  auto decode_round = [&](std::size_t w) {
    for (std::size_t s = w; s < plan.segment_count; s += workers) {
      const std::size_t first = plan.first_lane(s);
      for (std::size_t j = first; j < first + plan.lanes_per_segment; ++j) {
        try {
          const std::uint8_t sym = current ? decoders[s].decode(quantize(current->probs.row(j)))
                                           : decoders[s].decode(uniform);
          out[j * steps + step] = sym;
        } catch (const BitstreamExhausted& e) {
          throw DecodeError("segment " + std::to_string(s) + " exhausted at step " + std::to_string(step) +
                            ", lane " + std::to_string(j) + " (bit " + std::to_string(e.bit_position()) + ")");
        }
      }
    }
  };
  const std::function<void(std::size_t)> job = decode_round;

  EdpcModel model(cfg);
  std::vector<std::uint8_t> contexts;
  std::vector<std::uint8_t> targets(lanes);
  double loss_sum = 0.0;
  for (step = 0; step < steps; ++step) {
    if (step < t) {
      current = nullptr;
      const auto t0 = Clock::now();
      pool.run(job);
      st.coding_seconds += seconds_since(t0);
      continue;
    }
    auto t0 = Clock::now();
    gather_contexts(out, steps, lanes, t, step, contexts);
    const Prediction pred = model.predict(contexts);
    st.model_seconds += seconds_since(t0);
    current = &pred;
    t0 = Clock::now();
    pool.run(job);
    st.coding_seconds += seconds_since(t0);
    for (std::size_t j = 0; j < lanes; ++j) targets[j] = out[j * steps + step];
    t0 = Clock::now();
    loss_sum += model.train_step(pred, targets);
    st.model_seconds += seconds_since(t0);
    current = nullptr;
    ++st.trained_steps;
    if (options.checksum_interval > 0 && st.trained_steps % options.checksum_interval == 0) {
      st.checksums.push_back(model.checksum());
    }
  }
  st.steps = steps;
  st.mean_loss = st.trained_steps ? loss_sum / static_cast<double>(st.trained_steps) : 0.0;

  for (std::size_t k = static_cast<std::size_t>(h.original_len); k < out.size(); ++k) {
    if (out[k] != 0) throw DecodeError("nonzero padding byte at lane offset " + std::to_string(k));
  }

  LaneSplit split;
  split.lane_count = lanes;
  split.lane_len = steps;
  split.original_len = static_cast<std::size_t>(h.original_len);
  split.padded = std::move(out);
  st.wall_seconds = seconds_since(wall_start);
  return join_lanes(split);
}

}  // namespace edpc
