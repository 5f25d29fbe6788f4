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

#include "edpc/coder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace edpc {
namespace {

constexpr std::uint64_t kTop = 0xFFFFFFFFull;
constexpr std::uint64_t kHalf = 0x80000000ull;
constexpr std::uint64_t kQuarter = 0x40000000ull;
constexpr std::uint64_t kThreeQuarters = 0xC0000000ull;

}  // namespace

QuantizedDistribution QuantizedDistribution::uniform() {
  QuantizedDistribution d;
  d.freqs.fill(kFreqTotal / kAlphabetSize);
  d.rebuild_cumulative();
  return d;
}

void QuantizedDistribution::rebuild_cumulative() {
  cumulative[0] = 0;
  for (std::size_t s = 0; s < kAlphabetSize; ++s) cumulative[s + 1] = cumulative[s] + freqs[s];
}

bool QuantizedDistribution::valid() const {
  if (cumulative[0] != 0 || cumulative[kAlphabetSize] != kFreqTotal) return false;
  for (std::size_t s = 0; s < kAlphabetSize; ++s) {
    if (freqs[s] < 1 || cumulative[s + 1] != cumulative[s] + freqs[s]) return false;
  }
  return true;
}

QuantizedDistribution quantize(std::span<const double> probs) {
  if (probs.size() != kAlphabetSize) {
    throw std::invalid_argument("quantize: expected 256 probabilities");
  }
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) {
      throw std::invalid_argument("quantize: probabilities must be finite and non-negative");
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw std::invalid_argument("quantize: probabilities must sum to 1");

  constexpr double kScale = kFreqTotal - kAlphabetSize;
  QuantizedDistribution d;
  std::array<double, kAlphabetSize> remainder{};
  std::uint32_t assigned = 0;
  for (std::size_t s = 0; s < kAlphabetSize; ++s) {
    const double scaled = probs[s] * kScale;
    const double fl = std::floor(scaled);
    remainder[s] = scaled - fl;
    d.freqs[s] = static_cast<std::uint32_t>(fl) + 1;
    assigned += d.freqs[s];
  }
  // Slightly super-unit sums could overshoot; take the excess back from the
  // largest symbols.
  while (assigned > kFreqTotal) {
    auto it = std::max_element(d.freqs.begin(), d.freqs.end());
    --*it;
    --assigned;
  }
  std::uint32_t deficit = kFreqTotal - assigned;
  if (deficit > 0) {
    std::array<std::uint16_t, kAlphabetSize> order{};
    std::iota(order.begin(), order.end(), std::uint16_t{0});
    auto by_remainder = [&](std::uint16_t a, std::uint16_t b) {
      return remainder[a] > remainder[b] || (remainder[a] == remainder[b] && a < b);
    };
    const std::size_t take = std::min<std::size_t>(deficit, kAlphabetSize);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                      by_remainder);
    for (std::size_t i = 0; deficit > 0; i = (i + 1) % take, --deficit) ++d.freqs[order[i]];
  }
  d.rebuild_cumulative();
  return d;
}

// --- Encoder ----------------------------------------------------------------

void ArithEncoder::put_bit(unsigned bit) {
  if (out_.bit_length % 8 == 0) out_.bytes.push_back(0);
  if (bit) out_.bytes.back() |= static_cast<std::uint8_t>(0x80u >> (out_.bit_length % 8));
  ++out_.bit_length;
}

void ArithEncoder::put_bit_plus_pending(unsigned bit) {
  put_bit(bit);
  for (; pending_ > 0; --pending_) put_bit(bit ^ 1u);
}

void ArithEncoder::encode(const QuantizedDistribution& dist, std::uint8_t symbol) {
  const std::uint64_t range = high_ - low_ + 1;
  high_ = low_ + (range * dist.cumulative[symbol + 1] >> kFreqBits) - 1;
  low_ = low_ + (range * dist.cumulative[symbol] >> kFreqBits);
  for (;;) {
    if (high_ < kHalf) {
      put_bit_plus_pending(0);
    } else if (low_ >= kHalf) {
      put_bit_plus_pending(1);
      low_ -= kHalf;
      high_ -= kHalf;
    } else if (low_ >= kQuarter && high_ < kThreeQuarters) {
      ++pending_;
      low_ -= kQuarter;
      high_ -= kQuarter;
    } else {
      break;
    }
    low_ = low_ << 1;
    high_ = (high_ << 1) | 1u;
  }
}

Bitstream ArithEncoder::finish() {
  // Two bits select a quarter that lies inside [low, high]; the decoder reads
  // zeros past the end, which stay inside that quarter.
  ++pending_;
  put_bit_plus_pending(low_ < kQuarter ? 0 : 1);
  Bitstream out = std::move(out_);
  out_ = {};
  low_ = 0;
  high_ = kTop;
  pending_ = 0;
  return out;
}

// --- Decoder ----------------------------------------------------------------

BitstreamExhausted::BitstreamExhausted(std::uint64_t bit_position)
    : std::runtime_error("arithmetic decoder read past the end of the bitstream at bit " +
                         std::to_string(bit_position)),
      bit_position_(bit_position) {}

ArithDecoder::ArithDecoder(std::span<const std::uint8_t> bytes, std::uint64_t bit_length)
    : bytes_(bytes), bit_length_(bit_length) {
  if (bit_length > bytes.size() * 8) {
    throw std::invalid_argument("ArithDecoder: bit length exceeds the buffer");
  }
  for (int i = 0; i < 32; ++i) code_ = (code_ << 1) | next_bit();
}

unsigned ArithDecoder::next_bit() {
  const std::uint64_t pos = cursor_++;
  if (pos < bit_length_) return (bytes_[pos / 8] >> (7 - pos % 8)) & 1u;
  if (pos >= bit_length_ + kLookaheadBits) throw BitstreamExhausted(pos);
  return 0;
}

std::uint8_t ArithDecoder::decode(const QuantizedDistribution& dist) {
  const std::uint64_t range = high_ - low_ + 1;
  const std::uint64_t target = (((code_ - low_ + 1) << kFreqBits) - 1) / range;
  // First s with cumulative[s + 1] > target.
  const auto it = std::upper_bound(dist.cumulative.begin() + 1, dist.cumulative.end(),
                                   static_cast<std::uint32_t>(target));
  const auto symbol = static_cast<std::uint32_t>(it - (dist.cumulative.begin() + 1));
  if (symbol >= kAlphabetSize) throw std::logic_error("ArithDecoder: code outside the interval");

  high_ = low_ + (range * dist.cumulative[symbol + 1] >> kFreqBits) - 1;
  low_ = low_ + (range * dist.cumulative[symbol] >> kFreqBits);
  for (;;) {
    if (high_ < kHalf) {
      // nothing
    } else if (low_ >= kHalf) {
      low_ -= kHalf;
      high_ -= kHalf;
      code_ -= kHalf;
    } else if (low_ >= kQuarter && high_ < kThreeQuarters) {
      low_ -= kQuarter;
      high_ -= kQuarter;
      code_ -= kQuarter;
    } else {
      break;
    }
    low_ = low_ << 1;
    high_ = (high_ << 1) | 1u;
    code_ = (code_ << 1) | next_bit();
  }
  return static_cast<std::uint8_t>(symbol);
}

}  // namespace edpc
