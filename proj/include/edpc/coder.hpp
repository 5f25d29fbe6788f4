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

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace edpc {

inline constexpr std::uint32_t kAlphabetSize = 256;
inline constexpr std::uint32_t kFreqBits = 16;
inline constexpr std::uint32_t kFreqTotal = 1u << kFreqBits;

// Integer frequency table handed from the model to the arithmetic coder.
// Every symbol has freq >= 1 and the frequencies sum to kFreqTotal.
struct QuantizedDistribution {
  std::array<std::uint32_t, kAlphabetSize> freqs{};
  std::array<std::uint32_t, kAlphabetSize + 1> cumulative{};

  static QuantizedDistribution uniform();
  // Builds cumulative from freqs.
  void rebuild_cumulative();
  // Checks the table invariants.
  bool valid() const;
};

// Floor of p * (total - 256), plus one for every symbol, then the remaining
// units go to the largest fractional remainders (ties to the lower symbol).
// Throws std::invalid_argument for negative/NaN inputs or a sum off by > 1e-6.
QuantizedDistribution quantize(std::span<const double> probs);

// MSB-first packed bits; the final byte is zero padded.
struct Bitstream {
  std::vector<std::uint8_t> bytes;
  std::uint64_t bit_length = 0;
};

class ArithEncoder {
 public:
  void encode(const QuantizedDistribution& dist, std::uint8_t symbol);
  // Flushes the disambiguating bits. The encoder is spent afterwards.
  Bitstream finish();

  std::uint64_t bits_written() const { return out_.bit_length; }

 private:
  void put_bit(unsigned bit);
  void put_bit_plus_pending(unsigned bit);

  std::uint64_t low_ = 0;
  std::uint64_t high_ = 0xFFFFFFFFull;
  std::uint64_t pending_ = 0;
  Bitstream out_;
};

class BitstreamExhausted : public std::runtime_error {
 public:
  explicit BitstreamExhausted(std::uint64_t bit_position);
  std::uint64_t bit_position() const { return bit_position_; }

 private:
  std::uint64_t bit_position_;
};

class ArithDecoder {
 public:
  // The decoder may look up to kLookaheadBits past bit_length (those read as
  // zero); reading further throws BitstreamExhausted.
  static constexpr std::uint64_t kLookaheadBits = 32;

  ArithDecoder(std::span<const std::uint8_t> bytes, std::uint64_t bit_length);

  std::uint8_t decode(const QuantizedDistribution& dist);
  std::uint64_t bits_consumed() const { return cursor_; }

 private:
  unsigned next_bit();

  std::span<const std::uint8_t> bytes_;
  std::uint64_t bit_length_;
  std::uint64_t cursor_ = 0;
  std::uint64_t low_ = 0;
  std::uint64_t high_ = 0xFFFFFFFFull;
  std::uint64_t code_ = 0;
};

}  // namespace edpc
