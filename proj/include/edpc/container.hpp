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
#include <stdexcept>
#include <string>
#include <vector>

#include "edpc/model.hpp"

namespace edpc {

inline constexpr std::uint8_t kFormatVersion = 1;
// magic(4) version(1) original_len(8) seed(8) eight u32 fields(32) four f64 fields(32)
inline constexpr std::size_t kFixedHeaderBytes = 85;
inline constexpr std::size_t kChecksumBytes = 4;

struct Header {
  ModelConfig config;
  std::uint64_t original_len = 0;
  std::uint32_t segment_count = 0;
  std::vector<std::uint64_t> segment_bits;  // one per segment

  std::size_t encoded_size() const {
    return kFixedHeaderBytes + 8 * segment_bits.size() + kChecksumBytes;
  }
  friend bool operator==(const Header&, const Header&) = default;
};

struct Container {
  Header header;
  std::vector<std::vector<std::uint8_t>> segments;

  // Header plus payload bytes.
  std::size_t encoded_size() const;
  friend bool operator==(const Container&, const Container&) = default;
};

class ContainerError : public std::runtime_error {
 public:
  enum class Kind { kBadMagic, kBadVersion, kBadChecksum, kTruncated, kMalformed, kIo };

  ContainerError(Kind kind, const std::string& message, std::size_t segment = kNoSegment);

  Kind kind() const { return kind_; }
  // Segment index for truncation errors, kNoSegment otherwise.
  std::size_t segment() const { return segment_; }

  static constexpr std::size_t kNoSegment = static_cast<std::size_t>(-1);

 private:
  Kind kind_;
  std::size_t segment_;
};

const char* to_string(ContainerError::Kind kind);

// Validates the structural invariants (segment count and bit lengths agree,
// S divides the lane count, payload sizes match the declared bit lengths).
void validate(const Container& c);

std::vector<std::uint8_t> serialize(const Container& c);
std::size_t write_container(const Container& c, std::ostream& sink);

// Parses untrusted bytes. Declared sizes are bounds-checked against the
// input before anything proportional to them is allocated.
Container parse_container(std::span<const std::uint8_t> bytes);
Container read_container(std::istream& source);

}  // namespace edpc
