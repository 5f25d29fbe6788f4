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

#include "edpc/container.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <istream>
#include <iterator>
#include <ostream>

namespace edpc {
namespace {

constexpr std::uint8_t kMagic[4] = {'E', 'D', 'P', 'C'};
constexpr std::size_t kSegmentCountOffset = 49;

class Writer {
 public:
  explicit Writer(std::vector<std::uint8_t>& out) : out_(out) {}
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

 private:
  std::vector<std::uint8_t>& out_;
};

// Callers check bounds before reading.
class Reader {
 public:
  Reader(std::span<const std::uint8_t> in, std::size_t pos) : in_(in), pos_(pos) {}
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{in_[pos_++]} << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{in_[pos_++]} << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::size_t pos() const { return pos_; }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_;
};

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; headers are far below that limit.
  crc = crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

std::size_t payload_bytes(std::uint64_t bits) { return static_cast<std::size_t>((bits + 7) / 8); }

}  // namespace

ContainerError::ContainerError(Kind kind, const std::string& message, std::size_t segment)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind), segment_(segment) {}

const char* to_string(ContainerError::Kind kind) {
  switch (kind) {
    case ContainerError::Kind::kBadMagic: return "bad magic";
    case ContainerError::Kind::kBadVersion: return "bad version";
    case ContainerError::Kind::kBadChecksum: return "bad header checksum";
    case ContainerError::Kind::kTruncated: return "truncated";
    case ContainerError::Kind::kMalformed: return "malformed";
    case ContainerError::Kind::kIo: return "i/o error";
  }
  return "unknown";
}

std::size_t Container::encoded_size() const {
  std::size_t n = header.encoded_size();
  for (const auto& s : segments) n += s.size();
  return n;
}

void validate(const Container& c) {
  using K = ContainerError::Kind;
  const Header& h = c.header;
  try {
    h.config.validate();
  } catch (const std::invalid_argument& e) {
    throw ContainerError(K::kMalformed, e.what());
  }
  if (h.segment_bits.size() != h.segment_count || c.segments.size() != h.segment_count) {
    throw ContainerError(K::kMalformed, "segment count does not match the segment tables");
  }
  if (h.segment_count == 0) {
    if (h.original_len != 0) throw ContainerError(K::kMalformed, "non-empty input without segments");
    return;
  }
  if (h.segment_count > h.config.lanes || h.config.lanes % h.segment_count != 0) {
    throw ContainerError(K::kMalformed, "segment count must divide the lane count");
  }
  for (std::size_t s = 0; s < h.segment_count; ++s) {
    if (c.segments[s].size() != payload_bytes(h.segment_bits[s])) {
      throw ContainerError(K::kMalformed, "segment payload does not match its bit length", s);
    }
  }
}

std::vector<std::uint8_t> serialize(const Container& c) {
  validate(c);
  const Header& h = c.header;
  const ModelConfig& m = h.config;
  std::vector<std::uint8_t> out;
  out.reserve(c.encoded_size());
  Writer w(out);
  for (std::uint8_t b : kMagic) w.u8(b);
  w.u8(kFormatVersion);
  w.u64(h.original_len);
  w.u64(m.seed);
  for (std::uint32_t v : {m.context_len, m.embed_dim, m.hidden_local, m.hidden_global, m.lte_ratio,
                          m.branches, m.lanes, h.segment_count}) {
    w.u32(v);
  }
  for (double v : {m.lr, m.beta1, m.beta2, m.adam_eps}) w.f64(v);
  for (std::uint64_t bits : h.segment_bits) w.u64(bits);
  w.u32(crc32_of(out));
  for (const auto& s : c.segments) out.insert(out.end(), s.begin(), s.end());
  return out;
}

std::size_t write_container(const Container& c, std::ostream& sink) {
  const auto bytes = serialize(c);
  sink.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!sink) throw ContainerError(ContainerError::Kind::kIo, "failed to write container");
  return bytes.size();
}

Container parse_container(std::span<const std::uint8_t> bytes) {
  using K = ContainerError::Kind;
  const std::size_t magic_len = std::min<std::size_t>(bytes.size(), 4);
  if (!std::equal(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(magic_len), kMagic)) {
    throw ContainerError(K::kBadMagic, "not an EDPC container");
  }
  if (bytes.size() < 5) throw ContainerError(K::kTruncated, "header ends before the version byte");
  if (bytes[4] != kFormatVersion) {
    throw ContainerError(K::kBadVersion, "unsupported format version " + std::to_string(bytes[4]));
  }
  if (bytes.size() < kFixedHeaderBytes) throw ContainerError(K::kTruncated, "fixed header incomplete");

  const std::uint32_t segment_count = Reader(bytes, kSegmentCountOffset).u32();
  const std::uint64_t header_len = kFixedHeaderBytes + 8 * std::uint64_t{segment_count};
  if (header_len + kChecksumBytes > bytes.size()) {
    throw ContainerError(K::kTruncated, "segment table extends past the end of the input");
  }
  const auto header_bytes = bytes.first(static_cast<std::size_t>(header_len));
  const std::uint32_t stored_crc = Reader(bytes, static_cast<std::size_t>(header_len)).u32();
  if (crc32_of(header_bytes) != stored_crc) throw ContainerError(K::kBadChecksum, "header CRC mismatch");

  Container c;
  Header& h = c.header;
  ModelConfig& m = h.config;
  Reader r(bytes, 5);
  h.original_len = r.u64();
  m.seed = r.u64();
  m.context_len = r.u32();
  m.embed_dim = r.u32();
  m.hidden_local = r.u32();
  m.hidden_global = r.u32();
  m.lte_ratio = r.u32();
  m.branches = r.u32();
  m.lanes = r.u32();
  h.segment_count = r.u32();
  m.lr = r.f64();
  m.beta1 = r.f64();
  m.beta2 = r.f64();
  m.adam_eps = r.f64();
  // Bounded by the length check above.
  h.segment_bits.resize(segment_count);
  for (auto& bits : h.segment_bits) bits = r.u64();

  std::size_t pos = static_cast<std::size_t>(header_len) + kChecksumBytes;
  c.segments.reserve(segment_count);
  for (std::size_t s = 0; s < segment_count; ++s) {
    const std::uint64_t bits = h.segment_bits[s];
    const std::size_t remaining = bytes.size() - pos;
    if (bits > std::uint64_t{remaining} * 8) {
      throw ContainerError(K::kTruncated, "payload of segment " + std::to_string(s) + " is cut short", s);
    }
    const std::size_t n = payload_bytes(bits);
    c.segments.emplace_back(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                            bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
    if (bits % 8 != 0 && (c.segments.back().back() & (0xFFu >> (bits % 8))) != 0) {
      throw ContainerError(K::kMalformed, "non-zero padding bits in segment " + std::to_string(s), s);
    }
    pos += n;
  }
  if (pos != bytes.size()) throw ContainerError(K::kMalformed, "trailing bytes after the last segment");
  validate(c);
  return c;
}

Container read_container(std::istream& source) {
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(source)), std::istreambuf_iterator<char>());
  if (source.bad()) throw ContainerError(ContainerError::Kind::kIo, "failed to read container");
  return parse_container(bytes);
}

}  // namespace edpc
