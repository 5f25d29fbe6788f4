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

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "edpc/coder.hpp"
#include "helpers.hpp"

using namespace edpc;

namespace {

std::vector<double> dirichlet_row(std::mt19937_64& gen, double alpha) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<double> p(256);
  double s = 0.0;
  for (double& v : p) {
    v = gamma(gen);
    s += v;
  }
  if (s == 0.0) {
    p.assign(256, 1.0 / 256);
    return p;
  }
  for (double& v : p) v /= s;
  // Renormalize again so the row sums to 1 within rounding.
  s = std::accumulate(p.begin(), p.end(), 0.0);
  for (double& v : p) v /= s;
  return p;
}

double ideal_bits(const QuantizedDistribution& q, std::uint8_t sym) {
  return -std::log2(static_cast<double>(q.freqs[sym]) / kFreqTotal);
}

std::vector<std::uint8_t> roundtrip(const std::vector<QuantizedDistribution>& dists,
                                    const std::vector<std::uint8_t>& msg, Bitstream* stream_out = nullptr) {
  ArithEncoder enc;
  for (std::size_t i = 0; i < msg.size(); ++i) enc.encode(dists[i], msg[i]);
  Bitstream bs = enc.finish();
  ArithDecoder dec(bs.bytes, bs.bit_length);
  std::vector<std::uint8_t> out;
  for (std::size_t i = 0; i < msg.size(); ++i) out.push_back(dec.decode(dists[i]));
  if (stream_out) *stream_out = std::move(bs);
  return out;
}

}  // namespace

TEST_CASE("quantize matches a reference table") {
  std::vector<double> p(256);
  for (std::size_t i = 0; i < 256; ++i) p[i] = static_cast<double>(i % 7 + 1);
  const double s = std::accumulate(p.begin(), p.end(), 0.0);
  for (double& v : p) v /= s;
  const QuantizedDistribution q = quantize(p);
  const std::uint32_t expected[16] = {65, 129, 193, 258, 322, 386, 450, 65, 129, 193, 258, 322, 386, 450, 65, 129};
  for (std::size_t i = 0; i < 16; ++i) CHECK(q.freqs[i] == expected[i]);
  CHECK(q.valid());
}

TEST_CASE("quantize point mass and uniform") {
  std::vector<double> p(256, 0.0);
  p[65] = 1.0;
  const QuantizedDistribution q = quantize(p);
  CHECK(q.freqs[65] == 65281);
  for (std::size_t i = 0; i < 256; ++i) {
    if (i != 65) CHECK(q.freqs[i] == 1);
  }
  const QuantizedDistribution u = quantize(std::vector<double>(256, 1.0 / 256));
  for (auto f : u.freqs) CHECK(f == 256);
  CHECK(u.freqs == QuantizedDistribution::uniform().freqs);
  CHECK(u.cumulative == QuantizedDistribution::uniform().cumulative);
}

TEST_CASE("quantize rejects malformed input") {
  CHECK_THROWS_AS(quantize(std::vector<double>(255, 1.0 / 255)), std::invalid_argument);
  std::vector<double> p(256, 1.0 / 256);
  p[3] = -p[3];
  CHECK_THROWS_AS(quantize(p), std::invalid_argument);
  p[3] = std::nan("");
  CHECK_THROWS_AS(quantize(p), std::invalid_argument);
  CHECK_THROWS_AS(quantize(std::vector<double>(256, 1.1 / 256)), std::invalid_argument);
}

TEST_CASE("quantized Dirichlet rows keep the invariants and low divergence") {
  std::mt19937_64 gen(12);
  double worst = 0.0;
  for (int row = 0; row < 1000; ++row) {
    const double alpha = row % 2 ? 1.0 : 0.05;
    const auto p = dirichlet_row(gen, alpha);
    const QuantizedDistribution q = quantize(p);
    REQUIRE(q.valid());
    REQUIRE(*std::min_element(q.freqs.begin(), q.freqs.end()) >= 1);
    REQUIRE(q.cumulative[256] == kFreqTotal);
    double kl = 0.0;
    for (std::size_t i = 0; i < 256; ++i) {
      if (p[i] > 0) kl += p[i] * std::log(p[i] / (static_cast<double>(q.freqs[i]) / kFreqTotal));
    }
    worst = std::max(worst, kl);
  }
  MESSAGE("worst KL " << worst);
  CHECK(worst < 0.01);
}

TEST_CASE("quantize commutes with permutations when remainders are distinct") {
  std::mt19937_64 gen(13);
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = dirichlet_row(gen, 1.0);
    std::vector<std::size_t> perm(256);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), gen);
    std::vector<double> pp(256);
    for (std::size_t i = 0; i < 256; ++i) pp[i] = p[perm[i]];
    const auto q = quantize(p);
    const auto qp = quantize(pp);
    for (std::size_t i = 0; i < 256; ++i) REQUIRE(qp.freqs[i] == q.freqs[perm[i]]);
  }
}

TEST_CASE("uniform coding spends eight bits per symbol") {
  Rng rng(1);
  const auto msg = edpc::testing::random_bytes(5000, rng);
  ArithEncoder enc;
  const auto u = QuantizedDistribution::uniform();
  for (auto b : msg) enc.encode(u, b);
  const Bitstream bs = enc.finish();
  CHECK(bs.bytes.size() + 2 >= msg.size());
  CHECK(bs.bytes.size() <= msg.size() + 2);
}

TEST_CASE("a near-certain symbol costs almost nothing") {
  std::vector<double> p(256, 0.0);
  p[65] = 1.0;
  const auto q = quantize(p);
  const std::vector<QuantizedDistribution> dists(1000, q);
  const std::vector<std::uint8_t> msg(1000, 65);
  Bitstream bs;
  CHECK(roundtrip(dists, msg, &bs) == msg);
  CHECK(bs.bytes.size() < 10);
}

TEST_CASE("empty message") {
  ArithEncoder enc;
  const Bitstream bs = enc.finish();
  CHECK(bs.bytes.size() <= 2);
  CHECK(bs.bytes.size() == (bs.bit_length + 7) / 8);
}

TEST_CASE("every single symbol roundtrips") {
  std::mt19937_64 gen(14);
  for (int sym = 0; sym < 256; ++sym) {
    const std::vector<QuantizedDistribution> d = {quantize(dirichlet_row(gen, 0.3))};
    const std::vector<std::uint8_t> msg = {static_cast<std::uint8_t>(sym)};
    REQUIRE(roundtrip(d, msg) == msg);
  }
}

TEST_CASE("random messages roundtrip within the code-length bound") {
  std::mt19937_64 gen(15);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t len = gen() % 3000;
    std::vector<QuantizedDistribution> dists;
    std::vector<std::uint8_t> msg;
    double ideal = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      const auto p = dirichlet_row(gen, trial % 3 == 0 ? 0.02 : 0.5);
      dists.push_back(quantize(p));
      // Draw from p itself most of the time, uniformly otherwise.
      std::uint8_t s;
      if (gen() % 4) {
        std::discrete_distribution<int> pick(p.begin(), p.end());
        s = static_cast<std::uint8_t>(pick(gen));
      } else {
        s = static_cast<std::uint8_t>(gen() & 0xFF);
      }
      msg.push_back(s);
      ideal += ideal_bits(dists.back(), s);
    }
    Bitstream bs;
    REQUIRE(roundtrip(dists, msg, &bs) == msg);
    CHECK(static_cast<double>(bs.bit_length) <= ideal + 32.0);
  }
}

TEST_CASE("fuzz: 1e5 random (dist, symbol) pairs roundtrip") {
  std::mt19937_64 gen(16);
  std::vector<QuantizedDistribution> pool;
  for (int i = 0; i < 64; ++i) pool.push_back(quantize(dirichlet_row(gen, i % 2 ? 0.01 : 2.0)));
  std::vector<QuantizedDistribution> dists;
  std::vector<std::uint8_t> msg;
  for (int i = 0; i < 100000; ++i) {
    dists.push_back(pool[gen() % pool.size()]);
    msg.push_back(static_cast<std::uint8_t>(gen() & 0xFF));
  }
  CHECK(roundtrip(dists, msg) == msg);
}

TEST_CASE("decoder refuses to read past the lookahead") {
  ArithDecoder dec({}, 0);
  const auto u = QuantizedDistribution::uniform();
  CHECK_THROWS_AS(
      {
        for (int i = 0; i < 16; ++i) dec.decode(u);
      },
      BitstreamExhausted);
}

TEST_CASE("decoding with the wrong distribution diverges without breaking the decoder") {
  std::mt19937_64 gen(17);
  std::vector<QuantizedDistribution> dists, wrong;
  std::vector<std::uint8_t> msg;
  for (int i = 0; i < 500; ++i) {
    const auto p = dirichlet_row(gen, 0.1);
    dists.push_back(quantize(p));
    wrong.push_back(quantize(dirichlet_row(gen, 0.1)));
    std::discrete_distribution<int> pick(p.begin(), p.end());
    msg.push_back(static_cast<std::uint8_t>(pick(gen)));
  }
  ArithEncoder enc;
  for (std::size_t i = 0; i < msg.size(); ++i) enc.encode(dists[i], msg[i]);
  const Bitstream bs = enc.finish();
  ArithDecoder dec(bs.bytes, bs.bit_length);
  std::vector<std::uint8_t> out;
  try {
    for (std::size_t i = 0; i < msg.size(); ++i) out.push_back(dec.decode(wrong[i]));
  } catch (const BitstreamExhausted&) {
  }
  CHECK(out != msg);
}
