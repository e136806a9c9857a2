/*
 * Copyright 2026 The TwigStore Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <map>
#include <random>

#include <gtest/gtest.h>

#include "twigstore/indexer.hpp"
#include "test_util.hpp"

namespace twigstore {
namespace {

using testing::random_bytes;

/// Brute-force oracle: prefix -> sorted positions.
using Oracle = std::map<IndexPrefix, std::vector<std::uint64_t>>;

std::vector<std::uint64_t> oracle_get(const Oracle& o, ByteView key) {
  auto it = o.find(index_prefix(key));
  return it == o.end() ? std::vector<std::uint64_t>{} : it->second;
}

TEST(Indexer, PrefixIsNineBytesZeroPadded) {
  Bytes k{1, 2, 3};
  auto p = index_prefix(k);
  EXPECT_EQ(p, (IndexPrefix{1, 2, 3, 0, 0, 0, 0, 0, 0}));
  Bytes long_key(20, 0xAB);
  IndexPrefix expected;
  expected.fill(0xAB);
  EXPECT_EQ(index_prefix(long_key), expected);
}

TEST(Indexer, PutGetEraseAgainstOracle) {
  std::mt19937_64 rng(1);
  InMemoryIndexer idx;
  Oracle oracle;
  std::vector<Bytes> keys;
  for (int i = 0; i < 5000; ++i) {
    Bytes k = random_bytes(rng, 1 + rng() % 32);
    // force some prefix collisions
    if (i % 50 == 0 && !keys.empty()) {
      k = keys[rng() % keys.size()];
      k.resize(12, 0);
      k[11] ^= static_cast<std::uint8_t>(1 + i);
    }
    std::uint64_t pos = (rng() % kMaxPosition) & ~std::uint64_t{7};
    idx.put(k, pos);
    auto& v = oracle[index_prefix(k)];
    v.insert(std::upper_bound(v.begin(), v.end(), pos), pos);
    keys.push_back(k);
  }
  EXPECT_EQ(idx.size(), keys.size());
  for (const auto& k : keys) EXPECT_EQ(idx.get(k), oracle_get(oracle, k));
  // erase half
  for (std::size_t i = 0; i < keys.size(); i += 2) {
    auto& v = oracle[index_prefix(keys[i])];
    std::uint64_t pos = v.front();
    idx.erase(keys[i], pos);
    v.erase(v.begin());
    if (v.empty()) oracle.erase(index_prefix(keys[i]));
  }
  for (const auto& k : keys) EXPECT_EQ(idx.get(k), oracle_get(oracle, k));
  EXPECT_EQ(idx.get(Bytes{0xFF, 0xFF, 0xFF, 0xFF}), std::vector<std::uint64_t>{});
}

TEST(Indexer, CollidingKeysShareABucket) {
  InMemoryIndexer idx;
  Bytes a(16, 0x11), b(16, 0x11);
  b[15] = 0x22;  // same first 9 bytes
  idx.put(a, 800);
  idx.put(b, 96);
  EXPECT_EQ(idx.get(a), (std::vector<std::uint64_t>{96, 800}));
  EXPECT_EQ(idx.get(b), idx.get(a));
  idx.replace(b, 96, 4000);
  EXPECT_EQ(idx.get(a), (std::vector<std::uint64_t>{800, 4000}));
  EXPECT_EQ(idx.size(), 2u);
}

TEST(Indexer, PredecessorMatchesBruteForce) {
  std::mt19937_64 rng(2);
  InMemoryIndexer idx;
  Oracle oracle;
  idx.put(Bytes{0}, 0);
  oracle[index_prefix(Bytes{0})].push_back(0);
  for (int i = 1; i < 3000; ++i) {
    // cluster keys into few stripes so predecessor walks cross empty stripes
    Bytes k = random_bytes(rng, 12);
    k[0] = static_cast<std::uint8_t>(rng() % 4 * 60);
    idx.put(k, static_cast<std::uint64_t>(i) * 8);
    oracle[index_prefix(k)].push_back(static_cast<std::uint64_t>(i) * 8);
  }
  for (int q = 0; q < 3000; ++q) {
    Bytes probe = random_bytes(rng, 1 + rng() % 12);
    auto it = oracle.upper_bound(index_prefix(probe));
    ASSERT_NE(it, oracle.begin());
    --it;
    auto got = idx.predecessor(probe);
    EXPECT_EQ(got.prefix, it->first);
    EXPECT_EQ(got.positions, it->second);
    if (it != oracle.begin()) {
      auto below = std::prev(it);
      auto got_below = idx.predecessor_below(it->first);
      EXPECT_EQ(got_below.prefix, below->first);
      EXPECT_EQ(got_below.positions, below->second);
    }
  }
}

TEST(Indexer, PredecessorSkipsStripesEmptiedByErase) {
  InMemoryIndexer idx;
  Bytes lo{0x00, 0x01}, mid{0x70, 0x00, 5}, hi{0xF0, 0x10};
  idx.put(lo, 8);
  idx.put(mid, 16);
  EXPECT_EQ(idx.predecessor(hi).positions, (std::vector<std::uint64_t>{16}));
  idx.erase(mid, 16);
  EXPECT_EQ(idx.predecessor(hi).positions, (std::vector<std::uint64_t>{8}));
  idx.put(mid, 24);
  EXPECT_EQ(idx.predecessor(hi).positions, (std::vector<std::uint64_t>{24}));
  // stripe 63 sits at a bitmap word boundary
  Bytes edge{0x00, 0x3F, 1};
  idx.put(edge, 32);
  EXPECT_EQ(idx.predecessor(Bytes{0x00, 0x40}).positions, (std::vector<std::uint64_t>{32}));
  EXPECT_EQ(idx.predecessor(Bytes{0x00, 0x3F, 0}).positions, (std::vector<std::uint64_t>{8}));
}

TEST(Indexer, ExactPrefixIsItsOwnPredecessor) {
  InMemoryIndexer idx;
  Bytes lo{0x00}, k{0x40, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  idx.put(lo, 8);
  idx.put(k, 16);
  auto b = idx.predecessor(k);
  EXPECT_EQ(b.positions, (std::vector<std::uint64_t>{16}));
  EXPECT_EQ(idx.predecessor_below(index_prefix(k)).positions, (std::vector<std::uint64_t>{8}));
}

TEST(Indexer, ConsistencyErrors) {
  InMemoryIndexer idx;
  Bytes k{5, 5};
  try {
    idx.erase(k, 8);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::consistency);
  }
  EXPECT_THROW(idx.replace(k, 8, 16), Error);
  EXPECT_THROW(idx.predecessor(k), Error);
}

TEST(Indexer, StripeRangeIsEnforced) {
  // shard 1 of 4 owns first bytes 0x40..0x7F
  InMemoryIndexer idx(0x4000, 0x4000);
  idx.put(Bytes{0x40}, 8);
  EXPECT_THROW(idx.put(Bytes{0x80}, 8), Error);
  EXPECT_THROW(InMemoryIndexer(65535, 2), Error);
}

TEST(Indexer, MemoryGrowsWithKeys) {
  std::mt19937_64 rng(3);
  InMemoryIndexer idx;
  std::size_t empty = idx.memory_bytes();
  for (int i = 0; i < 100000; ++i) idx.put(random_bytes(rng, 32), static_cast<std::uint64_t>(i) * 8);
  std::size_t full = idx.memory_bytes();
  EXPECT_GT(full, empty);
  RecordProperty("bytes_per_key", std::to_string((full - empty) / 100000));
}

}  // namespace
}  // namespace twigstore
