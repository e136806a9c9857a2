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

#include <openssl/sha.h>

#include <random>

#include <gtest/gtest.h>

#include "twigstore/entry.hpp"
#include "test_util.hpp"

namespace twigstore {
namespace {

Digest reference_sha256(std::uint8_t tag, ByteView data) {
  Bytes buf;
  buf.push_back(tag);
  buf.insert(buf.end(), data.begin(), data.end());
  Digest d;
  SHA256(buf.data(), buf.size(), d.data());
  return d;
}

Entry random_entry(std::mt19937_64& rng) {
  Entry e;
  e.id = rng();
  e.version = pack_version(rng() >> 30, static_cast<std::uint32_t>(rng() & kMaxTxIndex));
  e.old_id = rng() % 3 == 0 ? kNullId : rng();
  e.old_next_key_id = rng() % 3 == 0 ? kNullId : rng();
  e.key = testing::random_bytes(rng, 1 + rng() % kMaxKeyLen);
  e.next_key = testing::random_bytes(rng, 1 + rng() % kMaxKeyLen);
  e.value = testing::random_bytes(rng, rng() % 600);
  return e;
}

TEST(EntryCodec, HandComputedMinimalFrame) {
  Entry e{0, {0x00}, {}, {0xFF}, kNullId, kNullId, 0};
  Bytes expected;
  for (int i = 0; i < 16; ++i) expected.push_back(0x00);  // id, version
  for (int i = 0; i < 16; ++i) expected.push_back(0xFF);  // old_id, old_next_key_id
  expected.insert(expected.end(), {0x01, 0x00, 0x01, 0x00, 0x00, 0x00, 0x00, 0x00});
  expected.push_back(0x00);  // key
  expected.push_back(0xFF);  // next_key
  expected.resize(48, 0x00);
  Bytes got = serialize_entry(e);
  ASSERT_EQ(got.size(), 48u);
  EXPECT_EQ(got, expected);
  for (int i = 0; i < 8; ++i) EXPECT_EQ(got[i], 0);
}

TEST(EntryCodec, RoundTripRandomEntries) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 1000; ++i) {
    Entry e = random_entry(rng);
    Bytes b = serialize_entry(e);
    EXPECT_EQ(b.size() % 8, 0u);
    auto d = deserialize_entry(b);
    EXPECT_EQ(d.entry, e);
    EXPECT_EQ(d.consumed, b.size());
  }
}

TEST(EntryCodec, ConcatenatedFramesSplitExactly) {
  std::mt19937_64 rng(12);
  std::vector<Entry> entries;
  Bytes all;
  for (int i = 0; i < 50; ++i) {
    entries.push_back(random_entry(rng));
    serialize_entry_into(entries.back(), all);
  }
  std::size_t at = 0;
  std::size_t n = 0;
  while (at < all.size()) {
    auto d = deserialize_entry(ByteView(all).subspan(at));
    EXPECT_EQ(d.entry, entries[n]);
    at += d.consumed;
    ++n;
  }
  EXPECT_EQ(n, entries.size());
  EXPECT_EQ(at, all.size());
}

TEST(EntryCodec, BoundViolations) {
  Entry e{0, Bytes(257, 1), {}, {2}, kNullId, kNullId, 0};
  try {
    serialize_entry(e);
    FAIL() << "expected encoding error";
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), ErrorCode::encoding);
  }
  e.key = {};
  EXPECT_THROW(serialize_entry(e), Error);
  e.key = Bytes(256, 1);
  EXPECT_NO_THROW(serialize_entry(e));
}

TEST(EntryCodec, DecodeErrors) {
  auto expect_decode = [](ByteView b) {
    try {
      deserialize_entry(b);
      ADD_FAILURE() << "expected decode error";
    } catch (const Error& err) {
      EXPECT_EQ(err.code(), ErrorCode::decode);
    }
  };
  expect_decode({});
  Bytes b = serialize_entry(Entry{7, {1, 2, 3}, {9}, {4}, kNullId, 3, 5});
  // value_len = 2^24
  Bytes big = b;
  big[36] = 0;
  big[37] = 0;
  big[38] = 0;
  big[39] = 1;
  expect_decode(big);
  expect_decode(ByteView(b).first(b.size() - 1));
  Bytes padded = b;
  padded.back() = 1;
  expect_decode(padded);
}

TEST(EntryCodec, LeafHashMatchesReferenceAndSeparatesVersions) {
  Hasher h;
  Entry a{1, {1}, {2}, {3}, kNullId, kNullId, pack_version(5, 1)};
  Entry b = a;
  b.version = pack_version(5, 2);
  EXPECT_EQ(leaf_hash(h, a), reference_sha256(0x00, serialize_entry(a)));
  EXPECT_EQ(leaf_hash(h, b), reference_sha256(0x00, serialize_entry(b)));
  EXPECT_NE(leaf_hash(h, a), leaf_hash(h, b));
  EXPECT_EQ(leaf_hash(h, a), leaf_hash(h, a));
  EXPECT_EQ(leaf_hash(h, a).size(), 32u);
}

TEST(EntryCodec, SingleBitFlipsChangeLeafHash) {
  std::mt19937_64 rng(13);
  Hasher h;
  Entry e = random_entry(rng);
  Bytes frame = serialize_entry(e);
  Digest base = leaf_hash(h, frame);
  for (int i = 0; i < 200; ++i) {
    Bytes f = frame;
    std::size_t bit = rng() % (f.size() * 8);
    f[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
    EXPECT_NE(leaf_hash(h, f), base);
  }
}

TEST(EntryCodec, VersionPacking) {
  auto v = pack_version(123456, 789);
  EXPECT_EQ(version_height(v), 123456u);
  EXPECT_EQ(version_tx(v), 789u);
  EXPECT_LT(pack_version(3, kMaxTxIndex), pack_version(4, 0));
}

TEST(EntryCodec, Blake2sIsConfigurable) {
  Hasher sha(HashAlgorithm::sha256);
  Hasher blake(HashAlgorithm::blake2s256);
  Entry e{1, {1}, {2}, {3}, kNullId, kNullId, 0};
  EXPECT_NE(leaf_hash(sha, e), leaf_hash(blake, e));
  EXPECT_EQ(parse_hash_algorithm("blake2s256"), HashAlgorithm::blake2s256);
  EXPECT_THROW(parse_hash_algorithm("md5"), Error);
}

TEST(EntryCodec, RingIntervals) {
  Bytes lo{0x10}, mid{0x20}, hi{0x30};
  EXPECT_TRUE(ring_straddles(lo, hi, mid));
  EXPECT_FALSE(ring_straddles(lo, hi, lo));
  EXPECT_TRUE(ring_covers(lo, hi, lo));
  EXPECT_FALSE(ring_covers(lo, hi, hi));
  // Wrapping interval (hi, lo) holds everything above hi and below lo.
  EXPECT_TRUE(ring_straddles(hi, lo, Bytes{0x40}));
  EXPECT_TRUE(ring_straddles(hi, lo, Bytes{0x01}));
  EXPECT_FALSE(ring_straddles(hi, lo, mid));
}

}  // namespace
}  // namespace twigstore
