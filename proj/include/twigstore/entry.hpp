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

#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <string>

#include "twigstore/bytes.hpp"
#include "twigstore/error.hpp"
#include "twigstore/hash.hpp"

namespace twigstore {

inline constexpr std::uint64_t kNullId = std::numeric_limits<std::uint64_t>::max();
inline constexpr std::size_t kMaxKeyLen = 256;
inline constexpr std::size_t kMaxValueLen = (std::size_t{1} << 24) - 1;
inline constexpr std::size_t kFrameHeaderLen = 40;
inline constexpr std::uint32_t kMaxTxIndex = (1u << 24) - 1;

/// Versions pack (block height, tx index) so that they order by time.
constexpr std::uint64_t pack_version(std::uint64_t height, std::uint32_t tx_index) {
  return (height << 24) | (tx_index & kMaxTxIndex);
}
constexpr std::uint64_t version_height(std::uint64_t version) { return version >> 24; }
constexpr std::uint32_t version_tx(std::uint64_t version) {
  return static_cast<std::uint32_t>(version & kMaxTxIndex);
}

/// An immutable leaf record of the append-only log.
struct Entry {
  std::uint64_t id = 0;
  Bytes key;
  Bytes value;
  Bytes next_key;
  std::uint64_t old_id = kNullId;
  std::uint64_t old_next_key_id = kNullId;
  std::uint64_t version = 0;

  bool operator==(const Entry&) const = default;
};

inline std::size_t frame_size(std::size_t key_len, std::size_t next_key_len,
                              std::size_t value_len) {
  std::size_t raw = kFrameHeaderLen + key_len + next_key_len + value_len;
  return (raw + 7) & ~std::size_t{7};
}

inline std::size_t frame_size(const Entry& e) {
  return frame_size(e.key.size(), e.next_key.size(), e.value.size());
}

inline void check_entry_bounds(const Entry& e) {
  if (e.key.empty() || e.key.size() > kMaxKeyLen) {
    fail(ErrorCode::encoding, "key length " + std::to_string(e.key.size()) + " outside 1..256");
  }
  if (e.next_key.empty() || e.next_key.size() > kMaxKeyLen) {
    fail(ErrorCode::encoding,
         "next_key length " + std::to_string(e.next_key.size()) + " outside 1..256");
  }
  if (e.value.size() > kMaxValueLen) {
    fail(ErrorCode::encoding, "value length " + std::to_string(e.value.size()) + " exceeds 2^24-1");
  }
}

/// Appends the canonical little-endian frame of `e` to `out`.
inline void serialize_entry_into(const Entry& e, Bytes& out) {
  check_entry_bounds(e);
  const std::size_t start = out.size();
  const std::size_t need = start + frame_size(e);
  if (out.capacity() < need) out.reserve(std::max(need, 2 * out.capacity()));
  le::put<std::uint64_t>(out, e.id);
  le::put<std::uint64_t>(out, e.version);
  le::put<std::uint64_t>(out, e.old_id);
  le::put<std::uint64_t>(out, e.old_next_key_id);
  le::put<std::uint16_t>(out, static_cast<std::uint16_t>(e.key.size()));
  le::put<std::uint16_t>(out, static_cast<std::uint16_t>(e.next_key.size()));
  le::put<std::uint32_t>(out, static_cast<std::uint32_t>(e.value.size()));
  out.insert(out.end(), e.key.begin(), e.key.end());
  out.insert(out.end(), e.next_key.begin(), e.next_key.end());
  out.insert(out.end(), e.value.begin(), e.value.end());
  out.resize(start + frame_size(e), 0);
}

inline Bytes serialize_entry(const Entry& e) {
  Bytes out;
  serialize_entry_into(e, out);
  return out;
}

struct DecodedEntry {
  Entry entry;
  std::size_t consumed = 0;
};

/// Total frame length implied by a header, or throws if the header is invalid.
inline std::size_t frame_length_from_header(ByteView header) {
  if (header.size() < kFrameHeaderLen) fail(ErrorCode::decode, "truncated frame header");
  auto key_len = le::get<std::uint16_t>(header.data() + 32);
  auto next_len = le::get<std::uint16_t>(header.data() + 34);
  auto value_len = le::get<std::uint32_t>(header.data() + 36);
  if (key_len == 0 || key_len > kMaxKeyLen) fail(ErrorCode::decode, "key length out of bounds");
  if (next_len == 0 || next_len > kMaxKeyLen) {
    fail(ErrorCode::decode, "next_key length out of bounds");
  }
  if (value_len > kMaxValueLen) fail(ErrorCode::decode, "value length out of bounds");
  return frame_size(key_len, next_len, value_len);
}

inline DecodedEntry deserialize_entry(ByteView data) {
  if (data.empty()) fail(ErrorCode::decode, "empty input");
  const std::size_t total = frame_length_from_header(data);
  if (data.size() < total) fail(ErrorCode::decode, "truncated frame body");

  ByteReader r(data.first(total));
  DecodedEntry out;
  Entry& e = out.entry;
  e.id = r.read<std::uint64_t>();
  e.version = r.read<std::uint64_t>();
  e.old_id = r.read<std::uint64_t>();
  e.old_next_key_id = r.read<std::uint64_t>();
  auto key_len = r.read<std::uint16_t>();
  auto next_len = r.read<std::uint16_t>();
  auto value_len = r.read<std::uint32_t>();
  auto key = r.take(key_len);
  auto next = r.take(next_len);
  auto value = r.take(value_len);
  e.key.assign(key.begin(), key.end());
  e.next_key.assign(next.begin(), next.end());
  e.value.assign(value.begin(), value.end());
  for (auto b : r.take(r.remaining())) {
    if (b != 0) fail(ErrorCode::decode, "non-zero frame padding");
  }
  out.consumed = total;
  return out;
}

inline Digest leaf_hash(const Hasher& h, ByteView frame) { return h(tag::leaf, frame); }

inline Digest leaf_hash(const Hasher& h, const Entry& e) {
  return leaf_hash(h, serialize_entry(e));
}

/// Maps an application-level key onto the 32-byte key space the store uses.
inline Bytes canonical_key(const Hasher& h, ByteView app_key) {
  Digest d = h.plain(app_key);
  return Bytes(d.begin(), d.end());
}

/// `key` lies in the half-open ring interval [from, to) where `to <= from`
/// means the interval wraps past the top of the key space.
inline bool ring_covers(ByteView from, ByteView to, ByteView key) {
  if (lexicographic_less(from, to)) {
    return !lexicographic_less(key, from) && lexicographic_less(key, to);
  }
  return !lexicographic_less(key, from) || lexicographic_less(key, to);
}

/// Strict version of ring_covers used for exclusion: from < key < to (with wrap).
inline bool ring_straddles(ByteView from, ByteView to, ByteView key) {
  return ring_covers(from, to, key) && !bytes_equal(from, key);
}

}  // namespace twigstore
