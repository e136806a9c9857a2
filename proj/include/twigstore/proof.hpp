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

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "twigstore/bytes.hpp"
#include "twigstore/entry.hpp"
#include "twigstore/error.hpp"
#include "twigstore/hash.hpp"
#include "twigstore/shard.hpp"
#include "twigstore/tree.hpp"
#include "twigstore/twig.hpp"

namespace twigstore {

enum class ProofKind : std::uint8_t { inclusion = 0x01, exclusion = 0x02, historical = 0x03 };

inline const char* to_string(ProofKind k) {
  switch (k) {
    case ProofKind::inclusion: return "inclusion";
    case ProofKind::exclusion: return "exclusion";
    case ProofKind::historical: return "historical";
  }
  return "?";
}

inline ProofKind parse_proof_kind(std::string_view s) {
  if (s == "inclusion") return ProofKind::inclusion;
  if (s == "exclusion") return ProofKind::exclusion;
  if (s == "historical") return ProofKind::historical;
  fail(ErrorCode::configuration, "unknown proof kind '" + std::string(s) + "'");
}

/// Merkle evidence for one entry against a global root.
///
/// Wire format (little-endian): kind u8 | twig_index u64 | leaf_index u16 |
/// shard_id u16 | upper_len u16 | shard_len u16 | entry frame | active bits
/// (256) | entry path (11 x 32) | upper path | shard path | claimed root (32).
/// Exclusion and historical proofs append key_len u16 | key; historical
/// proofs then append height u64.
struct Proof {
  ProofKind kind = ProofKind::inclusion;
  std::uint64_t twig_index = 0;
  std::uint32_t leaf_index = 0;
  std::uint32_t shard_id = 0;
  Bytes entry_frame;
  ActiveBits active_bits;
  std::array<Digest, kTwigDepth> entry_path{};
  std::vector<Digest> upper_path;
  std::vector<Digest> shard_path;
  Digest claimed_root{};
  Bytes key;
  std::uint64_t height = 0;

  Entry entry() const { return deserialize_entry(entry_frame).entry; }
};

inline Bytes encode_proof(const Proof& p) {
  Bytes out;
  out.push_back(static_cast<std::uint8_t>(p.kind));
  le::put<std::uint64_t>(out, p.twig_index);
  le::put<std::uint16_t>(out, static_cast<std::uint16_t>(p.leaf_index));
  le::put<std::uint16_t>(out, static_cast<std::uint16_t>(p.shard_id));
  le::put<std::uint16_t>(out, static_cast<std::uint16_t>(p.upper_path.size()));
  le::put<std::uint16_t>(out, static_cast<std::uint16_t>(p.shard_path.size()));
  out.insert(out.end(), p.entry_frame.begin(), p.entry_frame.end());
  auto bits = p.active_bits.bytes();
  out.insert(out.end(), bits.begin(), bits.end());
  for (const auto& d : p.entry_path) out.insert(out.end(), d.begin(), d.end());
  for (const auto& d : p.upper_path) out.insert(out.end(), d.begin(), d.end());
  for (const auto& d : p.shard_path) out.insert(out.end(), d.begin(), d.end());
  out.insert(out.end(), p.claimed_root.begin(), p.claimed_root.end());
  if (p.kind != ProofKind::inclusion) {
    le::put<std::uint16_t>(out, static_cast<std::uint16_t>(p.key.size()));
    out.insert(out.end(), p.key.begin(), p.key.end());
  }
  if (p.kind == ProofKind::historical) le::put<std::uint64_t>(out, p.height);
  return out;
}

/// Parses proof bytes; any structural problem is a decode error.
inline Proof decode_proof(ByteView data) {
  try {
    ByteReader r(data);
    Proof p;
    auto kind = r.read<std::uint8_t>();
    if (kind < 1 || kind > 3) fail(ErrorCode::decode, "unknown proof kind byte");
    p.kind = static_cast<ProofKind>(kind);
    p.twig_index = r.read<std::uint64_t>();
    p.leaf_index = r.read<std::uint16_t>();
    p.shard_id = r.read<std::uint16_t>();
    auto upper_len = r.read<std::uint16_t>();
    auto shard_len = r.read<std::uint16_t>();
    if (p.leaf_index >= kTwigLeaves) fail(ErrorCode::decode, "leaf index out of range");
    if (upper_len > 64 || shard_len > 64) fail(ErrorCode::decode, "path length out of range");
    auto rest = data.subspan(r.position());
    auto frame_len = frame_length_from_header(rest);
    auto frame = r.take(frame_len);
    deserialize_entry(frame);
    p.entry_frame.assign(frame.begin(), frame.end());
    auto bits = r.take(kActiveBitsBytes);
    std::copy(bits.begin(), bits.end(), p.active_bits.mutable_bytes().begin());
    auto digest = [&r]() {
      Digest d;
      auto v = r.take(d.size());
      std::copy(v.begin(), v.end(), d.begin());
      return d;
    };
    for (auto& d : p.entry_path) d = digest();
    for (unsigned i = 0; i < upper_len; ++i) p.upper_path.push_back(digest());
    for (unsigned i = 0; i < shard_len; ++i) p.shard_path.push_back(digest());
    p.claimed_root = digest();
    if (p.kind != ProofKind::inclusion) {
      auto key_len = r.read<std::uint16_t>();
      if (key_len == 0 || key_len > kMaxKeyLen) fail(ErrorCode::decode, "bad key length");
      auto key = r.take(key_len);
      p.key.assign(key.begin(), key.end());
    }
    if (p.kind == ProofKind::historical) p.height = r.read<std::uint64_t>();
    if (r.remaining() != 0) fail(ErrorCode::decode, "trailing bytes after proof");
    return p;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::decode) throw;
    fail(ErrorCode::decode, std::string("malformed proof: ") + e.what());
  }
}

struct VerifyOptions {
  unsigned shard_bits = 4;
  HashAlgorithm hash = HashAlgorithm::sha256;
  /// When set, the proof must be about this key (and height).
  std::optional<Bytes> key;
  std::optional<std::uint64_t> height;
};

struct VerifyResult {
  bool accepted = false;
  std::string reason;

  explicit operator bool() const { return accepted; }
  static VerifyResult accept() { return {true, "ok"}; }
  static VerifyResult reject(std::string why) { return {false, std::move(why)}; }
};

/// Root implied by a proof's entry and paths.
inline Digest proof_root(const Hasher& h, const Proof& p) {
  Digest node = leaf_hash(h, p.entry_frame);
  std::uint64_t idx = p.leaf_index;
  for (const auto& sib : p.entry_path) {
    node = (idx & 1u) ? h.node(sib, node) : h.node(node, sib);
    idx >>= 1;
  }
  node = twig_root_of(h, node, p.active_bits);
  idx = p.twig_index;
  for (const auto& sib : p.upper_path) {
    node = (idx & 1u) ? h.node(sib, node) : h.node(node, sib);
    idx >>= 1;
  }
  idx = p.shard_id;
  for (const auto& sib : p.shard_path) {
    node = (idx & 1u) ? h.node(sib, node) : h.node(node, sib);
    idx >>= 1;
  }
  return node;
}

/// Stateless check of a decoded proof against `expected_root`.
inline VerifyResult verify_proof(const Proof& p, const Digest& expected_root,
                                 const VerifyOptions& opt) {
  Entry e = p.entry();
  if (e.id != p.twig_index * kTwigLeaves + p.leaf_index) {
    return VerifyResult::reject("entry id does not match its tree position");
  }
  if (p.upper_path.size() < 64 && (p.twig_index >> p.upper_path.size()) != 0) {
    return VerifyResult::reject("twig index exceeds the upper path");
  }
  if (p.shard_path.size() != global_tree_height(opt.shard_bits)) {
    return VerifyResult::reject("shard path length does not match the configuration");
  }
  if (route_key(e.key, opt.shard_bits) != p.shard_id) {
    return VerifyResult::reject("entry key does not route to the proof's shard");
  }
  Hasher h(opt.hash);
  Digest root = proof_root(h, p);
  if (root != p.claimed_root) return VerifyResult::reject("claimed root mismatch");
  if (root != expected_root) return VerifyResult::reject("root mismatch");

  if (opt.key && p.kind != ProofKind::inclusion && !bytes_equal(*opt.key, p.key)) {
    return VerifyResult::reject("proof is about a different key");
  }
  if (opt.height && p.kind == ProofKind::historical && *opt.height != p.height) {
    return VerifyResult::reject("proof is about a different height");
  }
  switch (p.kind) {
    case ProofKind::inclusion:
      if (!p.active_bits.test(p.leaf_index)) return VerifyResult::reject("inactive entry");
      if (opt.key && !bytes_equal(*opt.key, e.key)) {
        return VerifyResult::reject("proof is about a different key");
      }
      return VerifyResult::accept();
    case ProofKind::exclusion:
      if (!p.active_bits.test(p.leaf_index)) return VerifyResult::reject("inactive entry");
      if (route_key(p.key, opt.shard_bits) != p.shard_id) {
        return VerifyResult::reject("key does not route to the proof's shard");
      }
      if (!ring_straddles(e.key, e.next_key, p.key)) {
        return VerifyResult::reject("entry interval does not straddle the key");
      }
      return VerifyResult::accept();
    case ProofKind::historical:
      if (version_height(e.version) > p.height) {
        return VerifyResult::reject("entry is newer than the requested height");
      }
      if (route_key(p.key, opt.shard_bits) != p.shard_id) {
        return VerifyResult::reject("key does not route to the proof's shard");
      }
      if (!ring_covers(e.key, e.next_key, p.key)) {
        return VerifyResult::reject("entry interval does not cover the key");
      }
      return VerifyResult::accept();
  }
  return VerifyResult::reject("unknown proof kind");
}

/// Decodes and verifies. Malformed bytes throw a decode error.
inline VerifyResult verify_proof(ByteView bytes, const Digest& expected_root,
                                 const VerifyOptions& opt) {
  return verify_proof(decode_proof(bytes), expected_root, opt);
}

inline Proof assemble_proof(ProofKind kind, EntryWitness w, std::uint32_t shard_id,
                            std::vector<Digest> shard_path, const Digest& root) {
  Proof p;
  p.kind = kind;
  p.twig_index = w.twig_index;
  p.leaf_index = w.leaf_index;
  p.shard_id = shard_id;
  p.entry_frame = std::move(w.frame);
  p.active_bits = w.bits;
  p.entry_path = w.entry_path;
  p.upper_path = std::move(w.upper_path);
  p.shard_path = std::move(shard_path);
  p.claimed_root = root;
  return p;
}

struct HistoricalEntry {
  Entry entry;
  /// Ids visited, newest first.
  std::vector<std::uint64_t> trace;
  /// True when the entry is the key's own (historical inclusion).
  bool inclusion = false;
};

/// Finds the entry that covered `key` at the end of block `height` by walking
/// back from the entry covering it now.
inline HistoricalEntry historical_entry(const Shard& shard, ByteView key, std::uint64_t height) {
  const std::uint64_t bound = pack_version(height + 1, 0);
  HistoricalEntry out;
  Entry e = shard.covering(key).entry;
  out.trace.push_back(e.id);
  while (e.version >= bound) {
    if (e.old_id == kNullId) {
      // A created key's entry: its predecessor's rewrite follows it directly
      // and links to the entry that covered this interval before.
      Entry rewrite = shard.entry_by_id(e.id + 1);
      if (rewrite.old_id == kNullId || !bytes_equal(rewrite.next_key, e.key)) {
        fail(ErrorCode::history_unavailable, "entry " + std::to_string(e.id) +
                                                 " has no reachable predecessor");
      }
      e = shard.entry_by_id(rewrite.old_id);
    } else {
      Entry older = shard.entry_by_id(e.old_id);
      if (ring_covers(older.key, older.next_key, key)) {
        e = std::move(older);
      } else if (e.old_next_key_id != kNullId) {
        e = shard.entry_by_id(e.old_next_key_id);
      } else {
        fail(ErrorCode::history_unavailable,
             "no history link covers the key at entry " + std::to_string(e.id));
      }
    }
    if (!ring_covers(e.key, e.next_key, key)) {
      fail(ErrorCode::consistency, "history walk left the key's interval at entry " +
                                       std::to_string(e.id));
    }
    out.trace.push_back(e.id);
  }
  out.inclusion = bytes_equal(e.key, key);
  out.entry = std::move(e);
  return out;
}

/// Active key/value set of one shard (sentinels included) at the end of
/// block `height`, replayed from the log.
inline std::map<Bytes, Bytes> reconstruct_shard_state(const Shard& shard, std::uint64_t height) {
  const std::uint64_t bound = pack_version(height + 1, 0);
  StateReplayer<Bytes> replay;
  shard.log().scan([&](const Entry& e, std::uint64_t) {
    if (e.version >= bound) return false;
    replay.apply(e, e.value);
    return true;
  });
  return std::move(replay.active());
}

}  // namespace twigstore
