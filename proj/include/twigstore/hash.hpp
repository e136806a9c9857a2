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

#include <openssl/evp.h>

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>

#include "twigstore/bytes.hpp"
#include "twigstore/error.hpp"

namespace twigstore {

using Digest = std::array<std::uint8_t, 32>;

inline constexpr Digest kZeroDigest{};

// Domain-separation tags prepended to every hash input.
namespace tag {
inline constexpr std::uint8_t leaf = 0x00;
inline constexpr std::uint8_t internal = 0x01;
inline constexpr std::uint8_t twig = 0x02;
inline constexpr std::uint8_t active_bits = 0x03;
}  // namespace tag

enum class HashAlgorithm : std::uint8_t { sha256 = 1, blake2s256 = 2 };

inline std::string_view to_string(HashAlgorithm algo) {
  return algo == HashAlgorithm::sha256 ? "sha256" : "blake2s256";
}

inline HashAlgorithm parse_hash_algorithm(std::string_view name) {
  if (name == "sha256") return HashAlgorithm::sha256;
  if (name == "blake2s256") return HashAlgorithm::blake2s256;
  fail(ErrorCode::configuration, "unknown hash algorithm '" + std::string(name) + "'");
}

namespace detail {

struct MdCtxDeleter {
  void operator()(EVP_MD_CTX* ctx) const noexcept { EVP_MD_CTX_free(ctx); }
};

inline EVP_MD_CTX* thread_ctx() {
  thread_local std::unique_ptr<EVP_MD_CTX, MdCtxDeleter> ctx(EVP_MD_CTX_new());
  return ctx.get();
}

inline std::uint64_t& thread_hash_counter() {
  thread_local std::uint64_t count = 0;
  return count;
}

inline const EVP_MD* evp_md(HashAlgorithm algo) {
  switch (algo) {
    case HashAlgorithm::sha256: return EVP_sha256();
    case HashAlgorithm::blake2s256: return EVP_blake2s256();
  }
  fail(ErrorCode::configuration, "unsupported hash algorithm");
}

}  // namespace detail

/// Number of hash invocations made by the calling thread so far.
inline std::uint64_t thread_hash_count() noexcept { return detail::thread_hash_counter(); }

/// The configured 256-bit hash with tag-prefixed inputs.
class Hasher {
 public:
  explicit Hasher(HashAlgorithm algo = HashAlgorithm::sha256)
      : algo_(algo), md_(detail::evp_md(algo)) {}

  HashAlgorithm algorithm() const noexcept { return algo_; }

  Digest operator()(std::uint8_t tag_byte, ByteView a, ByteView b = {}) const {
    ++detail::thread_hash_counter();
    return raw(tag_byte, a, b);
  }

  Digest node(const Digest& left, const Digest& right) const {
    return (*this)(tag::internal, left, right);
  }

  /// Untagged digest of arbitrary bytes; used to canonicalize application keys.
  Digest plain(ByteView data) const {
    ++detail::thread_hash_counter();
    Digest out{};
    EVP_MD_CTX* ctx = detail::thread_ctx();
    unsigned int len = 0;
    if (EVP_DigestInit_ex(ctx, md_, nullptr) != 1 ||
        EVP_DigestUpdate(ctx, data.data(), data.size()) != 1 ||
        EVP_DigestFinal_ex(ctx, out.data(), &len) != 1 || len != out.size()) {
      fail(ErrorCode::configuration, "hash backend failure");
    }
    return out;
  }

  /// Same as operator() but not counted; reserved for constant tables.
  Digest raw(std::uint8_t tag_byte, ByteView a, ByteView b = {}) const {
    Digest out{};
    EVP_MD_CTX* ctx = detail::thread_ctx();
    unsigned int len = 0;
    if (EVP_DigestInit_ex(ctx, md_, nullptr) != 1 ||
        EVP_DigestUpdate(ctx, &tag_byte, 1) != 1 ||
        EVP_DigestUpdate(ctx, a.data(), a.size()) != 1 ||
        (!b.empty() && EVP_DigestUpdate(ctx, b.data(), b.size()) != 1) ||
        EVP_DigestFinal_ex(ctx, out.data(), &len) != 1 || len != out.size()) {
      fail(ErrorCode::configuration, "hash backend failure");
    }
    return out;
  }

 private:
  HashAlgorithm algo_;
  const EVP_MD* md_;
};

/// Null digests per tree level: level 0 is 32 zero bytes and each level above
/// hashes two copies of the level below with the internal tag. Levels 0..11
/// cover the inside of a twig; level 12 + k is the null node at upper-tree
/// level k (k = 0 being the twig-root layer).
class NullDigests {
 public:
  static constexpr std::size_t kLevels = 12 + 64;

  static const NullDigests& get(HashAlgorithm algo) {
    static const NullDigests sha(HashAlgorithm::sha256);
    static const NullDigests blake(HashAlgorithm::blake2s256);
    return algo == HashAlgorithm::sha256 ? sha : blake;
  }

  const Digest& at(std::size_t level) const { return table_.at(level); }
  const Digest& entry_level(std::size_t level) const { return table_.at(level); }
  const Digest& upper_level(std::size_t level) const { return table_.at(12 + level); }

 private:
  explicit NullDigests(HashAlgorithm algo) {
    Hasher h(algo);
    table_[0] = kZeroDigest;
    for (std::size_t i = 1; i < kLevels; ++i) {
      table_[i] = h.raw(tag::internal, table_[i - 1], table_[i - 1]);
    }
  }

  std::array<Digest, kLevels> table_{};
};

inline std::string to_hex(const Digest& d) { return to_hex(ByteView(d)); }

inline Digest digest_from_hex(std::string_view hex) {
  Bytes raw = from_hex(hex);
  if (raw.size() != 32) fail(ErrorCode::decode, "digest must be 32 bytes");
  Digest d{};
  std::copy(raw.begin(), raw.end(), d.begin());
  return d;
}

}  // namespace twigstore
