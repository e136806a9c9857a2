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
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "twigstore/error.hpp"
#include "twigstore/hash.hpp"
#include "twigstore/twig.hpp"

namespace twigstore {

/// ceil(log2(n)), with 0 for n <= 1.
constexpr std::size_t ceil_log2(std::uint64_t n) {
  std::size_t h = 0;
  while ((std::uint64_t{1} << h) < n) ++h;
  return h;
}

/// Upper part of a shard's Merkle tree. Level 0 holds the twig roots; level
/// `height()` holds the shard root. The height grows with the twig count and
/// missing nodes are null. Nodes whose parent covers only pruned twigs are
/// dropped.
class UpperTree {
 public:
  /// Supplies the digest of a dropped subtree (level, index) on demand.
  using SubtreeFallback = std::function<Digest(std::size_t level, std::uint64_t index)>;

  explicit UpperTree(HashAlgorithm algo = HashAlgorithm::sha256)
      : hasher_(algo), nulls_(&NullDigests::get(algo)) {}

  std::uint64_t twig_count() const noexcept { return twig_count_; }
  std::uint64_t pruned_frontier() const noexcept { return frontier_; }
  std::size_t height() const noexcept { return ceil_log2(twig_count_); }

  /// Records a new root for `twig_index` without recomputing ancestors.
  /// Twig indexes must be filled left to right.
  void set_twig_root(std::uint64_t twig_index, const Digest& root) {
    if (twig_index < frontier_) {
      fail(ErrorCode::pruning_violation, "twig " + std::to_string(twig_index) + " is pruned");
    }
    if (twig_index > twig_count_) {
      fail(ErrorCode::consistency, "twig " + std::to_string(twig_index) + " skips ahead of " +
                                       std::to_string(twig_count_));
    }
    if (twig_index == twig_count_) {
      ++twig_count_;
      ensure_levels();
    }
    slot(0, twig_index) = root;
    dirty_.push_back(twig_index);
  }

  /// Records a twig root and immediately recomputes its path to the shard root.
  Digest update_twig_root(std::uint64_t twig_index, const Digest& root) {
    set_twig_root(twig_index, root);
    recompute();
    return shard_root();
  }

  /// Recomputes every ancestor of the twigs changed since the last call.
  void recompute() {
    std::vector<std::uint64_t> current = std::move(dirty_);
    dirty_.clear();
    std::sort(current.begin(), current.end());
    current.erase(std::unique(current.begin(), current.end()), current.end());
    const std::size_t h = height();
    for (std::size_t level = 0; level < h && !current.empty(); ++level) {
      std::vector<std::uint64_t> parents;
      parents.reserve(current.size());
      for (auto idx : current) {
        std::uint64_t p = idx >> 1;
        if (parents.empty() || parents.back() != p) parents.push_back(p);
      }
      for (auto p : parents) {
        slot(level + 1, p) = hasher_.node(child(level, 2 * p), child(level, 2 * p + 1));
      }
      current = std::move(parents);
    }
  }

  Digest shard_root() const {
    if (twig_count_ == 0) return nulls_->upper_level(0);
    return levels_[height()].front();
  }

  /// Advances the pruning frontier past `twig_index` and drops nodes whose
  /// parent subtree is now fully pruned. The shard root is unchanged.
  void prune_twig(std::uint64_t twig_index) {
    if (twig_index != frontier_) {
      fail(ErrorCode::pruning_violation, "pruning twig " + std::to_string(twig_index) +
                                             " but frontier is " + std::to_string(frontier_));
    }
    if (twig_index + 1 >= twig_count_) {
      fail(ErrorCode::pruning_violation, "cannot prune the newest twig");
    }
    ++frontier_;
    const std::size_t h = height();
    for (std::size_t level = 0; level < h; ++level) {
      std::uint64_t keep_from = (frontier_ >> (level + 1)) << 1;
      while (bases_[level] < keep_from && !levels_[level].empty()) {
        levels_[level].pop_front();
        ++bases_[level];
      }
    }
  }

  /// Node digest if it is still materialized.
  std::optional<Digest> node(std::size_t level, std::uint64_t index) const {
    if (level > height()) return std::nullopt;
    if (index >= level_size(level)) return nulls_->upper_level(level);
    if (index < bases_[level]) return std::nullopt;
    return levels_[level][index - bases_[level]];
  }

  /// Sibling digests from twig `twig_index` up to the shard root.
  std::vector<Digest> path(std::uint64_t twig_index, const SubtreeFallback& fallback = {}) const {
    if (twig_index >= twig_count_) {
      fail(ErrorCode::not_found, "twig " + std::to_string(twig_index) + " is not in the tree");
    }
    std::vector<Digest> out;
    std::uint64_t idx = twig_index;
    for (std::size_t level = 0; level < height(); ++level) {
      std::uint64_t sibling = idx ^ 1u;
      auto d = node(level, sibling);
      if (!d) {
        if (!fallback) {
          fail(ErrorCode::history_unavailable, "sibling subtree at level " +
                                                   std::to_string(level) + " has been pruned");
        }
        d = fallback(level, sibling);
      }
      out.push_back(*d);
      idx >>= 1;
    }
    return out;
  }

  /// Materialized nodes above the twig layer.
  std::size_t retained_upper_nodes() const {
    std::size_t n = 0;
    for (std::size_t level = 1; level < levels_.size() && level <= height(); ++level) {
      n += levels_[level].size();
    }
    return n;
  }

  std::size_t retained_twig_roots() const { return levels_.empty() ? 0 : levels_[0].size(); }

  std::size_t memory_bytes() const {
    return (retained_twig_roots() + retained_upper_nodes()) * sizeof(Digest);
  }

 private:
  std::uint64_t level_size(std::size_t level) const {
    return (twig_count_ + (std::uint64_t{1} << level) - 1) >> level;
  }

  void ensure_levels() {
    const std::size_t h = height();
    while (levels_.size() <= h) {
      levels_.emplace_back();
      bases_.push_back(0);
    }
    for (std::size_t level = 0; level <= h; ++level) {
      while (bases_[level] + levels_[level].size() < level_size(level)) {
        levels_[level].push_back(nulls_->upper_level(level));
      }
    }
  }

  Digest& slot(std::size_t level, std::uint64_t index) {
    if (index < bases_[level]) {
      fail(ErrorCode::pruning_violation, "node (" + std::to_string(level) + ", " +
                                             std::to_string(index) + ") was dropped");
    }
    return levels_[level][index - bases_[level]];
  }

  const Digest& child(std::size_t level, std::uint64_t index) const {
    if (index >= level_size(level)) return nulls_->upper_level(level);
    if (index < bases_[level]) {
      fail(ErrorCode::pruning_violation, "node (" + std::to_string(level) + ", " +
                                             std::to_string(index) + ") was dropped");
    }
    return levels_[level][index - bases_[level]];
  }

  Hasher hasher_;
  const NullDigests* nulls_;
  std::vector<std::deque<Digest>> levels_;
  std::vector<std::uint64_t> bases_;
  std::vector<std::uint64_t> dirty_;
  std::uint64_t twig_count_ = 0;
  std::uint64_t frontier_ = 0;
};

/// Persisted inputs for one twig when rebuilding the tree at startup.
struct TwigSeed {
  Digest entry_root;
  ActiveBits bits;
};

/// Rebuilds a shard's upper tree from persisted twig metadata: two hashes per
/// twig for its root, one per internal node. Twigs below `pruned_frontier`
/// are pruned as they are reached.
inline UpperTree rebuild_upper_tree(HashAlgorithm algo, std::span<const TwigSeed> twigs,
                                    std::uint64_t pruned_frontier = 0) {
  Hasher h(algo);
  UpperTree tree(algo);
  for (std::uint64_t i = 0; i < twigs.size(); ++i) {
    tree.set_twig_root(i, twig_root_of(h, twigs[i].entry_root, twigs[i].bits));
  }
  tree.recompute();
  for (std::uint64_t i = 0; i < pruned_frontier; ++i) tree.prune_twig(i);
  return tree;
}

/// Digest of the subtree at (level, index) over `twig_count` twigs, computed
/// from scratch; `twig_root` yields the root of any existing twig.
inline Digest subtree_digest(const Hasher& h, std::size_t level, std::uint64_t index,
                             std::uint64_t twig_count,
                             const std::function<Digest(std::uint64_t)>& twig_root) {
  const auto& nulls = NullDigests::get(h.algorithm());
  std::uint64_t first = index << level;
  if (first >= twig_count) return nulls.upper_level(level);
  if (level == 0) return twig_root(index);
  return h.node(subtree_digest(h, level - 1, 2 * index, twig_count, twig_root),
                subtree_digest(h, level - 1, 2 * index + 1, twig_count, twig_root));
}

/// Number of tree levels between shard roots and the global root.
constexpr std::size_t global_tree_height(unsigned shard_bits) {
  return shard_bits == 0 ? 1 : shard_bits;
}

struct GlobalRoot {
  Digest digest{};
  std::uint64_t block_height = 0;

  bool operator==(const GlobalRoot&) const = default;
};

/// Binary reduction over the shard roots in ascending shard order, padded
/// with zero digests to the next power of two (a single shard pairs with null).
inline Digest compute_global_digest(const Hasher& h, std::span<const Digest> shard_roots,
                                    unsigned shard_bits) {
  if (shard_roots.size() != (std::size_t{1} << shard_bits)) {
    fail(ErrorCode::configuration, "expected " + std::to_string(std::size_t{1} << shard_bits) +
                                       " shard roots, got " + std::to_string(shard_roots.size()));
  }
  std::vector<Digest> level(shard_roots.begin(), shard_roots.end());
  for (std::size_t i = 0; i < global_tree_height(shard_bits); ++i) {
    std::vector<Digest> parent((level.size() + 1) / 2);
    for (std::size_t j = 0; j < parent.size(); ++j) {
      const Digest& right = 2 * j + 1 < level.size() ? level[2 * j + 1] : kZeroDigest;
      parent[j] = h.node(level[2 * j], right);
    }
    level = std::move(parent);
  }
  return level.front();
}

inline GlobalRoot compute_global_root(const Hasher& h, std::span<const Digest> shard_roots,
                                      unsigned shard_bits, std::uint64_t block_height) {
  return GlobalRoot{compute_global_digest(h, shard_roots, shard_bits), block_height};
}

/// Sibling digests from `shard_id`'s root up to the global root.
inline std::vector<Digest> global_path(const Hasher& h, std::span<const Digest> shard_roots,
                                       unsigned shard_bits, std::size_t shard_id) {
  std::vector<Digest> level(shard_roots.begin(), shard_roots.end());
  std::vector<Digest> out;
  std::size_t idx = shard_id;
  for (std::size_t i = 0; i < global_tree_height(shard_bits); ++i) {
    std::size_t sib = idx ^ 1u;
    out.push_back(sib < level.size() ? level[sib] : kZeroDigest);
    std::vector<Digest> parent((level.size() + 1) / 2);
    for (std::size_t j = 0; j < parent.size(); ++j) {
      const Digest& right = 2 * j + 1 < level.size() ? level[2 * j + 1] : kZeroDigest;
      parent[j] = h.node(level[2 * j], right);
    }
    level = std::move(parent);
    idx >>= 1;
  }
  return out;
}

}  // namespace twigstore
