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

#include "twigstore/proof.hpp"
#include "twigstore/shard.hpp"
#include "twigstore/store.hpp"
#include "test_util.hpp"

namespace twigstore {
namespace {

using testing::RandomOps;
using testing::ReferenceModel;
using testing::TempDir;
using testing::random_key_in_shard;

constexpr unsigned kBits = 2;
constexpr std::uint32_t kShard = 1;

ShardOptions opts(double threshold = 0.0) {
  ShardOptions o;
  o.shard_bits = kBits;
  o.compaction_threshold = threshold;
  return o;
}

Bytes key_with(std::uint8_t second, std::uint8_t last = 1) {
  Bytes k(32, 0x10);
  k[0] = 0x40 | 0x05;  // shard 1 of 4
  k[1] = second;
  k[31] = last;
  return k;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::consistency;
}

std::vector<Bytes> ring_keys(const Shard& s) {
  std::vector<Bytes> out;
  s.for_each_active([&](const Entry& e) { out.push_back(e.key); });
  return out;
}

TEST(Crud, NewShardHoldsLinkedSentinels) {
  TempDir dir;
  IoCounters c;
  Shard s(dir.path(), kShard, opts(), c);
  EXPECT_EQ(s.next_id(), 2u);
  EXPECT_EQ(s.active_count(), 2u);
  Entry lo = s.entry_by_id(0), hi = s.entry_by_id(1);
  EXPECT_EQ(lo.key, s.lower_key());
  EXPECT_EQ(lo.next_key, s.upper_key());
  EXPECT_EQ(hi.next_key, s.lower_key());
  EXPECT_EQ(s.lower_key()[0], 0x40);
  EXPECT_EQ(s.upper_key()[0], 0x7F);
  EXPECT_TRUE(ring_keys(s).empty());
}

TEST(Crud, SentinelAndRoutingGuards) {
  TempDir dir;
  IoCounters c;
  Shard s(dir.path(), kShard, opts(), c);
  Bytes lo = s.lower_key(), hi = s.upper_key();
  EXPECT_EQ(code_of([&] { s.update(lo, Bytes{1}, 1); }), ErrorCode::boundary_protection);
  EXPECT_EQ(code_of([&] { s.erase(hi, 1); }), ErrorCode::boundary_protection);
  EXPECT_EQ(code_of([&] { s.create(hi, Bytes{1}, 1); }), ErrorCode::boundary_protection);
  Bytes other(32, 0x90);
  EXPECT_EQ(code_of([&] { s.create(other, Bytes{1}, 1); }), ErrorCode::shard_routing);
  EXPECT_EQ(code_of([&] { s.read_op(Bytes{}); }), ErrorCode::encoding);
  EXPECT_EQ(code_of([&] { s.create(Bytes(257, 0x45), Bytes{}, 1); }), ErrorCode::encoding);
  EXPECT_EQ(s.next_id(), 2u);
}

TEST(Crud, CreateSplitsThePredecessorInterval) {
  TempDir dir;
  IoCounters c;
  Shard s(dir.path(), kShard, opts(), c);
  Bytes k = key_with(0x50);
  const std::uint64_t v = pack_version(1, 0);
  EXPECT_EQ(s.create(k, to_bytes("a"), v), 2u);
  Entry ek = s.entry_by_id(2), ep = s.entry_by_id(3);
  EXPECT_EQ(ek, (Entry{2, k, to_bytes("a"), s.upper_key(), kNullId, kNullId, v}));
  EXPECT_EQ(ep, (Entry{3, s.lower_key(), {}, k, 0, kNullId, v}));
  EXPECT_FALSE(s.is_active(0));
  EXPECT_TRUE(s.is_active(1));
  EXPECT_EQ(s.active_count(), 3u);
  auto st = c.snapshot();
  EXPECT_EQ(st.entry_reads[0], 1u);
  EXPECT_EQ(st.entry_writes[0], 2u);
  EXPECT_EQ(code_of([&] { s.create(k, Bytes{}, v); }), ErrorCode::duplicate_key);
}

TEST(Crud, UpdateChainsToThePreviousEntry) {
  TempDir dir;
  IoCounters c;
  Shard s(dir.path(), kShard, opts(), c);
  Bytes a = key_with(0x20), b = key_with(0x60);
  s.create(a, to_bytes("1"), pack_version(1, 0));
  s.create(b, to_bytes("2"), pack_version(1, 1));
  auto before = c.snapshot();
  auto id = s.update(a, to_bytes("3"), pack_version(2, 0));
  Entry e = s.entry_by_id(id);
  Entry old = s.find(a) ? s.entry_by_id(e.old_id) : Entry{};
  EXPECT_EQ(e.key, a);
  EXPECT_EQ(e.value, to_bytes("3"));
  EXPECT_EQ(e.next_key, b);
  EXPECT_EQ(old.key, a);
  EXPECT_EQ(old.value, to_bytes("1"));
  EXPECT_EQ(e.old_next_key_id, old.old_next_key_id);
  EXPECT_FALSE(s.is_active(old.id));
  auto d = c.snapshot() - before;
  EXPECT_EQ(d.entry_reads[2], 1u);
  EXPECT_EQ(d.entry_writes[2], 1u);
  EXPECT_EQ(s.read_op(a), to_bytes("3"));
  EXPECT_EQ(code_of([&] { s.update(key_with(0x70), Bytes{}, 1); }), ErrorCode::not_found);
}

TEST(Crud, DeleteMergesIntoThePredecessor) {
  TempDir dir;
  IoCounters c;
  Shard s(dir.path(), kShard, opts(), c);
  Bytes a = key_with(0x20), b = key_with(0x60);
  s.create(a, to_bytes("A"), pack_version(1, 0));
  s.create(b, to_bytes("B"), pack_version(1, 1));
  Entry eb = s.find(b)->entry, ea = s.find(a)->entry;
  auto before = c.snapshot();
  s.erase(b, pack_version(2, 0));
  auto d = c.snapshot() - before;
  EXPECT_EQ(d.entry_reads[3], 2u);
  EXPECT_EQ(d.entry_writes[3], 1u);
  Entry merged = s.find(a)->entry;
  EXPECT_EQ(merged.next_key, s.upper_key());
  EXPECT_EQ(merged.value, to_bytes("A"));
  EXPECT_EQ(merged.old_id, ea.id);
  EXPECT_EQ(merged.old_next_key_id, eb.id);
  EXPECT_FALSE(s.is_active(eb.id));
  EXPECT_FALSE(s.find(b).has_value());
  EXPECT_EQ(s.read_op(b), std::nullopt);
  EXPECT_EQ(code_of([&] { s.erase(b, pack_version(2, 1)); }), ErrorCode::not_found);
  EXPECT_EQ(ring_keys(s), std::vector<Bytes>{a});
}

TEST(Crud, ReadsAreChargedOnlyWhenLogResident) {
  TempDir dir;
  IoCounters c;
  Shard s(dir.path(), kShard, opts(), c);
  std::mt19937_64 rng(1);
  Bytes first = random_key_in_shard(rng, kBits, kShard);
  s.create(first, to_bytes("x"), pack_version(1, 0));
  s.read_op(first);
  EXPECT_EQ(c.snapshot().entry_reads[1], 0u);
  for (std::uint32_t i = 1; i < 1100; ++i) s.create(random_key_in_shard(rng, kBits, kShard), Bytes{}, pack_version(1, i));
  s.commit();
  EXPECT_EQ(s.log().flushed_entries(), kTwigLeaves);
  // `first` now sits in the flushed twig
  ASSERT_TRUE(s.log().is_durable(s.find(first)->position));
  s.read_op(first);
  EXPECT_EQ(c.snapshot().entry_reads[1], 1u);
  EXPECT_EQ(c.snapshot().read_ops_log_resident, 1u);
  EXPECT_EQ(c.snapshot().ops[1], 2u);
}

TEST(Crud, RingMatchesOrderedMapUnderRandomOps) {
  TempDir dir;
  IoCounters c;
  Shard s(dir.path(), kShard, opts(0.5), c);
  std::mt19937_64 rng(2);
  std::map<Bytes, Bytes> oracle;
  for (std::uint32_t i = 0; i < 6000; ++i) {
    std::uint64_t v = pack_version(1 + i / 100, i % 100);
    unsigned r = rng() % 10;
    if (oracle.empty() || r < 5) {
      Bytes k = random_key_in_shard(rng, kBits, kShard);
      Bytes val = testing::random_bytes(rng, 8);
      s.create(k, val, v);
      oracle[k] = val;
    } else {
      auto it = std::next(oracle.begin(), static_cast<long>(rng() % oracle.size()));
      if (r < 8) {
        Bytes val = testing::random_bytes(rng, 8);
        s.update(it->first, val, v);
        it->second = val;
      } else {
        s.erase(it->first, v);
        oracle.erase(it);
      }
    }
    if (i % 100 == 99) s.commit();
  }
  std::vector<Bytes> expected;
  for (const auto& [k, val] : oracle) expected.push_back(k);
  EXPECT_EQ(ring_keys(s), expected);
  EXPECT_EQ(s.active_count(), oracle.size() + 2);
  for (const auto& [k, val] : oracle) EXPECT_EQ(s.read_op(k), val);
  EXPECT_GT(c.snapshot().compaction_moves, 0u);
}

/// Fills two twigs, deletes everything but one key, then lets updates
/// compact the survivors out of the old twigs.
struct CompactionRun {
  std::uint64_t pruned = 0;
  std::uint64_t moves = 0;
  Digest root{};
  Digest model_root{};
  TwigState twig0{};
};

CompactionRun run_compaction_scenario(double threshold) {
  TempDir dir;
  auto cfg = testing::small_config(dir.path(), 0, PipelineMode::serial, threshold);
  auto store = Store::open(cfg);
  ReferenceModel model(testing::model_options(cfg));
  std::mt19937_64 rng(3);
  std::vector<Bytes> keys;
  ChangeSet b1{1, {}};
  for (int i = 0; i < 2100; ++i) {
    keys.push_back(random_key_in_shard(rng, 0, 0));
    b1.ops.push_back({OpKind::create, keys.back(), Bytes{1}});
  }
  ChangeSet b2{2, {}};
  for (std::size_t i = 1; i < keys.size(); ++i) b2.ops.push_back({OpKind::erase, keys[i], {}});
  ChangeSet b3{3, {}};
  for (int i = 0; i < 20; ++i) b3.ops.push_back({OpKind::update, keys[0], Bytes{2}});
  ChangeSet b4{4, {}};
  b4.ops.push_back({OpKind::update, keys[0], Bytes{3}});
  for (auto* cs : {&b1, &b2, &b3, &b4}) {
    store->process_block(*cs);
    testing::model_block(model, *cs);
  }
  CompactionRun r;
  r.pruned = store->shard(0).pruned_twigs();
  r.moves = store->stats().compaction_moves;
  r.root = store->root().digest;
  r.model_root = model.root();
  r.twig0 = store->shard(0).twig_state(0);
  EXPECT_EQ(r.pruned, model.pruned_twigs(0));
  EXPECT_EQ(store->get(keys[0]), Bytes{3});
  return r;
}

TEST(Crud, CompactionEmptiesAndPrunesOldTwigs) {
  auto r = run_compaction_scenario(0.5);
  EXPECT_EQ(r.root, r.model_root);
  EXPECT_GT(r.moves, 0u);
  EXPECT_GE(r.pruned, 2u);
  EXPECT_EQ(r.twig0, TwigState::pruned);
}

TEST(Crud, ThresholdZeroDisablesCompaction) {
  auto r = run_compaction_scenario(0.0);
  EXPECT_EQ(r.root, r.model_root);
  EXPECT_EQ(r.moves, 0u);
  EXPECT_EQ(r.pruned, 0u);
  EXPECT_NE(r.twig0, TwigState::pruned);
}

TEST(Crud, StoreMatchesModelAcrossBlocks) {
  for (double threshold : {0.0, 0.6}) {
    TempDir dir;
    auto cfg = testing::small_config(dir.path(), 2, PipelineMode::serial, threshold);
    auto store = Store::open(cfg);
    ReferenceModel model(testing::model_options(cfg));
    ASSERT_EQ(store->root().digest, model.root());
    RandomOps gen(11, 2);
    for (std::uint64_t h = 1; h <= 30; ++h) {
      auto cs = gen.block(h, 200);
      auto res = store->process_block(cs);
      auto values = testing::model_block(model, cs);
      ASSERT_EQ(res.root.digest, model.root()) << "height " << h;
      ASSERT_EQ(res.values, values);
    }
    auto st = store->stats();
    const auto& mc = model.costs();
    for (int k = 0; k < 4; ++k) {
      EXPECT_EQ(st.entry_reads[k], mc.reads[k]) << k;
      EXPECT_EQ(st.entry_writes[k], mc.writes[k]) << k;
      EXPECT_EQ(st.ops[k], mc.ops[k]) << k;
    }
    EXPECT_EQ(st.compaction_moves, mc.compaction_moves);
  }
}

TEST(Crud, HistoryWalksTerminateWithDecreasingIds) {
  TempDir dir;
  auto cfg = testing::small_config(dir.path(), 1, PipelineMode::serial, 0.6);
  auto store = Store::open(cfg);
  ReferenceModel model(testing::model_options(cfg));
  RandomOps gen(12, 1);
  std::vector<Bytes> seen;
  for (std::uint64_t h = 1; h <= 12; ++h) {
    auto cs = gen.block(h, 150, {1, 3, 3, 2});
    for (const auto& op : cs.ops) seen.push_back(op.key);
    store->process_block(cs);
    testing::model_block(model, cs);
  }
  std::mt19937_64 rng(13);
  for (int q = 0; q < 300; ++q) {
    const Bytes& key = seen[rng() % seen.size()];
    std::uint64_t h = rng() % 13;
    const Shard& s = store->shard(route_key(key, 1));
    auto he = historical_entry(s, key, h);
    for (std::size_t i = 1; i < he.trace.size(); ++i) ASSERT_LT(he.trace[i], he.trace[i - 1]);
    const auto& snap = model.snapshot(h);
    auto it = snap.find(key);
    EXPECT_EQ(he.inclusion, it != snap.end());
    if (it != snap.end()) EXPECT_EQ(he.entry.value, it->second);
    EXPECT_LT(he.entry.version, pack_version(h + 1, 0));
  }
}

}  // namespace
}  // namespace twigstore
