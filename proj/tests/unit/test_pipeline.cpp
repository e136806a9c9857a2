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

#include <random>

#include <gtest/gtest.h>

#include "twigstore/store.hpp"
#include "test_util.hpp"

namespace twigstore {
namespace {

using testing::RandomOps;
using testing::ReferenceModel;
using testing::TempDir;

TEST(Routing, TopBitsOfTheFirstByte) {
  EXPECT_EQ(route_key(Bytes{0x00}, 4), 0u);
  EXPECT_EQ(route_key(Bytes{0x1F}, 4), 1u);
  EXPECT_EQ(route_key(Bytes{0xF0, 0x00}, 4), 15u);
  EXPECT_EQ(route_key(Bytes{0xBF}, 1), 1u);
  EXPECT_EQ(route_key(Bytes{0xBF}, 0), 0u);
  EXPECT_EQ(route_key(Bytes{0xBF}, 8), 0xBFu);
  for (unsigned bits : {0u, 1u, 4u, 8u}) {
    for (std::uint32_t s = 0; s < (1u << bits); s += 3) {
      EXPECT_EQ(route_key(lower_sentinel_key(bits, s), bits), s);
      EXPECT_EQ(route_key(upper_sentinel_key(bits, s), bits), s);
    }
  }
}

struct StreamRun {
  std::vector<Digest> roots;
  std::vector<std::vector<std::optional<Bytes>>> values;
};

StreamRun run_stream(PipelineMode mode, std::size_t depth, bool overlapped, std::uint64_t blocks = 15) {
  TempDir dir;
  auto cfg = testing::small_config(dir.path(), 2, mode, 0.6);
  cfg.queue_depth = depth;
  auto store = Store::open(cfg);
  RandomOps gen(31, 2);
  std::vector<ChangeSet> stream;
  for (std::uint64_t h = 1; h <= blocks; ++h) stream.push_back(gen.block(h, 250));
  StreamRun r;
  if (overlapped) {
    for (auto& res : store->submit_overlapped(stream)) {
      r.roots.push_back(res.root.digest);
      r.values.push_back(res.values);
    }
  } else {
    for (auto& cs : stream) {
      auto res = store->process_block(cs);
      r.roots.push_back(res.root.digest);
      r.values.push_back(res.values);
    }
  }
  EXPECT_EQ(store->height(), blocks);
  EXPECT_EQ(store->stats().cache_misses, 0u);
  return r;
}

TEST(Pipeline, PipelinedMatchesSerial) {
  StreamRun serial = run_stream(PipelineMode::serial, 4, false);
  for (std::size_t depth : {1u, 2u, 4u}) {
    StreamRun p = run_stream(PipelineMode::pipelined, depth, true);
    EXPECT_EQ(p.roots, serial.roots) << "depth " << depth;
    EXPECT_EQ(p.values, serial.values) << "depth " << depth;
  }
  StreamRun one_at_a_time = run_stream(PipelineMode::pipelined, 4, false);
  EXPECT_EQ(one_at_a_time.roots, serial.roots);
}

TEST(Pipeline, MatchesReferenceModel) {
  TempDir dir;
  auto cfg = testing::small_config(dir.path(), 3, PipelineMode::pipelined, 0.5);
  auto store = Store::open(cfg);
  ReferenceModel model(testing::model_options(cfg));
  RandomOps gen(32, 3);
  std::vector<ChangeSet> stream;
  for (std::uint64_t h = 1; h <= 12; ++h) stream.push_back(gen.block(h, 300));
  auto results = store->submit_overlapped(stream);
  for (std::size_t i = 0; i < stream.size(); ++i) {
    auto values = testing::model_block(model, stream[i]);
    EXPECT_EQ(results[i].root.digest, model.root()) << i;
    EXPECT_EQ(results[i].root.block_height, stream[i].height);
    EXPECT_EQ(results[i].values, values);
  }
}

TEST(Pipeline, NextBlockSeesPreviousWrites) {
  TempDir dir;
  auto store = Store::open(testing::small_config(dir.path(), 2, PipelineMode::pipelined));
  std::mt19937_64 rng(33);
  std::vector<ChangeSet> stream;
  std::vector<Bytes> prev;
  for (std::uint64_t h = 1; h <= 10; ++h) {
    ChangeSet cs{h, {}};
    for (const auto& k : prev) cs.ops.push_back({OpKind::read, k, {}});
    for (const auto& k : prev) cs.ops.push_back({OpKind::update, k, Bytes{static_cast<std::uint8_t>(h)}});
    prev.clear();
    for (int i = 0; i < 20; ++i) {
      prev.push_back(testing::random_key_in_shard(rng, 2, rng() % 4));
      cs.ops.push_back({OpKind::create, prev.back(), Bytes{0xEE}});
    }
    stream.push_back(std::move(cs));
  }
  auto results = store->submit_overlapped(stream);
  for (std::size_t b = 1; b < results.size(); ++b) {
    for (std::size_t i = 0; i < 20; ++i) {
      ASSERT_EQ(results[b].values[i], Bytes{0xEE}) << "block " << b + 1;
    }
  }
}

TEST(Pipeline, HeightsMustBeConsecutive) {
  TempDir dir;
  auto store = Store::open(testing::small_config(dir.path(), 1, PipelineMode::pipelined));
  try {
    store->submit(ChangeSet{2, {}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::precondition);
  }
  EXPECT_EQ(store->process_block(ChangeSet{1, {}}).root.block_height, 1u);
  EXPECT_THROW(store->submit(ChangeSet{1, {}}), Error);
}

TEST(Pipeline, FailedBlockHaltsTheStore) {
  for (auto mode : {PipelineMode::serial, PipelineMode::pipelined}) {
    TempDir dir;
    auto store = Store::open(testing::small_config(dir.path(), 2, mode));
    std::mt19937_64 rng(34);
    ChangeSet bad{1, {{OpKind::update, testing::random_key_in_shard(rng, 2, 1), Bytes{1}}}};
    try {
      store->process_block(bad);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::not_found);
    }
    EXPECT_TRUE(store->halted());
    EXPECT_EQ(store->height(), 0u);
    try {
      store->submit(ChangeSet{2, {}});
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::halted);
    }
  }
}

TEST(Pipeline, ReopenContinuesTheChain) {
  TempDir dir;
  auto cfg = testing::small_config(dir.path(), 2, PipelineMode::pipelined, 0.6);
  ReferenceModel model(testing::model_options(cfg));
  RandomOps gen(35, 2);
  Digest root;
  {
    auto store = Store::open(cfg);
    for (std::uint64_t h = 1; h <= 8; ++h) {
      auto cs = gen.block(h, 400);
      root = store->process_block(cs).root.digest;
      testing::model_block(model, cs);
    }
  }
  auto store = Store::open(cfg);
  EXPECT_EQ(store->height(), 8u);
  EXPECT_EQ(store->root().digest, root);
  EXPECT_EQ(store->truncated_logs_at_open(), 0u);
  for (std::uint64_t h = 9; h <= 12; ++h) {
    auto cs = gen.block(h, 400);
    auto res = store->process_block(cs);
    testing::model_block(model, cs);
    EXPECT_EQ(res.root.digest, model.root()) << h;
  }
  for (const auto& k : model.live_keys()) ASSERT_TRUE(store->get(k).has_value());
  auto other = cfg;
  other.shard_bits = 3;
  store.reset();
  EXPECT_THROW(Store::open(other), Error);
}

TEST(Pipeline, DeterministicAcrossRuns) {
  StreamRun a = run_stream(PipelineMode::pipelined, 2, true, 6);
  StreamRun b = run_stream(PipelineMode::pipelined, 2, true, 6);
  EXPECT_EQ(a.roots, b.roots);
}

}  // namespace
}  // namespace twigstore
