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

#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "twigstore/log.hpp"
#include "test_util.hpp"

namespace twigstore {
namespace {

using testing::random_bytes;
using testing::TempDir;

Entry make_entry(std::mt19937_64& rng, std::uint64_t id, std::uint64_t height) {
  Entry e;
  e.id = id;
  e.key = random_bytes(rng, 1 + rng() % 40);
  e.next_key = random_bytes(rng, 1 + rng() % 40);
  e.value = random_bytes(rng, rng() % 100);
  e.old_id = id == 0 ? kNullId : id - 1;
  e.version = pack_version(height, static_cast<std::uint32_t>(id % 7));
  return e;
}

Digest entry_root_of(const Hasher& h, const std::vector<Entry>& entries, std::uint64_t twig) {
  std::vector<Digest> leaves;
  for (std::size_t i = 0; i < kTwigLeaves; ++i) {
    leaves.push_back(leaf_hash(h, entries[twig * kTwigLeaves + i]));
  }
  return compute_entry_root(h, leaves);
}

struct Staged {
  std::vector<Entry> entries;
  std::vector<std::uint64_t> positions;
};

Staged stage_n(EntryLog& log, std::mt19937_64& rng, std::size_t n, std::uint64_t height = 1) {
  Staged s;
  for (std::size_t i = 0; i < n; ++i) {
    s.entries.push_back(make_entry(rng, log.next_id(), height));
    s.positions.push_back(log.stage(s.entries.back()));
  }
  return s;
}

TEST(EntryLog, FullTwigIsOneSequentialWrite) {
  TempDir dir;
  IoCounters c;
  Hasher h;
  EntryLog log(dir.path(), 0, HashAlgorithm::sha256, c, false);
  std::mt19937_64 rng(1);
  auto s = stage_n(log, rng, kTwigLeaves + 10);
  EXPECT_EQ(log.durable_size(), 0u);
  EXPECT_EQ(c.snapshot().flush_writes, 0u);
  auto flushed = log.flush_full_twigs([&](std::uint64_t t) { return entry_root_of(h, s.entries, t); });
  EXPECT_EQ(flushed, 1u);
  auto st = c.snapshot();
  EXPECT_EQ(st.flush_writes, 1u);
  EXPECT_EQ(st.meta_writes, 1u);
  EXPECT_EQ(log.flushed_entries(), kTwigLeaves);
  EXPECT_EQ(log.durable_size(), s.positions[kTwigLeaves]);
  EXPECT_EQ(st.flushed_bytes, s.positions[kTwigLeaves]);
  EXPECT_EQ(log.flush_full_twigs([](std::uint64_t) { return Digest{}; }), 0u);
  EXPECT_EQ(c.snapshot().flush_writes, 1u);
  EXPECT_EQ(log.read_entry_roots(0, 1).front(), entry_root_of(h, s.entries, 0));
}

TEST(EntryLog, PositionsIncreaseAndRoundTrip) {
  TempDir dir;
  IoCounters c;
  Hasher h;
  EntryLog log(dir.path(), 2, HashAlgorithm::sha256, c, false);
  std::mt19937_64 rng(2);
  auto s = stage_n(log, rng, kTwigLeaves + 300);
  for (std::size_t i = 1; i < s.positions.size(); ++i) {
    EXPECT_EQ(s.positions[i], s.positions[i - 1] + frame_size(s.entries[i - 1]));
  }
  log.flush_full_twigs([&](std::uint64_t t) { return entry_root_of(h, s.entries, t); });
  std::uint64_t reads_before = c.snapshot().log_reads;
  for (std::size_t i = 0; i < s.entries.size(); i += 17) {
    auto r = log.read_entry_at_traced(s.positions[i]);
    EXPECT_EQ(r.entry, s.entries[i]);
    EXPECT_EQ(r.from_storage, i < kTwigLeaves);
    EXPECT_EQ(log.position_of(s.entries[i].id), s.positions[i]);
    EXPECT_EQ(log.read_entry_by_id(s.entries[i].id), s.entries[i]);
  }
  // one storage read per durable lookup
  std::uint64_t durable_lookups = 0;
  for (std::size_t i = 0; i < kTwigLeaves; i += 17) durable_lookups += 2;
  EXPECT_EQ(c.snapshot().log_reads - reads_before, durable_lookups);
}

TEST(EntryLog, BadPositionsAndIds) {
  TempDir dir;
  IoCounters c;
  Hasher h;
  EntryLog log(dir.path(), 0, HashAlgorithm::sha256, c, false);
  std::mt19937_64 rng(3);
  auto s = stage_n(log, rng, kTwigLeaves);
  log.flush_full_twigs([&](std::uint64_t t) { return entry_root_of(h, s.entries, t); });
  try {
    log.read_entry_at(s.positions[5] + 8);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::corruption);
  }
  try {
    log.read_entry_by_id(kNullId);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::not_found);
  }
  EXPECT_THROW(log.read_entry_by_id(kTwigLeaves + 5), Error);
  Entry wrong = make_entry(rng, 99999, 1);
  EXPECT_THROW(log.stage(wrong), Error);
}

TEST(EntryLog, ConstructorRefusesExistingFiles) {
  TempDir dir;
  IoCounters c;
  {
    EntryLog log(dir.path(), 0, HashAlgorithm::sha256, c, false);
    std::mt19937_64 rng(4);
    stage_n(log, rng, 3);
    log.sync_tail();
  }
  EXPECT_THROW(EntryLog(dir.path(), 0, HashAlgorithm::sha256, c, false), Error);
}

TEST(EntryLog, ReopenRestoresFlushedAndJournaledEntries) {
  TempDir dir;
  IoCounters c;
  Hasher h;
  std::mt19937_64 rng(5);
  Staged s;
  {
    EntryLog log(dir.path(), 1, HashAlgorithm::sha256, c, true);
    s = stage_n(log, rng, 2 * kTwigLeaves + 77);
    log.flush_full_twigs([&](std::uint64_t t) { return entry_root_of(h, s.entries, t); });
    log.sync_tail();
    EXPECT_EQ(c.snapshot().journal_writes, 1u);
    EXPECT_GE(c.snapshot().syncs, 1u);
  }
  IoCounters c2;
  std::vector<Entry> seen;
  std::vector<std::uint64_t> seen_pos;
  EntryLog::RecoveryReport report;
  auto log = EntryLog::recover(
      dir.path(), 1, HashAlgorithm::sha256, c2, false, 100,
      [&](const Entry& e, std::uint64_t pos) {
        seen.push_back(e);
        seen_pos.push_back(pos);
      },
      &report);
  EXPECT_FALSE(report.qlog_truncated);
  EXPECT_FALSE(report.tail_truncated);
  EXPECT_EQ(seen, s.entries);
  EXPECT_EQ(seen_pos, s.positions);
  EXPECT_EQ(log->next_id(), s.entries.size());
  EXPECT_EQ(log->flushed_entries(), 2 * kTwigLeaves);
  EXPECT_EQ(log->read_entry_by_id(kTwigLeaves + 3), s.entries[kTwigLeaves + 3]);
  EXPECT_EQ(log->read_entry_roots(0, 2),
            (std::vector<Digest>{entry_root_of(h, s.entries, 0), entry_root_of(h, s.entries, 1)}));
}

TEST(EntryLog, RecoveryDropsBlocksAboveTheManifestHeight) {
  TempDir dir;
  IoCounters c;
  Hasher h;
  std::mt19937_64 rng(6);
  std::vector<Entry> all;
  {
    EntryLog log(dir.path(), 0, HashAlgorithm::sha256, c, false);
    for (std::uint64_t height = 1; height <= 5; ++height) {
      auto s = stage_n(log, rng, 1000, height);
      all.insert(all.end(), s.entries.begin(), s.entries.end());
      log.flush_full_twigs([&](std::uint64_t t) { return entry_root_of(h, all, t); });
      log.sync_tail();
    }
  }
  // Heights 1..3 hold ids 0..2999: one flushed twig plus a Fresh tail.
  std::vector<Entry> seen;
  auto log = EntryLog::recover(dir.path(), 0, HashAlgorithm::sha256, c, false, 3,
                               [&](const Entry& e, std::uint64_t) { seen.push_back(e); });
  ASSERT_EQ(seen.size(), 3000u);
  EXPECT_TRUE(std::equal(seen.begin(), seen.end(), all.begin()));
  EXPECT_EQ(log->flushed_entries(), kTwigLeaves);
  EXPECT_EQ(log->next_id(), 3000u);
  // Entries 2048..2999 were in the log proper and moved back into the Fresh tail.
  EXPECT_FALSE(log->is_durable(log->position_of(2500)));
  EXPECT_EQ(log->read_entry_by_id(2999), all[2999]);
}

TEST(EntryLog, TornTailIsReportedAndCut) {
  TempDir dir;
  IoCounters c;
  Hasher h;
  std::mt19937_64 rng(7);
  Staged s;
  {
    EntryLog log(dir.path(), 0, HashAlgorithm::sha256, c, false);
    s = stage_n(log, rng, kTwigLeaves + 5);
    log.flush_full_twigs([&](std::uint64_t t) { return entry_root_of(h, s.entries, t); });
    log.sync_tail();
  }
  auto qlog = shard_file(dir.path(), 0, ".qlog");
  auto before = replay_log_file(qlog);
  EXPECT_FALSE(before.truncated_tail);
  EXPECT_EQ(before.entries.size(), kTwigLeaves);
  {
    // half of a frame header
    std::ofstream f(qlog, std::ios::binary | std::ios::app);
    Bytes junk = serialize_entry(s.entries.back());
    f.write(reinterpret_cast<const char*>(junk.data()), 20);
  }
  auto after = replay_log_file(qlog);
  EXPECT_TRUE(after.truncated_tail);
  EXPECT_EQ(after.valid_bytes, before.valid_bytes);
  EXPECT_EQ(after.entries.size(), kTwigLeaves);

  EntryLog::RecoveryReport report;
  std::size_t n = 0;
  auto log = EntryLog::recover(dir.path(), 0, HashAlgorithm::sha256, c, false, 100,
                               [&](const Entry&, std::uint64_t) { ++n; }, &report);
  EXPECT_TRUE(report.qlog_truncated);
  EXPECT_EQ(n, kTwigLeaves + 5);
  EXPECT_EQ(std::filesystem::file_size(qlog), before.valid_bytes);
}

TEST(EntryLog, MissingEntryRootsAreRebuilt) {
  TempDir dir;
  IoCounters c;
  Hasher h;
  std::mt19937_64 rng(8);
  Staged s;
  {
    EntryLog log(dir.path(), 0, HashAlgorithm::sha256, c, false);
    s = stage_n(log, rng, kTwigLeaves);
    log.flush_full_twigs([&](std::uint64_t t) { return entry_root_of(h, s.entries, t); });
  }
  // crash between the batch write and the metadata write
  std::filesystem::resize_file(shard_file(dir.path(), 0, ".twigs"), 0);
  auto log = EntryLog::recover(dir.path(), 0, HashAlgorithm::sha256, c, false, 100, {});
  EXPECT_EQ(log->read_entry_roots(0, 1).front(), entry_root_of(h, s.entries, 0));
}

TEST(EntryLog, ScanVisitsEveryEntryInIdOrder) {
  TempDir dir;
  IoCounters c;
  Hasher h;
  EntryLog log(dir.path(), 0, HashAlgorithm::sha256, c, false);
  std::mt19937_64 rng(9);
  auto s = stage_n(log, rng, kTwigLeaves + 1);
  log.flush_full_twigs([&](std::uint64_t t) { return entry_root_of(h, s.entries, t); });
  std::size_t n = 0;
  log.scan([&](const Entry& e, std::uint64_t pos) {
    EXPECT_EQ(e, s.entries[n]);
    EXPECT_EQ(pos, s.positions[n]);
    ++n;
    return true;
  });
  EXPECT_EQ(n, kTwigLeaves + 1);
  EXPECT_GT(c.snapshot().proof_reads, 0u);
}

}  // namespace
}  // namespace twigstore
