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

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstdint>
#include <cstring>
#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "twigstore/bytes.hpp"
#include "twigstore/entry.hpp"
#include "twigstore/error.hpp"
#include "twigstore/hash.hpp"
#include "twigstore/io_counters.hpp"
#include "twigstore/twig.hpp"

namespace twigstore {

namespace fs = std::filesystem;

/// Called at named points of the write path; tests use it to inject crashes.
using FaultHook = std::function<void(std::string_view point)>;

/// RAII file descriptor with positional IO.
class LogFile {
 public:
  LogFile() = default;
  explicit LogFile(const fs::path& path) : path_(path) {
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (fd_ < 0) fail(ErrorCode::storage, "open " + path.string() + ": " + std::strerror(errno));
  }
  ~LogFile() {
    if (fd_ >= 0) ::close(fd_);
  }
  LogFile(LogFile&& o) noexcept : fd_(std::exchange(o.fd_, -1)), path_(std::move(o.path_)) {}
  LogFile& operator=(LogFile&& o) noexcept {
    if (this != &o) {
      if (fd_ >= 0) ::close(fd_);
      fd_ = std::exchange(o.fd_, -1);
      path_ = std::move(o.path_);
    }
    return *this;
  }
  LogFile(const LogFile&) = delete;
  LogFile& operator=(const LogFile&) = delete;

  const fs::path& path() const noexcept { return path_; }

  std::uint64_t size() const {
    struct stat st {};
    if (::fstat(fd_, &st) != 0) fail(ErrorCode::storage, "fstat " + path_.string());
    return static_cast<std::uint64_t>(st.st_size);
  }

  std::size_t read_some(std::uint64_t offset, std::uint8_t* buf, std::size_t n) const {
    std::size_t done = 0;
    while (done < n) {
      ssize_t r = ::pread(fd_, buf + done, n - done, static_cast<off_t>(offset + done));
      if (r < 0) {
        if (errno == EINTR) continue;
        fail(ErrorCode::storage, "pread " + path_.string() + ": " + std::strerror(errno));
      }
      if (r == 0) break;
      done += static_cast<std::size_t>(r);
    }
    return done;
  }

  void read_exact(std::uint64_t offset, std::uint8_t* buf, std::size_t n) const {
    if (read_some(offset, buf, n) != n) {
      fail(ErrorCode::corruption, "short read at " + std::to_string(offset) + " in " + path_.string());
    }
  }

  void write_at(std::uint64_t offset, ByteView data) {
    std::size_t done = 0;
    while (done < data.size()) {
      ssize_t w = ::pwrite(fd_, data.data() + done, data.size() - done,
                           static_cast<off_t>(offset + done));
      if (w < 0) {
        if (errno == EINTR) continue;
        fail(ErrorCode::storage, "pwrite " + path_.string() + ": " + std::strerror(errno));
      }
      done += static_cast<std::size_t>(w);
    }
  }

  void sync() {
    if (::fdatasync(fd_) != 0) fail(ErrorCode::storage, "fdatasync " + path_.string());
  }

  void truncate(std::uint64_t size) {
    if (::ftruncate(fd_, static_cast<off_t>(size)) != 0) {
      fail(ErrorCode::storage, "ftruncate " + path_.string());
    }
  }

 private:
  int fd_ = -1;
  fs::path path_;
};

inline void sync_directory(const fs::path& dir) {
  int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY | O_CLOEXEC);
  if (fd < 0) return;
  ::fsync(fd);
  ::close(fd);
}

/// Sequential reader of concatenated entry frames.
class FrameScanner {
 public:
  struct Frame {
    std::uint64_t position;
    ByteView bytes;
  };

  explicit FrameScanner(const LogFile& file, IoCounters::Counter* reads = nullptr)
      : file_(file), file_size_(file.size()), reads_(reads) {}

  /// Stops the scan at `limit` bytes instead of the end of file.
  void set_limit(std::uint64_t limit) { file_size_ = std::min(file_size_, limit); }

  /// Next complete frame, or nothing at end of file. A partial trailing frame
  /// ends the scan and sets truncated(); an invalid header with enough bytes
  /// behind it is corruption.
  std::optional<Frame> next() {
    if (position_ >= file_size_) return std::nullopt;
    const std::uint64_t left = file_size_ - position_;
    if (left < kFrameHeaderLen) {
      truncated_ = true;
      return std::nullopt;
    }
    fill(kFrameHeaderLen);
    std::size_t len = 0;
    try {
      len = frame_length_from_header(view(kFrameHeaderLen));
    } catch (const Error& e) {
      fail(ErrorCode::corruption, "invalid frame header at position " + std::to_string(position_) +
                                      " of " + file_.path().string());
    }
    if (left < len) {
      truncated_ = true;
      return std::nullopt;
    }
    fill(len);
    Frame f{position_, view(len)};
    position_ += len;
    return f;
  }

  bool truncated() const noexcept { return truncated_; }
  std::uint64_t valid_bytes() const noexcept { return position_; }

 private:
  void fill(std::size_t need) {
    if (position_ >= buf_start_ && position_ + need <= buf_start_ + buf_.size()) return;
    buf_.resize(std::max<std::size_t>(need, kChunk));
    std::size_t got = file_.read_some(position_, buf_.data(), buf_.size());
    if (reads_) IoCounters::bump(*reads_);
    buf_.resize(got);
    buf_start_ = position_;
    if (got < need) fail(ErrorCode::corruption, "short read in " + file_.path().string());
  }

  ByteView view(std::size_t n) const {
    return ByteView(buf_.data() + (position_ - buf_start_), n);
  }

  static constexpr std::size_t kChunk = 1 << 20;
  const LogFile& file_;
  std::uint64_t file_size_;
  std::uint64_t position_ = 0;
  Bytes buf_;
  std::uint64_t buf_start_ = 0;
  bool truncated_ = false;
  IoCounters::Counter* reads_;
};

struct ReplayedEntry {
  std::uint64_t id;
  std::uint64_t position;
  Entry entry;
};

struct ReplayResult {
  std::vector<ReplayedEntry> entries;
  bool truncated_tail = false;
  std::uint64_t valid_bytes = 0;
};

/// Reads every complete frame of a log file in order.
inline ReplayResult replay_log_file(const fs::path& path) {
  ReplayResult out;
  if (!fs::exists(path)) return out;
  LogFile file(path);
  FrameScanner scanner(file);
  while (auto f = scanner.next()) {
    DecodedEntry d;
    try {
      d = deserialize_entry(f->bytes);
    } catch (const Error&) {
      fail(ErrorCode::corruption, "corrupt frame at position " + std::to_string(f->position));
    }
    out.entries.push_back({d.entry.id, f->position, std::move(d.entry)});
  }
  out.truncated_tail = scanner.truncated();
  out.valid_bytes = scanner.valid_bytes();
  return out;
}

inline fs::path shard_file(const fs::path& dir, std::uint32_t shard, std::string_view ext) {
  return dir / ("shard-" + std::to_string(shard) + std::string(ext));
}

/// Per-shard append-only entry log.
///
/// Full twigs go to `shard-<id>.qlog` in one sequential write each, and their
/// entry roots to `shard-<id>.twigs`. Entries of the Fresh twig stay in memory
/// and are journaled to `shard-<id>.tail` at block commit so that a committed
/// block survives a crash; the journal is not part of the log proper.
class EntryLog {
 public:
  struct RecoveryReport {
    bool qlog_truncated = false;
    bool tail_truncated = false;
  };

  /// Opens (creating if needed) an empty shard log.
  EntryLog(const fs::path& dir, std::uint32_t shard, HashAlgorithm algo, IoCounters& counters,
           bool sync)
      : dir_(dir), shard_(shard), hasher_(algo), counters_(&counters), sync_(sync),
        qlog_(shard_file(dir, shard, ".qlog")), twigs_(shard_file(dir, shard, ".twigs")),
        tail_(shard_file(dir, shard, ".tail")) {
    durable_size_ = qlog_.size();
    if (durable_size_ != 0 || twigs_.size() != 0 || tail_.size() != 0) {
      fail(ErrorCode::consistency, "shard " + std::to_string(shard) + " log is not empty");
    }
  }

  /// Reopens an existing shard log, keeping only entries of blocks up to
  /// `max_height`, and visits every kept entry in id order.
  static std::unique_ptr<EntryLog> recover(
      const fs::path& dir, std::uint32_t shard, HashAlgorithm algo, IoCounters& counters,
      bool sync, std::uint64_t max_height,
      const std::function<void(const Entry&, std::uint64_t position)>& visit,
      RecoveryReport* report = nullptr) {
    std::unique_ptr<EntryLog> log(new EntryLog(dir, shard, algo, counters, sync, RecoverTag{}));
    log->recover_impl(max_height, visit, report);
    return log;
  }

  void set_fault_hook(FaultHook hook) { fault_hook_ = std::move(hook); }

  std::uint32_t shard() const noexcept { return shard_; }
  std::uint64_t next_id() const {
    std::shared_lock lock(mu_);
    return next_id_;
  }
  std::uint64_t durable_size() const {
    std::shared_lock lock(mu_);
    return durable_size_;
  }
  std::uint64_t flushed_entries() const {
    std::shared_lock lock(mu_);
    return offsets_.size();
  }
  bool is_durable(std::uint64_t position) const {
    std::shared_lock lock(mu_);
    return position < durable_size_;
  }

  /// Adds an entry to the in-memory tail and returns its log position.
  std::uint64_t stage(const Entry& e) {
    std::unique_lock lock(mu_);
    if (e.id != next_id_) {
      fail(ErrorCode::consistency, "staging id " + std::to_string(e.id) + ", expected " +
                                       std::to_string(next_id_));
    }
    if (pending_.empty() || pending_.back().offsets.size() == kTwigLeaves) {
      std::uint64_t base = pending_.empty()
                               ? durable_size_
                               : pending_.back().base + pending_.back().bytes.size();
      pending_.push_back(PendingTwig{next_id_, base, {}, {}});
      pending_.back().offsets.reserve(kTwigLeaves);
    }
    auto& twig = pending_.back();
    auto position = twig.base + twig.bytes.size();
    if (position + frame_size(e) > kMaxLogBytes) {
      fail(ErrorCode::storage, "shard log would exceed 2^48 bytes");
    }
    twig.offsets.push_back(static_cast<std::uint32_t>(twig.bytes.size()));
    serialize_entry_into(e, twig.bytes);
    ++next_id_;
    return position;
  }

  /// Frame bytes of the most recently staged entry.
  ByteView last_staged_frame() const {
    std::shared_lock lock(mu_);
    const auto& twig = pending_.back();
    return ByteView(twig.bytes).subspan(twig.offsets.back());
  }

  /// Writes one full twig (2048 frames with consecutive ids starting at
  /// `first_id`) in a single sequential write and records its entry root.
  std::vector<std::uint64_t> append_twig_batch(ByteView frames, std::uint64_t first_id,
                                               const Digest& entry_root) {
    std::unique_lock lock(mu_);
    return append_batch_locked(frames, first_id, entry_root);
  }

  /// Flushes every pending twig that is full; `entry_root` supplies each
  /// twig's root. Returns the number of twigs written.
  std::size_t flush_full_twigs(const std::function<Digest(std::uint64_t twig)>& entry_root) {
    std::unique_lock lock(mu_);
    std::size_t flushed = 0;
    while (!pending_.empty() && pending_.front().offsets.size() == kTwigLeaves) {
      auto& front = pending_.front();
      append_batch_locked(front.bytes, front.first_id, entry_root(twig_of(front.first_id)));
      pending_.pop_front();
      ++flushed;
    }
    return flushed;
  }

  /// Makes all staged entries of the Fresh twig durable in the tail journal.
  void sync_tail() {
    std::unique_lock lock(mu_);
    const std::uint64_t fresh_first = offsets_.size();
    if (!pending_.empty() && pending_.front().first_id != fresh_first) {
      fail(ErrorCode::consistency, "tail journal sync with unflushed full twigs");
    }
    const PendingTwig* fresh = pending_.empty() ? nullptr : &pending_.front();
    if (tail_first_id_ != fresh_first) {
      tail_.truncate(0);
      tail_size_ = 0;
      tail_count_ = 0;
      tail_first_id_ = fresh_first;
    }
    std::size_t count = fresh ? fresh->offsets.size() : 0;
    if (count > tail_count_) {
      std::size_t from = fresh->offsets[tail_count_];
      ByteView data = ByteView(fresh->bytes).subspan(from);
      tail_.write_at(tail_size_, data);
      tail_size_ += data.size();
      tail_count_ = count;
      note_write(counters_->journal_writes);
      hook("tail.written");
    }
    if (sync_) {
      tail_.sync();
      IoCounters::bump(counters_->syncs);
    }
  }

  /// Reads the entry at `position`; positions past the durable end are served
  /// from memory without touching storage.
  Entry read_entry_at(std::uint64_t position) const {
    std::shared_lock lock(mu_);
    return read_locked(position);
  }

  /// Whether `position` was read from storage (as opposed to memory).
  struct ReadResult {
    Entry entry;
    bool from_storage;
  };
  ReadResult read_entry_at_traced(std::uint64_t position) const {
    std::shared_lock lock(mu_);
    bool durable = position < durable_size_;
    return {read_locked(position), durable};
  }

  std::uint64_t position_of(std::uint64_t id) const {
    std::shared_lock lock(mu_);
    return position_locked(id);
  }

  Entry read_entry_by_id(std::uint64_t id) const {
    std::shared_lock lock(mu_);
    return read_locked(position_locked(id));
  }

  /// All frames of one twig (complete or not), for proof generation.
  Bytes read_twig_frames(std::uint64_t twig) const {
    std::shared_lock lock(mu_);
    const std::uint64_t first = twig * kTwigLeaves;
    if (first >= next_id_) fail(ErrorCode::not_found, "twig " + std::to_string(twig) + " is empty");
    if (first < offsets_.size()) {
      std::uint64_t begin = offsets_[first];
      std::uint64_t end = first + kTwigLeaves < offsets_.size() ? offsets_[first + kTwigLeaves]
                                                                : durable_size_;
      Bytes out(end - begin);
      qlog_.read_exact(begin, out.data(), out.size());
      IoCounters::bump(counters_->proof_reads);
      note_read_only_merkle();
      return out;
    }
    for (const auto& p : pending_) {
      if (p.first_id == first) return p.bytes;
    }
    fail(ErrorCode::not_found, "twig " + std::to_string(twig) + " not found");
  }

  /// Visits every entry in id order until `fn` returns false.
  void scan(const std::function<bool(const Entry&, std::uint64_t position)>& fn) const {
    std::shared_lock lock(mu_);
    FrameScanner scanner(qlog_, &counters_->proof_reads);
    scanner.set_limit(durable_size_);
    while (auto f = scanner.next()) {
      if (!fn(deserialize_entry(f->bytes).entry, f->position)) return;
    }
    for (const auto& p : pending_) {
      for (auto off : p.offsets) {
        if (!fn(deserialize_entry(ByteView(p.bytes).subspan(off)).entry, p.base + off)) return;
      }
    }
  }

  /// Persisted entry roots of flushed twigs [first, first + count).
  std::vector<Digest> read_entry_roots(std::uint64_t first, std::uint64_t count) const {
    std::shared_lock lock(mu_);
    if ((first + count) * kTwigLeaves > offsets_.size()) {
      fail(ErrorCode::not_found, "entry roots requested beyond flushed twigs");
    }
    std::vector<Digest> out(count);
    if (count > 0) {
      twigs_.read_exact(first * 32, out.front().data(), count * 32);
      IoCounters::bump(counters_->proof_reads);
      note_read_only_merkle();
    }
    return out;
  }

 private:
  static constexpr std::uint64_t kMaxLogBytes = std::uint64_t{1} << 48;

  struct PendingTwig {
    std::uint64_t first_id = 0;
    std::uint64_t base = 0;
    Bytes bytes;
    std::vector<std::uint32_t> offsets;
  };

  struct RecoverTag {};
  EntryLog(const fs::path& dir, std::uint32_t shard, HashAlgorithm algo, IoCounters& counters,
           bool sync, RecoverTag)
      : dir_(dir), shard_(shard), hasher_(algo), counters_(&counters), sync_(sync),
        qlog_(shard_file(dir, shard, ".qlog")), twigs_(shard_file(dir, shard, ".twigs")),
        tail_(shard_file(dir, shard, ".tail")) {}

  void hook(std::string_view point) const {
    if (fault_hook_) fault_hook_(point);
  }

  void note_write(IoCounters::Counter& c) {
    IoCounters::bump(c);
    if (MerkleizationScope::active()) IoCounters::bump(counters_->merkleization_writes);
  }

  void note_read_only_merkle() const {
    if (MerkleizationScope::active()) IoCounters::bump(counters_->merkleization_reads);
  }

  std::vector<std::uint64_t> append_batch_locked(ByteView frames, std::uint64_t first_id,
                                                 const Digest& entry_root) {
    if (first_id != offsets_.size()) {
      fail(ErrorCode::consistency, "batch starts at id " + std::to_string(first_id) +
                                       ", log holds " + std::to_string(offsets_.size()));
    }
    if (first_id % kTwigLeaves != 0) fail(ErrorCode::consistency, "batch is not twig aligned");
    std::vector<std::uint64_t> positions;
    positions.reserve(kTwigLeaves);
    std::size_t at = 0;
    while (at < frames.size()) {
      auto d = deserialize_entry(frames.subspan(at));
      if (d.entry.id != first_id + positions.size()) {
        fail(ErrorCode::consistency, "id discontinuity in twig batch at id " +
                                         std::to_string(d.entry.id));
      }
      positions.push_back(durable_size_ + at);
      at += d.consumed;
    }
    if (positions.size() != kTwigLeaves) {
      fail(ErrorCode::consistency,
           "twig batch holds " + std::to_string(positions.size()) + " frames, expected 2048");
    }
    qlog_.write_at(durable_size_, frames);
    note_write(counters_->flush_writes);
    IoCounters::bump(counters_->flushed_bytes, frames.size());
    hook("flush.batch_written");
    twigs_.write_at(twig_of(first_id) * 32, entry_root);
    note_write(counters_->meta_writes);
    if (sync_) {
      qlog_.sync();
      twigs_.sync();
      IoCounters::bump(counters_->syncs, 2);
    }
    hook("flush.meta_written");
    durable_size_ += frames.size();
    offsets_.insert(offsets_.end(), positions.begin(), positions.end());
    return positions;
  }

  std::uint64_t position_locked(std::uint64_t id) const {
    if (id == kNullId || id >= next_id_) {
      fail(ErrorCode::not_found, "no entry with id " + (id == kNullId ? std::string("NULL")
                                                                       : std::to_string(id)));
    }
    if (id < offsets_.size()) return offsets_[id];
    for (const auto& p : pending_) {
      if (id >= p.first_id && id < p.first_id + p.offsets.size()) {
        return p.base + p.offsets[id - p.first_id];
      }
    }
    fail(ErrorCode::consistency, "id " + std::to_string(id) + " has no position");
  }

  Entry read_locked(std::uint64_t position) const {
    if (position < durable_size_) {
      Bytes buf(kSpeculativeRead);
      std::size_t got = qlog_.read_some(position, buf.data(), buf.size());
      buf.resize(got);
      IoCounters::bump(counters_->log_reads);
      note_read_only_merkle();
      try {
        std::size_t len = frame_length_from_header(buf);
        if (len > buf.size()) {
          buf.resize(len);
          qlog_.read_exact(position, buf.data(), len);
        }
        auto d = deserialize_entry(buf);
        return std::move(d.entry);
      } catch (const Error& e) {
        fail(ErrorCode::corruption, "no valid entry at position " + std::to_string(position));
      }
    }
    for (const auto& p : pending_) {
      if (position >= p.base && position < p.base + p.bytes.size()) {
        std::uint64_t rel = position - p.base;
        // Positions must land on a frame boundary.
        auto it = std::lower_bound(p.offsets.begin(), p.offsets.end(), rel);
        if (it == p.offsets.end() || *it != rel) break;
        return deserialize_entry(ByteView(p.bytes).subspan(rel)).entry;
      }
    }
    fail(ErrorCode::corruption, "no valid entry at position " + std::to_string(position));
  }

  void recover_impl(std::uint64_t max_height,
                    const std::function<void(const Entry&, std::uint64_t)>& visit,
                    RecoveryReport* report);

  static constexpr std::size_t kSpeculativeRead = 512;

  fs::path dir_;
  std::uint32_t shard_;
  Hasher hasher_;
  IoCounters* counters_;
  bool sync_;
  LogFile qlog_;
  LogFile twigs_;
  LogFile tail_;
  FaultHook fault_hook_;

  mutable std::shared_mutex mu_;
  std::uint64_t durable_size_ = 0;
  std::vector<std::uint64_t> offsets_;
  std::deque<PendingTwig> pending_;
  std::uint64_t next_id_ = 0;
  std::uint64_t tail_first_id_ = 0;
  std::uint64_t tail_count_ = 0;
  std::uint64_t tail_size_ = 0;
};

inline void EntryLog::recover_impl(std::uint64_t max_height,
                                   const std::function<void(const Entry&, std::uint64_t)>& visit,
                                   RecoveryReport* report) {
  RecoveryReport local;
  // Pass 1: headers of the log proper, cut at the first entry of a later block.
  std::vector<std::uint64_t> positions;
  std::uint64_t qlog_end = 0;
  bool cut = false;
  {
    FrameScanner scanner(qlog_);
    while (auto f = scanner.next()) {
      auto id = le::get<std::uint64_t>(f->bytes.data());
      auto version = le::get<std::uint64_t>(f->bytes.data() + 8);
      if (id != positions.size()) {
        fail(ErrorCode::corruption, "log id " + std::to_string(id) + " at position " +
                                        std::to_string(f->position) + " out of sequence");
      }
      if (version_height(version) > max_height) {
        cut = true;
        break;
      }
      positions.push_back(f->position);
      qlog_end = f->position + f->bytes.size();
    }
    local.qlog_truncated = scanner.truncated();
  }

  // The tail journal continues (and may overlap) the log proper.
  struct TailFrame {
    std::uint64_t id;
    Bytes bytes;
  };
  std::vector<TailFrame> tail_frames;
  if (!cut) {
    FrameScanner scanner(tail_);
    std::uint64_t expect = kNullId;
    while (auto f = scanner.next()) {
      auto id = le::get<std::uint64_t>(f->bytes.data());
      auto version = le::get<std::uint64_t>(f->bytes.data() + 8);
      if (expect != kNullId && id != expect) {
        fail(ErrorCode::corruption, "tail journal id " + std::to_string(id) + " out of sequence");
      }
      if (expect == kNullId && id > positions.size()) {
        fail(ErrorCode::corruption, "tail journal starts at id " + std::to_string(id) +
                                        " past the log end " + std::to_string(positions.size()));
      }
      expect = id + 1;
      if (version_height(version) > max_height) break;
      if (id >= positions.size()) tail_frames.push_back({id, Bytes(f->bytes.begin(), f->bytes.end())});
    }
    local.tail_truncated = scanner.truncated();
  }

  const std::uint64_t kept = positions.size() + tail_frames.size();
  const std::uint64_t full_twigs = kept / kTwigLeaves;
  const std::uint64_t durable_entries = full_twigs * kTwigLeaves;
  const std::uint64_t durable_bytes =
      durable_entries < positions.size() ? positions[durable_entries] : qlog_end;

  // Collect frames of the new Fresh twig: some may still sit in the log proper.
  PendingTwig fresh{durable_entries, durable_bytes, {}, {}};
  for (std::uint64_t id = durable_entries; id < positions.size(); ++id) {
    std::uint64_t end = id + 1 < positions.size() ? positions[id + 1] : qlog_end;
    Bytes frame(end - positions[id]);
    qlog_.read_exact(positions[id], frame.data(), frame.size());
    fresh.offsets.push_back(static_cast<std::uint32_t>(fresh.bytes.size()));
    fresh.bytes.insert(fresh.bytes.end(), frame.begin(), frame.end());
  }
  for (auto& t : tail_frames) {
    if (t.id < durable_entries) continue;
    fresh.offsets.push_back(static_cast<std::uint32_t>(fresh.bytes.size()));
    fresh.bytes.insert(fresh.bytes.end(), t.bytes.begin(), t.bytes.end());
  }

  // Entry roots for flushed twigs the metadata file does not cover yet.
  std::uint64_t meta_twigs = twigs_.size() / 32;
  std::vector<Digest> missing_roots;
  for (std::uint64_t t = meta_twigs; t < full_twigs; ++t) {
    std::vector<Digest> leaves;
    leaves.reserve(kTwigLeaves);
    std::uint64_t begin = positions[t * kTwigLeaves];
    std::uint64_t end = (t + 1) * kTwigLeaves < positions.size() ? positions[(t + 1) * kTwigLeaves]
                                                                  : qlog_end;
    Bytes frames(end - begin);
    qlog_.read_exact(begin, frames.data(), frames.size());
    std::size_t at = 0;
    while (at < frames.size()) {
      auto len = frame_length_from_header(ByteView(frames).subspan(at));
      leaves.push_back(leaf_hash(hasher_, ByteView(frames).subspan(at, len)));
      at += len;
    }
    missing_roots.push_back(compute_entry_root(hasher_, leaves));
  }

  // Rewrite the journal first so an interrupted recovery can run again.
  {
    fs::path tmp = shard_file(dir_, shard_, ".tail.tmp");
    {
      LogFile t(tmp);
      t.truncate(0);
      t.write_at(0, fresh.bytes);
      t.sync();
    }
    fs::rename(tmp, tail_.path());
    tail_ = LogFile(shard_file(dir_, shard_, ".tail"));
    sync_directory(dir_);
  }
  if (qlog_.size() != durable_bytes) qlog_.truncate(durable_bytes);
  for (std::uint64_t t = meta_twigs; t < full_twigs; ++t) {
    twigs_.write_at(t * 32, missing_roots[t - meta_twigs]);
  }
  if (twigs_.size() != full_twigs * 32) twigs_.truncate(full_twigs * 32);
  qlog_.sync();
  twigs_.sync();

  durable_size_ = durable_bytes;
  offsets_.assign(positions.begin(), positions.begin() + static_cast<std::ptrdiff_t>(durable_entries));
  next_id_ = kept;
  tail_first_id_ = durable_entries;
  tail_count_ = fresh.offsets.size();
  tail_size_ = fresh.bytes.size();
  if (!fresh.offsets.empty()) pending_.push_back(std::move(fresh));

  // Pass 2: hand every kept entry to the caller.
  if (visit) {
    FrameScanner scanner(qlog_);
    std::uint64_t n = 0;
    while (n < durable_entries) {
      auto f = scanner.next();
      if (!f) fail(ErrorCode::corruption, "log shrank during recovery");
      visit(deserialize_entry(f->bytes).entry, f->position);
      ++n;
    }
    for (const auto& p : pending_) {
      for (auto off : p.offsets) {
        visit(deserialize_entry(ByteView(p.bytes).subspan(off)).entry, p.base + off);
      }
    }
  }
  if (report) *report = local;
}

}  // namespace twigstore
