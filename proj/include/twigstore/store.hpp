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

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <exception>
#include <filesystem>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "twigstore/config.hpp"
#include "twigstore/error.hpp"
#include "twigstore/io_counters.hpp"
#include "twigstore/manifest.hpp"
#include "twigstore/proof.hpp"
#include "twigstore/shard.hpp"
#include "twigstore/tree.hpp"

namespace twigstore {

/// Operations of one block, applied in order. Op i gets version (height, i).
struct ChangeSet {
  std::uint64_t height = 0;
  std::vector<OpRequest> ops;
};

struct BlockResult {
  GlobalRoot root;
  /// Per op: the value for reads that found their key, empty otherwise.
  std::vector<std::optional<Bytes>> values;
};

struct StoreMemory {
  std::size_t shards = 0;
  std::size_t twig_objects = 0;
  std::size_t pruned_twigs = 0;
  std::size_t twig_bytes = 0;
  std::size_t upper_nodes = 0;
  std::size_t upper_bytes = 0;
  std::size_t indexer_bytes = 0;
  std::size_t indexed_keys = 0;
  std::size_t merkle_bytes() const { return twig_bytes + upper_bytes; }
};

struct ProvenHistory {
  Proof proof;
  std::vector<std::uint64_t> trace;
  bool inclusion = false;
};

/// Blocking FIFO with a capacity; close() wakes all waiters.
template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {}

  void push(T item) {
    std::unique_lock lock(mu_);
    not_full_.wait(lock, [&] { return closed_ || items_.size() < capacity_; });
    if (closed_) return;
    items_.push_back(std::move(item));
    not_empty_.notify_one();
  }

  std::optional<T> pop() {
    std::unique_lock lock(mu_);
    not_empty_.wait(lock, [&] { return closed_ || !items_.empty(); });
    if (items_.empty()) return std::nullopt;
    T item = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return item;
  }

  void close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    not_empty_.notify_all();
    not_full_.notify_all();
  }

 private:
  std::size_t capacity_;
  std::mutex mu_;
  std::condition_variable not_empty_;
  std::condition_variable not_full_;
  std::deque<T> items_;
  bool closed_ = false;
};

/// Sharded authenticated key-value store with a per-shard
/// prefetch / update / commit pipeline.
class Store {
 public:
  /// Opens the store in `config.dir`, creating it (block 0 holds only the
  /// sentinels) or recovering it to the height recorded in its manifest.
  static std::unique_ptr<Store> open(StoreConfig config) {
    config.validate();
    std::unique_ptr<Store> s(new Store(std::move(config)));
    s->open_impl();
    s->start_workers();
    return s;
  }

  ~Store() { stop_workers(); }
  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  const StoreConfig& config() const noexcept { return config_; }
  std::size_t shard_count() const noexcept { return shards_.size(); }
  Shard& shard(std::size_t i) { return *shards_.at(i); }
  const Shard& shard(std::size_t i) const { return *shards_.at(i); }

  std::uint32_t route(ByteView key) const { return route_key(key, config_.shard_bits); }

  std::uint64_t height() const {
    std::lock_guard lock(mu_);
    return committed_height_;
  }
  GlobalRoot root() const {
    std::lock_guard lock(mu_);
    return GlobalRoot{global_root_, committed_height_};
  }
  bool halted() const { return halted_.load(); }

  /// Queues a block; the future resolves once its global root is sealed.
  std::future<BlockResult> submit(ChangeSet cs) {
    auto job = make_job(std::move(cs));
    auto fut = job->promise.get_future();
    if (config_.mode == PipelineMode::serial) {
      run_serial(job);
    } else {
      workers_submit_.lock();
      for (auto& w : workers_) w->prefetch_q.push(ShardTask{job, nullptr});
      workers_submit_.unlock();
    }
    return fut;
  }

  BlockResult process_block(ChangeSet cs) { return submit(std::move(cs)).get(); }

  /// Pipelined execution of consecutive blocks; returns their results in order.
  std::vector<BlockResult> submit_overlapped(std::vector<ChangeSet> blocks) {
    std::vector<std::future<BlockResult>> futures;
    futures.reserve(blocks.size());
    for (auto& cs : blocks) futures.push_back(submit(std::move(cs)));
    std::vector<BlockResult> out;
    out.reserve(futures.size());
    std::exception_ptr first;
    for (auto& f : futures) {
      try {
        out.push_back(f.get());
      } catch (...) {
        if (!first) first = std::current_exception();
      }
    }
    if (first) std::rethrow_exception(first);
    return out;
  }

  /// Waits until every submitted block is sealed.
  void wait_idle() const {
    std::unique_lock lock(mu_);
    idle_cv_.wait(lock, [&] { return in_flight_ == 0; });
  }

  // ---- queries (between blocks) --------------------------------------------

  std::optional<Bytes> get(ByteView key) const {
    wait_idle();
    const Shard& s = *shards_.at(route(key));
    if (key.empty() || key.size() > kMaxKeyLen || !s.in_range(key)) return std::nullopt;
    auto hit = s.find(key);
    if (!hit) return std::nullopt;
    return hit->entry.value;
  }

  Proof prove_inclusion(ByteView key) const {
    wait_idle();
    const Shard& s = routed_shard(key);
    auto hit = s.find(key);
    if (!hit) fail(ErrorCode::not_found, "no active entry for key " + to_hex(key));
    return make_proof(ProofKind::inclusion, s, hit->entry.id, {}, 0);
  }

  Proof prove_exclusion(ByteView key) const {
    wait_idle();
    const Shard& s = routed_shard(key);
    auto cover = s.covering(key);
    if (bytes_equal(cover.entry.key, key)) {
      fail(ErrorCode::wrong_proof_kind, "key " + to_hex(key) + " is active");
    }
    return make_proof(ProofKind::exclusion, s, cover.entry.id, Bytes(key.begin(), key.end()), 0);
  }

  ProvenHistory prove_historical(ByteView key, std::uint64_t at_height) const {
    wait_idle();
    if (at_height > height()) {
      fail(ErrorCode::precondition, "height " + std::to_string(at_height) +
                                        " is above the committed height");
    }
    const Shard& s = routed_shard(key);
    auto h = historical_entry(s, key, at_height);
    ProvenHistory out;
    out.proof = make_proof(ProofKind::historical, s, h.entry.id, Bytes(key.begin(), key.end()),
                           at_height);
    out.trace = std::move(h.trace);
    out.inclusion = h.inclusion;
    return out;
  }

  Proof prove(ProofKind kind, ByteView key, std::uint64_t at_height = 0) const {
    switch (kind) {
      case ProofKind::inclusion: return prove_inclusion(key);
      case ProofKind::exclusion: return prove_exclusion(key);
      case ProofKind::historical: return prove_historical(key, at_height).proof;
    }
    fail(ErrorCode::wrong_proof_kind, "unknown proof kind");
  }

  VerifyOptions verify_options() const {
    VerifyOptions o;
    o.shard_bits = config_.shard_bits;
    o.hash = config_.hash;
    return o;
  }

  /// Active key/value set (sentinels included) at the end of block `h`.
  std::map<Bytes, Bytes> reconstruct_state(std::uint64_t h) const {
    wait_idle();
    if (h > height()) fail(ErrorCode::precondition, "height above the committed height");
    std::map<Bytes, Bytes> out;
    for (const auto& s : shards_) out.merge(reconstruct_shard_state(*s, h));
    return out;
  }

  /// Visits every active non-sentinel entry in key order.
  void for_each_active(const std::function<void(const Entry&)>& fn) const {
    wait_idle();
    for (const auto& s : shards_) s->for_each_active(fn);
  }

  IoStats stats() const { return counters_.snapshot(); }
  IoCounters& counters() { return counters_; }

  StoreMemory memory() const {
    StoreMemory m;
    m.shards = shards_.size();
    for (const auto& s : shards_) {
      auto sm = s->memory();
      m.twig_objects += sm.twig_objects;
      m.pruned_twigs += sm.pruned_twigs;
      m.twig_bytes += sm.twig_bytes;
      m.upper_nodes += sm.upper_nodes;
      m.upper_bytes += sm.upper_bytes;
      m.indexer_bytes += sm.indexer_bytes;
      m.indexed_keys += sm.indexed_keys;
    }
    return m;
  }

  std::uint64_t total_entries() const {
    std::uint64_t n = 0;
    for (const auto& s : shards_) n += s->next_id();
    return n;
  }

  std::uint64_t active_entries() const {
    std::uint64_t n = 0;
    for (const auto& s : shards_) n += s->active_count();
    return n;
  }

 private:
  struct BlockJob {
    ChangeSet cs;
    std::vector<std::vector<std::size_t>> per_shard;
    std::vector<Digest> shard_roots;
    BlockResult result;
    std::atomic<std::size_t> remaining{0};
    std::mutex mu;
    std::exception_ptr error;
    std::promise<BlockResult> promise;

    void record(std::exception_ptr e) {
      std::lock_guard lock(mu);
      if (!error) error = e;
    }
    bool failed() {
      std::lock_guard lock(mu);
      return error != nullptr;
    }
  };

  struct ShardTask {
    std::shared_ptr<BlockJob> job;
    std::unique_ptr<EntryCache> cache;
  };

  struct Worker {
    explicit Worker(std::size_t depth) : prefetch_q(depth), update_q(depth), commit_q(depth) {}
    BoundedQueue<ShardTask> prefetch_q;
    BoundedQueue<ShardTask> update_q;
    BoundedQueue<ShardTask> commit_q;
    std::mutex mu;
    std::condition_variable cv;
    std::uint64_t updated = 0;
    std::uint64_t committed = 0;
    std::vector<std::thread> threads;
  };

  explicit Store(StoreConfig config) : config_(std::move(config)), hasher_(config_.hash) {}

  void hook(std::string_view point) const {
    if (config_.fault_hook) config_.fault_hook(point);
  }

  ShardOptions shard_options() const {
    ShardOptions o;
    o.shard_bits = config_.shard_bits;
    o.hash = config_.hash;
    o.compaction_threshold = config_.compaction_threshold;
    o.compaction_step = config_.compaction_step;
    o.sync = config_.sync;
    return o;
  }

  const Shard& routed_shard(ByteView key) const {
    if (key.empty() || key.size() > kMaxKeyLen) fail(ErrorCode::encoding, "bad key length");
    const Shard& s = *shards_.at(route(key));
    s.require_routable(key);
    return s;
  }

  Proof make_proof(ProofKind kind, const Shard& s, std::uint64_t id, Bytes key,
                   std::uint64_t at_height) const {
    std::vector<Digest> roots;
    Digest root;
    {
      std::lock_guard lock(mu_);
      roots = shard_roots_;
      root = global_root_;
    }
    auto p = assemble_proof(kind, s.witness(id), s.id(),
                            global_path(hasher_, roots, config_.shard_bits, s.id()), root);
    p.key = std::move(key);
    p.height = at_height;
    return p;
  }

  void open_impl() {
    namespace fs = std::filesystem;
    fs::create_directories(config_.dir);
    auto manifest = read_manifest(config_.dir);
    const std::size_t n = config_.shard_count();
    auto opts = shard_options();
    if (!manifest) {
      for (const auto& e : fs::directory_iterator(config_.dir)) {
        auto name = e.path().filename().string();
        if (name.rfind("shard-", 0) == 0) {
          fail(ErrorCode::corruption, "manifest missing in " + config_.dir.string() +
                                          " but shard files exist (" + name + ")");
        }
      }
      for (std::size_t i = 0; i < n; ++i) {
        shards_.push_back(
            std::make_unique<Shard>(config_.dir, static_cast<std::uint32_t>(i), opts, counters_));
      }
      for (auto& s : shards_) {
        s->set_fault_hook(config_.fault_hook);
        shard_roots_.push_back(s->commit());
      }
      global_root_ = compute_global_digest(hasher_, shard_roots_, config_.shard_bits);
      committed_height_ = 0;
      write_manifest(config_.dir, Manifest{0, global_root_, config_.shard_bits, config_.hash},
                     config_.sync);
      return;
    }
    if (manifest->shard_bits != config_.shard_bits || manifest->hash != config_.hash) {
      fail(ErrorCode::configuration,
           "store was created with shard_bits=" + std::to_string(manifest->shard_bits) +
               " hash=" + std::string(to_string(manifest->hash)));
    }
    for (std::size_t i = 0; i < n; ++i) {
      EntryLog::RecoveryReport report;
      shards_.push_back(Shard::recover(config_.dir, static_cast<std::uint32_t>(i), opts, counters_,
                                       manifest->height, &report));
      if (report.qlog_truncated || report.tail_truncated) ++truncated_logs_;
      shards_.back()->set_fault_hook(config_.fault_hook);
      shard_roots_.push_back(shards_.back()->root());
    }
    global_root_ = compute_global_digest(hasher_, shard_roots_, config_.shard_bits);
    committed_height_ = manifest->height;
    submitted_height_ = committed_height_;
    if (global_root_ != manifest->root) {
      fail(ErrorCode::corruption, "recovered root " + to_hex(global_root_) +
                                      " does not match manifest root " + to_hex(manifest->root) +
                                      " at height " + std::to_string(manifest->height));
    }
  }

 public:
  /// Shards whose log or journal ended in a partial frame at open.
  std::size_t truncated_logs_at_open() const noexcept { return truncated_logs_; }

 private:
  std::shared_ptr<BlockJob> make_job(ChangeSet cs) {
    if (halted_) fail(ErrorCode::halted, "store halted after a failed block; reopen it");
    if (cs.ops.size() > kMaxTxIndex) fail(ErrorCode::capacity, "too many ops in one block");
    {
      std::lock_guard lock(mu_);
      if (cs.height != submitted_height_ + 1) {
        fail(ErrorCode::precondition, "block height " + std::to_string(cs.height) +
                                          " does not follow " + std::to_string(submitted_height_));
      }
      submitted_height_ = cs.height;
      ++in_flight_;
    }
    auto job = std::make_shared<BlockJob>();
    job->per_shard.resize(shards_.size());
    for (std::size_t i = 0; i < cs.ops.size(); ++i) {
      job->per_shard[route(cs.ops[i].key)].push_back(i);
    }
    job->shard_roots.resize(shards_.size());
    job->result.values.resize(cs.ops.size());
    job->remaining = shards_.size();
    job->cs = std::move(cs);
    return job;
  }

  void stage_prefetch(const Shard& s, BlockJob& job, EntryCache& cache) const {
    for (auto i : job.per_shard[s.id()]) s.prefetch(job.cs.ops[i], cache);
  }

  void stage_update(Shard& s, BlockJob& job, const EntryCache& cache) {
    s.begin_block(&cache);
    try {
      for (auto i : job.per_shard[s.id()]) {
        const auto& op = job.cs.ops[i];
        auto v = s.apply(op, pack_version(job.cs.height, static_cast<std::uint32_t>(i)));
        if (v) job.result.values[i] = std::move(v);
        hook("update.op");
      }
    } catch (...) {
      s.end_block();
      throw;
    }
    s.end_block();
  }

  /// Last shard to commit seals the block: global root, then manifest.
  void shard_done(const std::shared_ptr<BlockJob>& job) {
    if (job->remaining.fetch_sub(1) != 1) return;
    std::unique_lock lock(mu_);
    if (job->failed() || halted_) {
      halted_ = true;
      --in_flight_;
      idle_cv_.notify_all();
      height_cv_.notify_all();
      lock.unlock();
      job->promise.set_exception(job->error ? job->error
                                            : std::make_exception_ptr(Error(
                                                  ErrorCode::halted, "store halted")));
      return;
    }
    lock.unlock();
    try {
      Digest root = compute_global_digest(hasher_, job->shard_roots, config_.shard_bits);
      hook("commit.before_manifest");
      write_manifest(config_.dir, Manifest{job->cs.height, root, config_.shard_bits, config_.hash},
                     config_.sync);
      hook("commit.after_manifest");
      lock.lock();
      shard_roots_ = job->shard_roots;
      global_root_ = root;
      committed_height_ = job->cs.height;
      --in_flight_;
      idle_cv_.notify_all();
      height_cv_.notify_all();
      lock.unlock();
      job->result.root = GlobalRoot{root, job->cs.height};
      job->promise.set_value(std::move(job->result));
    } catch (...) {
      lock = std::unique_lock(mu_, std::defer_lock);
      lock.lock();
      halted_ = true;
      --in_flight_;
      idle_cv_.notify_all();
      height_cv_.notify_all();
      lock.unlock();
      job->promise.set_exception(std::current_exception());
    }
  }

  void run_serial(const std::shared_ptr<BlockJob>& job) {
    for (auto& sp : shards_) {
      Shard& s = *sp;
      if (!job->failed()) {
        try {
          EntryCache cache;
          stage_prefetch(s, *job, cache);
          stage_update(s, *job, cache);
          job->shard_roots[s.id()] = s.commit();
        } catch (...) {
          job->record(std::current_exception());
        }
      }
      shard_done(job);
    }
  }

  void start_workers() {
    if (config_.mode != PipelineMode::pipelined) return;
    for (auto& sp : shards_) {
      auto w = std::make_unique<Worker>(config_.queue_depth);
      w->updated = committed_height_;
      w->committed = committed_height_;
      Worker* wp = w.get();
      Shard* s = sp.get();
      w->threads.emplace_back([this, wp, s] { prefetch_loop(*wp, *s); });
      w->threads.emplace_back([this, wp, s] { update_loop(*wp, *s); });
      w->threads.emplace_back([this, wp, s] { commit_loop(*wp, *s); });
      workers_.push_back(std::move(w));
    }
  }

  void stop_workers() {
    for (auto& w : workers_) {
      w->prefetch_q.close();
    }
    for (auto& w : workers_) {
      for (auto& t : w->threads) t.join();
    }
    workers_.clear();
  }

  // Prefetch of block N starts once the updater has finished block N-1.
  void prefetch_loop(Worker& w, Shard& s) {
    while (auto task = w.prefetch_q.pop()) {
      const std::uint64_t h = task->job->cs.height;
      {
        std::unique_lock lock(w.mu);
        w.cv.wait(lock, [&] { return w.updated + 1 >= h; });
      }
      task->cache = std::make_unique<EntryCache>();
      if (!task->job->failed() && !halted_) {
        try {
          stage_prefetch(s, *task->job, *task->cache);
        } catch (...) {
          task->job->record(std::current_exception());
        }
      }
      w.update_q.push(std::move(*task));
    }
    w.update_q.close();
  }

  // Update of block N starts once this shard has committed block N-1.
  void update_loop(Worker& w, Shard& s) {
    while (auto task = w.update_q.pop()) {
      const std::uint64_t h = task->job->cs.height;
      {
        std::unique_lock lock(w.mu);
        w.cv.wait(lock, [&] { return w.committed + 1 >= h; });
      }
      if (!task->job->failed() && !halted_) {
        try {
          stage_update(s, *task->job, *task->cache);
        } catch (...) {
          task->job->record(std::current_exception());
        }
      }
      task->cache.reset();
      {
        std::lock_guard lock(w.mu);
        w.updated = h;
      }
      w.cv.notify_all();
      w.commit_q.push(std::move(*task));
    }
    w.commit_q.close();
  }

  // Commit of block N waits for the global seal of block N-1 so that
  // manifests are written in height order.
  void commit_loop(Worker& w, Shard& s) {
    while (auto task = w.commit_q.pop()) {
      const std::uint64_t h = task->job->cs.height;
      {
        std::unique_lock lock(mu_);
        height_cv_.wait(lock, [&] { return committed_height_ + 1 >= h || halted_; });
      }
      if (!task->job->failed() && !halted_) {
        try {
          task->job->shard_roots[s.id()] = s.commit();
        } catch (...) {
          task->job->record(std::current_exception());
        }
      }
      {
        std::lock_guard lock(w.mu);
        w.committed = h;
      }
      w.cv.notify_all();
      shard_done(task->job);
    }
  }

  StoreConfig config_;
  Hasher hasher_;
  IoCounters counters_;
  std::vector<std::unique_ptr<Shard>> shards_;
  std::vector<std::unique_ptr<Worker>> workers_;
  std::mutex workers_submit_;

  mutable std::mutex mu_;
  mutable std::condition_variable idle_cv_;
  std::condition_variable height_cv_;
  std::vector<Digest> shard_roots_;
  Digest global_root_{};
  std::uint64_t committed_height_ = 0;
  std::uint64_t submitted_height_ = 0;
  std::size_t in_flight_ = 0;
  std::atomic<bool> halted_{false};
  std::size_t truncated_logs_ = 0;
};

}  // namespace twigstore
