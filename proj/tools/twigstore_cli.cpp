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

// twigstore: populate, benchmark, prove and check a store from the shell.
//
// Every command prints key=value lines on stdout. Exit codes: 0 ok,
// 1 verification or ledger failure, 2 format/usage error, 3 storage error.

#include <chrono>
#include <deque>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "twigstore.hpp"

namespace ts = twigstore;
namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailed = 1;
constexpr int kExitFormat = 2;
constexpr int kExitStorage = 3;

int exit_code_for(ts::ErrorCode c) {
  switch (c) {
    case ts::ErrorCode::decode:
    case ts::ErrorCode::encoding:
    case ts::ErrorCode::configuration:
      return kExitFormat;
    case ts::ErrorCode::storage:
    case ts::ErrorCode::corruption:
    case ts::ErrorCode::halted:
      return kExitStorage;
    default:
      return kExitFailed;
  }
}

struct StoreFlags {
  std::string dir;
  std::optional<unsigned> shard_bits;
  std::optional<double> compaction_threshold;
  std::optional<std::string> hash;
  std::optional<std::string> mode;
  std::optional<std::size_t> queue_depth;
  std::string config;
  bool sync = false;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--dir", dir, "store directory")->required();
    cmd->add_option("--shard-bits", shard_bits, "log2 of the shard count (new stores)");
    cmd->add_option("--compaction-threshold", compaction_threshold, "active/slot ratio, 0 disables");
    cmd->add_option("--hash", hash, "sha256 or blake2s256");
    cmd->add_option("--mode", mode, "serial or pipelined");
    cmd->add_option("--queue-depth", queue_depth, "blocks buffered per pipeline stage");
    cmd->add_option("--config", config, "JSON file with store settings");
    cmd->add_flag("--sync", sync, "fdatasync at every commit");
  }

  /// Flags override the config file; an existing store's manifest fixes the
  /// shard count and hash unless they are given explicitly.
  ts::StoreConfig resolve() const {
    ts::StoreConfig c;
    if (!config.empty()) c = ts::load_config_file(config, c);
    c.dir = dir;
    if (auto m = ts::read_manifest(dir)) {
      c.shard_bits = m->shard_bits;
      c.hash = m->hash;
    }
    if (shard_bits) c.shard_bits = *shard_bits;
    if (compaction_threshold) c.compaction_threshold = *compaction_threshold;
    if (hash) c.hash = ts::parse_hash_algorithm(*hash);
    if (queue_depth) c.queue_depth = *queue_depth;
    if (mode) c = ts::apply_config_json(nlohmann::json{{"mode", *mode}}, c);
    if (sync) c.sync = true;
    return c;
  }
};

void kv(const std::string& key, const auto& value) { std::cout << key << "=" << value << "\n"; }

void print_memory(const ts::Store& store) {
  auto m = store.memory();
  kv("twig_objects", m.twig_objects);
  kv("pruned_twigs", m.pruned_twigs);
  kv("upper_nodes", m.upper_nodes);
  kv("merkle_bytes", m.merkle_bytes());
  kv("indexer_bytes", m.indexer_bytes);
  kv("indexed_keys", m.indexed_keys);
}

void print_state(const ts::Store& store) {
  kv("height", store.height());
  kv("root", ts::to_hex(store.root().digest));
  kv("entries_total", store.total_entries());
  kv("active_entries", store.active_entries());
}

std::uint64_t full_twigs(const ts::Store& store) {
  std::uint64_t n = 0;
  for (std::size_t i = 0; i < store.shard_count(); ++i) n += store.shard(i).next_id() / ts::kTwigLeaves;
  return n;
}

double per_op(std::uint64_t n, std::uint64_t ops) {
  return ops == 0 ? 0.0 : static_cast<double>(n) / static_cast<double>(ops);
}

/// Runs blocks through the store and returns wall seconds.
template <typename MakeBlock>
double run_blocks(ts::Store& store, std::uint64_t blocks, MakeBlock&& make) {
  std::deque<std::future<ts::BlockResult>> pending;
  std::uint64_t next = store.height() + 1;
  auto start = std::chrono::steady_clock::now();
  for (std::uint64_t b = 0; b < blocks; ++b) {
    pending.push_back(store.submit(make(next++)));
    // keep a bounded number of blocks in flight
    if (pending.size() >= 4) {
      pending.front().get();
      pending.pop_front();
    }
  }
  for (auto& f : pending) f.get();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

struct WorkloadFlags {
  std::uint64_t blocks = 10;
  std::uint64_t txs = 100;
  std::uint64_t seed = 1;
  std::size_t value_size = 32;
  unsigned creates_per_tx = 10;
  std::string mix = "15,9,1,1";
};

int cmd_populate(const StoreFlags& sf, const WorkloadFlags& wf) {
  auto cfg = sf.resolve();
  auto store = ts::Store::open(cfg);
  auto state = ts::read_keygen_state(cfg.dir).value_or(ts::KeygenState{wf.seed, 0});
  if (state.seed != wf.seed) state = {wf.seed, 0};
  ts::WorkloadGenerator gen(state.seed, wf.value_size, state.counter);
  const auto before = store->stats();
  const auto twigs_before = full_twigs(*store);
  double secs = run_blocks(*store, wf.blocks, [&](std::uint64_t h) {
    return gen.populate_block(h, wf.txs, wf.creates_per_tx);
  });
  ts::write_keygen_state(cfg.dir, {state.seed, gen.keys().counter()});
  auto d = store->stats() - before;
  const std::uint64_t ops = wf.blocks * wf.txs * wf.creates_per_tx;
  kv("command", "populate");
  kv("blocks", wf.blocks);
  kv("ops", ops);
  kv("elapsed_s", secs);
  kv("ops_per_sec", secs > 0 ? static_cast<double>(ops) / secs : 0.0);
  kv("create_reads_per_op", per_op(d.entry_reads[0], d.ops[0]));
  kv("create_writes_per_op", per_op(d.entry_writes[0], d.ops[0]));
  kv("flush_writes", d.flush_writes);
  kv("expected_flush_writes", full_twigs(*store) - twigs_before);
  kv("compaction_moves", d.compaction_moves);
  print_state(*store);
  print_memory(*store);
  return kExitOk;
}

struct LedgerLine {
  const char* name;
  std::uint64_t ops, reads, writes, expected_reads, expected_writes;
  bool pass() const { return reads == expected_reads && writes == expected_writes; }
};

int cmd_mixed(const StoreFlags& sf, const WorkloadFlags& wf) {
  auto cfg = sf.resolve();
  auto mix = ts::parse_mix(wf.mix);
  auto store = ts::Store::open(cfg);
  auto state = ts::read_keygen_state(cfg.dir).value_or(ts::KeygenState{wf.seed, 0});
  if (state.seed != wf.seed) state = {wf.seed, 0};
  ts::WorkloadGenerator gen(state.seed, wf.value_size, state.counter);
  store->for_each_active([&](const ts::Entry& e) { gen.add_live(e.key); });
  const auto before = store->stats();
  const auto twigs_before = full_twigs(*store);
  double secs = run_blocks(*store, wf.blocks, [&](std::uint64_t h) {
    return gen.mixed_block(h, wf.txs, mix);
  });
  ts::write_keygen_state(cfg.dir, {state.seed, gen.keys().counter()});
  auto d = store->stats() - before;
  const auto& o = d.ops;
  std::uint64_t total_ops = o[0] + o[1] + o[2] + o[3];
  kv("command", "mixed");
  kv("blocks", wf.blocks);
  kv("ops", total_ops);
  kv("elapsed_s", secs);
  kv("ops_per_sec", secs > 0 ? static_cast<double>(total_ops) / secs : 0.0);
  auto U = static_cast<std::size_t>(ts::OpKind::update);
  auto C = static_cast<std::size_t>(ts::OpKind::create);
  auto D = static_cast<std::size_t>(ts::OpKind::erase);
  auto R = static_cast<std::size_t>(ts::OpKind::read);
  // Reads only cost storage when the key's entry had been flushed.
  LedgerLine lines[] = {
      {"update", o[U], d.entry_reads[U], d.entry_writes[U], o[U], o[U]},
      {"create", o[C], d.entry_reads[C], d.entry_writes[C], o[C], 2 * o[C]},
      {"delete", o[D], d.entry_reads[D], d.entry_writes[D], 2 * o[D], o[D]},
      {"read", o[R], d.entry_reads[R], d.entry_writes[R], d.read_ops_log_resident, 0},
  };
  bool ok = true;
  for (const auto& l : lines) {
    std::string p = std::string("ledger.") + l.name;
    kv(p + ".ops", l.ops);
    kv(p + ".reads", l.reads);
    kv(p + ".writes", l.writes);
    kv(p + ".reads_per_op", per_op(l.reads, l.ops));
    kv(p + ".writes_per_op", per_op(l.writes, l.ops));
    kv(p, l.pass() ? "PASS" : "FAIL");
    ok = ok && l.pass();
  }
  const std::uint64_t expected_flushes = full_twigs(*store) - twigs_before;
  kv("ledger.flush_writes", d.flush_writes);
  kv("ledger.expected_flush_writes", expected_flushes);
  kv("ledger.flush", d.flush_writes == expected_flushes ? "PASS" : "FAIL");
  ok = ok && d.flush_writes == expected_flushes;
  kv("read_ops_log_resident", d.read_ops_log_resident);
  kv("compaction_moves", d.compaction_moves);
  kv("compaction_reads", d.compaction_reads);
  kv("merkleization_reads", d.merkleization_reads);
  kv("merkleization_writes", d.merkleization_writes);
  kv("prefetch_reads", d.prefetch_reads);
  kv("cache_misses", d.cache_misses);
  print_state(*store);
  print_memory(*store);
  kv("ledger", ok ? "PASS" : "FAIL");
  return ok ? kExitOk : kExitFailed;
}

int cmd_prove(const StoreFlags& sf, const std::string& key_hex, const std::string& kind,
              std::uint64_t height, const std::string& out) {
  auto cfg = sf.resolve();
  if (!ts::read_manifest(cfg.dir)) ts::fail(ts::ErrorCode::storage, "no store in " + cfg.dir.string());
  auto store = ts::Store::open(cfg);
  auto k = ts::parse_proof_kind(kind);
  ts::Bytes key = ts::from_hex(key_hex);
  auto proof = store->prove(k, key, height);
  ts::Bytes enc = ts::encode_proof(proof);
  std::ofstream f(out, std::ios::binary | std::ios::trunc);
  f.write(reinterpret_cast<const char*>(enc.data()), static_cast<std::streamsize>(enc.size()));
  if (!f) ts::fail(ts::ErrorCode::storage, "cannot write " + out);
  kv("command", "prove");
  kv("kind", kind);
  kv("proof_bytes", enc.size());
  kv("entry_id", proof.entry().id);
  kv("shard", proof.shard_id);
  kv("shard_bits", cfg.shard_bits);
  kv("hash", ts::to_string(cfg.hash));
  kv("height", store->height());
  kv("root", ts::to_hex(store->root().digest));
  return kExitOk;
}

int cmd_verify(const std::string& path, const std::string& root_hex, unsigned shard_bits,
               const std::string& hash, const std::string& key_hex,
               std::optional<std::uint64_t> height) {
  std::ifstream f(path, std::ios::binary);
  if (!f) ts::fail(ts::ErrorCode::storage, "cannot read " + path);
  ts::Bytes bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  ts::VerifyOptions o;
  o.shard_bits = shard_bits;
  o.hash = ts::parse_hash_algorithm(hash);
  if (!key_hex.empty()) o.key = ts::from_hex(key_hex);
  o.height = height;
  auto r = ts::verify_proof(bytes, ts::digest_from_hex(root_hex), o);
  kv("command", "verify");
  kv("result", r.accepted ? "accept" : "reject");
  kv("reason", r.reason);
  return r.accepted ? kExitOk : kExitFailed;
}

int cmd_replay_check(const StoreFlags& sf) {
  auto cfg = sf.resolve();
  auto manifest = ts::read_manifest(cfg.dir);
  if (!manifest) {
    std::cout << "command=replay-check\nresult=error\nreason=manifest missing in " << cfg.dir.string()
              << "\n";
    return kExitStorage;
  }
  auto start = std::chrono::steady_clock::now();
  // Store::open replays the logs and refuses a root that differs from the manifest.
  auto store = ts::Store::open(cfg);
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  kv("command", "replay-check");
  kv("manifest_height", manifest->height);
  kv("manifest_root", ts::to_hex(manifest->root));
  kv("recovered_root", ts::to_hex(store->root().digest));
  kv("truncated_logs", store->truncated_logs_at_open());
  kv("replay_s", secs);
  kv("result", "match");
  return kExitOk;
}

int cmd_stats(const StoreFlags& sf) {
  auto cfg = sf.resolve();
  if (!ts::read_manifest(cfg.dir)) ts::fail(ts::ErrorCode::storage, "no store in " + cfg.dir.string());
  auto store = ts::Store::open(cfg);
  kv("command", "stats");
  kv("shards", store->shard_count());
  kv("shard_bits", cfg.shard_bits);
  kv("hash", ts::to_string(cfg.hash));
  print_state(*store);
  print_memory(*store);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"twigstore: authenticated key-value store tool"};
  app.require_subcommand(1);

  StoreFlags sf;
  WorkloadFlags wf;

  auto* populate = app.add_subcommand("populate", "create entries in fresh blocks");
  sf.add_to(populate);
  populate->add_option("--blocks", wf.blocks);
  populate->add_option("--txs", wf.txs, "transactions per block");
  populate->add_option("--creates-per-tx", wf.creates_per_tx);
  populate->add_option("--seed", wf.seed);
  populate->add_option("--value-size", wf.value_size);

  auto* mixed = app.add_subcommand("mixed", "run a read/update/create/delete mix and check IO costs");
  sf.add_to(mixed);
  mixed->add_option("--blocks", wf.blocks);
  mixed->add_option("--txs", wf.txs, "transactions per block");
  mixed->add_option("--mix", wf.mix, "ops per tx as reads,updates,creates,deletes");
  mixed->add_option("--seed", wf.seed);
  mixed->add_option("--value-size", wf.value_size);

  std::string key_hex, kind = "inclusion", out, proof_path, root_hex, hash = "sha256";
  std::uint64_t height = 0;
  std::optional<std::uint64_t> claim_height;
  unsigned verify_bits = 4;

  auto* prove = app.add_subcommand("prove", "write a proof for a key");
  sf.add_to(prove);
  prove->add_option("--key", key_hex, "key in hex")->required();
  prove->add_option("--kind", kind, "inclusion, exclusion or historical");
  prove->add_option("--height", height, "block height for historical proofs");
  prove->add_option("--out", out, "proof output file")->required();

  auto* verify = app.add_subcommand("verify", "check a proof file against a root");
  verify->add_option("--proof", proof_path)->required();
  verify->add_option("--root", root_hex, "expected global root in hex")->required();
  verify->add_option("--shard-bits", verify_bits);
  verify->add_option("--hash", hash);
  verify->add_option("--key", key_hex, "key the proof must be about");
  verify->add_option("--height", claim_height, "height a historical proof must be about");

  auto* replay = app.add_subcommand("replay-check", "replay the logs and compare with the manifest");
  sf.add_to(replay);

  auto* stats = app.add_subcommand("stats", "print store state and memory use");
  sf.add_to(stats);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitFormat;
  }

  try {
    if (*populate) return cmd_populate(sf, wf);
    if (*mixed) return cmd_mixed(sf, wf);
    if (*prove) return cmd_prove(sf, key_hex, kind, height, out);
    if (*verify) return cmd_verify(proof_path, root_hex, verify_bits, hash, key_hex, claim_height);
    if (*replay) return cmd_replay_check(sf);
    if (*stats) return cmd_stats(sf);
  } catch (const ts::Error& e) {
    std::cout << "result=error\nerror_code=" << ts::to_string(e.code()) << "\n";
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitStorage;
  }
  return kExitFormat;
}
