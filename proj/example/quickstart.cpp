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

// Minimal walk-through: open a store, commit two blocks, prove and verify.

#include <filesystem>
#include <iostream>

#include "twigstore.hpp"

namespace ts = twigstore;

static ts::Bytes b(std::string_view s) { return ts::Bytes(s.begin(), s.end()); }

int main() {
  auto dir = std::filesystem::temp_directory_path() / "twigstore-quickstart";
  std::filesystem::remove_all(dir);

  ts::StoreConfig cfg;
  cfg.dir = dir;
  cfg.shard_bits = 2;
  auto store = ts::Store::open(cfg);

  ts::ChangeSet first{1, {{ts::OpKind::create, b("apple"), b("red")},
                          {ts::OpKind::create, b("banana"), b("yellow")},
                          {ts::OpKind::create, b("cherry"), b("dark red")}}};
  store->submit(std::move(first)).get();

  ts::ChangeSet second{2, {{ts::OpKind::update, b("apple"), b("green")},
                           {ts::OpKind::erase, b("banana"), {}},
                           {ts::OpKind::read, b("cherry"), {}}}};
  auto result = store->submit(std::move(second)).get();
  std::cout << "height " << result.root.block_height << " root " << ts::to_hex(result.root.digest)
            << "\n";

  auto root = store->root().digest;
  auto opts = store->verify_options();

  auto in = store->prove_inclusion(b("apple"));
  std::cout << "apple:  " << ts::verify_proof(ts::encode_proof(in), root, opts).reason << "\n";

  auto out = store->prove_exclusion(b("banana"));
  std::cout << "banana absent: " << ts::verify_proof(ts::encode_proof(out), root, opts).reason << "\n";

  auto old = store->prove_historical(b("apple"), 1);
  auto v = old.proof.entry().value;
  std::cout << "apple at height 1: " << std::string(v.begin(), v.end()) << "\n";

  std::filesystem::remove_all(dir);
}
