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

#include "twigstore/bytes.hpp"
#include "twigstore/config.hpp"
#include "twigstore/entry.hpp"
#include "twigstore/error.hpp"
#include "twigstore/hash.hpp"
#include "twigstore/indexer.hpp"
#include "twigstore/io_counters.hpp"
#include "twigstore/log.hpp"
#include "twigstore/manifest.hpp"
#include "twigstore/op.hpp"
#include "twigstore/proof.hpp"
#include "twigstore/shard.hpp"
#include "twigstore/store.hpp"
#include "twigstore/tree.hpp"
#include "twigstore/twig.hpp"
#include "twigstore/workload.hpp"
