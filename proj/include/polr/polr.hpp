/*
 * Copyright 2026 The polr Authors.
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

// Everything in one include.

#include <polr/backend.hpp>
#include <polr/cache.hpp>
#include <polr/cluster.hpp>
#include <polr/consensus.hpp>
#include <polr/core.hpp>
#include <polr/dataset.hpp>
#include <polr/embed.hpp>
#include <polr/harness.hpp>
#include <polr/hash.hpp>
#include <polr/metrics.hpp>
#include <polr/remote.hpp>
#include <polr/report.hpp>
#include <polr/synthetic.hpp>
