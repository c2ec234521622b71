/*
 * Copyright (c) 2026, The mgbert Authors.  All rights reserved.
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

#include "mgbert/adapter.hpp"
#include "mgbert/trainer.hpp"

#include <span>
#include <string>
#include <vector>

namespace mgbert
{

/// Swaps the causal mask for full attention. Returns the config unchanged (and
/// fills `notice`) when it is already bidirectional.
ArchConfig enable_bidirectional(ArchConfig cfg, std::string* notice = nullptr);

/// Inverse toggle.
ArchConfig enable_causal(ArchConfig cfg);

/// True when outputs at positions <= i do not move when tokens after i are
/// replaced, checked on `trials` random sequences.
bool causal_witness(ArchConfig const& cfg, ModelParams<float> const& params, std::uint64_t seed, int trials = 4,
    double tolerance = 1e-6);

struct MntpRun
{
    AdapterSet adapters;
    TrainResult run;
};

/// Creates a fresh adapter set and trains it with MNTP; the base stays frozen.
MntpRun train_mntp_adapter(ArchConfig const& cfg, ModelParams<float> const& params, Dataset const& data,
    TrainPhaseConfig const& phase, SpecialIds const& special, AdapterOptions const& adapter_options,
    TrainOptions const& options = {});

/// Merged weights plus an `absorbed_phases` metadata entry listing the phases.
TensorContainer merged_checkpoint(
    ArchConfig const& cfg, ModelParams<float> const& params, std::span<AdapterSet const> adapters);

} // namespace mgbert
