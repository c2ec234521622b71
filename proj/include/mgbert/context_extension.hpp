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

#include "mgbert/config.hpp"
#include "mgbert/model.hpp"
#include "mgbert/trainer.hpp"

#include <string>
#include <utility>

namespace mgbert
{

inline constexpr double kExtendedTheta = 160000.0;
inline constexpr std::int64_t kExtendedMaxLen = 8192;

enum class ExtPhase
{
    kExt1,
    kExt2
};

std::string to_string(ExtPhase p);
ExtPhase ext_phase_from_string(std::string const& name);

/// Raises the global-layer RoPE theta and the maximum length. Weights are
/// returned untouched; local-layer theta stays as it was.
std::pair<ModelParams<float>, ArchConfig> extend(ModelParams<float> params, ArchConfig const& cfg,
    double new_theta = kExtendedTheta, std::int64_t new_max_len = kExtendedMaxLen);

/// `phase` with the schedule forced to the one the extension phase uses:
/// constant for ext1, 1-sqrt decay for ext2.
TrainPhaseConfig phase_schedule(ExtPhase id, TrainPhaseConfig phase);

/// MLM continuation for one extension phase; the tag lands in checkpoint metadata.
TrainResult run_phase(ArchConfig const& cfg, ModelParams<float> params, ExtPhase id, Dataset const& data,
    TrainPhaseConfig const& phase, SpecialIds const& special, TrainOptions const& options = {});

} // namespace mgbert
