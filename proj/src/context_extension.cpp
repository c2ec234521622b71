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

#include "mgbert/context_extension.hpp"

#include "mgbert/error.hpp"

namespace mgbert
{

std::string to_string(ExtPhase p)
{
    return p == ExtPhase::kExt1 ? "ext1" : "ext2";
}

ExtPhase ext_phase_from_string(std::string const& name)
{
    if (name == "ext1")
    {
        return ExtPhase::kExt1;
    }
    if (name == "ext2")
    {
        return ExtPhase::kExt2;
    }
    throw ConfigError("unknown extension phase '" + name + "' (expected ext1 or ext2)");
}

std::pair<ModelParams<float>, ArchConfig> extend(
    ModelParams<float> params, ArchConfig const& cfg, double new_theta, std::int64_t new_max_len)
{
    if (new_max_len < cfg.max_seq_len)
    {
        throw ArgumentError("extend cannot shrink the maximum sequence length");
    }
    if (!(new_theta > 0.0))
    {
        throw ArgumentError("RoPE theta must be positive");
    }
    auto out = cfg;
    out.rope_theta_global = new_theta;
    out.max_seq_len = new_max_len;
    return {std::move(params), out};
}

TrainPhaseConfig phase_schedule(ExtPhase id, TrainPhaseConfig phase)
{
    if (id == ExtPhase::kExt1)
    {
        phase.schedule = Schedule::kConstant;
        phase.warmup_tokens = 0;
        phase.decay_tokens = 0;
    }
    else
    {
        phase.schedule = Schedule::kOneSqrtDecay;
    }
    return phase;
}

TrainResult run_phase(ArchConfig const& cfg, ModelParams<float> params, ExtPhase id, Dataset const& data,
    TrainPhaseConfig const& phase, SpecialIds const& special, TrainOptions const& options)
{
    auto state = make_state(cfg, std::move(params), phase_schedule(id, phase), Objective::kMlm, special);
    state.phase_tag = to_string(id);
    return run_training(std::move(state), data, options);
}

} // namespace mgbert
