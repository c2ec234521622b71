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

#include "mgbert/llm2vec.hpp"

#include "mgbert/error.hpp"
#include "mgbert/rng.hpp"

#include <algorithm>
#include <cmath>

namespace mgbert
{

ArchConfig enable_bidirectional(ArchConfig cfg, std::string* notice)
{
    if (cfg.attention_mode == AttentionMode::kBidirectional)
    {
        if (notice != nullptr)
        {
            *notice = "model is already bidirectional; nothing changed";
        }
        return cfg;
    }
    cfg.attention_mode = AttentionMode::kBidirectional;
    return cfg;
}

ArchConfig enable_causal(ArchConfig cfg)
{
    cfg.attention_mode = AttentionMode::kCausal;
    return cfg;
}

bool causal_witness(ArchConfig const& cfg, ModelParams<float> const& params, std::uint64_t seed, int trials,
    double tolerance)
{
    Rng rng(seed);
    auto const len = std::min<std::int64_t>(16, cfg.max_seq_len);
    for (int t = 0; t < trials; ++t)
    {
        std::vector<TokenId> a(static_cast<std::size_t>(len));
        for (auto& id : a)
        {
            id = static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(cfg.vocab_size)));
        }
        auto const cut = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(len - 1)));
        auto b = a;
        for (auto j = cut + 1; j < len; ++j)
        {
            auto& id = b[static_cast<std::size_t>(j)];
            id = static_cast<TokenId>((id + 1 + rng.below(static_cast<std::uint64_t>(cfg.vocab_size - 1)))
                % cfg.vocab_size);
        }
        auto const ha = forward(params, cfg, pack({a})).hidden_states;
        auto const hb = forward(params, cfg, pack({b})).hidden_states;
        for (std::int64_t r = 0; r <= cut; ++r)
        {
            for (std::int64_t c = 0; c < ha.cols; ++c)
            {
                if (std::abs(static_cast<double>(ha(r, c)) - static_cast<double>(hb(r, c))) > tolerance)
                {
                    return false;
                }
            }
        }
    }
    return true;
}

MntpRun train_mntp_adapter(ArchConfig const& cfg, ModelParams<float> const& params, Dataset const& data,
    TrainPhaseConfig const& phase, SpecialIds const& special, AdapterOptions const& adapter_options,
    TrainOptions const& options)
{
    auto adapters = create_adapters(cfg, adapter_options);
    MntpRun out;
    out.run = train_mntp(cfg, params, std::move(adapters), data, phase, special, options);
    out.adapters = *out.run.state.adapters;
    return out;
}

TensorContainer merged_checkpoint(
    ArchConfig const& cfg, ModelParams<float> const& params, std::span<AdapterSet const> adapters)
{
    TensorContainer c;
    put_model(c, cfg, apply(params, adapters));
    std::string phases;
    for (auto const& a : adapters)
    {
        phases += (phases.empty() ? "" : ",") + a.phase;
    }
    c.metadata.set("absorbed_phases", phases);
    return c;
}

} // namespace mgbert
