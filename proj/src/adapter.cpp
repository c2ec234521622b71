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

#include "mgbert/adapter.hpp"

#include "mgbert/error.hpp"
#include "mgbert/rng.hpp"

#include <cmath>
#include <sstream>

namespace mgbert
{

namespace
{

std::pair<std::int64_t, std::int64_t> projection_shape(ArchConfig const& cfg, Target t)
{
    switch (t)
    {
    case Target::kQuery:
    case Target::kKey:
    case Target::kValue:
    case Target::kOutput: return {cfg.hidden, cfg.hidden};
    case Target::kUp: return {2 * cfg.intermediate, cfg.hidden};
    case Target::kDown: return {cfg.hidden, cfg.intermediate};
    }
    return {0, 0};
}

std::string tensor_name(std::int64_t layer, Target t, char const* part)
{
    return "adapter.layers." + std::to_string(layer) + "." + to_string(t) + "." + part;
}

} // namespace

std::vector<Matrix<float>*> AdapterSet::tensors()
{
    std::vector<Matrix<float>*> out;
    for (auto& [key, pair] : pairs)
    {
        out.push_back(&pair.a);
        out.push_back(&pair.b);
    }
    return out;
}

std::string join_targets(std::vector<Target> const& targets)
{
    std::string out;
    for (auto const t : targets)
    {
        out += (out.empty() ? "" : ",") + to_string(t);
    }
    return out;
}

std::vector<Target> parse_targets(std::string const& text)
{
    std::vector<Target> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
    {
        if (!item.empty())
        {
            out.push_back(target_from_string(item));
        }
    }
    return out;
}

AdapterSet create_adapters(ArchConfig const& cfg, AdapterOptions const& options)
{
    if (options.rank <= 0 || !(options.alpha > 0.0))
    {
        throw ArgumentError("adapter rank and alpha must be positive");
    }
    AdapterSet set;
    set.rank = options.rank;
    set.alpha = options.alpha;
    set.targets = options.targets;
    set.phase = options.phase;
    Rng rng(options.seed);
    for (std::int64_t layer = 0; layer < cfg.n_layers; ++layer)
    {
        for (auto const t : options.targets)
        {
            auto const [out, in] = projection_shape(cfg, t);
            LowRankPair<float> pair;
            pair.a = Matrix<float>(options.rank, in);
            pair.b = Matrix<float>(out, options.rank);
            pair.scale = set.scale();
            double const bound = 1.0 / std::sqrt(static_cast<double>(in));
            for (auto& v : pair.a.data)
            {
                v = static_cast<float>((2.0 * rng.uniform() - 1.0) * bound);
            }
            set.pairs[{layer, t}] = std::move(pair);
        }
    }
    return set;
}

template <typename T>
RuntimeAdapters<T> runtime_adapters(AdapterSet const& set)
{
    RuntimeAdapters<T> rt;
    for (auto const& [key, pair] : set.pairs)
    {
        rt.pairs[key] = LowRankPair<T>{cast_matrix<T>(pair.a), cast_matrix<T>(pair.b), static_cast<T>(set.scale())};
    }
    return rt;
}

ModelParams<float> apply(ModelParams<float> const& params, std::span<AdapterSet const> adapters)
{
    ModelParams<float> out = params;
    for (auto const& set : adapters)
    {
        double const scale = static_cast<double>(set.scale());
        for (auto const& [key, pair] : set.pairs)
        {
            auto const [layer, target] = key;
            if (layer < 0 || layer >= static_cast<std::int64_t>(out.layers.size()))
            {
                throw ArgumentError("adapter layer outside model");
            }
            auto& w = out.layers[static_cast<std::size_t>(layer)].proj(target).weight;
            if (pair.b.rows != w.rows || pair.a.cols != w.cols || pair.a.rows != pair.b.cols)
            {
                throw ArgumentError("adapter shape does not match " + to_string(target));
            }
            for (std::int64_t o = 0; o < w.rows; ++o)
            {
                for (std::int64_t i = 0; i < w.cols; ++i)
                {
                    double delta = 0.0;
                    for (std::int64_t r = 0; r < pair.a.rows; ++r)
                    {
                        delta += static_cast<double>(pair.b(o, r)) * static_cast<double>(pair.a(r, i));
                    }
                    w(o, i) += static_cast<float>(scale * delta);
                }
            }
        }
    }
    return out;
}

TensorContainer adapter_container(ArchConfig const& cfg, AdapterSet const& set)
{
    TensorContainer c;
    write_arch(cfg, c.metadata, "arch.");
    c.metadata.set("adapter.rank", std::to_string(set.rank));
    c.metadata.set("adapter.alpha", format_real(set.alpha));
    c.metadata.set("adapter.targets", join_targets(set.targets));
    c.metadata.set("adapter.phase", set.phase);
    for (auto const& [key, pair] : set.pairs)
    {
        c.tensors.emplace_back(tensor_name(key.first, key.second, "a"), pair.a);
        c.tensors.emplace_back(tensor_name(key.first, key.second, "b"), pair.b);
    }
    return c;
}

AdapterSet adapter_from_container(TensorContainer const& c)
{
    auto const cfg = get_arch(c);
    AdapterSet set;
    set.rank = parse_int(c.meta("adapter.rank"));
    set.alpha = parse_real(c.meta("adapter.alpha"));
    set.targets = parse_targets(c.meta("adapter.targets"));
    set.phase = c.meta("adapter.phase");
    for (std::int64_t layer = 0; layer < cfg.n_layers; ++layer)
    {
        for (auto const t : set.targets)
        {
            LowRankPair<float> pair;
            pair.a = c.at(tensor_name(layer, t, "a"));
            pair.b = c.at(tensor_name(layer, t, "b"));
            pair.scale = set.scale();
            set.pairs[{layer, t}] = std::move(pair);
        }
    }
    return set;
}

template RuntimeAdapters<float> runtime_adapters<float>(AdapterSet const&);
template RuntimeAdapters<double> runtime_adapters<double>(AdapterSet const&);

} // namespace mgbert
