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

#include "mgbert/checkpoint.hpp"
#include "mgbert/config.hpp"
#include "mgbert/model.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace mgbert
{

/// Low-rank deltas produced by one adapter-training phase.
struct AdapterSet
{
    std::int64_t rank = 16;
    double alpha = 32.0;
    std::vector<Target> targets;
    std::string phase;
    std::map<std::pair<std::int64_t, Target>, LowRankPair<float>> pairs;

    float scale() const
    {
        return static_cast<float>(alpha / static_cast<double>(rank));
    }
    std::vector<Matrix<float>*> tensors();
};

struct AdapterOptions
{
    std::int64_t rank = 16;
    double alpha = 32.0;
    std::vector<Target> targets{kAllTargets.begin(), kAllTargets.end()};
    std::string phase = "ext1";
    std::uint64_t seed = 0;
};

/// A ~ U(-1/sqrt(in), 1/sqrt(in)), B = 0, so a fresh set is an exact identity.
AdapterSet create_adapters(ArchConfig const& cfg, AdapterOptions const& options);

template <typename T>
RuntimeAdapters<T> runtime_adapters(AdapterSet const& set);

/// W <- W + scale * B * A for every targeted projection, adapters applied in
/// the given order. Throws ArgumentError on shape mismatch.
ModelParams<float> apply(ModelParams<float> const& params, std::span<AdapterSet const> adapters);

TensorContainer adapter_container(ArchConfig const& cfg, AdapterSet const& set);
AdapterSet adapter_from_container(TensorContainer const& c);

std::string join_targets(std::vector<Target> const& targets);
std::vector<Target> parse_targets(std::string const& text);

} // namespace mgbert
