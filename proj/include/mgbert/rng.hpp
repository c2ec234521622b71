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

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace mgbert
{

/// mt19937_64 with distribution code written out here, so sampled values do
/// not depend on the standard library's distribution implementations.
class Rng
{
public:
    explicit Rng(std::uint64_t seed = 0)
        : mEngine(seed)
    {
    }

    std::uint64_t next_u64()
    {
        return mEngine();
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform()
    {
        return static_cast<double>(mEngine() >> 11) * 0x1.0p-53;
    }

    /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
    std::uint64_t below(std::uint64_t n)
    {
        if (n <= 1)
        {
            return 0;
        }
        std::uint64_t const limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t x = mEngine();
        while (x >= limit)
        {
            x = mEngine();
        }
        return x % n;
    }

    /// Standard normal via Box-Muller; no cached spare so state stays a pure engine state.
    double normal()
    {
        double u1 = uniform();
        while (u1 <= 0.0)
        {
            u1 = uniform();
        }
        double const u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v)
    {
        for (std::size_t i = v.size(); i > 1; --i)
        {
            auto const j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    std::string state() const
    {
        std::ostringstream os;
        os << mEngine;
        return os.str();
    }

    void set_state(std::string const& s)
    {
        std::istringstream is(s);
        is >> mEngine;
    }

    bool operator==(Rng const& o) const
    {
        return mEngine == o.mEngine;
    }

private:
    std::mt19937_64 mEngine;
};

/// splitmix64 finalizer; used to derive independent seeds.
inline std::uint64_t mix_seed(std::uint64_t x)
{
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream)
{
    return mix_seed(seed ^ mix_seed(stream + 0x632BE59BD9B4E019ULL));
}

} // namespace mgbert
