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

#include "mgbert/optimizer.hpp"

#include "mgbert/error.hpp"

#include <algorithm>
#include <cmath>

namespace mgbert
{

template <typename T>
OptState<T> make_opt_state(std::span<Matrix<T>* const> params, TrainPhaseConfig const& phase)
{
    OptState<T> s;
    s.beta1 = phase.beta1;
    s.beta2 = phase.beta2;
    s.eps = phase.eps;
    s.weight_decay = phase.weight_decay;
    for (auto const* p : params)
    {
        s.m.emplace_back(p->rows, p->cols);
        s.v.emplace_back(p->rows, p->cols);
    }
    return s;
}

template <typename T>
void adamw_step(std::span<Matrix<T>* const> params, std::span<Matrix<T> const* const> grads, OptState<T>& state,
    double lr, bool clip)
{
    if (params.size() != grads.size() || params.size() != state.m.size())
    {
        throw ArgumentError("optimizer tensor lists disagree");
    }
    if (!(lr >= 0.0))
    {
        throw ArgumentError("learning rate must be non-negative");
    }
    for (std::size_t i = 0; i < params.size(); ++i)
    {
        if (!params[i]->same_shape(*grads[i]) || !params[i]->same_shape(state.m[i]))
        {
            throw ArgumentError("optimizer shape mismatch");
        }
        if (!all_finite(*grads[i]))
        {
            throw NumericError("non-finite gradient; optimizer step refused");
        }
    }

    state.t += 1;
    double const t = static_cast<double>(state.t);
    double const corr1 = 1.0 - std::pow(state.beta1, t);
    double const corr2 = 1.0 - std::pow(state.beta2, t);
    std::vector<double> update;
    for (std::size_t i = 0; i < params.size(); ++i)
    {
        auto& p = params[i]->data;
        auto const& g = grads[i]->data;
        auto& m = state.m[i].data;
        auto& v = state.v[i].data;
        update.resize(p.size());
        double sq = 0.0;
        for (std::size_t j = 0; j < p.size(); ++j)
        {
            double const gj = static_cast<double>(g[j]);
            double const mj = state.beta1 * static_cast<double>(m[j]) + (1.0 - state.beta1) * gj;
            double const vj = state.beta2 * static_cast<double>(v[j]) + (1.0 - state.beta2) * gj * gj;
            m[j] = static_cast<T>(mj);
            v[j] = static_cast<T>(vj);
            double const u = (mj / corr1) / (std::sqrt(vj / corr2) + state.eps);
            update[j] = u;
            sq += u * u;
        }
        double scale = 1.0;
        if (clip && !p.empty())
        {
            double const rms = std::sqrt(sq / static_cast<double>(p.size()));
            scale = 1.0 / std::max(1.0, rms);
        }
        for (std::size_t j = 0; j < p.size(); ++j)
        {
            double const pj = static_cast<double>(p[j]);
            p[j] = static_cast<T>(pj - lr * scale * update[j] - lr * state.weight_decay * pj);
        }
    }
}

double lr_at(std::uint64_t tokens_seen, TrainPhaseConfig const& phase)
{
    double const peak = phase.peak_lr;
    if (phase.schedule == Schedule::kConstant)
    {
        return peak;
    }
    if (phase.warmup_tokens > 0 && tokens_seen < phase.warmup_tokens)
    {
        return peak * static_cast<double>(tokens_seen) / static_cast<double>(phase.warmup_tokens);
    }
    if (phase.decay_tokens > 0)
    {
        auto const decay_start = phase.token_budget >= phase.decay_tokens ? phase.token_budget - phase.decay_tokens : 0;
        if (tokens_seen >= decay_start)
        {
            double const f = std::min(
                1.0, static_cast<double>(tokens_seen - decay_start) / static_cast<double>(phase.decay_tokens));
            return std::max(0.0, peak * (1.0 - std::sqrt(f)));
        }
    }
    return peak;
}

template OptState<float> make_opt_state<float>(std::span<Matrix<float>* const>, TrainPhaseConfig const&);
template OptState<double> make_opt_state<double>(std::span<Matrix<double>* const>, TrainPhaseConfig const&);
template void adamw_step<float>(
    std::span<Matrix<float>* const>, std::span<Matrix<float> const* const>, OptState<float>&, double, bool);
template void adamw_step<double>(
    std::span<Matrix<double>* const>, std::span<Matrix<double> const* const>, OptState<double>&, double, bool);

} // namespace mgbert
