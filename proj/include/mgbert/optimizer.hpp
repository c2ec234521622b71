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
#include "mgbert/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace mgbert
{

/// StableAdamW moments for a fixed list of tensors.
template <typename T>
struct OptState
{
    std::vector<Matrix<T>> m;
    std::vector<Matrix<T>> v;
    std::int64_t t = 0;
    double beta1 = 0.90;
    double beta2 = 0.98;
    double eps = 1e-6;
    double weight_decay = 0.0;
};

template <typename T>
OptState<T> make_opt_state(std::span<Matrix<T>* const> params, TrainPhaseConfig const& phase);

/// One StableAdamW step. Bias-corrected AdamW direction u = m_hat / (sqrt(v_hat) + eps),
/// scaled per tensor by c = 1 / max(1, RMS(u)) when clipping is on, plus
/// decoupled weight decay: p <- p - lr*c*u - lr*weight_decay*p.
/// Throws NumericError (and leaves everything untouched) on non-finite grads.
template <typename T>
void adamw_step(std::span<Matrix<T>* const> params, std::span<Matrix<T> const* const> grads, OptState<T>& state,
    double lr, bool clip = true);

/// Learning rate after `tokens_seen` tokens of the phase: linear warmup, plateau,
/// then peak * (1 - sqrt(f)) over the final decay_tokens.
double lr_at(std::uint64_t tokens_seen, TrainPhaseConfig const& phase);

} // namespace mgbert
