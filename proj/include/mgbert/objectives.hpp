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
#include "mgbert/rng.hpp"
#include "mgbert/tensor.hpp"
#include "mgbert/tokenizer.hpp"

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace mgbert
{

inline constexpr TokenId kIgnoreLabel = -100;

struct MaskedBatch
{
    std::vector<TokenId> corrupted_ids;
    // Original id at masked positions, kIgnoreLabel elsewhere.
    std::vector<TokenId> labels;
    std::vector<std::int64_t> mask_positions;
};

/// Masks each maskable position independently with probability `rate`.
/// CLS, SEP, PAD and MASK are never selected.
MaskedBatch mlm_mask(std::span<TokenId const> ids, double rate, MaskPolicy policy, SpecialIds const& special,
    std::int64_t vocab_size, Rng& rng);

template <typename T>
struct LossAndGrad
{
    double loss = 0.0;
    Matrix<T> d_logits;
};

/// Mean cross-entropy over rows whose label is not kIgnoreLabel. d_logits is
/// the gradient of that mean, scaled by `weight`.
template <typename T>
LossAndGrad<T> mlm_loss(Matrix<T> const& logits, std::span<TokenId const> labels, double weight = 1.0);

/// Cross-entropy of one distribution over positions (span start or end).
template <typename T>
double position_cross_entropy(std::span<T const> scores, std::int64_t target, std::span<T> d_scores, double weight);

struct MntpTargets
{
    std::vector<std::int64_t> prediction_positions;
    std::vector<TokenId> labels;
};

/// The token masked at i is predicted from position i-1; a mask at 0 is dropped.
MntpTargets mntp_targets(std::span<TokenId const> ids, std::span<std::int64_t const> mask_positions);

template <typename T>
struct InfoNceResult
{
    double loss = 0.0;
    Matrix<T> d_queries;
    Matrix<T> d_positives;
    Matrix<T> d_negatives;
};

/// Contrastive loss with cosine similarity / temperature. With in_batch, every
/// query scores all positives and all negatives; otherwise only its own
/// positive and its own group of negatives (negatives.rows / batch per query).
template <typename T>
InfoNceResult<T> info_nce(Matrix<T> const& queries, Matrix<T> const& positives, Matrix<T> const& negatives,
    double temperature, bool in_batch = true);

} // namespace mgbert
