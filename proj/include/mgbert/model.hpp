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

#include "mgbert/attention.hpp"
#include "mgbert/config.hpp"
#include "mgbert/rng.hpp"
#include "mgbert/tensor.hpp"

#include <array>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace mgbert
{

/// y = x W^T (+ b). W is [out x in]; bias is empty or [1 x out].
template <typename T>
struct Linear
{
    Matrix<T> weight;
    Matrix<T> bias;
};

/// LayerNorm uses scale and offset; RMSNorm leaves offset empty.
template <typename T>
struct NormParams
{
    Matrix<T> scale;
    Matrix<T> offset;
};

/// Projections a low-rank adapter may target.
enum class Target
{
    kQuery,
    kKey,
    kValue,
    kOutput,
    kUp,
    kDown
};

inline constexpr std::array<Target, 6> kAllTargets{
    Target::kQuery, Target::kKey, Target::kValue, Target::kOutput, Target::kUp, Target::kDown};

std::string to_string(Target t);
Target target_from_string(std::string const& name);

template <typename T>
struct LayerParams
{
    NormParams<T> attn_norm;
    Linear<T> wq;
    Linear<T> wk;
    Linear<T> wv;
    Linear<T> wo;
    NormParams<T> mlp_norm;
    // Rows [0, intermediate) are the gate, [intermediate, 2*intermediate) the value.
    Linear<T> w_up;
    Linear<T> w_down;

    Linear<T>& proj(Target t);
    Linear<T> const& proj(Target t) const;
};

template <typename T>
struct ModelParams
{
    Matrix<T> token_embedding;
    std::vector<LayerParams<T>> layers;
    NormParams<T> final_norm;
    // weight empty when tied to token_embedding; bias always [1 x vocab] when untied.
    Linear<T> mlm_head;
    Linear<T> span_head;

    /// Stable names in a fixed order; empty tensors are skipped.
    std::vector<std::pair<std::string, Matrix<T>*>> named();
    std::vector<std::pair<std::string, Matrix<T> const*>> named() const;
};

/// Zero-filled tensors with the shapes of `p` (gradient buffers).
template <typename T>
ModelParams<T> zeros_like(ModelParams<T> const& p);

template <typename To, typename From>
ModelParams<To> cast_params(ModelParams<From> const& p);

/// Scaled-normal ("Megatron") initialization: std 0.02, output projections
/// additionally divided by sqrt(2 * n_layers).
ModelParams<float> init_params(ArchConfig const& cfg, std::uint64_t seed);

/// Throws when a tensor shape disagrees with the config.
template <typename T>
void check_shapes(ModelParams<T> const& p, ArchConfig const& cfg);

/// Low-rank delta scale * B * A for one projection. A is [r x in], B is [out x r].
template <typename T>
struct LowRankPair
{
    Matrix<T> a;
    Matrix<T> b;
    T scale = T(1);
};

/// Adapters applied on the fly during forward, keyed by (layer, target).
template <typename T>
struct RuntimeAdapters
{
    std::map<std::pair<std::int64_t, Target>, LowRankPair<T>> pairs;

    LowRankPair<T> const* find(std::int64_t layer, Target t) const
    {
        auto const it = pairs.find({layer, t});
        return it == pairs.end() ? nullptr : &it->second;
    }
};

enum class Mode
{
    kTrain,
    kEval
};

/// Flat token stream plus the segments that bound attention.
struct TokenLayout
{
    std::vector<TokenId> tokens;
    std::vector<Segment> segments;
    // Rows that hold real tokens (all rows for packed input).
    std::vector<std::int64_t> valid_rows;
};

TokenLayout layout_of(PackedBatch const& batch);
TokenLayout layout_of(PaddedBatch const& batch);

template <typename T>
struct ForwardOptions
{
    Mode mode = Mode::kEval;
    double dropout_rate = 0.0;
    Rng* rng = nullptr;
    RuntimeAdapters<T> const* adapters = nullptr;
};

template <typename T>
struct NormCache
{
    Matrix<T> input;
    std::vector<T> mean;
    std::vector<T> rstd;
};

template <typename T>
struct LayerCache
{
    NormCache<T> norm1;
    NormCache<T> norm2;
    Matrix<T> attn_in;
    Matrix<T> q;
    Matrix<T> k;
    Matrix<T> v;
    std::vector<SoftmaxStats<T>> softmax;
    Matrix<T> context;
    std::vector<T> dropout_mask;
    Matrix<T> ffn_in;
    Matrix<T> up;
    Matrix<T> act;
    // x * A^T for every adapted projection.
    std::map<Target, Matrix<T>> lora_hidden;
};

/// Everything backward needs; also serves as the debug view of intermediates.
template <typename T>
struct ForwardCache
{
    TokenLayout layout;
    std::vector<LayerCache<T>> layers;
    NormCache<T> final_norm;
};

template <typename T>
struct ForwardOutput
{
    Matrix<T> hidden_states;
};

template <typename T>
ForwardOutput<T> forward(ModelParams<T> const& params, ArchConfig const& cfg, TokenLayout const& layout,
    ForwardOptions<T> const& options = {}, ForwardCache<T>* cache = nullptr);

template <typename T>
ForwardOutput<T> forward(ModelParams<T> const& params, ArchConfig const& cfg, PackedBatch const& batch,
    ForwardOptions<T> const& options = {}, ForwardCache<T>* cache = nullptr);

template <typename T>
ForwardOutput<T> forward(ModelParams<T> const& params, ArchConfig const& cfg, PaddedBatch const& batch,
    ForwardOptions<T> const& options = {}, ForwardCache<T>* cache = nullptr);

template <typename T>
struct AdapterGrads
{
    std::map<std::pair<std::int64_t, Target>, LowRankPair<T>> pairs;
};

/// Backpropagates d(hidden_states). Accumulates into `grads` unless it is null
/// (frozen base); adapter gradients go to `adapter_grads` when given.
template <typename T>
void backward(ModelParams<T> const& params, ArchConfig const& cfg, ForwardCache<T> const& cache,
    ForwardOptions<T> const& options, Matrix<T> const& d_hidden, ModelParams<T>* grads,
    AdapterGrads<T>* adapter_grads = nullptr);

/// Vocabulary scores for the selected rows (all rows when `rows` is empty).
template <typename T>
Matrix<T> mlm_logits(Matrix<T> const& hidden, ModelParams<T> const& params, std::span<std::int64_t const> rows = {});

/// Backward of mlm_logits for the same rows; returns d(hidden) for all rows.
template <typename T>
void mlm_logits_backward(Matrix<T> const& hidden, ModelParams<T> const& params, std::span<std::int64_t const> rows,
    Matrix<T> const& d_logits, Matrix<T>& d_hidden, ModelParams<T>* grads);

template <typename T>
struct SpanScores
{
    std::vector<T> start;
    std::vector<T> end;
};

template <typename T>
SpanScores<T> span_logits(Matrix<T> const& hidden, ModelParams<T> const& params, std::int64_t first_row = 0,
    std::int64_t last_row = -1);

template <typename T>
void span_logits_backward(Matrix<T> const& hidden, ModelParams<T> const& params, std::int64_t first_row,
    SpanScores<T> const& d_scores, Matrix<T>& d_hidden, ModelParams<T>* grads);

/// Best (s, e), s <= e, span length e - s + 1 <= max_answer_len, maximizing start[s] + end[e].
std::pair<std::int64_t, std::int64_t> best_span(
    std::span<float const> start, std::span<float const> end, std::int64_t max_answer_len);

/// Mean over the listed rows. Throws ArgumentError when none are given.
template <typename T>
std::vector<T> pool_mean(Matrix<T> const& hidden, std::span<std::int64_t const> valid_rows);

/// Cached rope tables shared across forwards; grows on demand.
std::shared_ptr<RopeTable const> rope_table(double theta, std::int64_t head_dim, std::int64_t min_positions);

/// FNV-1a over the tensor bytes.
template <typename T>
std::uint64_t digest(Matrix<T> const& m);

template <typename T>
std::map<std::string, std::uint64_t> digests(ModelParams<T> const& p);

} // namespace mgbert
