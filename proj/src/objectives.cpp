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

#include "mgbert/objectives.hpp"

#include "mgbert/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mgbert
{

MaskedBatch mlm_mask(std::span<TokenId const> ids, double rate, MaskPolicy policy, SpecialIds const& special,
    std::int64_t vocab_size, Rng& rng)
{
    if (!(rate >= 0.0 && rate < 1.0))
    {
        throw ArgumentError("mask rate must lie in [0,1)");
    }
    MaskedBatch out;
    out.corrupted_ids.assign(ids.begin(), ids.end());
    out.labels.assign(ids.size(), kIgnoreLabel);

    std::vector<TokenId> replacements;
    if (policy == MaskPolicy::kBert801010)
    {
        for (TokenId id = 0; id < vocab_size; ++id)
        {
            if (!special.is_special(id))
            {
                replacements.push_back(id);
            }
        }
    }
    for (std::size_t i = 0; i < ids.size(); ++i)
    {
        auto const id = ids[i];
        if (id == special.cls || id == special.sep || id == special.pad || id == special.mask)
        {
            continue;
        }
        if (rng.uniform() >= rate)
        {
            continue;
        }
        out.mask_positions.push_back(static_cast<std::int64_t>(i));
        out.labels[i] = id;
        if (policy == MaskPolicy::kAllMask)
        {
            out.corrupted_ids[i] = special.mask;
            continue;
        }
        double const u = rng.uniform();
        if (u < 0.8)
        {
            out.corrupted_ids[i] = special.mask;
        }
        else if (u < 0.9 && !replacements.empty())
        {
            out.corrupted_ids[i] = replacements[static_cast<std::size_t>(rng.below(replacements.size()))];
        }
    }
    return out;
}

template <typename T>
LossAndGrad<T> mlm_loss(Matrix<T> const& logits, std::span<TokenId const> labels, double weight)
{
    if (static_cast<std::int64_t>(labels.size()) != logits.rows)
    {
        throw ArgumentError("one label per logit row required");
    }
    auto const counted = std::count_if(labels.begin(), labels.end(), [](TokenId l) { return l != kIgnoreLabel; });
    if (counted == 0)
    {
        throw ArgumentError("mlm_loss needs at least one masked position");
    }
    LossAndGrad<T> out;
    out.d_logits = Matrix<T>(logits.rows, logits.cols);
    double const inv = 1.0 / static_cast<double>(counted);
    double total = 0.0;
    for (std::int64_t r = 0; r < logits.rows; ++r)
    {
        auto const label = labels[static_cast<std::size_t>(r)];
        if (label == kIgnoreLabel)
        {
            continue;
        }
        if (label < 0 || label >= logits.cols)
        {
            throw ArgumentError("label outside vocabulary");
        }
        T const* row = logits.row(r);
        double mx = -std::numeric_limits<double>::infinity();
        for (std::int64_t v = 0; v < logits.cols; ++v)
        {
            mx = std::max(mx, static_cast<double>(row[v]));
        }
        double sum = 0.0;
        for (std::int64_t v = 0; v < logits.cols; ++v)
        {
            sum += std::exp(static_cast<double>(row[v]) - mx);
        }
        double const lse = mx + std::log(sum);
        total += lse - static_cast<double>(row[label]);
        T* d = out.d_logits.row(r);
        for (std::int64_t v = 0; v < logits.cols; ++v)
        {
            double const p = std::exp(static_cast<double>(row[v]) - lse);
            d[v] = static_cast<T>((p - (v == label ? 1.0 : 0.0)) * inv * weight);
        }
    }
    out.loss = total * inv;
    return out;
}

template <typename T>
double position_cross_entropy(std::span<T const> scores, std::int64_t target, std::span<T> d_scores, double weight)
{
    if (scores.empty() || target < 0 || target >= static_cast<std::int64_t>(scores.size()))
    {
        throw ArgumentError("target position outside score range");
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (auto const s : scores)
    {
        mx = std::max(mx, static_cast<double>(s));
    }
    double sum = 0.0;
    for (auto const s : scores)
    {
        sum += std::exp(static_cast<double>(s) - mx);
    }
    double const lse = mx + std::log(sum);
    for (std::size_t i = 0; i < scores.size(); ++i)
    {
        double const p = std::exp(static_cast<double>(scores[i]) - lse);
        d_scores[i] += static_cast<T>((p - (static_cast<std::int64_t>(i) == target ? 1.0 : 0.0)) * weight);
    }
    return lse - static_cast<double>(scores[static_cast<std::size_t>(target)]);
}

MntpTargets mntp_targets(std::span<TokenId const> ids, std::span<std::int64_t const> mask_positions)
{
    MntpTargets t;
    for (auto const pos : mask_positions)
    {
        if (pos < 0 || pos >= static_cast<std::int64_t>(ids.size()))
        {
            throw ArgumentError("mask position outside sequence");
        }
        if (pos == 0)
        {
            continue;
        }
        t.prediction_positions.push_back(pos - 1);
        t.labels.push_back(ids[static_cast<std::size_t>(pos)]);
    }
    return t;
}

template <typename T>
InfoNceResult<T> info_nce(Matrix<T> const& queries, Matrix<T> const& positives, Matrix<T> const& negatives,
    double temperature, bool in_batch)
{
    auto const batch = queries.rows;
    auto const dim = queries.cols;
    if (batch < 2)
    {
        throw ArgumentError("info_nce needs a batch of at least 2");
    }
    if (!(temperature > 0.0))
    {
        throw ArgumentError("temperature must be positive");
    }
    if (positives.rows != batch || positives.cols != dim || (negatives.rows > 0 && negatives.cols != dim))
    {
        throw ArgumentError("info_nce shape mismatch");
    }
    if (!in_batch && negatives.rows % batch != 0)
    {
        throw ArgumentError("per-query negatives must divide evenly across the batch");
    }
    auto const per_query = in_batch ? std::int64_t{0} : negatives.rows / batch;

    // Candidate c < batch is positive c, otherwise negative c - batch.
    auto const n_cand = batch + negatives.rows;
    auto cand_row = [&](std::int64_t c) { return c < batch ? positives.row(c) : negatives.row(c - batch); };
    auto norm_of = [&](T const* v)
    {
        double s = 0.0;
        for (std::int64_t i = 0; i < dim; ++i)
        {
            s += static_cast<double>(v[i]) * static_cast<double>(v[i]);
        }
        auto const n = std::sqrt(s);
        if (n == 0.0)
        {
            throw ArgumentError("zero-norm vector in info_nce");
        }
        return n;
    };
    std::vector<double> qn(static_cast<std::size_t>(batch));
    std::vector<double> cn(static_cast<std::size_t>(n_cand));
    for (std::int64_t i = 0; i < batch; ++i)
    {
        qn[static_cast<std::size_t>(i)] = norm_of(queries.row(i));
    }
    for (std::int64_t c = 0; c < n_cand; ++c)
    {
        cn[static_cast<std::size_t>(c)] = norm_of(cand_row(c));
    }
    auto dot_d = [&](T const* a, T const* b)
    {
        double s = 0.0;
        for (std::int64_t i = 0; i < dim; ++i)
        {
            s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
        }
        return s;
    };

    InfoNceResult<T> out;
    out.d_queries = Matrix<T>(batch, dim);
    out.d_positives = Matrix<T>(batch, dim);
    out.d_negatives = Matrix<T>(negatives.rows, dim);
    auto d_cand_row = [&](std::int64_t c) { return c < batch ? out.d_positives.row(c) : out.d_negatives.row(c - batch); };

    std::vector<std::int64_t> cands;
    std::vector<double> sims;
    double total = 0.0;
    for (std::int64_t i = 0; i < batch; ++i)
    {
        cands.clear();
        if (in_batch)
        {
            for (std::int64_t c = 0; c < n_cand; ++c)
            {
                cands.push_back(c);
            }
        }
        else
        {
            cands.push_back(i);
            for (std::int64_t k = 0; k < per_query; ++k)
            {
                cands.push_back(batch + i * per_query + k);
            }
        }
        sims.assign(cands.size(), 0.0);
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < cands.size(); ++j)
        {
            auto const c = cands[j];
            double const cosine = dot_d(queries.row(i), cand_row(c)) / (qn[static_cast<std::size_t>(i)] * cn[static_cast<std::size_t>(c)]);
            sims[j] = cosine / temperature;
            mx = std::max(mx, sims[j]);
        }
        double sum = 0.0;
        for (auto const s : sims)
        {
            sum += std::exp(s - mx);
        }
        double const lse = mx + std::log(sum);
        // The positive of query i is candidate i in both modes.
        auto const label_idx = in_batch ? static_cast<std::size_t>(i) : std::size_t{0};
        total += lse - sims[label_idx];

        T const* q = queries.row(i);
        double const qni = qn[static_cast<std::size_t>(i)];
        for (std::size_t j = 0; j < cands.size(); ++j)
        {
            auto const c = cands[j];
            double const p = std::exp(sims[j] - lse);
            double const ds = (p - (j == label_idx ? 1.0 : 0.0)) / static_cast<double>(batch) / temperature;
            if (ds == 0.0)
            {
                continue;
            }
            T const* v = cand_row(c);
            double const cnc = cn[static_cast<std::size_t>(c)];
            double const cosine = sims[j] * temperature;
            T* dq = out.d_queries.row(i);
            T* dv = d_cand_row(c);
            for (std::int64_t d = 0; d < dim; ++d)
            {
                double const qd = static_cast<double>(q[d]);
                double const vd = static_cast<double>(v[d]);
                dq[d] += static_cast<T>(ds * (vd / (qni * cnc) - cosine * qd / (qni * qni)));
                dv[d] += static_cast<T>(ds * (qd / (qni * cnc) - cosine * vd / (cnc * cnc)));
            }
        }
    }
    out.loss = total / static_cast<double>(batch);
    return out;
}

template LossAndGrad<float> mlm_loss<float>(Matrix<float> const&, std::span<TokenId const>, double);
template LossAndGrad<double> mlm_loss<double>(Matrix<double> const&, std::span<TokenId const>, double);
template double position_cross_entropy<float>(std::span<float const>, std::int64_t, std::span<float>, double);
template double position_cross_entropy<double>(std::span<double const>, std::int64_t, std::span<double>, double);
template InfoNceResult<float> info_nce<float>(
    Matrix<float> const&, Matrix<float> const&, Matrix<float> const&, double, bool);
template InfoNceResult<double> info_nce<double>(
    Matrix<double> const&, Matrix<double> const&, Matrix<double> const&, double, bool);

} // namespace mgbert
