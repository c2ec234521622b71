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

#include "mgbert/attention.hpp"

#include "mgbert/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mgbert
{

RopeTable::RopeTable(double theta, std::int64_t head_dim, std::int64_t max_positions)
    : mTheta(theta)
    , mHeadDim(head_dim)
    , mMaxPositions(max_positions)
{
    if (!(theta > 0.0) || head_dim <= 0 || head_dim % 2 != 0 || max_positions < 0)
    {
        throw ArgumentError("invalid rope table parameters");
    }
    auto const pairs = head_dim / 2;
    std::vector<double> inv_freq(static_cast<std::size_t>(pairs));
    for (std::int64_t k = 0; k < pairs; ++k)
    {
        inv_freq[static_cast<std::size_t>(k)]
            = std::pow(theta, -2.0 * static_cast<double>(k) / static_cast<double>(head_dim));
    }
    mCos.resize(static_cast<std::size_t>(max_positions * pairs));
    mSin.resize(mCos.size());
    for (std::int64_t p = 0; p < max_positions; ++p)
    {
        for (std::int64_t k = 0; k < pairs; ++k)
        {
            double const angle = static_cast<double>(p) * inv_freq[static_cast<std::size_t>(k)];
            auto const idx = static_cast<std::size_t>(p * pairs + k);
            mCos[idx] = std::cos(angle);
            mSin[idx] = std::sin(angle);
        }
    }
}

template <typename T>
void rope_rotate(T* vec, std::int64_t pos, RopeTable const& table, bool inverse)
{
    if (pos < 0 || pos >= table.max_positions())
    {
        throw RangeError("rope position " + std::to_string(pos) + " outside table of "
            + std::to_string(table.max_positions()));
    }
    auto const pairs = table.head_dim() / 2;
    for (std::int64_t k = 0; k < pairs; ++k)
    {
        T const c = static_cast<T>(table.cos(pos, k));
        T const s = inverse ? -static_cast<T>(table.sin(pos, k)) : static_cast<T>(table.sin(pos, k));
        T const x = vec[2 * k];
        T const y = vec[2 * k + 1];
        vec[2 * k] = x * c - y * s;
        vec[2 * k + 1] = x * s + y * c;
    }
}

template <typename T>
Matrix<T> apply_rope(Matrix<T> const& vectors, std::span<std::int64_t const> positions, RopeTable const& table)
{
    if (vectors.cols != table.head_dim())
    {
        throw ArgumentError("vector width does not match rope head_dim");
    }
    if (static_cast<std::int64_t>(positions.size()) != vectors.rows)
    {
        throw ArgumentError("one position per vector required");
    }
    Matrix<T> out = vectors;
    for (std::int64_t r = 0; r < out.rows; ++r)
    {
        rope_rotate(out.row(r), positions[static_cast<std::size_t>(r)], table);
    }
    return out;
}

void require_valid(MaskSpec const& spec)
{
    if (spec.kind == MaskKind::kSlidingWindow && (spec.window <= 0 || spec.window % 2 != 0))
    {
        throw ArgumentError("sliding window must be even and positive");
    }
}

bool allowed(std::int64_t i, std::int64_t j, MaskSpec const& spec)
{
    switch (spec.kind)
    {
    case MaskKind::kGlobal: return true;
    case MaskKind::kSlidingWindow: return std::abs(i - j) <= spec.window / 2;
    case MaskKind::kCausal: return j <= i;
    }
    return false;
}

std::pair<std::int64_t, std::int64_t> key_range(std::int64_t i, std::int64_t length, MaskSpec const& spec)
{
    switch (spec.kind)
    {
    case MaskKind::kGlobal: return {0, length};
    case MaskKind::kSlidingWindow:
    {
        auto const half = spec.window / 2;
        return {std::max<std::int64_t>(0, i - half), std::min(length, i + half + 1)};
    }
    case MaskKind::kCausal: return {0, std::min(length, i + 1)};
    }
    return {0, 0};
}

PackedBatch pack(std::vector<std::vector<TokenId>> const& sequences)
{
    PackedBatch batch;
    batch.boundaries.reserve(sequences.size() + 1);
    batch.boundaries.push_back(0);
    for (auto const& s : sequences)
    {
        if (s.empty())
        {
            throw ArgumentError("cannot pack an empty sequence");
        }
        batch.tokens.insert(batch.tokens.end(), s.begin(), s.end());
        batch.boundaries.push_back(static_cast<std::int64_t>(batch.tokens.size()));
        batch.max_member_len = std::max(batch.max_member_len, static_cast<std::int64_t>(s.size()));
    }
    return batch;
}

std::vector<std::vector<TokenId>> unpack(PackedBatch const& batch)
{
    std::vector<std::vector<TokenId>> out;
    for (std::int64_t m = 0; m < batch.members(); ++m)
    {
        auto const b = batch.boundaries[static_cast<std::size_t>(m)];
        auto const e = batch.boundaries[static_cast<std::size_t>(m + 1)];
        out.emplace_back(batch.tokens.begin() + b, batch.tokens.begin() + e);
    }
    return out;
}

void require_valid(PackedBatch const& batch, std::optional<TokenId> pad_id)
{
    if (batch.boundaries.size() < 2 || batch.boundaries.front() != 0
        || batch.boundaries.back() != static_cast<std::int64_t>(batch.tokens.size()))
    {
        throw ArgumentError("packed boundaries must run from 0 to the token count");
    }
    std::int64_t longest = 0;
    for (std::size_t i = 1; i < batch.boundaries.size(); ++i)
    {
        auto const len = batch.boundaries[i] - batch.boundaries[i - 1];
        if (len <= 0)
        {
            throw ArgumentError("packed boundaries must be strictly increasing");
        }
        longest = std::max(longest, len);
    }
    if (longest != batch.max_member_len)
    {
        throw ArgumentError("max_member_len disagrees with boundaries");
    }
    if (pad_id && std::find(batch.tokens.begin(), batch.tokens.end(), *pad_id) != batch.tokens.end())
    {
        throw ArgumentError("packed batch contains PAD");
    }
}

PaddedBatch pad(std::vector<std::vector<TokenId>> const& sequences, TokenId pad_id)
{
    PaddedBatch batch;
    for (auto const& s : sequences)
    {
        if (s.empty())
        {
            throw ArgumentError("cannot pad an empty sequence");
        }
        batch.width = std::max(batch.width, static_cast<std::int64_t>(s.size()));
    }
    batch.tokens.assign(static_cast<std::size_t>(batch.width) * sequences.size(), pad_id);
    for (std::size_t r = 0; r < sequences.size(); ++r)
    {
        std::copy(sequences[r].begin(), sequences[r].end(),
            batch.tokens.begin() + static_cast<std::ptrdiff_t>(r * static_cast<std::size_t>(batch.width)));
        batch.lengths.push_back(static_cast<std::int64_t>(sequences[r].size()));
    }
    return batch;
}

std::vector<Segment> segments_of(PackedBatch const& batch)
{
    std::vector<Segment> segs;
    for (std::int64_t m = 0; m < batch.members(); ++m)
    {
        auto const len = batch.member_length(m);
        segs.push_back({batch.boundaries[static_cast<std::size_t>(m)], len, len});
    }
    return segs;
}

std::vector<Segment> segments_of(PaddedBatch const& batch)
{
    std::vector<Segment> segs;
    for (std::size_t r = 0; r < batch.lengths.size(); ++r)
    {
        segs.push_back({static_cast<std::int64_t>(r) * batch.width, batch.width, batch.lengths[r]});
    }
    return segs;
}

template <typename T>
void attention_head_forward(HeadView<T const> q, HeadView<T const> k, HeadView<T const> v, HeadView<T> out,
    std::int64_t head_dim, std::span<Segment const> segments, MaskSpec const& spec, SoftmaxStats<T>* stats)
{
    T const scale = T(1) / std::sqrt(static_cast<T>(head_dim));
    std::vector<T> scores;
    for (auto const& seg : segments)
    {
        for (std::int64_t i = 0; i < seg.length; ++i)
        {
            auto const row = seg.begin + i;
            auto const [lo, hi] = key_range(i, seg.length, spec);
            scores.resize(static_cast<std::size_t>(std::max<std::int64_t>(hi - lo, 0)));
            T const* qi = q.row(row);
            T row_max = -std::numeric_limits<T>::infinity();
            for (std::int64_t j = lo; j < hi; ++j)
            {
                T const s = dot(qi, k.row(seg.begin + j), head_dim) * scale;
                scores[static_cast<std::size_t>(j - lo)] = s;
                if (j < seg.valid)
                {
                    row_max = std::max(row_max, s);
                }
            }
            T* oi = out.row(row);
            std::fill(oi, oi + head_dim, T(0));
            T sum = 0;
            auto const valid_hi = std::min(hi, seg.valid);
            for (std::int64_t j = lo; j < valid_hi; ++j)
            {
                T const e = std::exp(scores[static_cast<std::size_t>(j - lo)] - row_max);
                scores[static_cast<std::size_t>(j - lo)] = e;
                sum += e;
            }
            if (sum > T(0))
            {
                T const inv = T(1) / sum;
                for (std::int64_t j = lo; j < valid_hi; ++j)
                {
                    axpy(scores[static_cast<std::size_t>(j - lo)] * inv, v.row(seg.begin + j), oi, head_dim);
                }
            }
            if (stats != nullptr)
            {
                stats->row_max[static_cast<std::size_t>(row)] = row_max;
                stats->row_sum[static_cast<std::size_t>(row)] = sum;
            }
        }
    }
}

template <typename T>
void attention_head_backward(HeadView<T const> q, HeadView<T const> k, HeadView<T const> v, HeadView<T const> out,
    HeadView<T const> dout, HeadView<T> dq, HeadView<T> dk, HeadView<T> dv, std::int64_t head_dim,
    std::span<Segment const> segments, MaskSpec const& spec, SoftmaxStats<T> const& stats)
{
    T const scale = T(1) / std::sqrt(static_cast<T>(head_dim));
    std::vector<T> probs;
    std::vector<T> dscores;
    for (auto const& seg : segments)
    {
        for (std::int64_t i = 0; i < seg.length; ++i)
        {
            auto const row = seg.begin + i;
            T const sum = stats.row_sum[static_cast<std::size_t>(row)];
            if (!(sum > T(0)))
            {
                continue;
            }
            T const row_max = stats.row_max[static_cast<std::size_t>(row)];
            auto const [lo, hi0] = key_range(i, seg.length, spec);
            auto const hi = std::min(hi0, seg.valid);
            auto const n = static_cast<std::size_t>(std::max<std::int64_t>(hi - lo, 0));
            probs.resize(n);
            dscores.resize(n);
            T const* qi = q.row(row);
            T const* doi = dout.row(row);
            T const delta = dot(doi, out.row(row), head_dim);
            for (std::int64_t j = lo; j < hi; ++j)
            {
                auto const idx = static_cast<std::size_t>(j - lo);
                T const s = dot(qi, k.row(seg.begin + j), head_dim) * scale;
                T const p = std::exp(s - row_max) / sum;
                probs[idx] = p;
                T const dp = dot(doi, v.row(seg.begin + j), head_dim);
                dscores[idx] = p * (dp - delta) * scale;
            }
            T* dqi = dq.row(row);
            for (std::int64_t j = lo; j < hi; ++j)
            {
                auto const idx = static_cast<std::size_t>(j - lo);
                auto const key_row = seg.begin + j;
                axpy(dscores[idx], k.row(key_row), dqi, head_dim);
                axpy(dscores[idx], qi, dk.row(key_row), head_dim);
                axpy(probs[idx], doi, dv.row(key_row), head_dim);
            }
        }
    }
}

template <typename T>
Matrix<T> attention(Matrix<T> const& q, Matrix<T> const& k, Matrix<T> const& v, MaskSpec const& spec,
    std::optional<std::vector<std::int64_t>> const& batch_boundaries)
{
    if (!q.same_shape(k) || !q.same_shape(v))
    {
        throw ArgumentError("attention inputs must share a shape");
    }
    require_valid(spec);
    std::vector<Segment> segs;
    if (batch_boundaries)
    {
        PackedBatch probe;
        probe.boundaries = *batch_boundaries;
        probe.tokens.resize(static_cast<std::size_t>(q.rows));
        for (std::size_t i = 1; i < probe.boundaries.size(); ++i)
        {
            probe.max_member_len = std::max(probe.max_member_len, probe.boundaries[i] - probe.boundaries[i - 1]);
        }
        require_valid(probe);
        segs = segments_of(probe);
    }
    else
    {
        segs.push_back({0, q.rows, q.rows});
    }
    Matrix<T> out(q.rows, q.cols);
    attention_head_forward<T>({q.data.data(), q.cols}, {k.data.data(), k.cols}, {v.data.data(), v.cols},
        {out.data.data(), out.cols}, q.cols, segs, spec, nullptr);
    return out;
}

#define MGBERT_INSTANTIATE_ATTENTION(T)                                                                               \
    template void rope_rotate<T>(T*, std::int64_t, RopeTable const&, bool);                                          \
    template Matrix<T> apply_rope<T>(Matrix<T> const&, std::span<std::int64_t const>, RopeTable const&);             \
    template void attention_head_forward<T>(HeadView<T const>, HeadView<T const>, HeadView<T const>, HeadView<T>,    \
        std::int64_t, std::span<Segment const>, MaskSpec const&, SoftmaxStats<T>*);                                  \
    template void attention_head_backward<T>(HeadView<T const>, HeadView<T const>, HeadView<T const>,                \
        HeadView<T const>, HeadView<T const>, HeadView<T>, HeadView<T>, HeadView<T>, std::int64_t,                   \
        std::span<Segment const>, MaskSpec const&, SoftmaxStats<T> const&);                                          \
    template Matrix<T> attention<T>(Matrix<T> const&, Matrix<T> const&, Matrix<T> const&, MaskSpec const&,           \
        std::optional<std::vector<std::int64_t>> const&);

MGBERT_INSTANTIATE_ATTENTION(float)
MGBERT_INSTANTIATE_ATTENTION(double)

#undef MGBERT_INSTANTIATE_ATTENTION

} // namespace mgbert
