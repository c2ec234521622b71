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

#include "mgbert/tensor.hpp"
#include "mgbert/tokenizer.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace mgbert
{

/// cos/sin of angle(p, k) = p * theta^(-2k/head_dim), pairs (2k, 2k+1).
class RopeTable
{
public:
    RopeTable(double theta, std::int64_t head_dim, std::int64_t max_positions);

    double theta() const
    {
        return mTheta;
    }
    std::int64_t head_dim() const
    {
        return mHeadDim;
    }
    std::int64_t max_positions() const
    {
        return mMaxPositions;
    }
    double cos(std::int64_t pos, std::int64_t pair) const
    {
        return mCos[static_cast<std::size_t>(pos * (mHeadDim / 2) + pair)];
    }
    double sin(std::int64_t pos, std::int64_t pair) const
    {
        return mSin[static_cast<std::size_t>(pos * (mHeadDim / 2) + pair)];
    }
    std::vector<double> const& cos_values() const
    {
        return mCos;
    }
    std::vector<double> const& sin_values() const
    {
        return mSin;
    }

private:
    double mTheta;
    std::int64_t mHeadDim;
    std::int64_t mMaxPositions;
    std::vector<double> mCos;
    std::vector<double> mSin;
};

/// Rotates `width` consecutive values (one head) in place. inverse=true applies
/// the transpose rotation, which is what the backward pass needs.
template <typename T>
void rope_rotate(T* vec, std::int64_t pos, RopeTable const& table, bool inverse = false);

/// Row r of `vectors` (head_dim wide) is rotated by positions[r].
template <typename T>
Matrix<T> apply_rope(Matrix<T> const& vectors, std::span<std::int64_t const> positions, RopeTable const& table);

enum class MaskKind
{
    kGlobal,
    kSlidingWindow,
    kCausal
};

struct MaskSpec
{
    MaskKind kind = MaskKind::kGlobal;
    // Total span; only meaningful for kSlidingWindow.
    std::int64_t window = 0;
};

void require_valid(MaskSpec const& spec);

/// Positions are relative to the member sequence.
bool allowed(std::int64_t i, std::int64_t j, MaskSpec const& spec);

/// Inclusive-exclusive key range [first, last) of positions that query i may
/// see within a sequence of `length` positions.
std::pair<std::int64_t, std::int64_t> key_range(std::int64_t i, std::int64_t length, MaskSpec const& spec);

/// Concatenated variable-length sequences with prefix-sum boundaries.
struct PackedBatch
{
    std::vector<TokenId> tokens;
    std::vector<std::int64_t> boundaries;
    std::int64_t max_member_len = 0;

    std::int64_t members() const
    {
        return static_cast<std::int64_t>(boundaries.size()) - 1;
    }
    std::int64_t member_length(std::int64_t m) const
    {
        return boundaries[static_cast<std::size_t>(m + 1)] - boundaries[static_cast<std::size_t>(m)];
    }
};

PackedBatch pack(std::vector<std::vector<TokenId>> const& sequences);
std::vector<std::vector<TokenId>> unpack(PackedBatch const& batch);
/// Throws ArgumentError when boundaries or contents break the invariants.
void require_valid(PackedBatch const& batch, std::optional<TokenId> pad_id = std::nullopt);

/// Conventional padded layout: every row is `width` long, filled with PAD.
struct PaddedBatch
{
    std::vector<TokenId> tokens;
    std::vector<std::int64_t> lengths;
    std::int64_t width = 0;
};

PaddedBatch pad(std::vector<std::vector<TokenId>> const& sequences, TokenId pad_id);

/// A run of rows that attend only among themselves. Rows at or beyond `valid`
/// are padding: their keys are masked out but they still cost compute.
struct Segment
{
    std::int64_t begin = 0;
    std::int64_t length = 0;
    std::int64_t valid = 0;
};

std::vector<Segment> segments_of(PackedBatch const& batch);
std::vector<Segment> segments_of(PaddedBatch const& batch);

/// Strided view of one head inside a [positions x ld] activation matrix.
template <typename T>
struct HeadView
{
    T* base = nullptr;
    std::int64_t ld = 0;

    T* row(std::int64_t r) const
    {
        return base + r * ld;
    }
};

/// Per-row softmax statistics retained for recomputation in backward.
template <typename T>
struct SoftmaxStats
{
    std::vector<T> row_max;
    std::vector<T> row_sum;
};

/// Masked softmax attention over one head. Rows without any valid key produce
/// zeros (only possible for padding rows).
template <typename T>
void attention_head_forward(HeadView<T const> q, HeadView<T const> k, HeadView<T const> v, HeadView<T> out,
    std::int64_t head_dim, std::span<Segment const> segments, MaskSpec const& spec, SoftmaxStats<T>* stats);

/// Accumulates dq, dk, dv. Requires the stats from the matching forward.
template <typename T>
void attention_head_backward(HeadView<T const> q, HeadView<T const> k, HeadView<T const> v, HeadView<T const> out,
    HeadView<T const> dout, HeadView<T> dq, HeadView<T> dk, HeadView<T> dv, std::int64_t head_dim,
    std::span<Segment const> segments, MaskSpec const& spec, SoftmaxStats<T> const& stats);

/// Single-head reference attention over [positions x head_dim] inputs. Without
/// boundaries the whole input is one sequence.
template <typename T>
Matrix<T> attention(Matrix<T> const& q, Matrix<T> const& k, Matrix<T> const& v, MaskSpec const& spec,
    std::optional<std::vector<std::int64_t>> const& batch_boundaries = std::nullopt);

} // namespace mgbert
