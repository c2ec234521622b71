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

#include "mgbert/tokenizer.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mgbert
{

/// Bit-array membership filter with k double-hashed probes.
class BloomFilter
{
public:
    BloomFilter(std::uint64_t bits, std::uint32_t hashes, std::uint64_t seed = 0);

    /// m = -n ln p / (ln 2)^2, k = round(m/n ln 2).
    static BloomFilter for_capacity(std::uint64_t expected_items, double fp_rate, std::uint64_t seed = 0);

    void insert(std::string_view item);
    bool contains(std::string_view item) const;

    std::uint64_t bits() const
    {
        return mBits;
    }
    std::uint32_t hashes() const
    {
        return mHashes;
    }
    std::uint64_t inserted() const
    {
        return mInserted;
    }
    /// (1 - e^(-k n / m))^k for the current insert count.
    double expected_fp_rate() const;

private:
    template <typename F>
    void probe(std::string_view item, F&& visit) const;

    std::uint64_t mBits;
    std::uint32_t mHashes;
    std::uint64_t mSeed;
    std::uint64_t mInserted = 0;
    std::vector<std::uint64_t> mWords;
};

struct DedupParams
{
    std::uint64_t expected_items = 1'000'000;
    double fp_rate = 0.01;
    std::uint64_t seed = 0;
};

struct DedupStats
{
    std::uint64_t input = 0;
    std::uint64_t survivors = 0;
    std::uint64_t dropped = 0;
};

struct DedupResult
{
    std::vector<std::string> survivors;
    DedupStats stats;
};

/// First occurrence survives; later paragraphs the filter has seen are dropped.
DedupResult dedup(std::span<std::string const> paragraphs, BloomFilter& filter);
DedupResult dedup(std::span<std::string const> paragraphs, DedupParams const& params);

/// Paragraphs are separated by lines holding only whitespace.
std::vector<std::string> split_paragraphs(std::string_view text);

/// Inverse of split_paragraphs for paragraphs without blank lines.
std::string join_paragraphs(std::span<std::string const> paragraphs);

inline constexpr double kDefaultRatioThreshold = 2.5;

/// Token count used by the quality ratio: in-vocabulary pieces count one each,
/// a word the vocabulary cannot cover counts one per code point.
std::size_t ratio_token_count(std::string_view doc, Vocab const& vocab);

/// ratio_token_count / whitespace word count; 0 words gives +inf.
double token_word_ratio(std::string_view doc, Vocab const& vocab);

/// Keep iff the ratio is at most `threshold`. Throws ArgumentError for threshold <= 0.
bool ratio_filter(std::string_view doc, Vocab const& vocab, double threshold = kDefaultRatioThreshold);

inline constexpr std::int64_t kDefaultSplitLen = 8192;

std::vector<std::vector<TokenId>> split_tokens(std::span<TokenId const> tokens, std::int64_t target_len = kDefaultSplitLen);

/// Tokenizes without special tokens and cuts into pieces of at most target_len.
std::vector<std::vector<TokenId>> split_long(
    std::string_view doc, Vocab const& vocab, std::int64_t target_len = kDefaultSplitLen);

struct CompositionReport
{
    std::uint64_t tokens = 0;
    std::uint64_t sequences = 0;
    // Lower-middle element for even counts; 0 for an empty dataset.
    std::uint64_t median_length = 0;
};

CompositionReport compose_report(std::span<std::vector<TokenId> const> sequences);
std::string format_report(CompositionReport const& r);

/// Length-prefixed file: per sequence a u32 count then count x u32 ids, little-endian.
void write_sequences(std::string const& path, std::span<std::vector<TokenId> const> sequences);
std::vector<std::vector<TokenId>> read_sequences(std::string const& path);

} // namespace mgbert
