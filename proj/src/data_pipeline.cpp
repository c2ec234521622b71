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

#include "mgbert/data_pipeline.hpp"

#include "mgbert/checkpoint.hpp"
#include "mgbert/error.hpp"
#include "mgbert/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace mgbert
{

namespace
{

std::uint64_t fnv1a(std::string_view s, std::uint64_t offset)
{
    std::uint64_t h = offset;
    for (auto const c : s)
    {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

bool blank_line(std::string_view line)
{
    return std::all_of(line.begin(), line.end(), [](char c) { return c == ' ' || c == '\t' || c == '\r'; });
}

std::size_t code_points(std::string_view s)
{
    return static_cast<std::size_t>(
        std::count_if(s.begin(), s.end(), [](char c) { return (static_cast<unsigned char>(c) & 0xC0) != 0x80; }));
}

} // namespace

BloomFilter::BloomFilter(std::uint64_t bits, std::uint32_t hashes, std::uint64_t seed)
    : mBits(bits)
    , mHashes(hashes)
    , mSeed(seed)
    , mWords((bits + 63) / 64, 0)
{
    if (bits == 0 || hashes == 0)
    {
        throw ArgumentError("bloom filter needs at least one bit and one hash");
    }
}

BloomFilter BloomFilter::for_capacity(std::uint64_t expected_items, double fp_rate, std::uint64_t seed)
{
    if (expected_items == 0 || !(fp_rate > 0.0 && fp_rate < 1.0))
    {
        throw ArgumentError("bloom filter needs expected_items > 0 and fp_rate in (0,1)");
    }
    double const ln2 = std::numbers::ln2;
    double const n = static_cast<double>(expected_items);
    auto const m = static_cast<std::uint64_t>(std::ceil(-n * std::log(fp_rate) / (ln2 * ln2)));
    auto const k = std::max<std::uint32_t>(1, static_cast<std::uint32_t>(std::lround(static_cast<double>(m) / n * ln2)));
    return BloomFilter(m, k, seed);
}

template <typename F>
void BloomFilter::probe(std::string_view item, F&& visit) const
{
    auto const h1 = mix_seed(fnv1a(item, 0xcbf29ce484222325ULL ^ derive_seed(mSeed, 1)));
    auto const h2 = mix_seed(fnv1a(item, 0xcbf29ce484222325ULL ^ derive_seed(mSeed, 2))) | 1ULL;
    for (std::uint32_t i = 0; i < mHashes; ++i)
    {
        visit((h1 + static_cast<std::uint64_t>(i) * h2) % mBits);
    }
}

void BloomFilter::insert(std::string_view item)
{
    probe(item, [&](std::uint64_t bit) { mWords[bit / 64] |= std::uint64_t{1} << (bit % 64); });
    ++mInserted;
}

bool BloomFilter::contains(std::string_view item) const
{
    bool all = true;
    probe(item, [&](std::uint64_t bit) { all = all && ((mWords[bit / 64] >> (bit % 64)) & 1U) != 0; });
    return all;
}

double BloomFilter::expected_fp_rate() const
{
    double const k = mHashes;
    return std::pow(1.0 - std::exp(-k * static_cast<double>(mInserted) / static_cast<double>(mBits)), k);
}

DedupResult dedup(std::span<std::string const> paragraphs, BloomFilter& filter)
{
    DedupResult out;
    for (auto const& p : paragraphs)
    {
        ++out.stats.input;
        if (filter.contains(p))
        {
            ++out.stats.dropped;
            continue;
        }
        filter.insert(p);
        out.survivors.push_back(p);
        ++out.stats.survivors;
    }
    return out;
}

DedupResult dedup(std::span<std::string const> paragraphs, DedupParams const& params)
{
    auto filter = BloomFilter::for_capacity(params.expected_items, params.fp_rate, params.seed);
    return dedup(paragraphs, filter);
}

std::vector<std::string> split_paragraphs(std::string_view text)
{
    std::vector<std::string> out;
    std::string current;
    auto flush = [&]
    {
        if (!current.empty())
        {
            out.push_back(current);
            current.clear();
        }
    };
    std::size_t pos = 0;
    while (pos <= text.size())
    {
        auto const nl = text.find('\n', pos);
        auto const end = nl == std::string_view::npos ? text.size() : nl;
        auto const line = text.substr(pos, end - pos);
        if (blank_line(line))
        {
            flush();
        }
        else
        {
            if (!current.empty())
            {
                current += '\n';
            }
            current += line;
        }
        if (nl == std::string_view::npos)
        {
            break;
        }
        pos = nl + 1;
    }
    flush();
    return out;
}

std::string join_paragraphs(std::span<std::string const> paragraphs)
{
    std::string out;
    for (auto const& p : paragraphs)
    {
        if (!out.empty())
        {
            out += "\n\n";
        }
        out += p;
    }
    return out;
}

std::size_t ratio_token_count(std::string_view doc, Vocab const& vocab)
{
    auto const text = normalize(doc, vocab.normalization);
    auto const unk = vocab.special().unk;
    std::size_t n = 0;
    for (auto const& t : encode_with_offsets(text, vocab))
    {
        n += t.id == unk ? code_points(std::string_view(text).substr(t.begin, t.end - t.begin)) : 1;
    }
    return n;
}

double token_word_ratio(std::string_view doc, Vocab const& vocab)
{
    auto const words = count_words(doc);
    if (words == 0)
    {
        return std::numeric_limits<double>::infinity();
    }
    return static_cast<double>(ratio_token_count(doc, vocab)) / static_cast<double>(words);
}

bool ratio_filter(std::string_view doc, Vocab const& vocab, double threshold)
{
    if (!(threshold > 0.0))
    {
        throw ArgumentError("ratio threshold must be positive");
    }
    return token_word_ratio(doc, vocab) <= threshold;
}

std::vector<std::vector<TokenId>> split_tokens(std::span<TokenId const> tokens, std::int64_t target_len)
{
    if (target_len <= 0)
    {
        throw ArgumentError("split target length must be positive");
    }
    std::vector<std::vector<TokenId>> out;
    auto const step = static_cast<std::size_t>(target_len);
    for (std::size_t i = 0; i < tokens.size(); i += step)
    {
        auto const end = std::min(tokens.size(), i + step);
        out.emplace_back(tokens.begin() + static_cast<std::ptrdiff_t>(i), tokens.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
}

std::vector<std::vector<TokenId>> split_long(std::string_view doc, Vocab const& vocab, std::int64_t target_len)
{
    if (target_len <= 0)
    {
        throw ArgumentError("split target length must be positive");
    }
    auto const tokens = encode(doc, vocab, false);
    return split_tokens(tokens, target_len);
}

CompositionReport compose_report(std::span<std::vector<TokenId> const> sequences)
{
    CompositionReport r;
    std::vector<std::uint64_t> lengths;
    lengths.reserve(sequences.size());
    for (auto const& s : sequences)
    {
        r.tokens += s.size();
        lengths.push_back(s.size());
    }
    r.sequences = sequences.size();
    if (!lengths.empty())
    {
        auto const mid = lengths.begin() + static_cast<std::ptrdiff_t>((lengths.size() - 1) / 2);
        std::nth_element(lengths.begin(), mid, lengths.end());
        r.median_length = *mid;
    }
    return r;
}

std::string format_report(CompositionReport const& r)
{
    return "tokens=" + std::to_string(r.tokens) + " sequences=" + std::to_string(r.sequences)
        + " median_length=" + std::to_string(r.median_length);
}

void write_sequences(std::string const& path, std::span<std::vector<TokenId> const> sequences)
{
    std::string bytes;
    auto put32 = [&](std::uint32_t v)
    {
        for (int i = 0; i < 4; ++i)
        {
            bytes.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
        }
    };
    for (auto const& s : sequences)
    {
        put32(static_cast<std::uint32_t>(s.size()));
        for (auto const id : s)
        {
            put32(static_cast<std::uint32_t>(id));
        }
    }
    write_file_bytes(path, bytes);
}

std::vector<std::vector<TokenId>> read_sequences(std::string const& path)
{
    auto const bytes = read_file_bytes(path);
    std::size_t pos = 0;
    auto get32 = [&]
    {
        if (pos + 4 > bytes.size())
        {
            throw DataError("truncated sequence file " + path);
        }
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
        {
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + static_cast<std::size_t>(i)])) << (8 * i);
        }
        pos += 4;
        return v;
    };
    std::vector<std::vector<TokenId>> out;
    while (pos < bytes.size())
    {
        auto const n = get32();
        std::vector<TokenId> seq(n);
        for (auto& id : seq)
        {
            id = static_cast<TokenId>(get32());
        }
        out.push_back(std::move(seq));
    }
    return out;
}

} // namespace mgbert
