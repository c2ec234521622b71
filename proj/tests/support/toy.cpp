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

#include "toy.hpp"

#include "mgbert/rng.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

namespace mgbert::toy
{

namespace
{

std::string syllable(std::size_t i)
{
    static constexpr char kConsonants[] = "bdfgklmnprstvz";
    static constexpr char kVowels[] = "aeiou";
    return {kConsonants[i / 5 % 14], kVowels[i % 5]};
}

std::size_t zipf_draw(std::vector<double> const& cdf, Rng& rng)
{
    auto const u = rng.uniform() * cdf.back();
    return static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
}

std::string words_text(std::vector<std::size_t> const& idx)
{
    std::string out;
    for (auto const i : idx)
    {
        out += (out.empty() ? "" : " ") + word(i);
    }
    return out;
}

} // namespace

std::string word(std::size_t i)
{
    return syllable(i % 70) + syllable((i / 70 + 3 * i) % 70);
}

Vocab vocab(std::size_t words)
{
    std::vector<std::string> pieces{"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
    for (std::size_t i = 0; i < words; ++i)
    {
        pieces.push_back(word(i));
    }
    return Vocab::from_pieces(pieces);
}

TokenId word_id(std::size_t i)
{
    return static_cast<TokenId>(i + 5);
}

std::vector<std::vector<TokenId>> zipf_corpus(
    std::size_t n_seqs, std::int64_t min_len, std::int64_t max_len, std::size_t n_words, double s, std::uint64_t seed)
{
    std::vector<double> cdf(n_words);
    double acc = 0.0;
    for (std::size_t k = 0; k < n_words; ++k)
    {
        acc += 1.0 / std::pow(static_cast<double>(k + 1), s);
        cdf[k] = acc;
    }
    Rng rng(seed);
    std::vector<std::vector<TokenId>> out;
    for (std::size_t n = 0; n < n_seqs; ++n)
    {
        auto const len = min_len + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(max_len - min_len + 1)));
        std::vector<TokenId> seq;
        for (std::int64_t i = 0; i < len; ++i)
        {
            seq.push_back(word_id(zipf_draw(cdf, rng)));
        }
        out.push_back(std::move(seq));
    }
    return out;
}

std::vector<std::vector<TokenId>> zipf_sentences(
    std::size_t n_seqs, std::int64_t len, std::size_t n_words, double s, std::uint64_t seed)
{
    auto out = zipf_corpus(n_seqs, len, len, n_words, s, seed);
    for (auto& seq : out)
    {
        seq.insert(seq.begin(), 2);
        seq.push_back(3);
    }
    return out;
}

Dataset triplets(std::size_t n, std::size_t topics, std::size_t words_per_topic, std::int64_t len,
    std::size_t negatives, std::uint64_t seed, std::uint64_t first_id)
{
    Rng rng(seed);
    // Queries use the first half of a topic's words, documents the second half.
    auto const half = words_per_topic / 2;
    auto sentence = [&](std::size_t topic, bool query)
    {
        std::vector<TokenId> seq{2};
        for (std::int64_t i = 0; i < len; ++i)
        {
            seq.push_back(word_id(topic * words_per_topic + (query ? 0 : half) + rng.below(half)));
        }
        seq.push_back(3);
        return seq;
    };
    Dataset out;
    for (std::size_t i = 0; i < n; ++i)
    {
        auto const topic = static_cast<std::size_t>(rng.below(topics));
        TrainExample ex;
        ex.id = first_id + i;
        ex.parts.push_back(sentence(topic, true));
        ex.parts.push_back(sentence(topic, false));
        for (std::size_t k = 0; k < negatives; ++k)
        {
            auto const other = (topic + 1 + rng.below(topics - 1)) % topics;
            ex.parts.push_back(sentence(other, false));
        }
        out.push_back(std::move(ex));
    }
    return out;
}

std::vector<QAPair> qa_pairs(std::size_t n, std::int64_t needle_words, std::uint64_t seed)
{
    Rng rng(seed);
    std::vector<QAPair> out;
    for (std::size_t i = 0; i < n; ++i)
    {
        std::vector<std::size_t> idx;
        for (std::int64_t k = 0; k < needle_words; ++k)
        {
            idx.push_back(rng.below(kAnswerWords));
        }
        auto const slot = static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(needle_words)));
        auto const answer = kAnswerWords + static_cast<std::size_t>(rng.below(123 - kAnswerWords));
        idx[slot] = answer;
        QAPair p;
        p.id = "q" + std::to_string(i);
        p.article = "a" + std::to_string(i / 2);
        p.question = word(idx[(slot + 1) % idx.size()]) + " " + word(idx[(slot + 2) % idx.size()]);
        p.needle = words_text(idx);
        p.answer = word(answer);
        p.answer_start = 5 * slot;
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<Paragraph> filler(std::size_t n, std::int64_t words, std::uint64_t seed)
{
    Rng rng(seed);
    std::vector<Paragraph> out;
    for (std::size_t i = 0; i < n; ++i)
    {
        std::vector<std::size_t> idx;
        for (std::int64_t k = 0; k < words; ++k)
        {
            idx.push_back(rng.below(kAnswerWords));
        }
        out.push_back({words_text(idx), "filler" + std::to_string(i), -1});
    }
    return out;
}

std::string temp_dir(std::string const& name)
{
    auto const dir = std::filesystem::temp_directory_path() / "mgbert-tests" / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir.string();
}

} // namespace mgbert::toy
