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

#include "mgbert/error.hpp"
#include "mgbert/rng.hpp"

#include "toy.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>

using namespace mgbert;

namespace
{

std::string random_item(Rng& rng)
{
    std::string s;
    auto const n = 8 + rng.below(12);
    for (std::uint64_t i = 0; i < n; ++i)
    {
        s.push_back(static_cast<char>('a' + rng.below(26)));
    }
    return s;
}

std::string sentence(std::vector<std::size_t> const& words)
{
    std::string s;
    for (auto const w : words)
    {
        s += (s.empty() ? "" : " ") + toy::word(w);
    }
    return s;
}

} // namespace

TEST_CASE("bloom sizing follows the closed forms")
{
    auto const f = BloomFilter::for_capacity(10'000, 0.01);
    auto const m = -10'000.0 * std::log(0.01) / (std::log(2.0) * std::log(2.0));
    CHECK(static_cast<double>(f.bits()) == doctest::Approx(std::ceil(m)).epsilon(1e-6));
    CHECK(f.hashes() == 7);
    CHECK_THROWS_AS(BloomFilter::for_capacity(0, 0.01), ArgumentError);
    CHECK_THROWS_AS(BloomFilter::for_capacity(10, 1.0), ArgumentError);
    CHECK_THROWS_AS(BloomFilter(0, 3), ArgumentError);
}

TEST_CASE("bloom filter has no false negatives and stays near its false-positive bound")
{
    for (std::uint64_t seed = 1; seed <= 3; ++seed)
    {
        Rng rng(seed);
        std::set<std::string> inserted;
        while (inserted.size() < 10'000)
        {
            inserted.insert(random_item(rng));
        }
        auto f = BloomFilter::for_capacity(10'000, 0.01, seed);
        for (auto const& s : inserted)
        {
            f.insert(s);
        }
        for (auto const& s : inserted)
        {
            REQUIRE(f.contains(s));
        }
        std::size_t probes = 0;
        std::size_t hits = 0;
        while (probes < 10'000)
        {
            auto const s = random_item(rng);
            if (inserted.count(s) != 0)
            {
                continue;
            }
            ++probes;
            hits += f.contains(s) ? 1 : 0;
        }
        auto const rate = static_cast<double>(hits) / static_cast<double>(probes);
        CHECK(rate <= 0.02);
        CHECK(f.expected_fp_rate() == doctest::Approx(0.01).epsilon(0.1));
    }
}

TEST_CASE("dedup drops every exact repeat and keeps first occurrences in order")
{
    Rng rng(4);
    std::vector<std::string> unique;
    for (int i = 0; i < 500; ++i)
    {
        unique.push_back(random_item(rng) + " " + random_item(rng));
    }
    std::vector<std::string> stream;
    for (int i = 0; i < 2000; ++i)
    {
        stream.push_back(unique[rng.below(unique.size())]);
    }
    DedupParams params;
    params.expected_items = 2000;
    params.fp_rate = 1e-6;
    auto const r = dedup(stream, params);

    std::vector<std::string> oracle;
    std::set<std::string> seen;
    for (auto const& s : stream)
    {
        if (seen.insert(s).second)
        {
            oracle.push_back(s);
        }
    }
    CHECK(r.survivors == oracle);
    CHECK(r.stats.input == 2000);
    CHECK(r.stats.survivors + r.stats.dropped == 2000);
    CHECK(std::set<std::string>(r.survivors.begin(), r.survivors.end()).size() == r.survivors.size());
}

TEST_CASE("paragraph splitting")
{
    auto const ps = split_paragraphs("one\ntwo\n\n  \nthree\n\n\nfour");
    CHECK(ps == std::vector<std::string>{"one\ntwo", "three", "four"});
    CHECK(split_paragraphs(join_paragraphs(ps)) == ps);
    CHECK(split_paragraphs("\n\n").empty());
}

TEST_CASE("ratio filter")
{
    auto const vocab = toy::vocab();
    auto const clean = sentence({1, 2, 3, 4, 5, 6});
    CHECK(token_word_ratio(clean, vocab) == doctest::Approx(1.0));
    CHECK(ratio_filter(clean, vocab));
    CHECK(ratio_token_count("zzzz " + toy::word(1), vocab) == 5);
    CHECK(std::isinf(token_word_ratio("   ", vocab)));
    CHECK_THROWS_AS(ratio_filter(clean, vocab, 0.0), ArgumentError);

    // Corrupting letters inside words never lowers the ratio.
    Rng rng(6);
    std::string doc = clean;
    double last = token_word_ratio(doc, vocab);
    for (int i = 0; i < 20; ++i)
    {
        std::size_t pos = 0;
        do
        {
            pos = rng.below(doc.size());
        } while (doc[pos] == ' ');
        doc[pos] = 'q';
        auto const now = token_word_ratio(doc, vocab);
        CHECK(now >= last);
        last = now;
    }
    CHECK_FALSE(ratio_filter(doc, vocab));
}

TEST_CASE("split_long conserves tokens exactly")
{
    auto const vocab = toy::vocab();
    Rng rng(8);
    for (int trial = 0; trial < 50; ++trial)
    {
        std::vector<std::size_t> words(1 + rng.below(400));
        for (auto& w : words)
        {
            w = rng.below(123);
        }
        auto const doc = sentence(words);
        auto const target = static_cast<std::int64_t>(1 + rng.below(64));
        auto const whole = encode(doc, vocab, false);
        auto const pieces = split_long(doc, vocab, target);
        std::vector<TokenId> joined;
        for (std::size_t i = 0; i < pieces.size(); ++i)
        {
            CHECK(static_cast<std::int64_t>(pieces[i].size()) <= target);
            if (i + 1 < pieces.size())
            {
                CHECK(static_cast<std::int64_t>(pieces[i].size()) == target);
            }
            joined.insert(joined.end(), pieces[i].begin(), pieces[i].end());
        }
        CHECK(joined == whole);
        CHECK(pieces.size() == (whole.size() + target - 1) / target);
    }
    CHECK_THROWS_AS(split_long("x", vocab, 0), ArgumentError);
}

TEST_CASE("composition report and sequence files")
{
    std::vector<std::vector<TokenId>> seqs{{1, 2, 3}, {4}, {5, 6}, {7, 8, 9, 10}};
    auto const r = compose_report(seqs);
    CHECK(r.tokens == 10);
    CHECK(r.sequences == 4);
    CHECK(r.median_length == 2);
    CHECK(format_report(r) == "tokens=10 sequences=4 median_length=2");
    CHECK(compose_report(std::vector<std::vector<TokenId>>{}).median_length == 0);

    auto const path = toy::temp_dir("pipeline") + "/seqs.bin";
    write_sequences(path, seqs);
    CHECK(read_sequences(path) == seqs);
    write_file_bytes(path, read_file_bytes(path).substr(0, 9));
    CHECK_THROWS_AS(read_sequences(path), DataError);
}
