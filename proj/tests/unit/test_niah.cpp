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

#include "mgbert/niah.hpp"

#include "mgbert/error.hpp"

#include "toy.hpp"

#include <doctest.h>

#include <array>
#include <sstream>

using namespace mgbert;

namespace
{

bool contains(std::string const& hay, std::string const& needle)
{
    return hay.find(needle) != std::string::npos;
}

// Filler plus paragraphs that quote answers, so the leak check has work to do.
std::vector<Paragraph> mixed_pool(std::vector<QAPair> const& pairs)
{
    auto pool = toy::filler(200, 12, 3);
    for (std::size_t i = 0; i < pairs.size(); i += 3)
    {
        pool.push_back({toy::word(4) + " " + pairs[i].answer + " " + toy::word(5), "leaky" + std::to_string(i)});
    }
    return pool;
}

} // namespace

TEST_CASE("QA pair validation")
{
    auto pairs = toy::qa_pairs(5, 10, 1);
    for (auto const& p : pairs)
    {
        CHECK_NOTHROW(require_valid(p));
        CHECK(p.needle.substr(p.answer_start, p.answer.size()) == p.answer);
    }
    pairs[0].answer_start += 1;
    CHECK_THROWS_AS(require_valid(pairs[0]), DataError);
}

TEST_CASE("split options")
{
    CHECK(split_options(Split::kTrain).max_distractors == 3);
    CHECK(split_options(Split::kTrain).token_cap == 1024);
    CHECK(split_options(Split::kTest).max_distractors == 20);
    CHECK(split_options(Split::kTest).token_cap == 8192);
}

TEST_CASE("haystacks are leak-free, capped and locate the gold span")
{
    auto const vocab = toy::vocab();
    auto const pairs = toy::qa_pairs(60, 10, 2);
    auto const pool = mixed_pool(pairs);
    Rng rng(5);
    for (auto const cap : {11, 40, 200})
    {
        for (auto const exact : {false, true})
        {
            HaystackOptions o;
            o.max_distractors = 8;
            o.token_cap = cap;
            o.exact_count = exact;
            for (auto const& pair : pairs)
            {
                auto const ex = build_haystack(pair, pool, o, vocab, rng);
                CHECK_FALSE(answer_leaks(ex));
                CHECK(ex.total_tokens <= cap);
                std::int64_t counted = 0;
                for (auto const& p : ex.paragraphs)
                {
                    counted += static_cast<std::int64_t>(count_tokens(p, vocab));
                }
                CHECK(counted == ex.total_tokens);
                CHECK(static_cast<std::int64_t>(ex.paragraphs.size()) <= o.max_distractors + 1);
                CHECK(ex.paragraphs[static_cast<std::size_t>(ex.needle_index)] == pair.needle);
                CHECK(span_text(ex, vocab, ex.gold_start, ex.gold_end) == pair.answer);
                auto const doc = document_tokens(ex, vocab);
                CHECK(static_cast<std::int64_t>(doc.size()) == ex.total_tokens);
                if (exact && cap == 200)
                {
                    CHECK(ex.paragraphs.size() == 9);
                }
            }
        }
    }
}

TEST_CASE("needle slot is uniform")
{
    auto const vocab = toy::vocab();
    auto const pairs = toy::qa_pairs(4, 10, 2);
    auto const pool = toy::filler(50, 10, 3);
    HaystackOptions o;
    o.max_distractors = 3;
    o.exact_count = true;
    Rng rng(17);
    std::array<int, 4> counts{};
    for (int i = 0; i < 10'000; ++i)
    {
        auto const ex = build_haystack(pairs[static_cast<std::size_t>(i % 4)], pool, o, vocab, rng);
        REQUIRE(ex.paragraphs.size() == 4);
        counts[static_cast<std::size_t>(ex.needle_index)] += 1;
    }
    for (auto const c : counts)
    {
        CHECK(c / 10'000.0 == doctest::Approx(0.25).epsilon(0.02 / 0.25));
    }
}

TEST_CASE("distractor count is uniform on {0..max} unless exact")
{
    auto const vocab = toy::vocab();
    auto const pairs = toy::qa_pairs(1, 10, 2);
    auto const pool = toy::filler(50, 10, 3);
    HaystackOptions o;
    o.max_distractors = 3;
    Rng rng(21);
    std::array<int, 4> counts{};
    for (int i = 0; i < 8'000; ++i)
    {
        counts[build_haystack(pairs[0], pool, o, vocab, rng).paragraphs.size() - 1] += 1;
    }
    for (auto const c : counts)
    {
        CHECK(c / 8'000.0 == doctest::Approx(0.25).epsilon(0.1));
    }
}

TEST_CASE("same-article paragraphs and the needle itself are never distractors")
{
    auto const vocab = toy::vocab();
    auto const pairs = toy::qa_pairs(2, 10, 2);
    std::vector<Paragraph> pool{{pairs[0].needle, "x"}, {toy::word(7) + " " + toy::word(8), pairs[0].article}};
    HaystackOptions o;
    o.exact_count = true;
    Rng rng(1);
    auto const ex = build_haystack(pairs[0], pool, o, vocab, rng);
    CHECK(ex.paragraphs.size() == 1);
}

TEST_CASE("leak check modes")
{
    HaystackExample ex;
    ex.answer = "bado";
    ex.paragraphs = {"the bado is here", "a BADO elsewhere"};
    ex.needle_index = 0;
    CHECK_FALSE(answer_leaks(ex));
    CHECK(answer_leaks(ex, true));
    ex.paragraphs[1] = "xbadox";
    CHECK(answer_leaks(ex));
}

TEST_CASE("needles above the cap are skipped and logged")
{
    auto const vocab = toy::vocab();
    auto const pairs = toy::qa_pairs(6, 10, 2);
    HaystackOptions o;
    o.token_cap = 5;
    Rng rng(1);
    CHECK_THROWS_AS(build_haystack(pairs[0], toy::filler(5, 5, 1), o, vocab, rng), LengthError);
    std::ostringstream log;
    auto const build = build_dataset(pairs, o, vocab, 1, &log);
    CHECK(build.examples.empty());
    CHECK(build.skipped_ids.size() == 6);
    CHECK(contains(log.str(), pairs[0].id));
}

TEST_CASE("dataset regeneration is deterministic and seed-sensitive")
{
    auto const vocab = toy::vocab();
    auto const pairs = toy::qa_pairs(40, 10, 2);
    auto const pool = toy::filler(100, 12, 3);
    auto const o = split_options(Split::kTrain);
    auto const a = build_dataset(pairs, pool, o, vocab, 9);
    auto const b = build_dataset(pairs, pool, o, vocab, 9);
    auto const c = build_dataset(pairs, pool, o, vocab, 10);
    CHECK(a.examples == b.examples);
    CHECK(a.examples != c.examples);
    REQUIRE(a.examples.size() == 40);

    // The default pool is the other pairs' needles.
    auto const own = build_dataset(pairs, o, vocab, 9);
    for (auto const& ex : own.examples)
    {
        CHECK_FALSE(answer_leaks(ex));
    }

    auto const dir = toy::temp_dir("niah");
    write_haystacks(dir + "/h.jsonl", a.examples);
    CHECK(read_haystacks(dir + "/h.jsonl") == a.examples);
    write_qa_pairs(dir + "/q.jsonl", pairs);
    CHECK(read_qa_pairs(dir + "/q.jsonl") == pairs);
    CHECK(haystack_from_json(haystack_to_json(a.examples[3])) == a.examples[3]);
    CHECK_THROWS_AS(haystack_from_json("{not json"), DataError);
}

TEST_CASE("QA input layout and truncation")
{
    auto const vocab = toy::vocab();
    auto const pairs = toy::qa_pairs(1, 10, 2);
    auto const pool = toy::filler(20, 10, 3);
    HaystackOptions o;
    o.exact_count = true;
    Rng rng(4);
    auto const ex = build_haystack(pairs[0], pool, o, vocab, rng);
    auto const q = encode(ex.question, vocab, false);
    auto const doc = document_tokens(ex, vocab);
    auto const full = qa_input(ex, vocab, 1000);
    auto const& t = full.example;
    CHECK(full.gold_inside);
    CHECK(t.parts[0].size() == q.size() + doc.size() + 3);
    CHECK(t.parts[0].front() == vocab.special().cls);
    CHECK(t.parts[0][q.size() + 1] == vocab.special().sep);
    CHECK(t.parts[0].back() == vocab.special().sep);
    CHECK(t.context_begin == static_cast<std::int64_t>(q.size()) + 2);
    CHECK(t.span_start - t.context_begin == ex.gold_start);
    CHECK(t.parts[0][static_cast<std::size_t>(t.span_start)] == doc[static_cast<std::size_t>(ex.gold_start)]);

    auto const cut = qa_input(ex, vocab, static_cast<std::int64_t>(q.size()) + 3 + ex.gold_end);
    CHECK_FALSE(cut.gold_inside);
    CHECK(cut.example.span_start == -1);
    auto const just = qa_input(ex, vocab, static_cast<std::int64_t>(q.size()) + 4 + ex.gold_end);
    CHECK(just.gold_inside);
    CHECK_THROWS_AS(qa_input(ex, vocab, static_cast<std::int64_t>(q.size()) + 3), LengthError);
}

TEST_CASE("bucketed exact match")
{
    auto const vocab = toy::vocab();
    auto const pairs = toy::qa_pairs(3, 10, 2);
    std::vector<HaystackExample> golds;
    Rng rng(3);
    HaystackOptions o;
    o.max_distractors = 0;
    for (auto const& p : pairs)
    {
        golds.push_back(build_haystack(p, std::span<Paragraph const>{}, o, vocab, rng));
    }
    golds[0].total_tokens = 5;
    golds[1].total_tokens = 1500;
    golds[2].total_tokens = 5000;
    std::vector<SpanPrediction> preds{std::pair{golds[0].gold_start, golds[0].gold_end},
        std::pair{golds[1].gold_start, golds[1].gold_end + 1}, std::nullopt};
    auto const r = evaluate(preds, golds, vocab);
    CHECK(r.count == 3);
    CHECK(r.correct == 1);
    REQUIRE(r.buckets.size() == 3);
    CHECK(r.buckets[0].em() == 1.0);
    CHECK(r.buckets[1].count == 1);
    CHECK(r.buckets[1].em() == 0.0);
    CHECK(r.buckets[2].hi == -1);
    CHECK(r.missing_ids == std::vector<std::string>{golds[2].id});
    CHECK(contains(format_eval(r), "bucket [1024,4096) em="));
    CHECK_THROWS_AS(evaluate(std::span<SpanPrediction const>(preds).first(2), golds, vocab), ArgumentError);
    CHECK_THROWS_AS(evaluate(preds, golds, vocab, {10, 5}), ArgumentError);
}
