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

#include "mgbert/rng.hpp"
#include "mgbert/tokenizer.hpp"
#include "mgbert/trainer.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace mgbert
{

/// Extractive QA record; `answer` sits in `needle` at byte offset `answer_start`.
struct QAPair
{
    std::string id;
    std::string article;
    std::string question;
    std::string needle;
    std::string answer;
    std::size_t answer_start = 0;

    bool operator==(QAPair const&) const = default;
};

/// Throws DataError unless the answer occurs at its stated offset.
void require_valid(QAPair const& pair);

struct Paragraph
{
    std::string text;
    std::string article;
    std::int64_t tokens = -1;
};

struct HaystackExample
{
    std::string id;
    std::string question;
    std::vector<std::string> paragraphs;
    std::int64_t needle_index = 0;
    std::string answer;
    // Byte offset of the answer inside the needle paragraph.
    std::size_t answer_start = 0;
    // Inclusive token span in document coordinates (paragraph tokens concatenated).
    std::int64_t gold_start = 0;
    std::int64_t gold_end = 0;
    std::int64_t total_tokens = 0;

    bool operator==(HaystackExample const&) const = default;
};

struct HaystackOptions
{
    std::int64_t max_distractors = 3;
    std::int64_t token_cap = 1024;
    // true: aim for exactly max_distractors; false: draw the count from {0..max}.
    bool exact_count = false;
    // Leak check after NFC + lowercase instead of exact bytes.
    bool normalized_leak_check = false;
};

/// Needle plus sampled distractors in a uniformly shuffled order.
/// Throws LengthError when the needle alone exceeds the cap.
HaystackExample build_haystack(QAPair const& pair, std::span<Paragraph const> pool, HaystackOptions const& options,
    Vocab const& vocab, Rng& rng);

enum class Split
{
    kTrain,
    kTest
};

/// Default splits: train up to 3 distractors under 1,024 tokens, test up to 20 under 8,192.
HaystackOptions split_options(Split split);

struct DatasetBuild
{
    std::vector<HaystackExample> examples;
    std::vector<std::string> skipped_ids;
};

/// One example per pair with per-pair derived seeds. The pool defaults to the
/// needles of the other pairs (same-article paragraphs excluded).
DatasetBuild build_dataset(std::span<QAPair const> pairs, std::span<Paragraph const> pool,
    HaystackOptions const& options, Vocab const& vocab, std::uint64_t seed, std::ostream* log = nullptr);
DatasetBuild build_dataset(std::span<QAPair const> pairs, HaystackOptions const& options, Vocab const& vocab,
    std::uint64_t seed, std::ostream* log = nullptr);

std::vector<TokenId> document_tokens(HaystackExample const& ex, Vocab const& vocab);

/// Text covered by document tokens [start, end], cut from the (normalized) paragraphs.
std::string span_text(HaystackExample const& ex, Vocab const& vocab, std::int64_t start, std::int64_t end);

/// True when the answer occurs in any distractor paragraph.
bool answer_leaks(HaystackExample const& ex, bool normalized = false);

/// [CLS] question [SEP] document [SEP], cut to max_len. `gold_inside` is false
/// when truncation removed the gold span.
struct QaInput
{
    TrainExample example;
    bool gold_inside = true;
};

QaInput qa_input(HaystackExample const& ex, Vocab const& vocab, std::int64_t max_len, std::uint64_t id = 0);

struct BucketScore
{
    std::int64_t lo = 0;
    // Exclusive; -1 for open-ended.
    std::int64_t hi = -1;
    std::int64_t count = 0;
    std::int64_t correct = 0;

    double em() const
    {
        return count == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(count);
    }
};

struct EvalReport
{
    std::int64_t count = 0;
    std::int64_t correct = 0;
    std::vector<BucketScore> buckets;
    std::vector<std::string> missing_ids;

    double em() const
    {
        return count == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(count);
    }
};

using SpanPrediction = std::optional<std::pair<std::int64_t, std::int64_t>>;

inline std::vector<std::int64_t> const kDefaultBucketEdges{1024, 4096};

/// Exact match of predicted span text against the answer, bucketed by total_tokens.
/// Edges {a, b} give buckets [0,a), [a,b), [b,inf). Missing predictions count as wrong.
EvalReport evaluate(std::span<SpanPrediction const> predictions, std::span<HaystackExample const> golds,
    Vocab const& vocab, std::vector<std::int64_t> const& edges = kDefaultBucketEdges);

std::string format_eval(EvalReport const& r);

/// SQuAD-style JSONL: {"id","title","question","context","answer","answer_start"}.
std::vector<QAPair> read_qa_pairs(std::string const& path);
void write_qa_pairs(std::string const& path, std::span<QAPair const> pairs);

std::string haystack_to_json(HaystackExample const& ex);
HaystackExample haystack_from_json(std::string const& line);
void write_haystacks(std::string const& path, std::span<HaystackExample const> examples);
std::vector<HaystackExample> read_haystacks(std::string const& path);

} // namespace mgbert
