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

#include "mgbert/checkpoint.hpp"
#include "mgbert/config.hpp"
#include "mgbert/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace mgbert
{

namespace
{

using json = nlohmann::json;

std::vector<std::string> read_lines(std::string const& path)
{
    std::ifstream in(path);
    if (!in)
    {
        throw DataError("cannot open " + path);
    }
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line))
    {
        if (!line.empty() && line.find_first_not_of(" \t\r") != std::string::npos)
        {
            lines.push_back(line);
        }
    }
    return lines;
}

void write_lines(std::string const& path, std::vector<std::string> const& lines)
{
    std::string bytes;
    for (auto const& l : lines)
    {
        bytes += l;
        bytes += '\n';
    }
    write_file_bytes(path, bytes);
}

bool leaks(std::string const& paragraph, std::string const& answer, bool normalized)
{
    if (!normalized)
    {
        return paragraph.find(answer) != std::string::npos;
    }
    Normalization const n{true, true};
    return normalize(paragraph, n).find(normalize(answer, n)) != std::string::npos;
}

std::int64_t paragraph_tokens(Paragraph const& p, Vocab const& vocab)
{
    return p.tokens >= 0 ? p.tokens : static_cast<std::int64_t>(count_tokens(p.text, vocab));
}

} // namespace

void require_valid(QAPair const& pair)
{
    if (pair.answer.empty())
    {
        throw DataError("QA pair " + pair.id + " has an empty answer");
    }
    if (pair.answer_start + pair.answer.size() > pair.needle.size()
        || pair.needle.compare(pair.answer_start, pair.answer.size(), pair.answer) != 0)
    {
        throw DataError("QA pair " + pair.id + ": answer does not occur at its stated offset");
    }
}

HaystackExample build_haystack(
    QAPair const& pair, std::span<Paragraph const> pool, HaystackOptions const& options, Vocab const& vocab, Rng& rng)
{
    require_valid(pair);
    if (options.max_distractors < 0 || options.token_cap <= 0)
    {
        throw ArgumentError("max_distractors must be >= 0 and token_cap > 0");
    }
    auto const needle_tokens = static_cast<std::int64_t>(count_tokens(pair.needle, vocab));
    if (needle_tokens > options.token_cap)
    {
        throw LengthError("needle of " + pair.id + " has " + std::to_string(needle_tokens)
            + " tokens, above the cap of " + std::to_string(options.token_cap));
    }
    auto const target = options.exact_count
        ? options.max_distractors
        : static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(options.max_distractors) + 1));

    std::vector<std::string> chosen;
    std::vector<std::int64_t> chosen_tokens;
    std::int64_t total = needle_tokens;
    if (target > 0)
    {
        std::vector<std::size_t> idx(pool.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        for (std::size_t i = 0; i < idx.size() && static_cast<std::int64_t>(chosen.size()) < target; ++i)
        {
            auto const j = i + static_cast<std::size_t>(rng.below(idx.size() - i));
            std::swap(idx[i], idx[j]);
            auto const& p = pool[idx[i]];
            if (p.text == pair.needle || (!pair.article.empty() && p.article == pair.article)
                || leaks(p.text, pair.answer, options.normalized_leak_check))
            {
                continue;
            }
            auto const t = paragraph_tokens(p, vocab);
            if (total + t > options.token_cap)
            {
                break;
            }
            total += t;
            chosen.push_back(p.text);
            chosen_tokens.push_back(t);
        }
    }

    std::vector<std::size_t> order(chosen.size() + 1);
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);

    HaystackExample ex;
    ex.id = pair.id;
    ex.question = pair.question;
    ex.answer = pair.answer;
    ex.answer_start = pair.answer_start;
    ex.total_tokens = total;
    std::int64_t offset = 0;
    for (std::size_t slot = 0; slot < order.size(); ++slot)
    {
        if (order[slot] == 0)
        {
            ex.needle_index = static_cast<std::int64_t>(slot);
            ex.paragraphs.push_back(pair.needle);
            auto const norm = vocab.normalization;
            auto const a0 = normalize(std::string_view(pair.needle).substr(0, pair.answer_start), norm).size();
            auto const a1 = a0 + normalize(pair.answer, norm).size();
            auto const spans = encode_with_offsets(pair.needle, vocab);
            std::int64_t s = -1;
            std::int64_t e = -1;
            for (std::size_t k = 0; k < spans.size(); ++k)
            {
                if (spans[k].end > a0 && spans[k].begin < a1)
                {
                    if (s < 0)
                    {
                        s = static_cast<std::int64_t>(k);
                    }
                    e = static_cast<std::int64_t>(k);
                }
            }
            if (s < 0)
            {
                throw DataError("answer of " + pair.id + " covers no token");
            }
            ex.gold_start = offset + s;
            ex.gold_end = offset + e;
            offset += needle_tokens;
        }
        else
        {
            ex.paragraphs.push_back(chosen[order[slot] - 1]);
            offset += chosen_tokens[order[slot] - 1];
        }
    }
    return ex;
}

HaystackOptions split_options(Split split)
{
    HaystackOptions o;
    if (split == Split::kTrain)
    {
        o.max_distractors = 3;
        o.token_cap = 1024;
    }
    else
    {
        o.max_distractors = 20;
        o.token_cap = 8192;
    }
    return o;
}

DatasetBuild build_dataset(std::span<QAPair const> pairs, std::span<Paragraph const> pool,
    HaystackOptions const& options, Vocab const& vocab, std::uint64_t seed, std::ostream* log)
{
    std::vector<Paragraph> sized(pool.begin(), pool.end());
    for (auto& p : sized)
    {
        p.tokens = paragraph_tokens(p, vocab);
    }
    DatasetBuild out;
    for (std::size_t i = 0; i < pairs.size(); ++i)
    {
        Rng rng(derive_seed(seed, i));
        try
        {
            out.examples.push_back(build_haystack(pairs[i], sized, options, vocab, rng));
        }
        catch (LengthError const& e)
        {
            out.skipped_ids.push_back(pairs[i].id);
            if (log != nullptr)
            {
                *log << "skipped " << pairs[i].id << ": " << e.what() << '\n';
            }
        }
    }
    return out;
}

DatasetBuild build_dataset(std::span<QAPair const> pairs, HaystackOptions const& options, Vocab const& vocab,
    std::uint64_t seed, std::ostream* log)
{
    std::vector<Paragraph> pool;
    for (auto const& p : pairs)
    {
        pool.push_back({p.needle, p.article, -1});
    }
    return build_dataset(pairs, pool, options, vocab, seed, log);
}

std::vector<TokenId> document_tokens(HaystackExample const& ex, Vocab const& vocab)
{
    std::vector<TokenId> out;
    for (auto const& p : ex.paragraphs)
    {
        auto const t = encode(p, vocab, false);
        out.insert(out.end(), t.begin(), t.end());
    }
    return out;
}

std::string span_text(HaystackExample const& ex, Vocab const& vocab, std::int64_t start, std::int64_t end)
{
    if (start < 0 || end < start)
    {
        return {};
    }
    std::string out;
    std::int64_t g = 0;
    for (auto const& p : ex.paragraphs)
    {
        auto const text = normalize(p, vocab.normalization);
        auto const spans = encode_with_offsets(p, vocab);
        std::optional<std::size_t> b;
        std::size_t e = 0;
        for (auto const& s : spans)
        {
            if (g >= start && g <= end)
            {
                if (!b)
                {
                    b = s.begin;
                }
                e = s.end;
            }
            ++g;
        }
        if (b)
        {
            if (!out.empty())
            {
                out += "\n\n";
            }
            out += text.substr(*b, e - *b);
        }
        if (g > end)
        {
            break;
        }
    }
    return out;
}

bool answer_leaks(HaystackExample const& ex, bool normalized)
{
    for (std::size_t i = 0; i < ex.paragraphs.size(); ++i)
    {
        if (static_cast<std::int64_t>(i) != ex.needle_index && leaks(ex.paragraphs[i], ex.answer, normalized))
        {
            return true;
        }
    }
    return false;
}

QaInput qa_input(HaystackExample const& ex, Vocab const& vocab, std::int64_t max_len, std::uint64_t id)
{
    auto const& sp = vocab.special();
    auto const q = encode(ex.question, vocab, false);
    auto const doc = document_tokens(ex, vocab);
    auto const room = max_len - static_cast<std::int64_t>(q.size()) - 3;
    if (room <= 0)
    {
        throw LengthError("question of " + ex.id + " leaves no room for the document");
    }
    auto const keep = std::min<std::int64_t>(room, static_cast<std::int64_t>(doc.size()));
    QaInput out;
    auto& t = out.example;
    t.id = id;
    std::vector<TokenId> tokens;
    tokens.reserve(static_cast<std::size_t>(keep) + q.size() + 3);
    tokens.push_back(sp.cls);
    tokens.insert(tokens.end(), q.begin(), q.end());
    tokens.push_back(sp.sep);
    tokens.insert(tokens.end(), doc.begin(), doc.begin() + keep);
    tokens.push_back(sp.sep);
    t.parts.push_back(std::move(tokens));
    t.context_begin = static_cast<std::int64_t>(q.size()) + 2;
    out.gold_inside = ex.gold_end < keep;
    t.span_start = out.gold_inside ? t.context_begin + ex.gold_start : -1;
    t.span_end = out.gold_inside ? t.context_begin + ex.gold_end : -1;
    return out;
}

EvalReport evaluate(std::span<SpanPrediction const> predictions, std::span<HaystackExample const> golds,
    Vocab const& vocab, std::vector<std::int64_t> const& edges)
{
    if (predictions.size() != golds.size())
    {
        throw ArgumentError("evaluate needs one prediction slot per example");
    }
    if (!std::is_sorted(edges.begin(), edges.end()) || (!edges.empty() && edges.front() <= 0))
    {
        throw ArgumentError("bucket edges must be positive and ascending");
    }
    EvalReport r;
    std::int64_t lo = 0;
    for (auto const e : edges)
    {
        r.buckets.push_back({lo, e, 0, 0});
        lo = e;
    }
    r.buckets.push_back({lo, -1, 0, 0});

    for (std::size_t i = 0; i < golds.size(); ++i)
    {
        auto const& g = golds[i];
        auto const& p = predictions[i];
        bool ok = false;
        if (!p)
        {
            r.missing_ids.push_back(g.id);
        }
        else
        {
            ok = span_text(g, vocab, p->first, p->second) == normalize(g.answer, vocab.normalization);
        }
        auto const b = static_cast<std::size_t>(
            std::upper_bound(edges.begin(), edges.end(), g.total_tokens) - edges.begin());
        r.buckets[b].count += 1;
        r.buckets[b].correct += ok ? 1 : 0;
        r.count += 1;
        r.correct += ok ? 1 : 0;
    }
    return r;
}

std::string format_eval(EvalReport const& r)
{
    std::ostringstream os;
    os << "overall em=" << format_real(r.em()) << " n=" << r.count << '\n';
    for (auto const& b : r.buckets)
    {
        os << "bucket [" << b.lo << "," << (b.hi < 0 ? std::string("inf") : std::to_string(b.hi)) << ") em="
           << format_real(b.em()) << " n=" << b.count << '\n';
    }
    if (!r.missing_ids.empty())
    {
        os << "missing predictions=" << r.missing_ids.size() << '\n';
    }
    return os.str();
}

std::vector<QAPair> read_qa_pairs(std::string const& path)
{
    std::vector<QAPair> out;
    for (auto const& line : read_lines(path))
    {
        try
        {
            auto const j = json::parse(line);
            QAPair p;
            p.id = j.at("id").get<std::string>();
            p.article = j.value("title", std::string{});
            p.question = j.at("question").get<std::string>();
            p.needle = j.at("context").get<std::string>();
            p.answer = j.at("answer").get<std::string>();
            p.answer_start = j.at("answer_start").get<std::size_t>();
            require_valid(p);
            out.push_back(std::move(p));
        }
        catch (json::exception const& e)
        {
            throw DataError("malformed QA record in " + path + ": " + e.what());
        }
    }
    return out;
}

void write_qa_pairs(std::string const& path, std::span<QAPair const> pairs)
{
    std::vector<std::string> lines;
    for (auto const& p : pairs)
    {
        json j;
        j["id"] = p.id;
        j["title"] = p.article;
        j["question"] = p.question;
        j["context"] = p.needle;
        j["answer"] = p.answer;
        j["answer_start"] = p.answer_start;
        lines.push_back(j.dump());
    }
    write_lines(path, lines);
}

std::string haystack_to_json(HaystackExample const& ex)
{
    json j;
    j["id"] = ex.id;
    j["question"] = ex.question;
    j["paragraphs"] = ex.paragraphs;
    j["needle_index"] = ex.needle_index;
    j["answer"] = ex.answer;
    j["answer_start"] = ex.answer_start;
    j["gold_start"] = ex.gold_start;
    j["gold_end"] = ex.gold_end;
    j["total_tokens"] = ex.total_tokens;
    return j.dump();
}

HaystackExample haystack_from_json(std::string const& line)
{
    try
    {
        auto const j = json::parse(line);
        HaystackExample ex;
        ex.id = j.at("id").get<std::string>();
        ex.question = j.at("question").get<std::string>();
        ex.paragraphs = j.at("paragraphs").get<std::vector<std::string>>();
        ex.needle_index = j.at("needle_index").get<std::int64_t>();
        ex.answer = j.at("answer").get<std::string>();
        ex.answer_start = j.at("answer_start").get<std::size_t>();
        ex.gold_start = j.at("gold_start").get<std::int64_t>();
        ex.gold_end = j.at("gold_end").get<std::int64_t>();
        ex.total_tokens = j.at("total_tokens").get<std::int64_t>();
        if (ex.needle_index < 0 || ex.needle_index >= static_cast<std::int64_t>(ex.paragraphs.size())
            || ex.gold_start < 0 || ex.gold_end < ex.gold_start || ex.gold_end >= ex.total_tokens)
        {
            throw DataError("haystack record " + ex.id + " has an invalid needle or gold span");
        }
        return ex;
    }
    catch (json::exception const& e)
    {
        throw DataError(std::string("malformed haystack record: ") + e.what());
    }
}

void write_haystacks(std::string const& path, std::span<HaystackExample const> examples)
{
    std::vector<std::string> lines;
    for (auto const& ex : examples)
    {
        lines.push_back(haystack_to_json(ex));
    }
    write_lines(path, lines);
}

std::vector<HaystackExample> read_haystacks(std::string const& path)
{
    std::vector<HaystackExample> out;
    for (auto const& line : read_lines(path))
    {
        out.push_back(haystack_from_json(line));
    }
    return out;
}

} // namespace mgbert
