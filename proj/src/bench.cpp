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

#include "mgbert/bench.hpp"

#include "mgbert/error.hpp"
#include "mgbert/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <new>
#include <sstream>

namespace mgbert
{

namespace
{

std::vector<std::vector<TokenId>> slice(std::span<std::vector<TokenId> const> docs, std::size_t first, std::size_t n)
{
    auto const last = std::min(docs.size(), first + n);
    return {docs.begin() + static_cast<std::ptrdiff_t>(first), docs.begin() + static_cast<std::ptrdiff_t>(last)};
}

void run_once(ModelParams<float> const& params, ArchConfig const& cfg, std::span<std::vector<TokenId> const> docs,
    std::int64_t batch_docs, ExecPath path, TokenId pad_id)
{
    auto const step = static_cast<std::size_t>(batch_docs);
    for (std::size_t i = 0; i < docs.size(); i += step)
    {
        auto const batch = slice(docs, i, step);
        if (path == ExecPath::kPadded)
        {
            forward(params, cfg, pad(batch, pad_id));
        }
        else
        {
            forward(params, cfg, pack(batch));
        }
    }
}

std::string fixed_point(double v, int digits)
{
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(digits);
    os << v;
    return os.str();
}

} // namespace

std::string SyntheticSpec::label() const
{
    if (kind == LengthKind::kFixed)
    {
        return "fixed:" + std::to_string(length);
    }
    return "normal:" + format_real(mean) + ":" + format_real(spread) + (spread_is_variance ? ":variance" : "");
}

double SyntheticSpec::stddev() const
{
    return spread_is_variance ? std::sqrt(spread) : spread;
}

SyntheticSpec parse_spec(std::string const& text)
{
    std::vector<std::string> parts;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ':'))
    {
        parts.push_back(item);
    }
    SyntheticSpec s;
    if (parts.size() == 2 && parts[0] == "fixed")
    {
        s.kind = LengthKind::kFixed;
        s.length = parse_int(parts[1]);
        return s;
    }
    if ((parts.size() == 3 || parts.size() == 4) && parts[0] == "normal")
    {
        s.kind = LengthKind::kNormal;
        s.mean = parse_real(parts[1]);
        s.spread = parse_real(parts[2]);
        if (parts.size() == 4)
        {
            if (parts[3] != "variance" && parts[3] != "std")
            {
                throw ConfigError("spread reading must be 'std' or 'variance'");
            }
            s.spread_is_variance = parts[3] == "variance";
        }
        return s;
    }
    throw ConfigError("bad dataset spec '" + text + "' (expected fixed:L or normal:MEAN:SPREAD[:variance])");
}

std::vector<std::vector<TokenId>> gen_synthetic(
    SyntheticSpec const& spec, std::int64_t vocab_size, std::int64_t max_len, SpecialIds const& special)
{
    if (spec.n_docs < 0)
    {
        throw ArgumentError("n_docs must be non-negative");
    }
    if (spec.kind == LengthKind::kFixed && (spec.length < 1 || spec.length > max_len))
    {
        throw ArgumentError("fixed length " + std::to_string(spec.length) + " outside [1, " + std::to_string(max_len) + "]");
    }
    if (spec.kind == LengthKind::kNormal && (!(spec.mean >= 1.0) || spec.mean > static_cast<double>(max_len) || spec.spread < 0.0))
    {
        throw ArgumentError("normal mean must lie in [1, max_len] with non-negative spread");
    }
    std::vector<TokenId> allowed;
    for (TokenId id = 0; id < vocab_size; ++id)
    {
        if (!special.is_special(id))
        {
            allowed.push_back(id);
        }
    }
    if (allowed.empty())
    {
        throw ArgumentError("vocabulary has no non-special tokens");
    }
    Rng rng(spec.seed);
    std::vector<std::vector<TokenId>> docs;
    docs.reserve(static_cast<std::size_t>(spec.n_docs));
    double const sd = spec.stddev();
    for (std::int64_t d = 0; d < spec.n_docs; ++d)
    {
        std::int64_t len = spec.length;
        if (spec.kind == LengthKind::kNormal)
        {
            len = std::clamp<std::int64_t>(std::llround(spec.mean + sd * rng.normal()), 1, max_len);
        }
        std::vector<TokenId> doc(static_cast<std::size_t>(len));
        for (auto& id : doc)
        {
            id = allowed[static_cast<std::size_t>(rng.below(allowed.size()))];
        }
        docs.push_back(std::move(doc));
    }
    return docs;
}

std::string to_string(ExecPath p)
{
    return p == ExecPath::kPadded ? "padded" : "packed";
}

std::uint64_t count_positions(std::span<std::vector<TokenId> const> docs, std::int64_t batch_docs, ExecPath path)
{
    if (batch_docs <= 0)
    {
        throw ArgumentError("batch_docs must be positive");
    }
    std::uint64_t total = 0;
    auto const step = static_cast<std::size_t>(batch_docs);
    for (std::size_t i = 0; i < docs.size(); i += step)
    {
        auto const last = std::min(docs.size(), i + step);
        std::size_t longest = 0;
        for (auto j = i; j < last; ++j)
        {
            longest = std::max(longest, docs[j].size());
            if (path == ExecPath::kPacked)
            {
                total += docs[j].size();
            }
        }
        if (path == ExecPath::kPadded)
        {
            total += longest * (last - i);
        }
    }
    return total;
}

double probe_equivalence(ModelParams<float> const& params, ArchConfig const& cfg,
    std::span<std::vector<TokenId> const> docs, std::int64_t batch_docs, TokenId pad_id)
{
    auto const batch = slice(docs, 0, static_cast<std::size_t>(batch_docs));
    if (batch.empty())
    {
        return 0.0;
    }
    auto const padded_batch = pad(batch, pad_id);
    auto const a = forward(params, cfg, padded_batch).hidden_states;
    auto const b = forward(params, cfg, pack(batch)).hidden_states;
    double worst = 0.0;
    std::int64_t packed_row = 0;
    for (std::size_t m = 0; m < batch.size(); ++m)
    {
        for (std::int64_t r = 0; r < static_cast<std::int64_t>(batch[m].size()); ++r, ++packed_row)
        {
            auto const padded_row = static_cast<std::int64_t>(m) * padded_batch.width + r;
            for (std::int64_t c = 0; c < a.cols; ++c)
            {
                worst = std::max(worst, std::abs(static_cast<double>(a(padded_row, c)) - b(packed_row, c)));
            }
        }
    }
    return worst;
}

double sample_stddev(std::span<double const> xs)
{
    if (xs.size() < 2)
    {
        return 0.0;
    }
    double mean = 0.0;
    for (auto const x : xs)
    {
        mean += x;
    }
    mean /= static_cast<double>(xs.size());
    double ss = 0.0;
    for (auto const x : xs)
    {
        ss += (x - mean) * (x - mean);
    }
    return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

ThroughputReport measure(ModelParams<float> const& params, ArchConfig const& cfg,
    std::span<std::vector<TokenId> const> docs, SyntheticSpec const& spec, ExecPath path, std::int64_t batch_docs,
    std::int64_t reps, TokenId pad_id, std::string const& model_id)
{
    if (reps < 0 || batch_docs <= 0)
    {
        throw ArgumentError("reps must be >= 0 and batch_docs > 0");
    }
    ThroughputReport r;
    r.model_id = model_id;
    r.spec_label = spec.label();
    r.spread_reading = spec.kind == LengthKind::kNormal ? (spec.spread_is_variance ? "variance" : "std") : "n/a";
    r.path = path;
    r.reps = reps;
    for (auto const& d : docs)
    {
        r.tokens += d.size();
    }
    if (reps == 0)
    {
        r.batch_docs = batch_docs;
        r.positions = count_positions(docs, batch_docs, path);
        return r;
    }

    while (true)
    {
        try
        {
            auto const diff = probe_equivalence(params, cfg, docs, std::min<std::int64_t>(batch_docs, 2), pad_id);
            if (diff > 1e-5)
            {
                throw NumericError("padded and packed outputs differ by " + format_real(diff));
            }
            run_once(params, cfg, docs, batch_docs, path, pad_id);
            r.samples.clear();
            for (std::int64_t i = 0; i < reps; ++i)
            {
                auto const t0 = std::chrono::steady_clock::now();
                run_once(params, cfg, docs, batch_docs, path, pad_id);
                auto const t1 = std::chrono::steady_clock::now();
                double const secs = std::chrono::duration<double>(t1 - t0).count();
                r.samples.push_back(secs / static_cast<double>(r.tokens) * 1e6);
            }
            break;
        }
        catch (std::bad_alloc const&)
        {
            if (batch_docs == 1)
            {
                throw;
            }
            batch_docs = std::max<std::int64_t>(1, batch_docs / 2);
            r.note = "batch budget reduced to " + std::to_string(batch_docs) + " after allocation failure";
        }
    }
    r.batch_docs = batch_docs;
    r.positions = count_positions(docs, batch_docs, path);
    double sum = 0.0;
    for (auto const s : r.samples)
    {
        sum += s;
    }
    r.mean_s_per_mtok = sum / static_cast<double>(r.samples.size());
    r.std_s_per_mtok = sample_stddev(r.samples);
    return r;
}

std::string report_line(ThroughputReport const& r)
{
    std::string line = "model=" + r.model_id + " spec=" + r.spec_label + " spread_reading=" + r.spread_reading
        + " path=" + to_string(r.path) + " tokens=" + std::to_string(r.tokens) + " positions="
        + std::to_string(r.positions) + " batch_docs=" + std::to_string(r.batch_docs) + " reps="
        + std::to_string(r.reps);
    if (r.reps > 0)
    {
        line += " s_per_mtok=" + fixed_point(r.mean_s_per_mtok, 4) + "+-" + fixed_point(r.std_s_per_mtok, 4);
    }
    if (!r.note.empty())
    {
        line += " note=\"" + r.note + "\"";
    }
    return line;
}

std::string report_table(std::span<ThroughputReport const> reports)
{
    std::vector<std::string> labels;
    std::vector<std::string> rows;
    std::map<std::pair<std::string, std::string>, std::string> cells;
    for (auto const& r : reports)
    {
        if (std::find(labels.begin(), labels.end(), r.spec_label) == labels.end())
        {
            labels.push_back(r.spec_label);
        }
        auto const row = r.model_id + " (" + to_string(r.path) + ")";
        if (std::find(rows.begin(), rows.end(), row) == rows.end())
        {
            rows.push_back(row);
        }
        cells[{row, r.spec_label}] = r.reps > 0
            ? fixed_point(r.mean_s_per_mtok, 3) + " +- " + fixed_point(r.std_s_per_mtok, 3)
            : "tokens " + std::to_string(r.tokens);
    }
    std::vector<std::size_t> width{5};
    for (auto const& row : rows)
    {
        width[0] = std::max(width[0], row.size());
    }
    for (auto const& l : labels)
    {
        std::size_t w = l.size();
        for (auto const& row : rows)
        {
            auto const it = cells.find({row, l});
            w = std::max(w, it == cells.end() ? std::size_t{1} : it->second.size());
        }
        width.push_back(w);
    }
    auto pad_to = [](std::string s, std::size_t w)
    {
        s.resize(std::max(s.size(), w), ' ');
        return s;
    };
    std::ostringstream os;
    os << "| " << pad_to("Model", width[0]);
    for (std::size_t i = 0; i < labels.size(); ++i)
    {
        os << " | " << pad_to(labels[i], width[i + 1]);
    }
    os << " |\n|" << std::string(width[0] + 2, '-');
    for (std::size_t i = 0; i < labels.size(); ++i)
    {
        os << "|" << std::string(width[i + 1] + 2, '-');
    }
    os << "|\n";
    for (auto const& row : rows)
    {
        os << "| " << pad_to(row, width[0]);
        for (std::size_t i = 0; i < labels.size(); ++i)
        {
            auto const it = cells.find({row, labels[i]});
            os << " | " << pad_to(it == cells.end() ? "-" : it->second, width[i + 1]);
        }
        os << " |\n";
    }
    os << "seconds per million tokens, mean +- std over repetitions\n";
    return os.str();
}

} // namespace mgbert
