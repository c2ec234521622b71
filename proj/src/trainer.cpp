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

#include "mgbert/trainer.hpp"

#include "mgbert/error.hpp"
#include "mgbert/objectives.hpp"
#include "mgbert/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <utility>

namespace mgbert
{

namespace
{

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

void fnv_bytes(std::uint64_t& h, void const* data, std::size_t n)
{
    auto const* p = static_cast<unsigned char const*>(data);
    for (std::size_t i = 0; i < n; ++i)
    {
        h ^= p[i];
        h *= kFnvPrime;
    }
}

template <typename T>
void fnv_value(std::uint64_t& h, T value)
{
    unsigned char buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i)
    {
        buf[i] = static_cast<unsigned char>(static_cast<std::uint64_t>(value) >> (8 * i));
    }
    fnv_bytes(h, buf, sizeof(T));
}

std::uint64_t fnv_string(std::string const& s)
{
    std::uint64_t h = kFnvOffset;
    fnv_bytes(h, s.data(), s.size());
    return h;
}

template <typename T>
void put_le(std::string& out, T value)
{
    auto const u = static_cast<std::uint64_t>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i)
    {
        out.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
    }
}

template <typename T>
T get_le(std::string const& in, std::size_t& pos)
{
    if (pos + sizeof(T) > in.size())
    {
        throw DataError("truncated provenance log");
    }
    std::uint64_t u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
    {
        u |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    }
    pos += sizeof(T);
    return static_cast<T>(u);
}

std::string join_ids(std::vector<std::uint64_t> const& ids)
{
    std::string out;
    for (auto const id : ids)
    {
        out += (out.empty() ? "" : ",") + std::to_string(id);
    }
    return out;
}

std::vector<std::uint64_t> split_ids(std::string const& text)
{
    std::vector<std::uint64_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
    {
        if (!item.empty())
        {
            out.push_back(static_cast<std::uint64_t>(parse_int(item)));
        }
    }
    return out;
}

/// Names of the tensors the optimizer updates, parallel to trainable().
std::vector<std::string> trainable_names(TrainState const& s)
{
    std::vector<std::string> names;
    if (s.adapters)
    {
        for (auto const& [key, pair] : s.adapters->pairs)
        {
            auto const base = "adapter.layers." + std::to_string(key.first) + "." + to_string(key.second);
            names.push_back(base + ".a");
            names.push_back(base + ".b");
        }
        return names;
    }
    for (auto const& [name, tensor] : s.params.named())
    {
        names.push_back(name);
    }
    return names;
}

std::vector<Matrix<float>*> trainable(TrainState& s)
{
    if (s.adapters)
    {
        return s.adapters->tensors();
    }
    std::vector<Matrix<float>*> out;
    for (auto const& [name, tensor] : s.params.named())
    {
        out.push_back(tensor);
    }
    return out;
}

AdapterGrads<float> zero_adapter_grads(AdapterSet const& set)
{
    AdapterGrads<float> g;
    for (auto const& [key, pair] : set.pairs)
    {
        g.pairs[key] = LowRankPair<float>{
            Matrix<float>(pair.a.rows, pair.a.cols), Matrix<float>(pair.b.rows, pair.b.cols), pair.scale};
    }
    return g;
}

void validate_data(Dataset const& data, ArchConfig const& arch, TrainPhaseConfig const& phase, Objective objective)
{
    for (auto const& ex : data)
    {
        auto const tag = "example " + std::to_string(ex.id);
        if (ex.parts.empty() || ex.parts[0].empty())
        {
            throw DataError(tag + " has no tokens");
        }
        for (auto const& part : ex.parts)
        {
            auto const len = static_cast<std::int64_t>(part.size());
            if (len == 0)
            {
                throw DataError(tag + " has an empty part");
            }
            if (len > phase.max_seq_len || len > arch.max_seq_len)
            {
                throw DataError(tag + " is longer than the phase maximum sequence length");
            }
            for (auto const id : part)
            {
                if (id < 0 || id >= arch.vocab_size)
                {
                    throw DataError(tag + " holds a token id outside the vocabulary");
                }
            }
        }
        if (objective == Objective::kSpanQa)
        {
            auto const len = static_cast<std::int64_t>(ex.parts[0].size());
            if (ex.context_begin < 0 || ex.span_start < ex.context_begin || ex.span_end < ex.span_start
                || ex.span_end >= len)
            {
                throw DataError(tag + " has a gold span outside its token range");
            }
        }
        if (objective == Objective::kEmbedding && ex.parts.size() < 2)
        {
            throw DataError(tag + " needs a query and a positive");
        }
    }
}

/// Shared per-step inputs for the objective functions.
struct StepContext
{
    ArchConfig const& arch;
    TrainPhaseConfig const& phase;
    SpecialIds const& special;
    double temperature;
    ModelParams<float> const& params;
    ModelParams<float>* grads;
    RuntimeAdapters<float> const* adapters;
    AdapterGrads<float>* adapter_grads;
    Rng& rng;
    Mode mode;
};

ForwardOptions<float> forward_options(StepContext const& ctx)
{
    ForwardOptions<float> o;
    o.mode = ctx.mode;
    o.dropout_rate = ctx.mode == Mode::kTrain ? ctx.phase.attn_dropout : 0.0;
    o.rng = &ctx.rng;
    o.adapters = ctx.adapters;
    return o;
}

bool wants_grads(StepContext const& ctx)
{
    return ctx.grads != nullptr || ctx.adapter_grads != nullptr;
}

/// MLM or MNTP over one batch. Masks are drawn for the whole batch first so
/// the loss normalizer (total predicted tokens) is known before any microbatch.
double masked_lm_step(StepContext const& ctx, std::vector<TrainExample const*> const& batch, bool mntp)
{
    auto const policy = mntp ? MaskPolicy::kAllMask : ctx.phase.mask_policy;
    std::vector<MaskedBatch> masked;
    std::vector<std::vector<std::int64_t>> rows;
    std::vector<std::vector<TokenId>> labels;
    std::int64_t total = 0;
    for (auto const* ex : batch)
    {
        auto const& ids = ex->parts[0];
        masked.push_back(mlm_mask(ids, ctx.phase.mask_rate, policy, ctx.special, ctx.arch.vocab_size, ctx.rng));
        auto const& mb = masked.back();
        std::vector<std::int64_t> r;
        std::vector<TokenId> l;
        if (mntp)
        {
            auto const t = mntp_targets(ids, mb.mask_positions);
            r = t.prediction_positions;
            l = t.labels;
        }
        else
        {
            for (auto const p : mb.mask_positions)
            {
                r.push_back(p);
                l.push_back(ids[static_cast<std::size_t>(p)]);
            }
        }
        total += static_cast<std::int64_t>(r.size());
        rows.push_back(std::move(r));
        labels.push_back(std::move(l));
    }
    if (total == 0)
    {
        return 0.0;
    }

    auto const opts = forward_options(ctx);
    double loss = 0.0;
    auto const n = static_cast<std::int64_t>(batch.size());
    for (std::int64_t first = 0; first < n; first += ctx.phase.microbatch)
    {
        auto const last = std::min(n, first + ctx.phase.microbatch);
        std::vector<std::vector<TokenId>> seqs;
        std::vector<std::int64_t> flat_rows;
        std::vector<TokenId> flat_labels;
        std::int64_t offset = 0;
        for (auto i = first; i < last; ++i)
        {
            auto const ui = static_cast<std::size_t>(i);
            seqs.push_back(masked[ui].corrupted_ids);
            for (std::size_t j = 0; j < rows[ui].size(); ++j)
            {
                flat_rows.push_back(offset + rows[ui][j]);
                flat_labels.push_back(labels[ui][j]);
            }
            offset += static_cast<std::int64_t>(seqs.back().size());
        }
        if (flat_rows.empty())
        {
            continue;
        }
        double const weight = static_cast<double>(flat_rows.size()) / static_cast<double>(total);
        auto const layout = layout_of(pack(seqs));
        ForwardCache<float> cache;
        auto const out = forward(ctx.params, ctx.arch, layout, opts, wants_grads(ctx) ? &cache : nullptr);
        auto const logits = mlm_logits(out.hidden_states, ctx.params, flat_rows);
        auto const lg = mlm_loss(logits, flat_labels, weight);
        loss += lg.loss * weight;
        if (wants_grads(ctx))
        {
            Matrix<float> d_hidden(out.hidden_states.rows, out.hidden_states.cols);
            mlm_logits_backward(out.hidden_states, ctx.params, flat_rows, lg.d_logits, d_hidden, ctx.grads);
            backward(ctx.params, ctx.arch, cache, opts, d_hidden, ctx.grads, ctx.adapter_grads);
        }
    }
    return loss;
}

/// Mean over the batch of (CE(start) + CE(end)) / 2.
double span_step(StepContext const& ctx, std::vector<TrainExample const*> const& batch)
{
    auto const opts = forward_options(ctx);
    auto const n = static_cast<std::int64_t>(batch.size());
    double const per_example = 1.0 / static_cast<double>(n);
    double loss = 0.0;
    for (std::int64_t first = 0; first < n; first += ctx.phase.microbatch)
    {
        auto const last = std::min(n, first + ctx.phase.microbatch);
        std::vector<std::vector<TokenId>> seqs;
        for (auto i = first; i < last; ++i)
        {
            seqs.push_back(batch[static_cast<std::size_t>(i)]->parts[0]);
        }
        auto const layout = layout_of(pack(seqs));
        ForwardCache<float> cache;
        auto const out = forward(ctx.params, ctx.arch, layout, opts, wants_grads(ctx) ? &cache : nullptr);
        Matrix<float> d_hidden(out.hidden_states.rows, out.hidden_states.cols);
        for (auto i = first; i < last; ++i)
        {
            auto const& ex = *batch[static_cast<std::size_t>(i)];
            auto const& seg = layout.segments[static_cast<std::size_t>(i - first)];
            auto const row0 = seg.begin + ex.context_begin;
            auto const scores = span_logits(out.hidden_states, ctx.params, row0, seg.begin + seg.length);
            SpanScores<float> d;
            d.start.assign(scores.start.size(), 0.0F);
            d.end.assign(scores.end.size(), 0.0F);
            double const w = 0.5 * per_example;
            double const ls = position_cross_entropy<float>(scores.start, ex.span_start - ex.context_begin, d.start, w);
            double const le = position_cross_entropy<float>(scores.end, ex.span_end - ex.context_begin, d.end, w);
            loss += w * (ls + le);
            if (wants_grads(ctx))
            {
                span_logits_backward(out.hidden_states, ctx.params, row0, d, d_hidden, ctx.grads);
            }
        }
        if (wants_grads(ctx))
        {
            backward(ctx.params, ctx.arch, cache, opts, d_hidden, ctx.grads, ctx.adapter_grads);
        }
    }
    return loss;
}

/// InfoNCE with cached embeddings: a gradient-free pass builds every embedding,
/// the loss gives d(embedding), then each microbatch is re-run with the same
/// dropout stream and backpropagated. Exact for any microbatch size.
double embedding_step(StepContext const& ctx, std::vector<TrainExample const*> const& batch)
{
    auto const n = static_cast<std::int64_t>(batch.size());
    auto const hidden = ctx.arch.hidden;
    std::int64_t n_neg = 0;
    for (auto const* ex : batch)
    {
        n_neg += static_cast<std::int64_t>(ex->parts.size()) - 2;
    }
    // Embedding slot of part p of example i: query i, positive i, or a negative row.
    std::vector<std::vector<std::pair<int, std::int64_t>>> slots(static_cast<std::size_t>(n));
    {
        std::int64_t neg = 0;
        for (std::int64_t i = 0; i < n; ++i)
        {
            auto const& ex = *batch[static_cast<std::size_t>(i)];
            auto& s = slots[static_cast<std::size_t>(i)];
            s.emplace_back(0, i);
            s.emplace_back(1, i);
            for (std::size_t p = 2; p < ex.parts.size(); ++p)
            {
                s.emplace_back(2, neg++);
            }
        }
    }
    Matrix<float> q(n, hidden);
    Matrix<float> pos(n, hidden);
    Matrix<float> negs(n_neg, hidden);
    auto slot_row = [&](Matrix<float>& qq, Matrix<float>& pp, Matrix<float>& nn, std::pair<int, std::int64_t> s)
    {
        Matrix<float>& m = s.first == 0 ? qq : (s.first == 1 ? pp : nn);
        return m.row(s.second);
    };

    auto const opts = forward_options(ctx);
    auto const rng_start = ctx.rng.state();
    auto run_chunk = [&](std::int64_t first, std::int64_t last, ForwardCache<float>* cache, TokenLayout& layout)
    {
        std::vector<std::vector<TokenId>> seqs;
        for (auto i = first; i < last; ++i)
        {
            for (auto const& part : batch[static_cast<std::size_t>(i)]->parts)
            {
                seqs.push_back(part);
            }
        }
        layout = layout_of(pack(seqs));
        return forward(ctx.params, ctx.arch, layout, opts, cache);
    };

    for (std::int64_t first = 0; first < n; first += ctx.phase.microbatch)
    {
        auto const last = std::min(n, first + ctx.phase.microbatch);
        TokenLayout layout;
        auto const out = run_chunk(first, last, nullptr, layout);
        std::size_t seg = 0;
        for (auto i = first; i < last; ++i)
        {
            for (auto const& s : slots[static_cast<std::size_t>(i)])
            {
                auto const& sg = layout.segments[seg++];
                std::vector<std::int64_t> r(static_cast<std::size_t>(sg.length));
                for (std::int64_t k = 0; k < sg.length; ++k)
                {
                    r[static_cast<std::size_t>(k)] = sg.begin + k;
                }
                auto const e = pool_mean(out.hidden_states, r);
                std::copy(e.begin(), e.end(), slot_row(q, pos, negs, s));
            }
        }
    }

    auto const nce = info_nce(q, pos, negs, ctx.temperature, true);
    if (!wants_grads(ctx))
    {
        return nce.loss;
    }

    ctx.rng.set_state(rng_start);
    auto dq = nce.d_queries;
    auto dp = nce.d_positives;
    auto dn = nce.d_negatives;
    for (std::int64_t first = 0; first < n; first += ctx.phase.microbatch)
    {
        auto const last = std::min(n, first + ctx.phase.microbatch);
        TokenLayout layout;
        ForwardCache<float> cache;
        auto const out = run_chunk(first, last, &cache, layout);
        Matrix<float> d_hidden(out.hidden_states.rows, hidden);
        std::size_t seg = 0;
        for (auto i = first; i < last; ++i)
        {
            for (auto const& s : slots[static_cast<std::size_t>(i)])
            {
                auto const& sg = layout.segments[seg++];
                float const inv = 1.0F / static_cast<float>(sg.length);
                float const* g = slot_row(dq, dp, dn, s);
                for (std::int64_t k = 0; k < sg.length; ++k)
                {
                    axpy(inv, g, d_hidden.row(sg.begin + k), hidden);
                }
            }
        }
        backward(ctx.params, ctx.arch, cache, opts, d_hidden, ctx.grads, ctx.adapter_grads);
    }
    return nce.loss;
}

double objective_step(StepContext const& ctx, Objective objective, std::vector<TrainExample const*> const& batch)
{
    switch (objective)
    {
    case Objective::kMlm: return masked_lm_step(ctx, batch, false);
    case Objective::kMntp: return masked_lm_step(ctx, batch, true);
    case Objective::kSpanQa: return span_step(ctx, batch);
    case Objective::kEmbedding: return embedding_step(ctx, batch);
    }
    return 0.0;
}

void emit_checkpoint(TrainResult& result, TrainState const& state, TrainOptions const& options)
{
    auto c = to_checkpoint(state);
    if (!options.out_dir.empty())
    {
        save_container(options.out_dir + "/checkpoint-" + std::to_string(state.step) + ".mgb", c);
    }
    if (options.keep_checkpoints)
    {
        result.checkpoints.push_back(std::move(c));
    }
}

} // namespace

std::uint64_t TrainExample::token_count() const
{
    std::uint64_t n = 0;
    for (auto const& p : parts)
    {
        n += p.size();
    }
    return n;
}

Dataset sequences_dataset(std::vector<std::vector<TokenId>> const& sequences)
{
    Dataset d;
    d.reserve(sequences.size());
    for (std::size_t i = 0; i < sequences.size(); ++i)
    {
        TrainExample ex;
        ex.id = i;
        ex.parts.push_back(sequences[i]);
        d.push_back(std::move(ex));
    }
    return d;
}

std::uint64_t dataset_digest(Dataset const& data)
{
    std::uint64_t h = kFnvOffset;
    fnv_value(h, static_cast<std::uint64_t>(data.size()));
    for (auto const& ex : data)
    {
        fnv_value(h, ex.id);
        fnv_value(h, static_cast<std::uint64_t>(ex.parts.size()));
        for (auto const& p : ex.parts)
        {
            fnv_value(h, static_cast<std::uint64_t>(p.size()));
            for (auto const id : p)
            {
                fnv_value(h, static_cast<std::uint32_t>(id));
            }
        }
        fnv_value(h, static_cast<std::uint64_t>(ex.span_start));
        fnv_value(h, static_cast<std::uint64_t>(ex.span_end));
        fnv_value(h, static_cast<std::uint64_t>(ex.context_begin));
    }
    return h;
}

DataOrder::DataOrder(std::size_t n_examples, std::int64_t batch, std::uint64_t seed, std::int64_t epochs,
    std::int64_t epoch, std::int64_t cursor)
    : mN(n_examples)
    , mBatch(batch)
    , mSeed(seed)
    , mEpochs(epochs)
    , mEpoch(epoch)
    , mCursor(cursor)
{
    if (batch <= 0)
    {
        throw ArgumentError("batch size must be positive");
    }
    load_epoch();
}

void DataOrder::load_epoch()
{
    mPerm.resize(mN);
    for (std::size_t i = 0; i < mN; ++i)
    {
        mPerm[i] = i;
    }
    Rng rng(derive_seed(mSeed, 0x0DA7A0000ULL + static_cast<std::uint64_t>(mEpoch)));
    rng.shuffle(mPerm);
}

std::int64_t DataOrder::dropped_per_epoch() const
{
    return static_cast<std::int64_t>(mN) % mBatch;
}

std::optional<std::vector<std::size_t>> DataOrder::next()
{
    while (mEpoch < mEpochs)
    {
        if (mCursor + mBatch <= static_cast<std::int64_t>(mN))
        {
            std::vector<std::size_t> out(mPerm.begin() + mCursor, mPerm.begin() + mCursor + mBatch);
            mCursor += mBatch;
            return out;
        }
        ++mEpoch;
        mCursor = 0;
        load_epoch();
    }
    return std::nullopt;
}

void ProvenanceLog::append(ProvenanceRecord record)
{
    if (!mRecords.empty())
    {
        auto const& last = mRecords.back();
        if (record.token_count < last.token_count || record.step <= last.step)
        {
            throw ProvenanceError("provenance records must advance monotonically");
        }
    }
    mRecords.push_back(std::move(record));
}

void ProvenanceLog::truncate(std::size_t n)
{
    if (n < mRecords.size())
    {
        mRecords.resize(n);
    }
}

std::string ProvenanceLog::encode() const
{
    std::string out;
    for (auto const& r : mRecords)
    {
        std::string payload;
        put_le<std::int64_t>(payload, r.step);
        put_le<std::uint64_t>(payload, r.token_count);
        put_le<std::uint64_t>(payload, r.rng_digest);
        put_le<std::uint32_t>(payload, static_cast<std::uint32_t>(r.example_ids.size()));
        for (auto const id : r.example_ids)
        {
            put_le<std::uint64_t>(payload, id);
        }
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(payload.size()));
        out += payload;
    }
    return out;
}

ProvenanceLog ProvenanceLog::decode(std::string const& bytes)
{
    ProvenanceLog log;
    std::size_t pos = 0;
    while (pos < bytes.size())
    {
        auto const len = get_le<std::uint32_t>(bytes, pos);
        auto const end = pos + len;
        if (end > bytes.size())
        {
            throw DataError("truncated provenance record");
        }
        ProvenanceRecord r;
        r.step = get_le<std::int64_t>(bytes, pos);
        r.token_count = get_le<std::uint64_t>(bytes, pos);
        r.rng_digest = get_le<std::uint64_t>(bytes, pos);
        auto const n = get_le<std::uint32_t>(bytes, pos);
        for (std::uint32_t i = 0; i < n; ++i)
        {
            r.example_ids.push_back(get_le<std::uint64_t>(bytes, pos));
        }
        if (pos != end)
        {
            throw DataError("provenance record length mismatch");
        }
        log.append(std::move(r));
    }
    return log;
}

void ProvenanceLog::save(std::string const& path) const
{
    write_file_bytes(path, encode());
}

ProvenanceLog ProvenanceLog::load(std::string const& path)
{
    return decode(read_file_bytes(path));
}

std::string to_string(Objective o)
{
    switch (o)
    {
    case Objective::kMlm: return "mlm";
    case Objective::kMntp: return "mntp";
    case Objective::kSpanQa: return "span_qa";
    case Objective::kEmbedding: return "embedding";
    }
    return "?";
}

Objective objective_from_string(std::string const& name)
{
    for (auto const o : {Objective::kMlm, Objective::kMntp, Objective::kSpanQa, Objective::kEmbedding})
    {
        if (to_string(o) == name)
        {
            return o;
        }
    }
    throw ConfigError("unknown objective '" + name + "'");
}

ArchConfig effective_arch(ArchConfig const& arch, TrainPhaseConfig const& phase)
{
    auto out = arch;
    if (phase.rope_theta_override)
    {
        out.rope_theta_global = *phase.rope_theta_override;
    }
    return out;
}

TrainState make_state(ArchConfig const& arch, ModelParams<float> params, TrainPhaseConfig const& phase,
    Objective objective, SpecialIds const& special, std::optional<AdapterSet> adapters)
{
    require_valid(arch);
    auto const problems = validate(phase);
    if (!problems.empty())
    {
        std::string msg = "invalid training phase:";
        for (auto const& p : problems)
        {
            msg += " " + p + ";";
        }
        throw ConfigError(msg);
    }
    check_shapes(params, arch);
    TrainState s;
    s.arch = arch;
    s.phase = phase;
    s.objective = objective;
    s.special = special;
    s.params = std::move(params);
    s.adapters = std::move(adapters);
    auto tensors = trainable(s);
    s.opt = make_opt_state<float>(tensors, phase);
    s.rng_state = Rng(derive_seed(phase.seed, 0x7EA1ULL)).state();
    return s;
}

TensorContainer to_checkpoint(TrainState const& state)
{
    auto const& s = state;
    TensorContainer c;
    put_model(c, s.arch, s.params, "model.");
    write_phase(s.phase, c.metadata, "phase.");
    auto& m = c.metadata;
    m.set("train.phase_tag", s.phase_tag);
    m.set("train.objective", to_string(s.objective));
    m.set("train.special", std::to_string(s.special.pad) + "," + std::to_string(s.special.unk) + ","
            + std::to_string(s.special.cls) + "," + std::to_string(s.special.sep) + ","
            + std::to_string(s.special.mask));
    m.set("train.temperature", format_real(s.temperature));
    m.set("train.step", std::to_string(s.step));
    m.set("train.tokens_seen", std::to_string(s.tokens_seen));
    m.set("train.epoch", std::to_string(s.epoch));
    m.set("train.cursor", std::to_string(s.cursor));
    m.set("train.rng_state", s.rng_state);
    m.set("train.dataset_digest", std::to_string(s.dataset_digest));
    m.set("train.log_records", std::to_string(s.log_records));
    m.set("train.last_batch_ids", join_ids(s.last_batch_ids));
    m.set("train.opt_t", std::to_string(s.opt.t));
    m.set("train.has_adapters", s.adapters ? "true" : "false");
    if (s.adapters)
    {
        auto const ac = adapter_container(s.arch, *s.adapters);
        for (auto const& [k, v] : ac.metadata.entries())
        {
            if (k.rfind("adapter.", 0) == 0)
            {
                m.set(k, v);
            }
        }
        for (auto const& t : ac.tensors)
        {
            c.tensors.push_back(t);
        }
    }
    auto const names = trainable_names(s);
    for (std::size_t i = 0; i < names.size(); ++i)
    {
        c.tensors.emplace_back("opt.m." + names[i], s.opt.m[i]);
        c.tensors.emplace_back("opt.v." + names[i], s.opt.v[i]);
    }
    return c;
}

TrainState from_checkpoint(TensorContainer const& c)
{
    TrainState s;
    s.arch = get_arch(c);
    s.params = get_model(c, s.arch, "model.");
    KeyValueFile meta;
    for (auto const& [k, v] : c.metadata.entries())
    {
        if (k.rfind("phase.", 0) == 0)
        {
            meta.set(k, v);
        }
    }
    s.phase = read_phase(meta, "phase.");
    s.phase_tag = c.meta("train.phase_tag");
    s.objective = objective_from_string(c.meta("train.objective"));
    auto const special = split_ids(c.meta("train.special"));
    if (special.size() != 5)
    {
        throw DataError("checkpoint special ids malformed");
    }
    s.special = SpecialIds{static_cast<TokenId>(special[0]), static_cast<TokenId>(special[1]),
        static_cast<TokenId>(special[2]), static_cast<TokenId>(special[3]), static_cast<TokenId>(special[4])};
    s.temperature = parse_real(c.meta("train.temperature"));
    s.step = parse_int(c.meta("train.step"));
    s.tokens_seen = static_cast<std::uint64_t>(parse_int(c.meta("train.tokens_seen")));
    s.epoch = parse_int(c.meta("train.epoch"));
    s.cursor = parse_int(c.meta("train.cursor"));
    s.rng_state = c.meta("train.rng_state");
    s.dataset_digest = std::stoull(c.meta("train.dataset_digest"));
    s.log_records = static_cast<std::uint64_t>(parse_int(c.meta("train.log_records")));
    s.last_batch_ids = split_ids(c.meta("train.last_batch_ids"));
    if (c.meta("train.has_adapters") == "true")
    {
        s.adapters = adapter_from_container(c);
    }
    auto const names = trainable_names(s);
    s.opt = make_opt_state<float>(trainable(s), s.phase);
    s.opt.t = parse_int(c.meta("train.opt_t"));
    for (std::size_t i = 0; i < names.size(); ++i)
    {
        s.opt.m[i] = c.at("opt.m." + names[i]);
        s.opt.v[i] = c.at("opt.v." + names[i]);
    }
    return s;
}

std::string format_metrics(StepMetrics const& m)
{
    return "step=" + std::to_string(m.step) + " tokens=" + std::to_string(m.tokens) + " loss=" + format_real(m.loss)
        + " lr=" + format_real(m.lr);
}

TrainResult run_training(
    TrainState state, Dataset const& data, TrainOptions const& options, ProvenanceLog log, bool emit_initial)
{
    auto const arch = effective_arch(state.arch, state.phase);
    auto const& phase = state.phase;
    validate_data(data, state.arch, phase, state.objective);
    if (state.objective == Objective::kEmbedding && phase.batch_sequences < 2)
    {
        throw ArgumentError("embedding training needs a batch of at least 2");
    }
    if (!options.out_dir.empty())
    {
        std::filesystem::create_directories(options.out_dir);
    }
    state.dataset_digest = dataset_digest(data);

    TrainResult result;
    std::int64_t last_emitted = -1;
    if (emit_initial)
    {
        emit_checkpoint(result, state, options);
        last_emitted = state.step;
    }

    DataOrder order(data.size(), phase.batch_sequences, phase.seed, phase.epochs, state.epoch, state.cursor);
    std::int64_t const dropped = order.dropped_per_epoch();
    std::int64_t reported_epoch = -1;
    std::ofstream metrics_file;
    if (!options.out_dir.empty())
    {
        metrics_file.open(options.out_dir + "/metrics.txt", state.step == 0 ? std::ios::trunc : std::ios::app);
    }

    while (true)
    {
        if (state.tokens_seen >= phase.token_budget)
        {
            break;
        }
        if (phase.max_steps > 0 && state.step >= phase.max_steps)
        {
            break;
        }
        auto const indices = order.next();
        if (!indices)
        {
            result.exhausted = true;
            if (options.log != nullptr)
            {
                *options.log << "dataset exhausted after " << state.step << " steps and " << state.tokens_seen
                             << " tokens; stopping early\n";
            }
            break;
        }
        if (dropped > 0 && options.log != nullptr && order.epoch() != reported_epoch)
        {
            reported_epoch = order.epoch();
            *options.log << "epoch " << reported_epoch << ": trailing partial batch of " << dropped
                         << " examples dropped\n";
        }

        std::vector<TrainExample const*> batch;
        ProvenanceRecord record;
        record.step = state.step + 1;
        record.rng_digest = fnv_string(state.rng_state);
        std::uint64_t tokens = 0;
        for (auto const i : *indices)
        {
            batch.push_back(&data[i]);
            record.example_ids.push_back(data[i].id);
            tokens += data[i].token_count();
        }

        Rng rng;
        rng.set_state(state.rng_state);
        auto const lr = lr_at(state.tokens_seen, phase);

        std::optional<ModelParams<float>> grads;
        std::optional<AdapterGrads<float>> agrads;
        std::optional<RuntimeAdapters<float>> runtime;
        if (state.adapters)
        {
            agrads = zero_adapter_grads(*state.adapters);
            runtime = runtime_adapters<float>(*state.adapters);
        }
        else
        {
            grads = zeros_like(state.params);
        }
        StepContext ctx{arch, phase, state.special, state.temperature, state.params, grads ? &*grads : nullptr,
            runtime ? &*runtime : nullptr, agrads ? &*agrads : nullptr, rng, Mode::kTrain};
        double const loss = objective_step(ctx, state.objective, batch);
        if (!std::isfinite(loss))
        {
            throw NumericError("non-finite loss at step " + std::to_string(record.step));
        }

        auto params = trainable(state);
        std::vector<Matrix<float> const*> grad_list;
        if (grads)
        {
            for (auto const& [name, t] : std::as_const(*grads).named())
            {
                grad_list.push_back(t);
            }
        }
        else
        {
            for (auto const& [key, pair] : agrads->pairs)
            {
                grad_list.push_back(&pair.a);
                grad_list.push_back(&pair.b);
            }
        }
        adamw_step<float>(params, grad_list, state.opt, lr, phase.clip_updates);

        auto const before = state.tokens_seen;
        state.step += 1;
        state.tokens_seen += tokens;
        state.epoch = order.epoch();
        state.cursor = order.cursor();
        state.rng_state = rng.state();
        record.token_count = state.tokens_seen;
        state.last_batch_ids = record.example_ids;
        log.append(std::move(record));
        state.log_records = log.size();

        StepMetrics m{state.step, state.tokens_seen, loss, lr};
        result.metrics.push_back(m);
        if (metrics_file)
        {
            metrics_file << format_metrics(m) << '\n';
        }
        if (options.on_step)
        {
            options.on_step(m);
        }
        auto const every = phase.checkpoint_every_tokens;
        if (every > 0 && before / every != state.tokens_seen / every)
        {
            emit_checkpoint(result, state, options);
            last_emitted = state.step;
        }
    }
    if (last_emitted != state.step)
    {
        emit_checkpoint(result, state, options);
    }
    if (!options.out_dir.empty())
    {
        log.save(options.out_dir + "/provenance.bin");
    }
    result.log = std::move(log);
    result.state = std::move(state);
    return result;
}

TrainResult train_mlm(ArchConfig const& arch, ModelParams<float> params, Dataset const& data,
    TrainPhaseConfig const& phase, SpecialIds const& special, TrainOptions const& options)
{
    return run_training(make_state(arch, std::move(params), phase, Objective::kMlm, special), data, options);
}

TrainResult resume(TensorContainer const& checkpoint, Dataset const& data, TrainOptions const& options,
    std::optional<TrainPhaseConfig> phase_override, ProvenanceLog prior)
{
    auto state = from_checkpoint(checkpoint);
    if (dataset_digest(data) != state.dataset_digest)
    {
        throw ProvenanceError("dataset does not match the checkpoint's provenance digest; resume refused");
    }
    if (phase_override)
    {
        auto a = *phase_override;
        a.token_budget = state.phase.token_budget;
        a.max_steps = state.phase.max_steps;
        if (!(a == state.phase))
        {
            throw ProvenanceError("resume may only change token_budget and max_steps");
        }
        state.phase.token_budget = phase_override->token_budget;
        state.phase.max_steps = phase_override->max_steps;
    }
    if (prior.size() > 0)
    {
        if (prior.size() < state.log_records)
        {
            throw ProvenanceError("provenance log is shorter than the checkpoint offset");
        }
        prior.truncate(state.log_records);
        if (state.log_records > 0 && prior.records().back().example_ids != state.last_batch_ids)
        {
            throw ProvenanceError("provenance log disagrees with the checkpoint");
        }
    }
    // Replaying the order up to the checkpoint must land on the recorded batch.
    if (state.step > 0)
    {
        DataOrder replay(data.size(), state.phase.batch_sequences, state.phase.seed, state.phase.epochs);
        std::optional<std::vector<std::size_t>> last;
        for (std::int64_t i = 0; i < state.step; ++i)
        {
            last = replay.next();
            if (!last)
            {
                throw ProvenanceError("dataset too small to replay the checkpoint's data order");
            }
        }
        std::vector<std::uint64_t> ids;
        for (auto const i : *last)
        {
            ids.push_back(data[i].id);
        }
        if (ids != state.last_batch_ids || replay.epoch() != state.epoch || replay.cursor() != state.cursor)
        {
            throw ProvenanceError("replayed data order disagrees with the checkpoint");
        }
    }
    return run_training(std::move(state), data, options, std::move(prior), false);
}

TrainResult train_span_qa(ArchConfig const& arch, ModelParams<float> params, Dataset const& data,
    TrainPhaseConfig const& phase, SpecialIds const& special, TrainOptions const& options)
{
    if (data.empty())
    {
        throw ArgumentError("span QA training set is empty");
    }
    auto state = make_state(arch, std::move(params), phase, Objective::kSpanQa, special);
    state.phase_tag = "span_qa";
    return run_training(std::move(state), data, options);
}

TrainResult train_embedder(ArchConfig const& arch, ModelParams<float> params, Dataset const& data,
    TrainPhaseConfig const& phase, SpecialIds const& special, double temperature, TrainOptions const& options)
{
    if (phase.batch_sequences < 2)
    {
        throw ArgumentError("embedding training needs a batch of at least 2");
    }
    auto state = make_state(arch, std::move(params), phase, Objective::kEmbedding, special);
    state.temperature = temperature;
    state.phase_tag = "embedding";
    return run_training(std::move(state), data, options);
}

TrainResult train_mntp(ArchConfig const& arch, ModelParams<float> params, AdapterSet adapters, Dataset const& data,
    TrainPhaseConfig const& phase, SpecialIds const& special, TrainOptions const& options)
{
    if (arch.attention_mode != AttentionMode::kBidirectional)
    {
        throw ArgumentError("MNTP training needs a bidirectional model");
    }
    auto tag = adapters.phase;
    auto state = make_state(arch, std::move(params), phase, Objective::kMntp, special, std::move(adapters));
    state.phase_tag = tag;
    return run_training(std::move(state), data, options);
}

double evaluate_loss(ArchConfig const& arch, ModelParams<float> const& params, Dataset const& data,
    Objective objective, TrainPhaseConfig const& phase, SpecialIds const& special, std::uint64_t seed,
    AdapterSet const* adapters)
{
    if (data.empty())
    {
        throw ArgumentError("evaluation set is empty");
    }
    auto const eff = effective_arch(arch, phase);
    validate_data(data, arch, phase, objective);
    Rng rng(seed);
    std::optional<RuntimeAdapters<float>> runtime;
    if (adapters != nullptr)
    {
        runtime = runtime_adapters<float>(*adapters);
    }
    StepContext ctx{eff, phase, special, 0.05, params, nullptr, runtime ? &*runtime : nullptr, nullptr, rng,
        Mode::kEval};
    std::vector<TrainExample const*> batch;
    for (auto const& ex : data)
    {
        batch.push_back(&ex);
    }
    return objective_step(ctx, objective, batch);
}

std::vector<float> embed(ArchConfig const& arch, ModelParams<float> const& params, std::vector<TokenId> const& tokens)
{
    auto const layout = layout_of(pack({tokens}));
    auto const out = forward(params, arch, layout);
    return pool_mean(out.hidden_states, layout.valid_rows);
}

double ranking_accuracy(ArchConfig const& arch, ModelParams<float> const& params, Dataset const& data)
{
    if (data.empty())
    {
        throw ArgumentError("ranking evaluation set is empty");
    }
    auto cosine = [](std::vector<float> const& a, std::vector<float> const& b)
    {
        double ab = 0.0;
        double aa = 0.0;
        double bb = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i)
        {
            ab += static_cast<double>(a[i]) * b[i];
            aa += static_cast<double>(a[i]) * a[i];
            bb += static_cast<double>(b[i]) * b[i];
        }
        return ab / std::sqrt(aa * bb);
    };
    std::int64_t hits = 0;
    for (auto const& ex : data)
    {
        if (ex.parts.size() < 3)
        {
            throw DataError("ranking needs at least one negative per example");
        }
        auto const q = embed(arch, params, ex.parts[0]);
        double const pos = cosine(q, embed(arch, params, ex.parts[1]));
        bool ok = true;
        for (std::size_t p = 2; p < ex.parts.size() && ok; ++p)
        {
            ok = pos > cosine(q, embed(arch, params, ex.parts[p]));
        }
        hits += ok ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(data.size());
}

std::pair<std::int64_t, std::int64_t> predict_span(ArchConfig const& arch, ModelParams<float> const& params,
    std::vector<TokenId> const& tokens, std::int64_t context_begin, std::int64_t max_answer_len)
{
    auto const layout = layout_of(pack({tokens}));
    auto const out = forward(params, arch, layout);
    auto const scores = span_logits(out.hidden_states, params, context_begin, static_cast<std::int64_t>(tokens.size()));
    auto const [s, e] = best_span(scores.start, scores.end, max_answer_len);
    return {s + context_begin, e + context_begin};
}

} // namespace mgbert
