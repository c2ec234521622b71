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

#include "mgbert/adapter.hpp"
#include "mgbert/checkpoint.hpp"
#include "mgbert/config.hpp"
#include "mgbert/model.hpp"
#include "mgbert/optimizer.hpp"
#include "mgbert/tokenizer.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace mgbert
{

/// One training example. MLM, MNTP and span QA use parts[0]; the embedder
/// reads parts as (query, positive, negatives...).
struct TrainExample
{
    std::uint64_t id = 0;
    std::vector<std::vector<TokenId>> parts;
    // Span QA only: gold token span in parts[0] coordinates, and the first
    // row a span may start at (rows before it hold the question).
    std::int64_t span_start = -1;
    std::int64_t span_end = -1;
    std::int64_t context_begin = 0;

    std::uint64_t token_count() const;
    bool operator==(TrainExample const&) const = default;
};

using Dataset = std::vector<TrainExample>;

/// Single-part dataset with ids 0..n-1.
Dataset sequences_dataset(std::vector<std::vector<TokenId>> const& sequences);

/// FNV-1a over ids, tokens and spans, in order.
std::uint64_t dataset_digest(Dataset const& data);

/// Batch order: each epoch is a seeded permutation cut into consecutive
/// batches; a trailing partial batch is dropped.
class DataOrder
{
public:
    DataOrder(std::size_t n_examples, std::int64_t batch, std::uint64_t seed, std::int64_t epochs,
        std::int64_t epoch = 0, std::int64_t cursor = 0);

    /// Indices of the next batch, or nothing once every epoch is used up.
    std::optional<std::vector<std::size_t>> next();

    std::int64_t epoch() const
    {
        return mEpoch;
    }
    std::int64_t cursor() const
    {
        return mCursor;
    }
    /// Examples skipped at the end of each epoch.
    std::int64_t dropped_per_epoch() const;

private:
    void load_epoch();

    std::size_t mN;
    std::int64_t mBatch;
    std::uint64_t mSeed;
    std::int64_t mEpochs;
    std::int64_t mEpoch;
    std::int64_t mCursor;
    std::vector<std::size_t> mPerm;
};

struct ProvenanceRecord
{
    std::int64_t step = 0;
    // Cumulative tokens after this step.
    std::uint64_t token_count = 0;
    std::uint64_t rng_digest = 0;
    std::vector<std::uint64_t> example_ids;

    bool operator==(ProvenanceRecord const&) const = default;
};

/// Append-only record of what every step consumed.
///
/// File format: per record a u32 payload length followed by the payload
/// (i64 step, u64 token_count, u64 rng_digest, u32 n, n x u64 ids), little-endian.
class ProvenanceLog
{
public:
    void append(ProvenanceRecord record);
    std::vector<ProvenanceRecord> const& records() const
    {
        return mRecords;
    }
    std::size_t size() const
    {
        return mRecords.size();
    }
    void truncate(std::size_t n);

    std::string encode() const;
    static ProvenanceLog decode(std::string const& bytes);
    void save(std::string const& path) const;
    static ProvenanceLog load(std::string const& path);

    bool operator==(ProvenanceLog const&) const = default;

private:
    std::vector<ProvenanceRecord> mRecords;
};

enum class Objective
{
    kMlm,
    kMntp,
    kSpanQa,
    kEmbedding
};

std::string to_string(Objective o);
Objective objective_from_string(std::string const& name);

/// Everything a run needs besides the dataset.
struct TrainState
{
    ArchConfig arch;
    TrainPhaseConfig phase;
    std::string phase_tag = "pretrain";
    Objective objective = Objective::kMlm;
    SpecialIds special;
    double temperature = 0.05;
    ModelParams<float> params;
    // When present only these are trained and the base stays frozen.
    std::optional<AdapterSet> adapters;
    OptState<float> opt;
    std::int64_t step = 0;
    std::uint64_t tokens_seen = 0;
    std::int64_t epoch = 0;
    std::int64_t cursor = 0;
    std::string rng_state;
    std::uint64_t dataset_digest = 0;
    std::uint64_t log_records = 0;
    std::vector<std::uint64_t> last_batch_ids;
};

TrainState make_state(ArchConfig const& arch, ModelParams<float> params, TrainPhaseConfig const& phase,
    Objective objective, SpecialIds const& special, std::optional<AdapterSet> adapters = std::nullopt);

TensorContainer to_checkpoint(TrainState const& state);
TrainState from_checkpoint(TensorContainer const& c);

/// Architecture the forward pass runs with: the phase's RoPE override applied.
ArchConfig effective_arch(ArchConfig const& arch, TrainPhaseConfig const& phase);

struct StepMetrics
{
    std::int64_t step = 0;
    std::uint64_t tokens = 0;
    double loss = 0.0;
    double lr = 0.0;
};

std::string format_metrics(StepMetrics const& m);

struct TrainOptions
{
    // When set: checkpoint-<step>.mgb files, provenance.bin and metrics.txt.
    std::string out_dir;
    bool keep_checkpoints = true;
    std::ostream* log = nullptr;
    std::function<void(StepMetrics const&)> on_step;
};

struct TrainResult
{
    std::vector<TensorContainer> checkpoints;
    ProvenanceLog log;
    std::vector<StepMetrics> metrics;
    TrainState state;
    bool exhausted = false;
};

/// Generic loop: runs until the token budget, max_steps or the data runs out.
TrainResult run_training(
    TrainState state, Dataset const& data, TrainOptions const& options = {}, ProvenanceLog log = {}, bool emit_initial = true);

TrainResult train_mlm(ArchConfig const& arch, ModelParams<float> params, Dataset const& data,
    TrainPhaseConfig const& phase, SpecialIds const& special, TrainOptions const& options = {});

/// Continues a checkpointed run. `prior` is the log written so far; it is cut
/// to the checkpoint's offset. Only stopping fields (token_budget, max_steps)
/// may differ in `phase_override`. Throws ProvenanceError on dataset mismatch.
TrainResult resume(TensorContainer const& checkpoint, Dataset const& data, TrainOptions const& options = {},
    std::optional<TrainPhaseConfig> phase_override = std::nullopt, ProvenanceLog prior = {});

TrainResult train_span_qa(ArchConfig const& arch, ModelParams<float> params, Dataset const& data,
    TrainPhaseConfig const& phase, SpecialIds const& special, TrainOptions const& options = {});

TrainResult train_embedder(ArchConfig const& arch, ModelParams<float> params, Dataset const& data,
    TrainPhaseConfig const& phase, SpecialIds const& special, double temperature = 0.05,
    TrainOptions const& options = {});

/// Base frozen; only `adapters` learn. Model must be bidirectional.
TrainResult train_mntp(ArchConfig const& arch, ModelParams<float> params, AdapterSet adapters, Dataset const& data,
    TrainPhaseConfig const& phase, SpecialIds const& special, TrainOptions const& options = {});

/// Mean loss of `objective` over `data` in eval mode; masking drawn from `seed`.
double evaluate_loss(ArchConfig const& arch, ModelParams<float> const& params, Dataset const& data,
    Objective objective, TrainPhaseConfig const& phase, SpecialIds const& special, std::uint64_t seed,
    AdapterSet const* adapters = nullptr);

/// Mean-pooled eval-mode embedding of one sequence.
std::vector<float> embed(ArchConfig const& arch, ModelParams<float> const& params, std::vector<TokenId> const& tokens);

/// Fraction of examples whose positive is closer (cosine) to the query than every negative.
double ranking_accuracy(ArchConfig const& arch, ModelParams<float> const& params, Dataset const& data);

/// Predicted (start, end) in parts[0] coordinates.
std::pair<std::int64_t, std::int64_t> predict_span(ArchConfig const& arch, ModelParams<float> const& params,
    std::vector<TokenId> const& tokens, std::int64_t context_begin, std::int64_t max_answer_len);

} // namespace mgbert
