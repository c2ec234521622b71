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

#include "mgbert/config.hpp"
#include "mgbert/model.hpp"
#include "mgbert/tokenizer.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace mgbert
{

enum class LengthKind
{
    kFixed,
    kNormal
};

struct SyntheticSpec
{
    LengthKind kind = LengthKind::kFixed;
    std::int64_t length = 512;
    double mean = 0.0;
    // Standard deviation, or variance when spread_is_variance is set.
    double spread = 0.0;
    bool spread_is_variance = false;
    std::int64_t n_docs = 8192;
    std::uint64_t seed = 0;

    /// "fixed:512" or "normal:4096:1024".
    std::string label() const;
    double stddev() const;
};

/// Parses "fixed:L", "normal:MEAN:SPREAD" or "normal:MEAN:SPREAD:variance".
SyntheticSpec parse_spec(std::string const& text);

/// n_docs documents of uniformly random non-special ids. Normal lengths are
/// rounded and clamped to [1, max_len]. Throws ArgumentError when a fixed
/// length (or a normal mean) exceeds max_len.
std::vector<std::vector<TokenId>> gen_synthetic(
    SyntheticSpec const& spec, std::int64_t vocab_size, std::int64_t max_len, SpecialIds const& special);

enum class ExecPath
{
    kPadded,
    kPacked
};

std::string to_string(ExecPath p);

struct ThroughputReport
{
    std::string model_id;
    std::string spec_label;
    std::string spread_reading;
    ExecPath path = ExecPath::kPacked;
    std::int64_t reps = 0;
    std::int64_t batch_docs = 0;
    std::uint64_t tokens = 0;
    // Rows the forward pass computes, padding included.
    std::uint64_t positions = 0;
    double mean_s_per_mtok = 0.0;
    double std_s_per_mtok = 0.0;
    std::vector<double> samples;
    std::string note;
};

/// Positions each path computes when documents are batched `batch_docs` at a time.
std::uint64_t count_positions(std::span<std::vector<TokenId> const> docs, std::int64_t batch_docs, ExecPath path);

/// Max |padded - packed| over real rows of the first batch.
double probe_equivalence(ModelParams<float> const& params, ArchConfig const& cfg,
    std::span<std::vector<TokenId> const> docs, std::int64_t batch_docs, TokenId pad_id);

/// Wall-clock over the whole dataset per repetition after one discarded warm-up.
/// reps = 0 gives accounting only. Runs the equivalence gate first and throws
/// NumericError above 1e-5.
ThroughputReport measure(ModelParams<float> const& params, ArchConfig const& cfg,
    std::span<std::vector<TokenId> const> docs, SyntheticSpec const& spec, ExecPath path, std::int64_t batch_docs,
    std::int64_t reps, TokenId pad_id, std::string const& model_id = "model");

/// Sample standard deviation (n - 1); 0 for fewer than two samples.
double sample_stddev(std::span<double const> xs);

std::string report_line(ThroughputReport const& r);

/// One row per (model, path), one column per dataset label.
std::string report_table(std::span<ThroughputReport const> reports);

} // namespace mgbert
