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

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mgbert
{

enum class BlockStyle
{
    kPreNorm,
    kPostNorm
};

enum class NormKind
{
    kLayerNorm,
    kRmsNorm
};

enum class Activation
{
    kGelu,
    kSilu
};

enum class AttentionMode
{
    kBidirectional,
    kCausal
};

enum class Schedule
{
    kTrapezoidal,
    kOneSqrtDecay,
    kConstant
};

enum class MaskPolicy
{
    kAllMask,
    kBert801010
};

/// Architectural description of an encoder or decoder.
struct ArchConfig
{
    std::int64_t vocab_size = 0;
    std::int64_t n_layers = 0;
    std::int64_t hidden = 0;
    std::int64_t n_heads = 0;
    std::int64_t head_dim = 0;
    std::int64_t intermediate = 0;
    BlockStyle block_style = BlockStyle::kPreNorm;
    NormKind norm = NormKind::kLayerNorm;
    double norm_eps = 1e-5;
    Activation activation = Activation::kGelu;
    // 0 means every layer is global.
    std::int64_t global_every = 0;
    // Total span in tokens; a local layer sees +-local_window/2.
    std::int64_t local_window = 0;
    double rope_theta_global = 10000.0;
    double rope_theta_local = 10000.0;
    std::int64_t max_seq_len = 0;
    AttentionMode attention_mode = AttentionMode::kBidirectional;
    bool tie_mlm_head = true;
    bool linear_bias = false;

    /// Layer i is global iff global_every == 0 or i % global_every == 0.
    bool is_global_layer(std::int64_t layer) const;
    double rope_theta_for_layer(std::int64_t layer) const;

    bool operator==(ArchConfig const&) const = default;
};

/// Hyperparameters of one training phase.
struct TrainPhaseConfig
{
    std::uint64_t token_budget = 0;
    // Sequences per optimizer step.
    std::int64_t batch_sequences = 8;
    std::int64_t microbatch = 8;
    double peak_lr = 1e-3;
    Schedule schedule = Schedule::kConstant;
    std::uint64_t warmup_tokens = 0;
    std::uint64_t decay_tokens = 0;
    // Batch-size warmup length; recorded for provenance, not applied at desk scale.
    std::uint64_t batch_warmup_tokens = 0;
    double weight_decay = 1e-5;
    double beta1 = 0.90;
    double beta2 = 0.98;
    double eps = 1e-6;
    double mask_rate = 0.30;
    MaskPolicy mask_policy = MaskPolicy::kAllMask;
    std::int64_t max_seq_len = 1024;
    std::optional<double> rope_theta_override;
    double attn_dropout = 0.1;
    std::uint64_t seed = 0;
    // Passes over the dataset before it counts as exhausted.
    std::int64_t epochs = 1;
    // 0 = no step cap.
    std::int64_t max_steps = 0;
    // 0 = only initial and final checkpoints.
    std::uint64_t checkpoint_every_tokens = 0;
    bool clip_updates = true;

    bool operator==(TrainPhaseConfig const&) const = default;
};

/// Flat `key = value` text with `#` comments.
///
/// Values are kept as strings; typed accessors consume keys so that
/// `reject_unconsumed` can flag anything the caller did not understand.
class KeyValueFile
{
public:
    KeyValueFile() = default;

    static KeyValueFile parse(std::string_view text);
    static KeyValueFile load(std::string const& path);

    void set(std::string key, std::string value);
    bool contains(std::string const& key) const;
    std::optional<std::string> take(std::string const& key);

    std::string take_string(std::string const& key, std::string fallback);
    std::int64_t take_int(std::string const& key, std::int64_t fallback);
    std::uint64_t take_uint(std::string const& key, std::uint64_t fallback);
    double take_real(std::string const& key, double fallback);
    bool take_bool(std::string const& key, bool fallback);

    /// Throws ConfigError listing every key nobody took.
    void reject_unconsumed() const;

    std::string str() const;
    std::vector<std::pair<std::string, std::string>> const& entries() const
    {
        return mEntries;
    }

private:
    std::vector<std::pair<std::string, std::string>> mEntries;
    std::set<std::string> mConsumed;
};

std::string format_real(double value);
double parse_real(std::string const& text);
std::int64_t parse_int(std::string const& text);

std::string to_string(BlockStyle v);
std::string to_string(NormKind v);
std::string to_string(Activation v);
std::string to_string(AttentionMode v);
std::string to_string(Schedule v);
std::string to_string(MaskPolicy v);

ArchConfig preset(std::string_view name);
std::vector<std::string> preset_names();

/// Empty iff every invariant holds.
std::vector<std::string> validate(ArchConfig const& cfg);
std::vector<std::string> validate(TrainPhaseConfig const& cfg);

/// Throws ConfigError with all violations joined.
void require_valid(ArchConfig const& cfg);

void write_arch(ArchConfig const& cfg, KeyValueFile& out, std::string const& prefix = "");
ArchConfig read_arch(KeyValueFile& in, std::string const& prefix = "", ArchConfig base = {});
void write_phase(TrainPhaseConfig const& cfg, KeyValueFile& out, std::string const& prefix = "");
TrainPhaseConfig read_phase(KeyValueFile& in, std::string const& prefix = "", TrainPhaseConfig base = {});

std::string arch_to_text(ArchConfig const& cfg);
ArchConfig arch_from_text(std::string_view text);

/// Table-5 phases: pretrain_134m, ext1_134m, ext2_134m, pretrain_1b, ext1_1b, ext2_1b.
TrainPhaseConfig phase_preset(std::string_view name);

} // namespace mgbert
