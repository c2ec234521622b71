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

#include "mgbert/config.hpp"

#include "mgbert/error.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <fstream>
#include <sstream>

namespace mgbert
{

namespace
{

std::string trim(std::string_view s)
{
    auto const first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos)
    {
        return {};
    }
    auto const last = s.find_last_not_of(" \t\r");
    return std::string(s.substr(first, last - first + 1));
}

template <typename Enum, std::size_t N>
Enum parse_enum(std::string const& key, std::string const& text, std::array<std::pair<char const*, Enum>, N> const& table)
{
    for (auto const& [name, value] : table)
    {
        if (text == name)
        {
            return value;
        }
    }
    throw ConfigError("invalid value '" + text + "' for key '" + key + "'");
}

constexpr std::array<std::pair<char const*, BlockStyle>, 2> kBlockStyles{{
    {"pre_norm", BlockStyle::kPreNorm},
    {"post_norm", BlockStyle::kPostNorm},
}};
constexpr std::array<std::pair<char const*, NormKind>, 2> kNorms{{
    {"layer_norm", NormKind::kLayerNorm},
    {"rms_norm", NormKind::kRmsNorm},
}};
constexpr std::array<std::pair<char const*, Activation>, 2> kActivations{{
    {"gelu", Activation::kGelu},
    {"silu", Activation::kSilu},
}};
constexpr std::array<std::pair<char const*, AttentionMode>, 2> kModes{{
    {"bidirectional", AttentionMode::kBidirectional},
    {"causal", AttentionMode::kCausal},
}};
constexpr std::array<std::pair<char const*, Schedule>, 3> kSchedules{{
    {"trapezoidal", Schedule::kTrapezoidal},
    {"one_sqrt_decay", Schedule::kOneSqrtDecay},
    {"constant", Schedule::kConstant},
}};
constexpr std::array<std::pair<char const*, MaskPolicy>, 2> kPolicies{{
    {"all_mask", MaskPolicy::kAllMask},
    {"bert_80_10_10", MaskPolicy::kBert801010},
}};

template <typename Enum, std::size_t N>
std::string enum_name(Enum v, std::array<std::pair<char const*, Enum>, N> const& table)
{
    for (auto const& [name, value] : table)
    {
        if (value == v)
        {
            return name;
        }
    }
    return "?";
}

} // namespace

bool ArchConfig::is_global_layer(std::int64_t layer) const
{
    return global_every == 0 || layer % global_every == 0;
}

double ArchConfig::rope_theta_for_layer(std::int64_t layer) const
{
    return is_global_layer(layer) ? rope_theta_global : rope_theta_local;
}

std::string to_string(BlockStyle v)
{
    return enum_name(v, kBlockStyles);
}
std::string to_string(NormKind v)
{
    return enum_name(v, kNorms);
}
std::string to_string(Activation v)
{
    return enum_name(v, kActivations);
}
std::string to_string(AttentionMode v)
{
    return enum_name(v, kModes);
}
std::string to_string(Schedule v)
{
    return enum_name(v, kSchedules);
}
std::string to_string(MaskPolicy v)
{
    return enum_name(v, kPolicies);
}

std::string format_real(double value)
{
    std::array<char, 64> buf{};
    auto const [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
    if (ec != std::errc{})
    {
        throw ConfigError("cannot format real");
    }
    return std::string(buf.data(), end);
}

double parse_real(std::string const& text)
{
    double value = 0.0;
    auto const* first = text.data();
    auto const* last = text.data() + text.size();
    auto const [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc{} || ptr != last)
    {
        throw ConfigError("not a real number: '" + text + "'");
    }
    return value;
}

std::int64_t parse_int(std::string const& text)
{
    std::int64_t value = 0;
    auto const* first = text.data();
    auto const* last = text.data() + text.size();
    auto const [ptr, ec] = std::from_chars(first, last, value);
    if (ec == std::errc{} && ptr == last)
    {
        return value;
    }
    // Accept exact reals such as 1.27e12 for token counts.
    double const real = parse_real(text);
    auto const rounded = static_cast<std::int64_t>(real);
    if (static_cast<double>(rounded) != real)
    {
        throw ConfigError("not an integer: '" + text + "'");
    }
    return rounded;
}

KeyValueFile KeyValueFile::parse(std::string_view text)
{
    KeyValueFile kv;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size())
    {
        auto const nl = text.find('\n', pos);
        auto const line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line_no;

        auto const hash = line.find('#');
        auto const body = trim(line.substr(0, hash));
        if (body.empty())
        {
            continue;
        }
        auto const eq = body.find('=');
        if (eq == std::string::npos)
        {
            throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
        }
        auto key = trim(std::string_view(body).substr(0, eq));
        auto value = trim(std::string_view(body).substr(eq + 1));
        if (key.empty())
        {
            throw ConfigError("line " + std::to_string(line_no) + ": empty key");
        }
        if (kv.contains(key))
        {
            throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
        }
        kv.mEntries.emplace_back(std::move(key), std::move(value));
    }
    return kv;
}

KeyValueFile KeyValueFile::load(std::string const& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
    {
        throw ConfigError("cannot open config file '" + path + "'");
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

void KeyValueFile::set(std::string key, std::string value)
{
    for (auto& [k, v] : mEntries)
    {
        if (k == key)
        {
            v = std::move(value);
            return;
        }
    }
    mEntries.emplace_back(std::move(key), std::move(value));
}

bool KeyValueFile::contains(std::string const& key) const
{
    return std::any_of(mEntries.begin(), mEntries.end(), [&](auto const& e) { return e.first == key; });
}

std::optional<std::string> KeyValueFile::take(std::string const& key)
{
    for (auto const& [k, v] : mEntries)
    {
        if (k == key)
        {
            mConsumed.insert(key);
            return v;
        }
    }
    return std::nullopt;
}

std::string KeyValueFile::take_string(std::string const& key, std::string fallback)
{
    auto v = take(key);
    return v ? *v : std::move(fallback);
}

std::int64_t KeyValueFile::take_int(std::string const& key, std::int64_t fallback)
{
    auto v = take(key);
    return v ? parse_int(*v) : fallback;
}

std::uint64_t KeyValueFile::take_uint(std::string const& key, std::uint64_t fallback)
{
    auto v = take(key);
    if (!v)
    {
        return fallback;
    }
    auto const parsed = parse_int(*v);
    if (parsed < 0)
    {
        throw ConfigError("negative value for '" + key + "'");
    }
    return static_cast<std::uint64_t>(parsed);
}

double KeyValueFile::take_real(std::string const& key, double fallback)
{
    auto v = take(key);
    return v ? parse_real(*v) : fallback;
}

bool KeyValueFile::take_bool(std::string const& key, bool fallback)
{
    auto v = take(key);
    if (!v)
    {
        return fallback;
    }
    if (*v == "true" || *v == "1")
    {
        return true;
    }
    if (*v == "false" || *v == "0")
    {
        return false;
    }
    throw ConfigError("invalid boolean '" + *v + "' for key '" + key + "'");
}

void KeyValueFile::reject_unconsumed() const
{
    std::string unknown;
    for (auto const& [k, v] : mEntries)
    {
        if (!mConsumed.contains(k))
        {
            unknown += unknown.empty() ? k : ", " + k;
        }
    }
    if (!unknown.empty())
    {
        throw ConfigError("unknown config keys: " + unknown);
    }
}

std::string KeyValueFile::str() const
{
    std::string out;
    for (auto const& [k, v] : mEntries)
    {
        out += k + " = " + v + "\n";
    }
    return out;
}

ArchConfig preset(std::string_view name)
{
    ArchConfig c;
    c.norm_eps = 1e-5;
    if (name == "moderngbert_134m" || name == "moderngbert_1b")
    {
        bool const big = name == "moderngbert_1b";
        c.vocab_size = 31168;
        c.n_layers = big ? 28 : 22;
        c.hidden = big ? 2048 : 768;
        c.n_heads = big ? 32 : 12;
        c.head_dim = 64;
        c.intermediate = big ? 3072 : 1152;
        c.block_style = BlockStyle::kPreNorm;
        c.norm = NormKind::kLayerNorm;
        c.activation = Activation::kGelu;
        c.global_every = 3;
        c.local_window = 128;
        c.rope_theta_global = 160000.0;
        c.rope_theta_local = 10000.0;
        c.max_seq_len = 8192;
        c.attention_mode = AttentionMode::kBidirectional;
        return c;
    }
    if (name == "llammlein2vec_120m" || name == "llammlein2vec_1b" || name == "llammlein2vec_7b")
    {
        c.vocab_size = 32064;
        if (name == "llammlein2vec_120m")
        {
            c.n_layers = 12;
            c.hidden = 768;
            c.n_heads = 12;
            c.head_dim = 64;
            c.intermediate = 2048;
        }
        else if (name == "llammlein2vec_1b")
        {
            c.n_layers = 22;
            c.hidden = 2048;
            c.n_heads = 32;
            c.head_dim = 64;
            c.intermediate = 5632;
        }
        else
        {
            c.n_layers = 32;
            c.hidden = 4096;
            c.n_heads = 32;
            c.head_dim = 128;
            c.intermediate = 11008;
        }
        c.block_style = BlockStyle::kPostNorm;
        c.norm = NormKind::kRmsNorm;
        c.activation = Activation::kSilu;
        c.global_every = 0;
        c.local_window = 0;
        c.rope_theta_global = 160000.0;
        c.rope_theta_local = 160000.0;
        c.max_seq_len = 8192;
        c.attention_mode = AttentionMode::kBidirectional;
        return c;
    }
    if (name == "tiny_test")
    {
        c.vocab_size = 128;
        c.n_layers = 2;
        c.hidden = 64;
        c.n_heads = 1;
        c.head_dim = 64;
        c.intermediate = 96;
        c.block_style = BlockStyle::kPreNorm;
        c.norm = NormKind::kLayerNorm;
        c.activation = Activation::kGelu;
        c.global_every = 3;
        c.local_window = 16;
        c.rope_theta_global = 10000.0;
        c.rope_theta_local = 10000.0;
        c.max_seq_len = 128;
        c.attention_mode = AttentionMode::kBidirectional;
        return c;
    }
    if (name == "tiny_decoder")
    {
        c.vocab_size = 128;
        c.n_layers = 2;
        c.hidden = 64;
        c.n_heads = 1;
        c.head_dim = 64;
        c.intermediate = 96;
        c.block_style = BlockStyle::kPostNorm;
        c.norm = NormKind::kRmsNorm;
        c.activation = Activation::kSilu;
        c.global_every = 0;
        c.local_window = 0;
        c.rope_theta_global = 10000.0;
        c.rope_theta_local = 10000.0;
        c.max_seq_len = 128;
        c.attention_mode = AttentionMode::kCausal;
        return c;
    }
    throw ConfigError("unknown preset '" + std::string(name) + "'");
}

std::vector<std::string> preset_names()
{
    return {"moderngbert_134m", "moderngbert_1b", "llammlein2vec_120m", "llammlein2vec_1b", "llammlein2vec_7b",
        "tiny_test", "tiny_decoder"};
}

std::vector<std::string> validate(ArchConfig const& cfg)
{
    std::vector<std::string> v;
    auto positive = [&](std::int64_t value, char const* name)
    {
        if (value <= 0)
        {
            v.push_back(std::string(name) + " must be positive");
        }
    };
    positive(cfg.vocab_size, "vocab_size");
    positive(cfg.n_layers, "n_layers");
    positive(cfg.hidden, "hidden");
    positive(cfg.n_heads, "n_heads");
    positive(cfg.head_dim, "head_dim");
    positive(cfg.intermediate, "intermediate");
    positive(cfg.max_seq_len, "max_seq_len");
    if (cfg.hidden != cfg.n_heads * cfg.head_dim)
    {
        v.push_back("hidden != heads*head_dim");
    }
    auto multiple64 = [&](std::int64_t value, char const* name)
    {
        if (value % 64 != 0)
        {
            v.push_back(std::string(name) + " not multiple of 64");
        }
    };
    multiple64(cfg.vocab_size, "vocab_size");
    multiple64(cfg.hidden, "hidden");
    multiple64(cfg.head_dim, "head_dim");
    if (cfg.head_dim % 2 != 0)
    {
        v.push_back("head_dim must be even for rotary pairs");
    }
    if (cfg.global_every < 0)
    {
        v.push_back("global_every must be >= 0");
    }
    if (cfg.global_every > 0 && cfg.local_window <= 0)
    {
        v.push_back("local layers require local_window > 0");
    }
    if (cfg.local_window < 0 || cfg.local_window % 2 != 0)
    {
        v.push_back("local_window must be even and non-negative");
    }
    if (!(cfg.norm_eps > 0.0))
    {
        v.push_back("norm_eps must be positive");
    }
    if (!(cfg.rope_theta_global > 0.0) || !(cfg.rope_theta_local > 0.0))
    {
        v.push_back("rope theta must be positive");
    }
    return v;
}

std::vector<std::string> validate(TrainPhaseConfig const& cfg)
{
    std::vector<std::string> v;
    if (!(cfg.mask_rate > 0.0 && cfg.mask_rate < 1.0))
    {
        v.push_back("mask_rate must lie in (0,1)");
    }
    if (cfg.schedule == Schedule::kTrapezoidal && cfg.warmup_tokens + cfg.decay_tokens > cfg.token_budget)
    {
        v.push_back("warmup_tokens + decay_tokens exceeds token_budget");
    }
    if (cfg.schedule == Schedule::kOneSqrtDecay && cfg.decay_tokens > cfg.token_budget)
    {
        v.push_back("decay_tokens exceeds token_budget");
    }
    if (cfg.batch_sequences <= 0 || cfg.microbatch <= 0)
    {
        v.push_back("batch_sequences and microbatch must be positive");
    }
    if (cfg.peak_lr < 0.0)
    {
        v.push_back("peak_lr must be non-negative");
    }
    if (cfg.attn_dropout < 0.0 || cfg.attn_dropout >= 1.0)
    {
        v.push_back("attn_dropout must lie in [0,1)");
    }
    if (cfg.epochs <= 0)
    {
        v.push_back("epochs must be positive");
    }
    return v;
}

void require_valid(ArchConfig const& cfg)
{
    auto const v = validate(cfg);
    if (!v.empty())
    {
        std::string msg = "invalid architecture:";
        for (auto const& s : v)
        {
            msg += " " + s + ";";
        }
        throw ConfigError(msg);
    }
}

void write_arch(ArchConfig const& cfg, KeyValueFile& out, std::string const& prefix)
{
    out.set(prefix + "vocab_size", std::to_string(cfg.vocab_size));
    out.set(prefix + "n_layers", std::to_string(cfg.n_layers));
    out.set(prefix + "hidden", std::to_string(cfg.hidden));
    out.set(prefix + "n_heads", std::to_string(cfg.n_heads));
    out.set(prefix + "head_dim", std::to_string(cfg.head_dim));
    out.set(prefix + "intermediate", std::to_string(cfg.intermediate));
    out.set(prefix + "block_style", to_string(cfg.block_style));
    out.set(prefix + "norm", to_string(cfg.norm));
    out.set(prefix + "norm_eps", format_real(cfg.norm_eps));
    out.set(prefix + "activation", to_string(cfg.activation));
    out.set(prefix + "global_every", std::to_string(cfg.global_every));
    out.set(prefix + "local_window", std::to_string(cfg.local_window));
    out.set(prefix + "rope_theta_global", format_real(cfg.rope_theta_global));
    out.set(prefix + "rope_theta_local", format_real(cfg.rope_theta_local));
    out.set(prefix + "max_seq_len", std::to_string(cfg.max_seq_len));
    out.set(prefix + "attention_mode", to_string(cfg.attention_mode));
    out.set(prefix + "tie_mlm_head", cfg.tie_mlm_head ? "true" : "false");
    out.set(prefix + "linear_bias", cfg.linear_bias ? "true" : "false");
}

ArchConfig read_arch(KeyValueFile& in, std::string const& prefix, ArchConfig base)
{
    ArchConfig c = base;
    if (auto p = in.take(prefix + "preset"))
    {
        c = preset(*p);
    }
    c.vocab_size = in.take_int(prefix + "vocab_size", c.vocab_size);
    c.n_layers = in.take_int(prefix + "n_layers", c.n_layers);
    c.hidden = in.take_int(prefix + "hidden", c.hidden);
    c.n_heads = in.take_int(prefix + "n_heads", c.n_heads);
    c.head_dim = in.take_int(prefix + "head_dim", c.head_dim);
    c.intermediate = in.take_int(prefix + "intermediate", c.intermediate);
    if (auto s = in.take(prefix + "block_style"))
    {
        c.block_style = parse_enum(prefix + "block_style", *s, kBlockStyles);
    }
    if (auto s = in.take(prefix + "norm"))
    {
        c.norm = parse_enum(prefix + "norm", *s, kNorms);
    }
    c.norm_eps = in.take_real(prefix + "norm_eps", c.norm_eps);
    if (auto s = in.take(prefix + "activation"))
    {
        c.activation = parse_enum(prefix + "activation", *s, kActivations);
    }
    c.global_every = in.take_int(prefix + "global_every", c.global_every);
    c.local_window = in.take_int(prefix + "local_window", c.local_window);
    c.rope_theta_global = in.take_real(prefix + "rope_theta_global", c.rope_theta_global);
    c.rope_theta_local = in.take_real(prefix + "rope_theta_local", c.rope_theta_local);
    c.max_seq_len = in.take_int(prefix + "max_seq_len", c.max_seq_len);
    if (auto s = in.take(prefix + "attention_mode"))
    {
        c.attention_mode = parse_enum(prefix + "attention_mode", *s, kModes);
    }
    c.tie_mlm_head = in.take_bool(prefix + "tie_mlm_head", c.tie_mlm_head);
    c.linear_bias = in.take_bool(prefix + "linear_bias", c.linear_bias);
    return c;
}

void write_phase(TrainPhaseConfig const& cfg, KeyValueFile& out, std::string const& prefix)
{
    out.set(prefix + "token_budget", std::to_string(cfg.token_budget));
    out.set(prefix + "batch_sequences", std::to_string(cfg.batch_sequences));
    out.set(prefix + "microbatch", std::to_string(cfg.microbatch));
    out.set(prefix + "peak_lr", format_real(cfg.peak_lr));
    out.set(prefix + "schedule", to_string(cfg.schedule));
    out.set(prefix + "warmup_tokens", std::to_string(cfg.warmup_tokens));
    out.set(prefix + "decay_tokens", std::to_string(cfg.decay_tokens));
    out.set(prefix + "batch_warmup_tokens", std::to_string(cfg.batch_warmup_tokens));
    out.set(prefix + "weight_decay", format_real(cfg.weight_decay));
    out.set(prefix + "beta1", format_real(cfg.beta1));
    out.set(prefix + "beta2", format_real(cfg.beta2));
    out.set(prefix + "eps", format_real(cfg.eps));
    out.set(prefix + "mask_rate", format_real(cfg.mask_rate));
    out.set(prefix + "mask_policy", to_string(cfg.mask_policy));
    out.set(prefix + "max_seq_len", std::to_string(cfg.max_seq_len));
    out.set(prefix + "rope_theta_override", cfg.rope_theta_override ? format_real(*cfg.rope_theta_override) : "none");
    out.set(prefix + "attn_dropout", format_real(cfg.attn_dropout));
    out.set(prefix + "seed", std::to_string(cfg.seed));
    out.set(prefix + "epochs", std::to_string(cfg.epochs));
    out.set(prefix + "max_steps", std::to_string(cfg.max_steps));
    out.set(prefix + "checkpoint_every_tokens", std::to_string(cfg.checkpoint_every_tokens));
    out.set(prefix + "clip_updates", cfg.clip_updates ? "true" : "false");
}

TrainPhaseConfig read_phase(KeyValueFile& in, std::string const& prefix, TrainPhaseConfig base)
{
    TrainPhaseConfig c = base;
    if (auto p = in.take(prefix + "phase_preset"))
    {
        c = phase_preset(*p);
    }
    c.token_budget = in.take_uint(prefix + "token_budget", c.token_budget);
    c.batch_sequences = in.take_int(prefix + "batch_sequences", c.batch_sequences);
    c.microbatch = in.take_int(prefix + "microbatch", c.microbatch);
    c.peak_lr = in.take_real(prefix + "peak_lr", c.peak_lr);
    if (auto s = in.take(prefix + "schedule"))
    {
        c.schedule = parse_enum(prefix + "schedule", *s, kSchedules);
    }
    c.warmup_tokens = in.take_uint(prefix + "warmup_tokens", c.warmup_tokens);
    c.decay_tokens = in.take_uint(prefix + "decay_tokens", c.decay_tokens);
    c.batch_warmup_tokens = in.take_uint(prefix + "batch_warmup_tokens", c.batch_warmup_tokens);
    c.weight_decay = in.take_real(prefix + "weight_decay", c.weight_decay);
    c.beta1 = in.take_real(prefix + "beta1", c.beta1);
    c.beta2 = in.take_real(prefix + "beta2", c.beta2);
    c.eps = in.take_real(prefix + "eps", c.eps);
    c.mask_rate = in.take_real(prefix + "mask_rate", c.mask_rate);
    if (auto s = in.take(prefix + "mask_policy"))
    {
        c.mask_policy = parse_enum(prefix + "mask_policy", *s, kPolicies);
    }
    c.max_seq_len = in.take_int(prefix + "max_seq_len", c.max_seq_len);
    if (auto s = in.take(prefix + "rope_theta_override"))
    {
        c.rope_theta_override = *s == "none" ? std::nullopt : std::optional<double>(parse_real(*s));
    }
    c.attn_dropout = in.take_real(prefix + "attn_dropout", c.attn_dropout);
    c.seed = in.take_uint(prefix + "seed", c.seed);
    c.epochs = in.take_int(prefix + "epochs", c.epochs);
    c.max_steps = in.take_int(prefix + "max_steps", c.max_steps);
    c.checkpoint_every_tokens = in.take_uint(prefix + "checkpoint_every_tokens", c.checkpoint_every_tokens);
    c.clip_updates = in.take_bool(prefix + "clip_updates", c.clip_updates);
    return c;
}

std::string arch_to_text(ArchConfig const& cfg)
{
    KeyValueFile kv;
    write_arch(cfg, kv);
    return kv.str();
}

ArchConfig arch_from_text(std::string_view text)
{
    auto kv = KeyValueFile::parse(text);
    auto cfg = read_arch(kv);
    kv.reject_unconsumed();
    return cfg;
}

TrainPhaseConfig phase_preset(std::string_view name)
{
    TrainPhaseConfig c;
    c.beta1 = 0.90;
    c.beta2 = 0.98;
    c.eps = 1e-6;
    c.mask_rate = 0.30;
    c.attn_dropout = 0.1;
    bool const big = name.ends_with("_1b");
    if (name == "pretrain_134m" || name == "pretrain_1b")
    {
        c.token_budget = big ? 1'270'000'000'000ULL : 470'000'000'000ULL;
        c.batch_sequences = big ? 4928 : 4608;
        c.microbatch = big ? 28 : 96;
        c.peak_lr = big ? 5e-5 : 8e-4;
        c.schedule = Schedule::kTrapezoidal;
        c.warmup_tokens = 15'000'000'000ULL;
        c.batch_warmup_tokens = 3'000'000'000ULL;
        c.decay_tokens = 0;
        c.weight_decay = 1e-5;
        c.max_seq_len = 1024;
        c.rope_theta_override = 10000.0;
        return c;
    }
    if (name == "ext1_134m" || name == "ext1_1b")
    {
        c.token_budget = big ? 90'000'000'000ULL : 52'000'000'000ULL;
        c.batch_sequences = 96;
        c.microbatch = big ? 3 : 8;
        c.peak_lr = big ? 5e-5 : 3e-4;
        c.schedule = Schedule::kConstant;
        c.weight_decay = big ? 1e-6 : 1e-5;
        c.max_seq_len = 8192;
        c.rope_theta_override = 160000.0;
        return c;
    }
    if (name == "ext2_134m" || name == "ext2_1b")
    {
        c.token_budget = 14'400'000'000ULL;
        c.batch_sequences = 96;
        c.microbatch = big ? 3 : 8;
        c.peak_lr = big ? 5e-6 : 3e-4;
        c.schedule = Schedule::kOneSqrtDecay;
        c.decay_tokens = 12'800'000'000ULL;
        c.weight_decay = big ? 1e-6 : 1e-5;
        c.max_seq_len = 8192;
        c.rope_theta_override = 160000.0;
        return c;
    }
    throw ConfigError("unknown phase preset '" + std::string(name) + "'");
}

} // namespace mgbert
