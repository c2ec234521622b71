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

#include <doctest.h>

#include <algorithm>

using namespace mgbert;

TEST_CASE("moderngbert_134m matches the architecture table")
{
    auto const c = preset("moderngbert_134m");
    CHECK(c.n_layers == 22);
    CHECK(c.hidden == 768);
    CHECK(c.n_heads == 12);
    CHECK(c.head_dim == 64);
    CHECK(c.intermediate == 1152);
    CHECK(c.vocab_size == 31168);
    CHECK(c.global_every == 3);
    CHECK(c.local_window == 128);
    CHECK(c.rope_theta_global == 160000.0);
    CHECK(c.rope_theta_local == 10000.0);
    CHECK(c.block_style == BlockStyle::kPreNorm);
    CHECK(c.activation == Activation::kGelu);
    CHECK(c.norm == NormKind::kLayerNorm);
    CHECK(c.norm_eps == 1e-5);
}

TEST_CASE("moderngbert_1b differs only in size")
{
    auto const c = preset("moderngbert_1b");
    CHECK(c.n_layers == 28);
    CHECK(c.hidden == 2048);
    CHECK(c.n_heads == 32);
    CHECK(c.intermediate == 3072);
    CHECK(c.vocab_size == 31168);
    CHECK(c.global_every == 3);
    CHECK(c.local_window == 128);
}

TEST_CASE("llammlein2vec_1b is a converted post-norm SiLU RMSNorm model")
{
    auto const c = preset("llammlein2vec_1b");
    CHECK(c.n_layers == 22);
    CHECK(c.hidden == 2048);
    CHECK(c.n_heads == 32);
    CHECK(c.head_dim == 64);
    CHECK(c.intermediate == 5632);
    CHECK(c.vocab_size == 32064);
    CHECK(c.global_every == 0);
    CHECK(c.block_style == BlockStyle::kPostNorm);
    CHECK(c.activation == Activation::kSilu);
    CHECK(c.norm == NormKind::kRmsNorm);
    CHECK(c.rope_theta_global == 160000.0);
    CHECK(c.attention_mode == AttentionMode::kBidirectional);
}

TEST_CASE("every preset validates and round-trips through the text format")
{
    for (auto const& name : preset_names())
    {
        CAPTURE(name);
        auto const c = preset(name);
        CHECK(validate(c).empty());
        CHECK(arch_from_text(arch_to_text(c)) == c);
    }
    CHECK_THROWS_AS(preset("moderngbert_2b"), ConfigError);
}

TEST_CASE("tiny_test is a two-layer 64-hidden model")
{
    auto const c = preset("tiny_test");
    CHECK(c.n_layers == 2);
    CHECK(c.hidden == 64);
}

TEST_CASE("validate reports each broken invariant")
{
    auto c = preset("moderngbert_134m");
    c.head_dim = 65;
    auto v = validate(c);
    CHECK(std::any_of(v.begin(), v.end(), [](auto const& s) { return s.find("heads") != std::string::npos; }));

    c = preset("moderngbert_134m");
    c.vocab_size = 31170;
    v = validate(c);
    REQUIRE(v.size() == 1);
    CHECK(v[0].find("64") != std::string::npos);

    c = preset("moderngbert_134m");
    c.local_window = 0;
    CHECK(!validate(c).empty());
    CHECK_THROWS_AS(require_valid(c), ConfigError);
}

TEST_CASE("global layers are every global_every-th, starting with the first")
{
    auto const c = preset("moderngbert_134m");
    for (std::int64_t i = 0; i < c.n_layers; ++i)
    {
        CHECK(c.is_global_layer(i) == (i % 3 == 0));
        CHECK(c.rope_theta_for_layer(i) == (i % 3 == 0 ? 160000.0 : 10000.0));
    }
    auto const d = preset("llammlein2vec_1b");
    CHECK(d.is_global_layer(5));
}

TEST_CASE("phase presets carry the training-settings table")
{
    auto const p = phase_preset("pretrain_134m");
    CHECK(p.batch_sequences == 4608);
    CHECK(p.microbatch == 96);
    CHECK(p.peak_lr == 8e-4);
    CHECK(p.schedule == Schedule::kTrapezoidal);
    CHECK(p.warmup_tokens == 15'000'000'000ULL);
    CHECK(p.mask_rate == 0.30);
    CHECK(p.max_seq_len == 1024);
    CHECK(p.rope_theta_override == 10000.0);
    CHECK(p.beta1 == 0.90);
    CHECK(p.beta2 == 0.98);
    CHECK(p.eps == 1e-6);
    CHECK(p.attn_dropout == 0.1);

    auto const e2 = phase_preset("ext2_1b");
    CHECK(e2.token_budget == 14'400'000'000ULL);
    CHECK(e2.decay_tokens == 12'800'000'000ULL);
    CHECK(e2.peak_lr == 5e-6);
    CHECK(e2.schedule == Schedule::kOneSqrtDecay);
    CHECK(phase_preset("ext1_134m").token_budget == 52'000'000'000ULL);
    CHECK(phase_preset("ext1_1b").token_budget == 90'000'000'000ULL);
    for (auto const* name : {"pretrain_134m", "ext1_134m", "ext2_134m", "pretrain_1b", "ext1_1b", "ext2_1b"})
    {
        CAPTURE(name);
        CHECK(validate(phase_preset(name)).empty());
    }
}

TEST_CASE("phase config invariants")
{
    TrainPhaseConfig p;
    p.mask_rate = 1.0;
    CHECK(!validate(p).empty());
    p.mask_rate = 0.3;
    p.schedule = Schedule::kTrapezoidal;
    p.token_budget = 100;
    p.warmup_tokens = 60;
    p.decay_tokens = 50;
    CHECK(!validate(p).empty());
    p.decay_tokens = 40;
    CHECK(validate(p).empty());
}

TEST_CASE("phase config round-trips and unknown keys are rejected")
{
    auto const p = phase_preset("ext2_134m");
    KeyValueFile kv;
    write_phase(p, kv, "phase.");
    auto parsed = KeyValueFile::parse(kv.str());
    CHECK(read_phase(parsed, "phase.") == p);
    CHECK_NOTHROW(parsed.reject_unconsumed());

    auto bad = KeyValueFile::parse("hidden = 64\n# comment\nhiden = 3\n");
    read_arch(bad);
    CHECK_THROWS_AS(bad.reject_unconsumed(), ConfigError);
    CHECK_THROWS_AS(KeyValueFile::parse("no equals sign\n"), ConfigError);
    CHECK_THROWS_AS(arch_from_text("vocab_size = 12x\n"), ConfigError);
}
