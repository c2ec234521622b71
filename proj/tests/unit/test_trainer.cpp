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

#include "mgbert/checkpoint.hpp"
#include "mgbert/trainer.hpp"

#include "toy.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>

using namespace mgbert;

namespace
{

SpecialIds const kSpecial{0, 1, 2, 3, 4};

TrainPhaseConfig toy_phase(std::int64_t steps)
{
    TrainPhaseConfig p;
    p.token_budget = 1'000'000'000;
    p.max_steps = steps;
    p.batch_sequences = 8;
    p.microbatch = 4;
    p.peak_lr = 3e-3;
    p.max_seq_len = 128;
    p.epochs = 1000;
    p.seed = 42;
    return p;
}

Dataset toy_data(std::size_t n = 50)
{
    return sequences_dataset(toy::zipf_sentences(n, 14, 123, 1.1, 7));
}

double max_param_diff(ModelParams<float> const& a, ModelParams<float> const& b)
{
    double d = 0.0;
    auto const na = a.named();
    auto const nb = b.named();
    for (std::size_t t = 0; t < na.size(); ++t)
    {
        for (std::size_t i = 0; i < na[t].second->data.size(); ++i)
        {
            d = std::max(d, static_cast<double>(std::abs(na[t].second->data[i] - nb[t].second->data[i])));
        }
    }
    return d;
}

} // namespace

TEST_CASE("data order is a seeded permutation that drops the trailing partial batch")
{
    DataOrder order(10, 4, 3, 2);
    CHECK(order.dropped_per_epoch() == 2);
    std::vector<std::vector<std::size_t>> batches;
    while (auto b = order.next())
    {
        batches.push_back(*b);
    }
    REQUIRE(batches.size() == 4);
    std::set<std::size_t> first_epoch;
    for (int i = 0; i < 2; ++i)
    {
        CHECK(batches[i].size() == 4);
        first_epoch.insert(batches[i].begin(), batches[i].end());
    }
    CHECK(first_epoch.size() == 8);
    CHECK(batches[0] != batches[2]);

    DataOrder again(10, 4, 3, 2);
    CHECK(*again.next() == batches[0]);
    DataOrder mid(10, 4, 3, 2, 1, 4);
    CHECK(*mid.next() == batches[3]);
}

TEST_CASE("provenance log round trip and monotonicity")
{
    ProvenanceLog log;
    log.append({1, 30, 99, {4, 5, 6}});
    log.append({2, 61, 17, {0}});
    auto const back = ProvenanceLog::decode(log.encode());
    CHECK(back == log);
    CHECK_THROWS_AS(log.append({3, 60, 1, {1}}), ProvenanceError);
    CHECK_THROWS_AS(ProvenanceLog::decode(log.encode().substr(0, 10)), DataError);
    log.truncate(1);
    CHECK(log.size() == 1);
}

TEST_CASE("zero budget gives zero steps and one checkpoint")
{
    auto const cfg = preset("tiny_test");
    auto phase = toy_phase(0);
    phase.token_budget = 0;
    auto const r = train_mlm(cfg, init_params(cfg, 1), toy_data(), phase, kSpecial);
    CHECK(r.state.step == 0);
    CHECK(r.checkpoints.size() == 1);
    CHECK(r.log.size() == 0);
}

TEST_CASE("gradient accumulation matches a single full microbatch")
{
    auto const cfg = preset("tiny_test");
    auto phase = toy_phase(3);
    phase.attn_dropout = 0.0;
    phase.microbatch = 8;
    auto const whole = train_mlm(cfg, init_params(cfg, 1), toy_data(), phase, kSpecial);
    phase.microbatch = 3;
    auto const split = train_mlm(cfg, init_params(cfg, 1), toy_data(), phase, kSpecial);
    CHECK(max_param_diff(whole.state.params, split.state.params) <= 1e-6);
    CHECK(whole.log == split.log);
}

TEST_CASE("training is deterministic and the log counts every consumed token")
{
    auto const cfg = preset("tiny_test");
    auto phase = toy_phase(12);
    phase.checkpoint_every_tokens = 600;
    auto const data = toy_data();
    auto const a = train_mlm(cfg, init_params(cfg, 1), data, phase, kSpecial);
    auto const b = train_mlm(cfg, init_params(cfg, 1), data, phase, kSpecial);
    REQUIRE(a.checkpoints.size() == b.checkpoints.size());
    CHECK(a.checkpoints.size() > 2);
    for (std::size_t i = 0; i < a.checkpoints.size(); ++i)
    {
        CHECK(encode_container(a.checkpoints[i]) == encode_container(b.checkpoints[i]));
    }
    std::uint64_t tokens = 0;
    for (auto const& rec : a.log.records())
    {
        for (auto const id : rec.example_ids)
        {
            tokens += data[id].token_count();
        }
        CHECK(rec.token_count == tokens);
    }
    CHECK(a.state.tokens_seen == tokens);
    for (auto const& m : a.metrics)
    {
        CHECK(std::isfinite(m.loss));
    }
}

TEST_CASE("checkpoint round trip restores the whole state")
{
    auto const cfg = preset("tiny_test");
    auto const r = train_mlm(cfg, init_params(cfg, 1), toy_data(), toy_phase(2), kSpecial);
    auto const c = to_checkpoint(r.state);
    auto const back = from_checkpoint(decode_container(encode_container(c)));
    CHECK(back.arch == r.state.arch);
    CHECK(back.phase == r.state.phase);
    CHECK(back.step == 2);
    CHECK(back.tokens_seen == r.state.tokens_seen);
    CHECK(back.rng_state == r.state.rng_state);
    CHECK(back.last_batch_ids == r.state.last_batch_ids);
    CHECK(back.opt.t == r.state.opt.t);
    CHECK(max_param_diff(back.params, r.state.params) == 0.0);
    CHECK(encode_container(to_checkpoint(back)) == encode_container(c));
}

TEST_CASE("interrupted and resumed run equals the uninterrupted run")
{
    auto const cfg = preset("tiny_test");
    auto const data = toy_data();
    auto const full = train_mlm(cfg, init_params(cfg, 1), data, toy_phase(14), kSpecial);
    auto const first = train_mlm(cfg, init_params(cfg, 1), data, toy_phase(7), kSpecial);
    auto override_phase = toy_phase(14);
    auto const second = resume(first.checkpoints.back(), data, {}, override_phase, first.log);
    CHECK(encode_container(second.checkpoints.back()) == encode_container(full.checkpoints.back()));
    CHECK(second.log == full.log);

    SUBCASE("shuffled dataset is refused")
    {
        auto shuffled = data;
        std::swap(shuffled[0], shuffled[1]);
        CHECK_THROWS_AS(resume(first.checkpoints.back(), shuffled, {}, override_phase, first.log), ProvenanceError);
    }
    SUBCASE("changing anything besides the stopping fields is refused")
    {
        auto changed = override_phase;
        changed.peak_lr *= 2;
        CHECK_THROWS_AS(resume(first.checkpoints.back(), data, {}, changed, first.log), ProvenanceError);
    }
    SUBCASE("a log that disagrees with the checkpoint is refused")
    {
        auto const other = train_mlm(cfg, init_params(cfg, 1), data, [] { auto p = toy_phase(7); p.seed = 5; return p; }(),
            kSpecial);
        CHECK_THROWS_AS(resume(first.checkpoints.back(), data, {}, override_phase, other.log), ProvenanceError);
    }
    SUBCASE("resuming at the final step re-emits the same checkpoint")
    {
        auto const again = resume(full.checkpoints.back(), data, {}, std::nullopt, full.log);
        REQUIRE(again.checkpoints.size() == 1);
        CHECK(encode_container(again.checkpoints[0]) == encode_container(full.checkpoints.back()));
        CHECK(again.log == full.log);
    }
}

TEST_CASE("an exhausted dataset stops early with a final checkpoint")
{
    auto const cfg = preset("tiny_test");
    auto phase = toy_phase(0);
    phase.epochs = 1;
    std::ostringstream log;
    TrainOptions options;
    options.log = &log;
    auto const r = train_mlm(cfg, init_params(cfg, 1), toy_data(20), phase, kSpecial, options);
    CHECK(r.exhausted);
    CHECK(r.state.step == 2);
    CHECK(r.checkpoints.size() == 2);
    CHECK(log.str().find("4 examples dropped") != std::string::npos);
}

TEST_CASE("output directory receives checkpoints, metrics and provenance")
{
    auto const dir = toy::temp_dir("trainer-out");
    auto const cfg = preset("tiny_test");
    TrainOptions options;
    options.out_dir = dir;
    auto const r = train_mlm(cfg, init_params(cfg, 1), toy_data(), toy_phase(3), kSpecial, options);
    CHECK(std::filesystem::exists(dir + "/checkpoint-0.mgb"));
    CHECK(std::filesystem::exists(dir + "/checkpoint-3.mgb"));
    CHECK(ProvenanceLog::load(dir + "/provenance.bin") == r.log);
    auto const metrics = read_file_bytes(dir + "/metrics.txt");
    CHECK(std::count(metrics.begin(), metrics.end(), '\n') == 3);
    CHECK(metrics.find("step=3 tokens=") != std::string::npos);
}

TEST_CASE("span QA loss at uniform logits is ln(positions)")
{
    auto const cfg = preset("tiny_test");
    auto params = init_params(cfg, 1);
    params.span_head.weight.zero();
    TrainExample ex;
    ex.parts = {{2, 10, 11, 3, 20, 21, 22, 23, 24, 3}};
    ex.context_begin = 4;
    ex.span_start = 6;
    ex.span_end = 7;
    Dataset data{ex};
    auto const loss = evaluate_loss(cfg, params, data, Objective::kSpanQa, toy_phase(1), kSpecial, 0);
    CHECK(loss == doctest::Approx(std::log(6.0)).epsilon(1e-6));
    CHECK_THROWS_AS(train_span_qa(cfg, params, {}, toy_phase(1), kSpecial), ArgumentError);
    ex.span_end = 10;
    CHECK_THROWS_AS(train_span_qa(cfg, params, {ex}, toy_phase(1), kSpecial), DataError);
}

TEST_CASE("span QA memorizes a single example")
{
    auto const cfg = preset("tiny_test");
    TrainExample ex;
    ex.parts = {{2, 10, 11, 3, 20, 21, 22, 23, 24, 25, 26, 3}};
    ex.context_begin = 4;
    ex.span_start = 7;
    ex.span_end = 8;
    Dataset data(8, ex);
    for (std::size_t i = 0; i < data.size(); ++i)
    {
        data[i].id = i;
    }
    auto phase = toy_phase(500);
    phase.attn_dropout = 0.0;
    std::int64_t solved_at = -1;
    TrainOptions options;
    auto const r = train_span_qa(cfg, init_params(cfg, 1), data, phase, kSpecial, options);
    for (std::size_t i = 0; i < r.metrics.size(); ++i)
    {
        if (r.metrics[i].loss < 0.05)
        {
            solved_at = static_cast<std::int64_t>(i);
            break;
        }
    }
    CHECK(solved_at >= 0);
    auto const span = predict_span(cfg, r.state.params, ex.parts[0], ex.context_begin, 30);
    CHECK(span == std::pair<std::int64_t, std::int64_t>{7, 8});
}

TEST_CASE("embedding training argument checks")
{
    auto const cfg = preset("tiny_test");
    auto const data = toy::triplets(16, 4, 8, 6, 1, 3);
    auto phase = toy_phase(1);
    phase.batch_sequences = 1;
    CHECK_THROWS_AS(train_embedder(cfg, init_params(cfg, 1), data, phase, kSpecial), ArgumentError);
    phase.batch_sequences = 8;
    phase.token_budget = 0;
    auto const r = train_embedder(cfg, init_params(cfg, 1), data, phase, kSpecial);
    CHECK(r.state.step == 0);
    CHECK(max_param_diff(r.state.params, init_params(cfg, 1)) == 0.0);
}

TEST_CASE("untrained ranking accuracy sits near chance on unrelated triplets")
{
    auto const cfg = preset("tiny_test");
    auto data = toy::triplets(400, 8, 8, 8, 3, 5);
    // Give every example a positive drawn from another example, so nothing links it to the query.
    for (std::size_t i = 0; i < data.size(); ++i)
    {
        data[i].parts[1] = data[(i + 1) % data.size()].parts[2];
    }
    auto const acc = ranking_accuracy(cfg, init_params(cfg, 1), data);
    CHECK(acc == doctest::Approx(0.25).epsilon(0.3));
}

TEST_CASE("embedding microbatches reproduce the full-batch step")
{
    auto const cfg = preset("tiny_test");
    auto const data = toy::triplets(32, 4, 8, 6, 2, 9);
    auto phase = toy_phase(2);
    phase.attn_dropout = 0.0;
    phase.batch_sequences = 8;
    phase.microbatch = 8;
    auto const whole = train_embedder(cfg, init_params(cfg, 1), data, phase, kSpecial);
    phase.microbatch = 3;
    auto const split = train_embedder(cfg, init_params(cfg, 1), data, phase, kSpecial);
    CHECK(max_param_diff(whole.state.params, split.state.params) <= 1e-6);
}

TEST_CASE("MNTP training needs a bidirectional model")
{
    auto const cfg = preset("tiny_decoder");
    AdapterOptions ao;
    auto const adapters = create_adapters(cfg, ao);
    CHECK_THROWS_AS(train_mntp(cfg, init_params(cfg, 1), adapters, toy_data(), toy_phase(1), kSpecial), ArgumentError);
}

TEST_CASE("sequences longer than the phase maximum are rejected")
{
    auto const cfg = preset("tiny_test");
    auto phase = toy_phase(1);
    phase.max_seq_len = 8;
    CHECK_THROWS_AS(train_mlm(cfg, init_params(cfg, 1), toy_data(), phase, kSpecial), DataError);
}
