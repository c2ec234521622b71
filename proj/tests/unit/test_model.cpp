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

#include "mgbert/attention.hpp"
#include "mgbert/model.hpp"
#include "mgbert/rng.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace mgbert;

namespace
{

std::vector<TokenId> random_ids(std::size_t n, std::int64_t vocab, Rng& rng)
{
    std::vector<TokenId> ids(n);
    for (auto& t : ids)
    {
        t = static_cast<TokenId>(5 + rng.below(static_cast<std::uint64_t>(vocab - 5)));
    }
    return ids;
}

} // namespace

TEST_CASE("eval forward is deterministic and finite")
{
    auto const cfg = preset("tiny_test");
    auto const params = init_params(cfg, 1);
    Rng rng(2);
    auto const batch = pack({random_ids(30, cfg.vocab_size, rng), random_ids(1, cfg.vocab_size, rng)});
    auto const a = forward(params, cfg, batch).hidden_states;
    auto const b = forward(params, cfg, batch).hidden_states;
    CHECK(a == b);
    CHECK(all_finite(a));
    CHECK(init_params(cfg, 1).token_embedding == params.token_embedding);
    CHECK(init_params(cfg, 2).token_embedding != params.token_embedding);
}

TEST_CASE("forward rejects overlong sequences and unknown ids")
{
    auto const cfg = preset("tiny_test");
    auto const params = init_params(cfg, 1);
    Rng rng(2);
    CHECK_THROWS_AS(forward(params, cfg, pack({random_ids(129, cfg.vocab_size, rng)})), LengthError);
    CHECK_THROWS_AS(forward(params, cfg, pack({{5, 128}})), ArgumentError);
}

TEST_CASE("packed batch equals separate forward calls")
{
    auto const cfg = preset("tiny_test");
    auto const params = init_params(cfg, 4);
    Rng rng(9);
    auto const s1 = random_ids(40, cfg.vocab_size, rng);
    auto const s2 = random_ids(17, cfg.vocab_size, rng);
    auto const both = forward(params, cfg, pack({s1, s2})).hidden_states;
    auto const one = forward(params, cfg, pack({s1})).hidden_states;
    auto const two = forward(params, cfg, pack({s2})).hidden_states;
    double worst = 0.0;
    for (std::int64_t r = 0; r < 57; ++r)
    {
        for (std::int64_t c = 0; c < cfg.hidden; ++c)
        {
            auto const ref = r < 40 ? one(r, c) : two(r - 40, c);
            worst = std::max(worst, static_cast<double>(std::abs(both(r, c) - ref)));
        }
    }
    CHECK(worst <= 1e-5);
}

TEST_CASE("packed and padded paths agree on random batches")
{
    auto const eq = oracle::packed_vs_padded(preset("tiny_test"), 10, 31);
    CHECK(eq.batches == 10);
    CHECK(eq.max_abs_diff <= 1e-5);
}

TEST_CASE("analytic gradients match central differences")
{
    SUBCASE("pre-norm layer norm gelu, tied head")
    {
        auto const r = oracle::grad_check(preset("tiny_test"), 5, 37);
        CAPTURE(r.worst_tensor);
        CHECK(r.worst_relative <= 1e-4);
    }
    SUBCASE("post-norm rms norm silu causal, untied head with biases")
    {
        auto cfg = preset("tiny_decoder");
        cfg.tie_mlm_head = false;
        cfg.linear_bias = true;
        auto const r = oracle::grad_check(cfg, 6, 37);
        CAPTURE(r.worst_tensor);
        CHECK(r.worst_relative <= 1e-4);
    }
}

TEST_CASE("tied mlm logits equal hidden times embedding transpose")
{
    auto const cfg = preset("tiny_test");
    auto const params = oracle::random_params(cfg, 3);
    Rng rng(4);
    Matrix<double> h(3, cfg.hidden);
    for (auto& x : h.data)
    {
        x = rng.normal();
    }
    auto const logits = mlm_logits(h, params);
    REQUIRE(logits.rows == 3);
    REQUIRE(logits.cols == cfg.vocab_size);
    // The head applies the final projection straight to the hidden states.
    for (std::int64_t r = 0; r < 3; ++r)
    {
        for (std::int64_t v = 0; v < cfg.vocab_size; ++v)
        {
            double s = 0.0;
            for (std::int64_t c = 0; c < cfg.hidden; ++c)
            {
                s += h(r, c) * params.token_embedding(v, c);
            }
            CHECK(logits(r, v) == doctest::Approx(s).epsilon(1e-12));
        }
    }
}

TEST_CASE("zero hidden state and zero-bias untied head give equal logits")
{
    auto cfg = preset("tiny_test");
    cfg.tie_mlm_head = false;
    auto const params = init_params(cfg, 3);
    Matrix<float> h(2, cfg.hidden);
    auto const logits = mlm_logits(h, params);
    for (auto const x : logits.data)
    {
        CHECK(x == logits.data[0]);
    }
}

TEST_CASE("best_span agrees with an exhaustive scan")
{
    Rng rng(8);
    for (int trial = 0; trial < 200; ++trial)
    {
        auto const n = 1 + static_cast<std::int64_t>(rng.below(20));
        auto const max_len = 1 + static_cast<std::int64_t>(rng.below(6));
        std::vector<float> start(static_cast<std::size_t>(n)), end(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i)
        {
            start[i] = static_cast<float>(rng.normal());
            end[i] = static_cast<float>(rng.normal());
        }
        double best = -1e300;
        for (std::int64_t s = 0; s < n; ++s)
        {
            for (std::int64_t e = s; e < n && e - s + 1 <= max_len; ++e)
            {
                best = std::max(best, static_cast<double>(start[s]) + end[e]);
            }
        }
        auto const [s, e] = best_span(start, end, max_len);
        CHECK(s <= e);
        CHECK(e - s + 1 <= max_len);
        CHECK(static_cast<double>(start[s]) + end[e] == best);
        if (max_len == 1)
        {
            CHECK(s == e);
        }
    }
    std::vector<float> one{0.3f};
    CHECK(best_span(one, one, 5) == std::pair<std::int64_t, std::int64_t>{0, 0});
}

TEST_CASE("span logits cover the requested rows")
{
    auto const cfg = preset("tiny_test");
    auto const params = init_params(cfg, 2);
    Matrix<float> h(10, cfg.hidden);
    auto const s = span_logits(h, params, 3, 10);
    CHECK(s.start.size() == 7);
    CHECK(s.end.size() == 7);
}

TEST_CASE("mean pooling")
{
    Rng rng(12);
    Matrix<double> h(5, 4);
    for (auto& x : h.data)
    {
        x = rng.normal();
    }
    std::vector<std::int64_t> one{2};
    auto const p1 = pool_mean(h, one);
    for (std::int64_t c = 0; c < 4; ++c)
    {
        CHECK(p1[c] == h(2, c));
    }
    std::vector<std::int64_t> three{0, 1, 4};
    auto const p3 = pool_mean(h, three);
    for (std::int64_t c = 0; c < 4; ++c)
    {
        CHECK(std::abs(p3[c] - (h(0, c) + h(1, c) + h(4, c)) / 3.0) <= 1e-7);
    }
    CHECK_THROWS_AS(pool_mean(h, std::span<std::int64_t const>{}), ArgumentError);
}

TEST_CASE("pooled embedding ignores padding length")
{
    auto const cfg = preset("tiny_test");
    auto const params = init_params(cfg, 3);
    Rng rng(13);
    auto const ids = random_ids(11, cfg.vocab_size, rng);
    auto const packed = pack({ids});
    auto const a = forward(params, cfg, packed);
    auto const la = layout_of(packed);
    auto const pa = pool_mean(a.hidden_states, la.valid_rows);
    for (std::size_t extra : {std::size_t{1}, std::size_t{9}})
    {
        auto padded = pad({ids, std::vector<TokenId>(11 + extra, 7)}, 0);
        auto const out = forward(params, cfg, padded);
        std::vector<std::int64_t> rows(11);
        for (std::int64_t i = 0; i < 11; ++i)
        {
            rows[i] = i;
        }
        auto const pb = pool_mean(out.hidden_states, rows);
        for (std::size_t c = 0; c < pa.size(); ++c)
        {
            CHECK(std::abs(pa[c] - pb[c]) <= 1e-6);
        }
    }
}

TEST_CASE("pre-norm skeleton with zero block weights is the normalized embedding")
{
    auto const cfg = preset("tiny_test");
    auto params = oracle::random_params(cfg, 7);
    for (auto& l : params.layers)
    {
        l.wo.weight.zero();
        l.w_down.weight.zero();
    }
    Rng rng(1);
    auto const ids = random_ids(6, cfg.vocab_size, rng);
    auto const out = forward(params, cfg, pack({ids})).hidden_states;
    for (std::int64_t r = 0; r < 6; ++r)
    {
        auto const* e = params.token_embedding.row(ids[r]);
        double mean = 0.0;
        for (std::int64_t c = 0; c < cfg.hidden; ++c)
        {
            mean += e[c];
        }
        mean /= static_cast<double>(cfg.hidden);
        double var = 0.0;
        for (std::int64_t c = 0; c < cfg.hidden; ++c)
        {
            var += (e[c] - mean) * (e[c] - mean);
        }
        var /= static_cast<double>(cfg.hidden);
        for (std::int64_t c = 0; c < cfg.hidden; ++c)
        {
            double const want = (e[c] - mean) / std::sqrt(var + cfg.norm_eps) * params.final_norm.scale(0, c)
                + params.final_norm.offset(0, c);
            CHECK(std::abs(out(r, c) - want) <= 1e-10);
        }
    }
}

TEST_CASE("dropout only acts in training mode")
{
    auto const cfg = preset("tiny_test");
    auto const params = init_params(cfg, 3);
    Rng rng(1);
    auto const batch = pack({random_ids(20, cfg.vocab_size, rng)});
    auto const eval = forward(params, cfg, batch).hidden_states;
    Rng r1(5);
    ForwardOptions<float> train{Mode::kTrain, 0.1, &r1, nullptr};
    auto const t1 = forward(params, cfg, batch, train).hidden_states;
    CHECK(t1 != eval);
    ForwardOptions<float> no_rng{Mode::kTrain, 0.1, nullptr, nullptr};
    CHECK_THROWS_AS(forward(params, cfg, batch, no_rng), ArgumentError);
    Rng r2(5);
    ForwardOptions<float> zero{Mode::kTrain, 0.0, &r2, nullptr};
    CHECK(forward(params, cfg, batch, zero).hidden_states == eval);
}

TEST_CASE("checkpointed shapes are validated")
{
    auto const cfg = preset("tiny_test");
    auto params = init_params(cfg, 1);
    CHECK_NOTHROW(check_shapes(params, cfg));
    params.layers[1].wq.weight = Matrix<float>(3, 3);
    CHECK_THROWS_AS(check_shapes(params, cfg), ArgumentError);
}
