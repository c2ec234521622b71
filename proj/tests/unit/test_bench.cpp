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

#include <doctest.h>

#include <cmath>
#include <numeric>

using namespace mgbert;

namespace
{

SpecialIds const kSpecial{0, 1, 2, 3, 4};

} // namespace

TEST_CASE("spec parsing and labels")
{
    auto const f = parse_spec("fixed:512");
    CHECK(f.kind == LengthKind::kFixed);
    CHECK(f.length == 512);
    CHECK(f.label() == "fixed:512");
    auto const n = parse_spec("normal:4096:1024");
    CHECK(n.kind == LengthKind::kNormal);
    CHECK(n.mean == 4096.0);
    CHECK(n.stddev() == 1024.0);
    CHECK(n.label() == "normal:4096:1024");
    auto const v = parse_spec("normal:4096:1024:variance");
    CHECK(v.spread_is_variance);
    CHECK(v.stddev() == 32.0);
    CHECK_THROWS_AS(parse_spec("uniform:3"), ConfigError);
    CHECK_THROWS_AS(parse_spec("normal:10"), ConfigError);
    CHECK_THROWS_AS(parse_spec("normal:10:2:wide"), ConfigError);
    CHECK_THROWS_AS(gen_synthetic(parse_spec("fixed:0"), 128, 64, kSpecial), ArgumentError);
}

TEST_CASE("synthetic documents")
{
    auto spec = parse_spec("normal:100:20");
    spec.n_docs = 4000;
    spec.seed = 3;
    auto const docs = gen_synthetic(spec, 128, 160, kSpecial);
    REQUIRE(docs.size() == 4000);
    double sum = 0.0;
    double sq = 0.0;
    for (auto const& d : docs)
    {
        CHECK(d.size() >= 1);
        CHECK(d.size() <= 160);
        sum += static_cast<double>(d.size());
        sq += static_cast<double>(d.size()) * static_cast<double>(d.size());
        for (auto const id : d)
        {
            REQUIRE(id >= 5);
            REQUIRE(id < 128);
        }
    }
    auto const mean = sum / 4000.0;
    CHECK(mean == doctest::Approx(100.0).epsilon(0.02));
    CHECK(std::sqrt(sq / 4000.0 - mean * mean) == doctest::Approx(20.0).epsilon(0.08));
    CHECK(gen_synthetic(spec, 128, 160, kSpecial) == docs);

    auto fixed = parse_spec("fixed:64");
    fixed.n_docs = 10;
    for (auto const& d : gen_synthetic(fixed, 128, 64, kSpecial))
    {
        CHECK(d.size() == 64);
    }
    CHECK_THROWS_AS(gen_synthetic(fixed, 128, 63, kSpecial), ArgumentError);
}

TEST_CASE("position accounting")
{
    std::vector<std::vector<TokenId>> docs{{5, 5, 5}, {5}, {5, 5}, {5, 5, 5, 5, 5}, {5}};
    CHECK(count_positions(docs, 2, ExecPath::kPacked) == 12);
    CHECK(count_positions(docs, 2, ExecPath::kPadded) == 3 * 2 + 5 * 2 + 1);
    CHECK(count_positions(docs, 5, ExecPath::kPadded) == 25);
    CHECK(count_positions(docs, 1, ExecPath::kPadded) == 12);
    CHECK_THROWS_AS(count_positions(docs, 0, ExecPath::kPacked), ArgumentError);

    auto fixed = parse_spec("fixed:512");
    auto const same = gen_synthetic(fixed, 128, 512, kSpecial);
    CHECK(count_positions(same, 8, ExecPath::kPadded) == 512ull * 8192ull);
    CHECK(count_positions(same, 8, ExecPath::kPacked) == 512ull * 8192ull);

    auto normal = parse_spec("normal:256:64");
    normal.n_docs = 500;
    auto const varied = gen_synthetic(normal, 128, 512, kSpecial);
    auto const tokens = std::accumulate(
        varied.begin(), varied.end(), std::uint64_t{0}, [](auto acc, auto const& d) { return acc + d.size(); });
    CHECK(count_positions(varied, 8, ExecPath::kPacked) == tokens);
    CHECK(count_positions(varied, 8, ExecPath::kPadded) > tokens);
}

TEST_CASE("sample standard deviation")
{
    std::vector<double> xs{2, 4, 4, 4, 5, 5, 7, 9};
    CHECK(sample_stddev(xs) == doctest::Approx(std::sqrt(32.0 / 7.0)).epsilon(1e-12));
    CHECK(sample_stddev(std::vector<double>{3.0}) == 0.0);
}

TEST_CASE("measurement reports")
{
    auto const cfg = preset("tiny_test");
    auto const params = init_params(cfg, 1);
    auto spec = parse_spec("normal:40:12");
    spec.n_docs = 24;
    auto const docs = gen_synthetic(spec, cfg.vocab_size, cfg.max_seq_len, kSpecial);
    CHECK(probe_equivalence(params, cfg, docs, 8, 0) <= 1e-5);

    auto const acct = measure(params, cfg, docs, spec, ExecPath::kPadded, 8, 0, 0, "tiny");
    CHECK(acct.samples.empty());
    CHECK(acct.positions == count_positions(docs, 8, ExecPath::kPadded));
    CHECK(report_line(acct).find("s_per_mtok") == std::string::npos);

    auto const r = measure(params, cfg, docs, spec, ExecPath::kPacked, 8, 3, 0, "tiny");
    CHECK(r.samples.size() == 3);
    CHECK(r.mean_s_per_mtok > 0.0);
    CHECK(r.mean_s_per_mtok == doctest::Approx((r.samples[0] + r.samples[1] + r.samples[2]) / 3.0));
    CHECK(r.std_s_per_mtok == doctest::Approx(sample_stddev(r.samples)));
    auto const line = report_line(r);
    CHECK(line.find("model=tiny spec=normal:40:12 spread_reading=std path=packed") == 0);
    CHECK(line.find(" reps=3 s_per_mtok=") != std::string::npos);
    CHECK(line.find("+-") != std::string::npos);

    std::vector<ThroughputReport> both{acct, r};
    auto const table = report_table(both);
    CHECK(table.find("normal:40:12") != std::string::npos);
    CHECK(table.find("padded") != std::string::npos);
}
