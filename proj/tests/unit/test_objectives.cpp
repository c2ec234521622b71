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

#include "mgbert/objectives.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>

using namespace mgbert;

namespace
{

SpecialIds const kSpecial{0, 1, 2, 3, 4};

Matrix<double> random_matrix(std::int64_t rows, std::int64_t cols, Rng& rng)
{
    Matrix<double> m(rows, cols);
    for (auto& x : m.data)
    {
        x = rng.normal();
    }
    return m;
}

double cosine(double const* a, double const* b, std::int64_t n)
{
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::int64_t i = 0; i < n; ++i)
    {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    return ab / std::sqrt(aa * bb);
}

// Mean over queries of -log softmax(positive) among all positives and negatives.
double brute_info_nce(Matrix<double> const& q, Matrix<double> const& p, Matrix<double> const& n, double tau)
{
    double total = 0.0;
    for (std::int64_t i = 0; i < q.rows; ++i)
    {
        std::vector<double> s;
        for (std::int64_t j = 0; j < p.rows; ++j)
        {
            s.push_back(cosine(q.row(i), p.row(j), q.cols) / tau);
        }
        for (std::int64_t j = 0; j < n.rows; ++j)
        {
            s.push_back(cosine(q.row(i), n.row(j), q.cols) / tau);
        }
        double z = 0.0;
        for (auto const x : s)
        {
            z += std::exp(x);
        }
        total += std::log(z) - s[static_cast<std::size_t>(i)];
    }
    return total / static_cast<double>(q.rows);
}

} // namespace

TEST_CASE("rate zero masks nothing")
{
    Rng rng(1);
    std::vector<TokenId> ids(100, 9);
    auto const m = mlm_mask(ids, 0.0, MaskPolicy::kAllMask, kSpecial, 64, rng);
    CHECK(m.mask_positions.empty());
    CHECK(m.corrupted_ids == ids);
    for (auto const l : m.labels)
    {
        CHECK(l == kIgnoreLabel);
    }
    CHECK_THROWS_AS(mlm_mask(ids, 1.0, MaskPolicy::kAllMask, kSpecial, 64, rng), ArgumentError);
}

TEST_CASE("masked count follows the binomial at the 30% rate")
{
    std::vector<TokenId> ids(10000, 7);
    Rng rng(2024);
    auto const m = mlm_mask(ids, 0.30, MaskPolicy::kAllMask, kSpecial, 64, rng);
    double const sigma = std::sqrt(10000 * 0.3 * 0.7);
    CHECK(std::abs(static_cast<double>(m.mask_positions.size()) - 3000.0) <= 3.0 * sigma);
    for (auto const pos : m.mask_positions)
    {
        CHECK(m.corrupted_ids[pos] == kSpecial.mask);
        CHECK(m.labels[pos] == 7);
    }

    double mean = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed)
    {
        Rng r(seed);
        mean += static_cast<double>(mlm_mask(ids, 0.30, MaskPolicy::kAllMask, kSpecial, 64, r).mask_positions.size())
            / 10000.0;
    }
    CHECK(std::abs(mean / 100.0 - 0.30) <= 0.005);
}

TEST_CASE("specials are never masked")
{
    Rng rng(3);
    for (int batch = 0; batch < 1000; ++batch)
    {
        std::vector<TokenId> ids(24);
        for (auto& t : ids)
        {
            t = static_cast<TokenId>(rng.below(12));
        }
        auto const policy = batch % 2 == 0 ? MaskPolicy::kAllMask : MaskPolicy::kBert801010;
        auto const m = mlm_mask(ids, 0.5, policy, kSpecial, 12, rng);
        for (std::size_t i = 0; i < ids.size(); ++i)
        {
            bool const masked = m.labels[i] != kIgnoreLabel;
            if (ids[i] == kSpecial.cls || ids[i] == kSpecial.sep || ids[i] == kSpecial.pad || ids[i] == kSpecial.mask)
            {
                CHECK_FALSE(masked);
                CHECK(m.corrupted_ids[i] == ids[i]);
            }
            if (policy == MaskPolicy::kAllMask)
            {
                CHECK((m.corrupted_ids[i] != ids[i]) == masked);
            }
            else if (masked && m.corrupted_ids[i] != kSpecial.mask && m.corrupted_ids[i] != ids[i])
            {
                CHECK_FALSE(kSpecial.is_special(m.corrupted_ids[i]));
            }
        }
    }
}

TEST_CASE("80/10/10 proportions")
{
    Rng rng(4);
    std::vector<TokenId> ids(20000, 9);
    auto const m = mlm_mask(ids, 0.5, MaskPolicy::kBert801010, kSpecial, 64, rng);
    double mask = 0, same = 0;
    for (auto const p : m.mask_positions)
    {
        mask += m.corrupted_ids[p] == kSpecial.mask;
        same += m.corrupted_ids[p] == 9;
    }
    auto const n = static_cast<double>(m.mask_positions.size());
    CHECK(mask / n == doctest::Approx(0.8).epsilon(0.03));
    // "Unchanged" also catches random replacements that drew the original id.
    CHECK(same / n == doctest::Approx(0.1 + 0.1 / 59).epsilon(0.15));
}

TEST_CASE("mlm loss is ln V on uniform logits")
{
    for (std::int64_t v : {2, 64, 31168})
    {
        Matrix<double> logits(3, v, 0.25);
        std::vector<TokenId> labels{1, kIgnoreLabel, 0};
        CHECK(mlm_loss(logits, labels).loss == doctest::Approx(std::log(static_cast<double>(v))).epsilon(1e-14));
    }
    Matrix<double> logits(2, 4);
    std::vector<TokenId> none{kIgnoreLabel, kIgnoreLabel};
    CHECK_THROWS_AS(mlm_loss(logits, none), ArgumentError);
}

TEST_CASE("mlm loss shrinks with the margin of the correct class")
{
    double previous = 1e300;
    for (double margin : {1.0, 5.0, 10.0})
    {
        Matrix<double> logits(1, 8);
        logits(0, 3) = margin;
        std::vector<TokenId> labels{3};
        auto const loss = mlm_loss(logits, labels).loss;
        CHECK(loss < previous);
        CHECK(loss == doctest::Approx(std::log(1.0 + 7.0 * std::exp(-margin))).epsilon(1e-12));
        previous = loss;
    }
}

TEST_CASE("mlm loss and gradient match a brute-force average")
{
    Rng rng(6);
    auto const logits = random_matrix(6, 10, rng);
    std::vector<TokenId> labels{3, kIgnoreLabel, 9, 0, kIgnoreLabel, 4};
    double want = 0.0;
    int n = 0;
    for (std::int64_t r = 0; r < 6; ++r)
    {
        if (labels[r] == kIgnoreLabel)
        {
            continue;
        }
        double z = 0.0;
        for (std::int64_t c = 0; c < 10; ++c)
        {
            z += std::exp(logits(r, c));
        }
        want += std::log(z) - logits(r, labels[r]);
        ++n;
    }
    want /= n;
    auto const got = mlm_loss(logits, labels, 0.5);
    CHECK(std::abs(got.loss - want) <= 1e-7);

    // Extra ignored rows change nothing.
    Matrix<double> more(8, 10);
    std::copy(logits.data.begin(), logits.data.end(), more.data.begin());
    auto more_labels = labels;
    more_labels.push_back(kIgnoreLabel);
    more_labels.push_back(kIgnoreLabel);
    CHECK(mlm_loss(more, more_labels).loss == doctest::Approx(got.loss).epsilon(1e-15));

    // d_logits is the weighted gradient of the mean.
    double const h = 1e-6;
    for (std::int64_t r : {0, 2})
    {
        for (std::int64_t c : {0, 3, 9})
        {
            auto up = logits;
            up(r, c) += h;
            auto down = logits;
            down(r, c) -= h;
            double const numeric = (mlm_loss(up, labels).loss - mlm_loss(down, labels).loss) / (2 * h);
            CHECK(got.d_logits(r, c) == doctest::Approx(0.5 * numeric).epsilon(1e-6));
        }
    }
    CHECK(got.d_logits(1, 4) == 0.0);
}

TEST_CASE("position cross entropy on uniform scores is ln n")
{
    std::vector<double> scores(37, 1.5);
    std::vector<double> d(37);
    CHECK(position_cross_entropy<double>(scores, 5, d, 1.0) == doctest::Approx(std::log(37.0)).epsilon(1e-14));
    CHECK(d[5] == doctest::Approx(1.0 / 37 - 1.0).epsilon(1e-14));
    CHECK(d[6] == doctest::Approx(1.0 / 37).epsilon(1e-14));
}

TEST_CASE("mntp shifts labels one position left")
{
    std::vector<TokenId> ids{10, 11, 12, 13, 14, 15, 16, 17, 18};
    std::vector<std::int64_t> five{5};
    auto const t = mntp_targets(ids, five);
    CHECK(t.prediction_positions == std::vector<std::int64_t>{4});
    CHECK(t.labels == std::vector<TokenId>{15});

    std::vector<std::int64_t> two{3, 7};
    auto const u = mntp_targets(ids, two);
    CHECK(u.prediction_positions == std::vector<std::int64_t>{2, 6});
    CHECK(u.labels == std::vector<TokenId>{13, 17});

    std::vector<std::int64_t> with_zero{0, 4, 8};
    auto const w = mntp_targets(ids, with_zero);
    CHECK(w.labels.size() == 2);
    CHECK(w.prediction_positions == std::vector<std::int64_t>{3, 7});
}

TEST_CASE("info_nce with identical similarities is ln N")
{
    Matrix<double> q(128, 4, 1.0);
    Matrix<double> p(128, 4, 1.0);
    Matrix<double> none(0, 4);
    auto const r = info_nce(q, p, none, 0.05);
    CHECK(std::abs(r.loss - std::log(128.0)) <= 1e-6);
    CHECK(std::abs(r.loss - 4.8520) <= 5e-5);

    Matrix<double> n(64, 4, 2.0);
    CHECK(std::abs(info_nce(q, p, n, 0.05).loss - std::log(192.0)) <= 1e-9);
}

TEST_CASE("info_nce matches a brute-force oracle and ignores negative order")
{
    Rng rng(10);
    auto const q = random_matrix(5, 8, rng);
    auto const p = random_matrix(5, 8, rng);
    auto const n = random_matrix(7, 8, rng);
    auto const r = info_nce(q, p, n, 0.1);
    CHECK(r.loss == doctest::Approx(brute_info_nce(q, p, n, 0.1)).epsilon(1e-12));

    Matrix<double> rev(7, 8);
    for (std::int64_t i = 0; i < 7; ++i)
    {
        std::copy_n(n.row(6 - i), 8, rev.row(i));
    }
    CHECK(info_nce(q, p, rev, 0.1).loss == doctest::Approx(r.loss).epsilon(1e-14));

    // Positive far more similar than anything else drives the loss to zero.
    Matrix<double> qa(2, 2), pa(2, 2), na(2, 2);
    qa(0, 0) = 1; pa(0, 0) = 1; qa(1, 1) = 1; pa(1, 1) = 1;
    na(0, 0) = -1; na(1, 1) = -1;
    CHECK(info_nce(qa, pa, na, 0.01).loss < 1e-40);

    Matrix<double> zero(5, 8);
    CHECK_THROWS_AS(info_nce(zero, p, n, 0.1), ArgumentError);
    CHECK_THROWS_AS(info_nce(random_matrix(1, 8, rng), random_matrix(1, 8, rng), n, 0.1), ArgumentError);
}

TEST_CASE("info_nce gradients match finite differences")
{
    Rng rng(11);
    auto const q = random_matrix(4, 6, rng);
    auto const p = random_matrix(4, 6, rng);
    auto const n = random_matrix(8, 6, rng);
    for (bool in_batch : {true, false})
    {
        auto const r = info_nce(q, p, n, 0.2, in_batch);
        double diff2 = 0.0, ref2 = 0.0;
        double const h = 1e-6;
        for (std::size_t i = 0; i < q.data.size(); ++i)
        {
            auto up = q;
            up.data[i] += h;
            auto down = q;
            down.data[i] -= h;
            double const numeric
                = (info_nce(up, p, n, 0.2, in_batch).loss - info_nce(down, p, n, 0.2, in_batch).loss) / (2 * h);
            diff2 += (numeric - r.d_queries.data[i]) * (numeric - r.d_queries.data[i]);
            ref2 += numeric * numeric;
        }
        CHECK(std::sqrt(diff2 / ref2) <= 1e-4);
        for (std::size_t i = 0; i < n.data.size(); i += 5)
        {
            auto up = n;
            up.data[i] += h;
            auto down = n;
            down.data[i] -= h;
            double const numeric
                = (info_nce(q, p, up, 0.2, in_batch).loss - info_nce(q, p, down, 0.2, in_batch).loss) / (2 * h);
            CHECK(r.d_negatives.data[i] == doctest::Approx(numeric).epsilon(1e-5));
        }
    }
}
