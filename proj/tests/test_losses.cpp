// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "deiii/losses.hpp"
#include "oracles.hpp"

using deiii::accuracy;
using deiii::ccc;
using deiii::ccc_loss;
using deiii::cross_entropy;
using deiii::f1_scores;
using deiii::grad_check;
using deiii::LossBundle;
using deiii::MetricReport;
using deiii::Rng;
using deiii::Shape;
using deiii::Var;

using TensorD = deiii::Tensor<double>;
using VarD = Var<double>;

TEST_CASE("cross entropy on uniform logits equals ln C exactly") {
    TensorD logits(Shape{4, 6}, 0.25);
    VarD loss = cross_entropy(VarD::leaf(logits), {0, 1, 2, 3});
    CHECK(loss.value().at(0) == std::log(6.0));
}

TEST_CASE("cross entropy vanishes for a confidently correct prediction") {
    TensorD logits(Shape{1, 3});
    logits.at(0, 1) = 1e6;
    VarD loss = cross_entropy(VarD::leaf(logits), {1});
    CHECK(loss.value().at(0) >= 0.0);
    CHECK(loss.value().at(0) < 1e-12);
}

TEST_CASE("cross entropy matches the frozen worked value") {
    VarD loss = cross_entropy(VarD::leaf(TensorD::matrix({{1, 2}})), {0});
    CHECK(std::abs(loss.value().at(0) - std::log(1.0 + std::exp(1.0))) < 1e-12);
}

TEST_CASE("cross entropy rejects bad labels and shapes") {
    VarD logits = VarD::leaf(TensorD::matrix({{1, 2}, {3, 4}}));
    CHECK_THROWS_AS(cross_entropy(logits, {0, 2}), std::invalid_argument);
    CHECK_THROWS_AS(cross_entropy(logits, {0}), std::invalid_argument);
    CHECK_THROWS_AS(cross_entropy(VarD::leaf(TensorD::vector({1, 2})), {0}), std::invalid_argument);
}

TEST_CASE("cross entropy matches the scalar oracle on 100 random cases") {
    Rng rng(200);
    for (int it = 0; it < 100; ++it) {
        const std::size_t b = 1 + rng.below(5), c = 2 + rng.below(5);
        TensorD logits = oracles::random_tensor(rng, {b, c}, -4.0, 4.0);
        std::vector<std::size_t> labels(b);
        for (auto& l : labels) l = rng.below(c);
        VarD loss = cross_entropy(VarD::leaf(logits), labels);
        CHECK(loss.value().at(0) >= 0.0);
        CHECK(std::abs(loss.value().at(0) - oracles::naive_cross_entropy(logits, labels)) < 1e-12);
    }
}

TEST_CASE("cross entropy gradient passes the finite-difference check") {
    Rng rng(201);
    TensorD logits = oracles::random_tensor(rng, {3, 4}, -2.0, 2.0);
    const std::vector<std::size_t> labels{1, 0, 3};
    double err = grad_check<double>([&](const VarD& x) { return cross_entropy(x, labels); }, logits);
    CHECK(err < 1e-4);
}

TEST_CASE("ccc reproduces its worked values and degenerate rules") {
    CHECK(std::abs(ccc({1, 2, 3}, {2, 4, 6}) - 4.0 / 11.0) < 1e-15);
    CHECK(ccc({1, 2, 3}, {1, 2, 3}) == 1.0);
    CHECK(ccc({5, 5, 5}, {7, 7, 7}) == 0.0);  // zero covariance, nonzero gap
    CHECK(ccc({5, 5}, {5, 5}) == 1.0);        // identical constants
    CHECK_THROWS_AS(ccc({1.0}, {1.0}), std::invalid_argument);
    CHECK_THROWS_AS(ccc({1, 2}, {1, 2, 3}), std::invalid_argument);
}

TEST_CASE("ccc is symmetric, bounded, and affine-stable on random batches") {
    Rng rng(210);
    for (int it = 0; it < 100; ++it) {
        const std::size_t b = 2 + rng.below(8);
        std::vector<double> x(b), y(b);
        for (std::size_t i = 0; i < b; ++i) {
            x[i] = rng.uniform(-3, 3);
            y[i] = rng.uniform(-3, 3);
        }
        const double c = ccc(x, y);
        CHECK(c == ccc(y, x));
        CHECK(std::abs(c) <= 1.0 + 1e-12);
        CHECK(std::abs(c - oracles::naive_ccc(x, y)) < 1e-12);

        // same positive affine map applied to both sides
        const double a = rng.uniform(0.5, 3.0), s = rng.uniform(-2.0, 2.0);
        std::vector<double> xa(b), ya(b);
        for (std::size_t i = 0; i < b; ++i) {
            xa[i] = a * x[i] + s;
            ya[i] = a * y[i] + s;
        }
        CHECK(std::abs(ccc(xa, ya) - c) < 1e-10);
    }
}

TEST_CASE("ccc loss is zero at agreement and positive under anti-correlation") {
    Rng rng(220);
    TensorD t = oracles::random_tensor(rng, {4, 3});
    CHECK(ccc_loss(VarD::leaf(t), t).value().at(0) < 1e-15);

    TensorD p = t;
    for (std::size_t i = 0; i < 4; ++i) p.at(i, 2) = -2.0 * t.at(i, 2) + 1.0;
    CHECK(ccc_loss(VarD::leaf(p), t).value().at(0) > 0.0);
}

TEST_CASE("ccc loss matches the scalar transcription on random batches") {
    Rng rng(221);
    for (int it = 0; it < 100; ++it) {
        TensorD p = oracles::random_tensor(rng, {4, 3}, -2.0, 2.0);
        TensorD t = oracles::random_tensor(rng, {4, 3}, -2.0, 2.0);
        double want = 0;
        for (std::size_t d = 0; d < 3; ++d) {
            std::vector<double> px(4), tx(4);
            for (std::size_t i = 0; i < 4; ++i) {
                px[i] = p.at(i, d);
                tx[i] = t.at(i, d);
            }
            want += 1.0 - oracles::naive_ccc(px, tx);
        }
        want /= 3.0;
        CHECK(std::abs(ccc_loss(VarD::leaf(p), t).value().at(0) - want) < 1e-12);
    }
}

TEST_CASE("ccc loss rejects shape and batch-size violations") {
    Rng rng(222);
    TensorD t = oracles::random_tensor(rng, {4, 3});
    CHECK_THROWS_AS(ccc_loss(VarD::leaf(oracles::random_tensor(rng, {4, 2})), t), std::invalid_argument);
    TensorD one = oracles::random_tensor(rng, {1, 3});
    CHECK_THROWS_AS(ccc_loss(VarD::leaf(one), one), std::invalid_argument);
}

TEST_CASE("ccc loss gradient passes the finite-difference check") {
    Rng rng(223);
    TensorD t = oracles::random_tensor(rng, {4, 3});
    TensorD p = oracles::random_tensor(rng, {4, 3});
    double err = grad_check<double>([&](const VarD& x) { return ccc_loss(x, t); }, p);
    CHECK(err < 1e-4);
}

TEST_CASE("f1 reproduces the worked confusion case") {
    auto r = f1_scores({0, 0, 1, 1}, {0, 1, 1, 1}, 2);
    CHECK(std::abs(r.per_class[0] - 2.0 / 3.0) < 1e-15);
    CHECK(std::abs(r.per_class[1] - 4.0 / 5.0) < 1e-15);
    CHECK(std::abs(r.macro - 11.0 / 15.0) < 1e-15);
    CHECK(r.micro == 0.75);
}

TEST_CASE("f1 edge rules: perfect, absent class, rejection") {
    auto perfect = f1_scores({0, 1, 2}, {0, 1, 2}, 3);
    CHECK(perfect.macro == 1.0);
    CHECK(perfect.micro == 1.0);

    // class 2 never appears: contributes 0 to the macro mean
    auto absent = f1_scores({0, 1}, {0, 1}, 3);
    CHECK(absent.per_class[2] == 0.0);
    CHECK(std::abs(absent.macro - 2.0 / 3.0) < 1e-15);

    CHECK_THROWS_AS(f1_scores({0, 3}, {0, 1}, 2), std::invalid_argument);
    CHECK_THROWS_AS(f1_scores({0}, {0, 1}, 2), std::invalid_argument);
    CHECK_THROWS_AS(f1_scores({}, {}, 2), std::invalid_argument);
}

TEST_CASE("f1 matches the confusion-matrix oracle and micro equals accuracy") {
    Rng rng(230);
    for (int it = 0; it < 100; ++it) {
        const std::size_t n = 1 + rng.below(20), c = 2 + rng.below(4);
        std::vector<std::size_t> preds(n), labels(n);
        for (std::size_t i = 0; i < n; ++i) {
            preds[i] = rng.below(c);
            labels[i] = rng.below(c);
        }
        auto got = f1_scores(preds, labels, c);
        auto want = oracles::naive_f1(preds, labels, c);
        CHECK(std::abs(got.macro - want.macro) < 1e-12);
        CHECK(std::abs(got.micro - want.micro) < 1e-12);
        for (std::size_t k = 0; k < c; ++k) CHECK(std::abs(got.per_class[k] - want.per_class[k]) < 1e-12);
        CHECK(std::abs(got.micro - accuracy(preds, labels)) < 1e-12);
    }
}

TEST_CASE("accuracy counts exact matches") {
    CHECK(accuracy({0, 1, 2, 2}, {0, 1, 1, 2}) == 0.75);
    CHECK(accuracy({1, 1}, {1, 1}) == 1.0);
    CHECK(accuracy({0, 0}, {1, 1}) == 0.0);
    CHECK_THROWS_AS(accuracy({0}, {0, 1}), std::invalid_argument);
    CHECK_THROWS_AS(accuracy({}, {}), std::invalid_argument);
}

TEST_CASE("loss bundle total is the sum of its parts") {
    LossBundle b = LossBundle::of(0.5, 0.25, 0.125);
    CHECK(b.total == 0.875);
    CHECK(b.l_v == 0.5);
    CHECK(b.l_a == 0.25);
    CHECK(b.l_f == 0.125);
}

TEST_CASE("metric reports carry the right fields per task") {
    MetricReport d = deiii::report_discrete({0, 1, 1}, {0, 1, 0}, 2);
    CHECK(d.discrete);
    CHECK(std::abs(d.accuracy - 2.0 / 3.0) < 1e-15);
    CHECK(d.f1_per_class.size() == 2);

    Rng rng(240);
    TensorD t = oracles::random_tensor(rng, {5, 3});
    MetricReport c = deiii::report_continuous(t, t);
    CHECK(!c.discrete);
    CHECK(c.ccc_valence == 1.0);
    CHECK(c.ccc_arousal == 1.0);
    CHECK(c.ccc_dominance == 1.0);
    CHECK_THROWS_AS(deiii::report_continuous(oracles::random_tensor(rng, {5, 2}),
                                             oracles::random_tensor(rng, {5, 2})),
                    std::invalid_argument);
}
