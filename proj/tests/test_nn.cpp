// Copyright 2026 The FedKEMF Simulator Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "fedkemf/nn.hpp"
#include "oracles.hpp"

namespace fedkemf {
namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale = 1.0) {
    std::uniform_real_distribution<double> u(-scale, scale);
    Matrix m(rows, cols);
    for (auto& v : m.values()) v = u(rng);
    return m;
}

std::vector<std::vector<double>> to_rows(const Matrix& m) {
    std::vector<std::vector<double>> rows;
    for (std::size_t r = 0; r < m.rows(); ++r) rows.emplace_back(m.row(r).begin(), m.row(r).end());
    return rows;
}

TEST(ArchSpec, ParameterCount) {
    EXPECT_EQ(parameter_count(ArchSpec(2, {}, 2)), 6u);
    EXPECT_EQ(parameter_count(ArchSpec(784, {64}, 10)), 50890u);
    EXPECT_EQ(parameter_count(ArchSpec(3, {4, 5}, 2)), 4u * 4 + 5 * 5 + 6 * 2);
}

TEST(ArchSpec, RejectsInvalid) {
    EXPECT_THROW(ArchSpec(0, {}, 2), InvalidInput);
    EXPECT_THROW(ArchSpec(3, {}, 1), InvalidInput);
    EXPECT_THROW(ArchSpec(3, {0}, 2), InvalidInput);
}

TEST(InitNetwork, ShapeDeterminismAndBounds) {
    const ArchSpec arch(784, {64}, 10);
    const auto a = init_network(arch, 0);
    const auto b = init_network(arch, 0);
    EXPECT_EQ(a.params().size(), 50890u);
    EXPECT_EQ(a, b);
    EXPECT_NE(a, init_network(arch, 1));

    const double bound0 = 1.0 / std::sqrt(784.0);
    const auto p = a.params();
    for (std::size_t i = 0; i < 784 * 64; ++i) EXPECT_LE(std::abs(p[i]), bound0);
    for (std::size_t i = 784 * 64; i < 785 * 64; ++i) EXPECT_EQ(p[i], 0.0);
    const double bound1 = 1.0 / std::sqrt(64.0);
    for (std::size_t i = 785 * 64; i < 785 * 64 + 640; ++i) EXPECT_LE(std::abs(p[i]), bound1);
    for (std::size_t i = 785 * 64 + 640; i < p.size(); ++i) EXPECT_EQ(p[i], 0.0);
}

TEST(Forward, ZeroNetworkGivesZeroLogits) {
    const Network net(ArchSpec(3, {}, 4), std::vector<double>(16, 0.0));
    const Matrix x(2, 3, std::vector<double>{1, -2, 3, 0.5, 7, -9});
    const auto z = forward(net, x);
    for (double v : z.values()) EXPECT_EQ(v, 0.0);
}

TEST(Forward, HandAffine) {
    const Network net(ArchSpec(1, {}, 2), {1.0, -1.0, 0.0, 0.0});
    const auto z = forward(net, Matrix(1, 1, std::vector<double>{3.0}));
    EXPECT_EQ(z(0, 0), 3.0);
    EXPECT_EQ(z(0, 1), -3.0);
}

TEST(Forward, ShapeContractAndDimensionCheck) {
    std::mt19937_64 rng(3);
    const auto net = init_network(ArchSpec(5, {7, 3}, 4), 11);
    const auto z = forward(net, random_matrix(9, 5, rng));
    EXPECT_EQ(z.rows(), 9u);
    EXPECT_EQ(z.cols(), 4u);
    EXPECT_THROW(forward(net, random_matrix(2, 4, rng)), InvalidInput);
}

TEST(Forward, MatchesReferenceOracle) {
    std::mt19937_64 rng(5);
    const ArchSpec arch(4, {6, 5}, 3);
    const auto net = init_network(arch, 2);
    const auto x = random_matrix(8, 4, rng);
    const auto ref = oracle::reference_logits({4, {6, 5}, 3}, {net.params().begin(), net.params().end()}, to_rows(x));
    const auto z = forward(net, x);
    for (std::size_t r = 0; r < 8; ++r) {
        for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(z(r, c), static_cast<double>(ref[r][c]), 1e-13);
    }
}

TEST(Softmax, Examples) {
    const std::vector<double> zero{0, 0, 0};
    for (double p : softmax(zero)) EXPECT_NEAR(p, 1.0 / 3.0, 1e-15);

    const std::vector<double> big{1000, 0, 0};
    const auto p = softmax(big);
    EXPECT_NEAR(p[0], 1.0, 1e-15);
    EXPECT_GT(p[1], 0.0 - 1e-300);
    EXPECT_TRUE(std::isfinite(p[1]));

    const std::vector<double> two{1, 2};
    const auto q = softmax(two);
    EXPECT_NEAR(q[0], 0.2689414213699951, 1e-12);
    EXPECT_NEAR(q[1], 0.7310585786300049, 1e-12);
}

TEST(Softmax, RejectsNonFinite) {
    const std::vector<double> bad{0.0, NAN};
    EXPECT_THROW(softmax(bad), InvalidInput);
    const std::vector<double> inf{0.0, INFINITY};
    EXPECT_THROW(softmax(inf), InvalidInput);
}

TEST(Softmax, NormalizedAndShiftInvariant) {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(-30, 30);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> z(2 + trial % 7);
        for (auto& v : z) v = u(rng);
        const auto p = softmax(z);
        double s = 0;
        for (double v : p) {
            EXPECT_GT(v, 0.0);
            s += v;
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
        const double c = u(rng);
        auto shifted = z;
        for (auto& v : shifted) v += c;
        const auto ps = softmax(shifted);
        for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], ps[i], 1e-12);
    }
}

TEST(CrossEntropy, Examples) {
    const std::vector<std::size_t> zero{0};
    EXPECT_NEAR(cross_entropy(Matrix(1, 2, {0.0, 0.0}), zero), std::log(2.0), 1e-15);
    const std::vector<std::size_t> one{1};
    EXPECT_NEAR(cross_entropy(Matrix(1, 2, {1.0, 2.0}), one), 0.3132616875182228, 1e-12);
    EXPECT_NEAR(cross_entropy(Matrix(1, 2, {0.0, 60.0}), one), 0.0, 1e-20);
}

TEST(CrossEntropy, ClampedAndRangeChecked) {
    const std::vector<std::size_t> zero{0};
    // softmax mass on the true class underflows to zero; the loss stays finite at -log(1e-12)
    EXPECT_NEAR(cross_entropy(Matrix(1, 2, {0.0, 1000.0}), zero), -std::log(kLogFloor), 1e-9);
    const std::vector<std::size_t> bad{2};
    EXPECT_THROW(cross_entropy(Matrix(1, 2, {0.0, 0.0}), bad), InvalidInput);
}

TEST(KlDivergence, Examples) {
    const Matrix a(1, 3, {0.3, -1.0, 2.0});
    EXPECT_NEAR(kl_divergence(a, a), 0.0, 1e-15);
    EXPECT_NEAR(kl_divergence(Matrix(1, 2, {0.0, 0.0}), Matrix(1, 2, {1.0, 0.0})), 0.12011450695827758, 1e-12);
    EXPECT_THROW(kl_divergence(Matrix(1, 2), Matrix(1, 3)), InvalidInput);
}

TEST(KlDivergence, NonNegativeAndShiftZero) {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> u(-4, 4);
    for (int trial = 0; trial < 100; ++trial) {
        const auto t = random_matrix(5, 4, rng, 6.0);
        const auto s = random_matrix(5, 4, rng, 6.0);
        EXPECT_GE(kl_divergence(t, s), 0.0);
        Matrix shifted = t;
        for (std::size_t r = 0; r < 5; ++r) {
            const double c = u(rng);
            for (auto& v : shifted.row(r)) v += c;
        }
        EXPECT_LT(kl_divergence(t, shifted), 1e-12);
    }
}

TEST(LossGradient, LogitLayerIdentityOnZeroHiddenNet) {
    // Zero params: uniform logits; with one input of value 1, the bias gradient is q - onehot.
    const Network net(ArchSpec(1, {}, 3), std::vector<double>(6, 0.0));
    const Batch batch{Matrix(1, 1, {1.0}), {0}};
    const auto g = loss_gradient(net, batch);
    const double third = 1.0 / 3.0;
    // weight block (3x1) then biases (3)
    EXPECT_NEAR(g[3], third - 1.0, 1e-15);
    EXPECT_NEAR(g[4], third, 1e-15);
    EXPECT_NEAR(g[5], third, 1e-15);
    EXPECT_NEAR(g[0], third - 1.0, 1e-15);
}

TEST(LossGradient, CombinedLogitGradientIsTwoResiduals) {
    std::mt19937_64 rng(31);
    const Network net = init_network(ArchSpec(4, {}, 3), 9);
    const Batch batch{random_matrix(6, 4, rng), {0, 1, 2, 2, 1, 0}};
    const Matrix teacher = softmax_rows(random_matrix(6, 3, rng, 3.0));
    const auto g = loss_gradient(net, batch, &teacher);
    const auto q = softmax_rows(forward(net, batch.features));
    // bias gradients = mean over rows of (q - y) + (q - p)
    for (std::size_t k = 0; k < 3; ++k) {
        double expect = 0;
        for (std::size_t r = 0; r < 6; ++r) {
            expect += (q(r, k) - (batch.labels[r] == k ? 1.0 : 0.0)) + (q(r, k) - teacher(r, k));
        }
        EXPECT_NEAR(g[12 + k], expect / 6.0, 1e-14);
    }
}

TEST(LossGradient, SelfTeacherAddsNothing) {
    std::mt19937_64 rng(37);
    const Network net = init_network(ArchSpec(5, {6}, 4), 4);
    const Batch batch{random_matrix(7, 5, rng), {0, 1, 2, 3, 0, 1, 2}};
    const Matrix self = softmax_rows(forward(net, batch.features));
    const auto with = loss_gradient(net, batch, &self);
    const auto without = loss_gradient(net, batch);
    for (std::size_t i = 0; i < with.size(); ++i) EXPECT_NEAR(with[i], without[i], 1e-15);
}

TEST(LossGradient, MatchesCentralDifferences) {
    for (const auto& hidden : {std::vector<std::size_t>{}, std::vector<std::size_t>{8}, std::vector<std::size_t>{8, 8}}) {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            std::mt19937_64 rng(100 + seed);
            const ArchSpec arch(6, hidden, 4);
            const Network net = init_network(arch, seed);
            const Batch batch{random_matrix(5, 6, rng), {0, 3, 1, 2, 3}};
            const Matrix teacher = softmax_rows(random_matrix(5, 4, rng, 2.0));
            const oracle::Layout layout{6, hidden, 4};
            const auto rows = to_rows(batch.features);
            const std::vector<std::vector<double>> tp = to_rows(teacher);
            for (bool use_teacher : {false, true}) {
                const auto analytic = loss_gradient(net, batch, use_teacher ? &teacher : nullptr);
                const auto numeric = oracle::central_differences(
                    [&](const std::vector<double>& p) {
                        return oracle::reference_loss(layout, p, rows, batch.labels,
                                                      use_teacher ? tp : std::vector<std::vector<double>>{});
                    },
                    {net.params().begin(), net.params().end()}, 1e-5);
                EXPECT_LT(oracle::max_relative_error(analytic, numeric), 1e-4)
                    << "arch " << arch.to_string() << " seed " << seed << " teacher " << use_teacher;
            }
        }
    }
}

TEST(KlGradient, MatchesCentralDifferences) {
    std::mt19937_64 rng(7);
    const ArchSpec arch(3, {5}, 3);
    const Network net = init_network(arch, 3);
    const Matrix x = random_matrix(4, 3, rng);
    const Matrix teacher = softmax_rows(random_matrix(4, 3, rng, 2.0));
    const auto analytic = kl_gradient(net, x, teacher);
    const auto numeric = oracle::central_differences(
        [&](const std::vector<double>& p) {
            const Network probe(arch, p);
            return static_cast<long double>(kl_divergence_from_probs(teacher, forward(probe, x)));
        },
        {net.params().begin(), net.params().end()}, 1e-5);
    EXPECT_LT(oracle::max_relative_error(analytic, numeric, 1e-5), 1e-4);
}

TEST(SgdStep, Examples) {
    Network net(ArchSpec(1, {}, 2), {1.0, 1.0, 0.0, 0.0});
    const std::vector<double> zero(4, 0.0);
    sgd_step(net, zero, 0.3);
    EXPECT_EQ(net.params()[0], 1.0);

    const std::vector<double> g{1.0, -1.0, 0.0, 0.0};
    sgd_step(net, g, 0.5);
    EXPECT_EQ(net.params()[0], 0.5);
    EXPECT_EQ(net.params()[1], 1.5);

    Network twice(ArchSpec(1, {}, 2), {1.0, 2.0, 3.0, 4.0});
    const std::vector<double> c{0.5, -2.0, 1.0, 0.25};
    sgd_step(twice, c, 0.1);
    sgd_step(twice, c, 0.1);
    const std::vector<double> start{1.0, 2.0, 3.0, 4.0};
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(twice.params()[i], start[i] - 0.2 * c[i], 1e-15);
}

TEST(SgdStep, RejectsNonFiniteGradientWithoutTouchingParams) {
    Network net(ArchSpec(1, {}, 2), {1.0, 1.0, 0.0, 0.0});
    const std::vector<double> bad{NAN, 0.0, 0.0, 0.0};
    EXPECT_THROW(sgd_step(net, bad, 0.1), InvalidInput);
    EXPECT_EQ(net.params()[0], 1.0);
    const std::vector<double> short_grad{1.0};
    EXPECT_THROW(sgd_step(net, short_grad, 0.1), InvalidInput);
    const std::vector<double> ok(4, 0.0);
    EXPECT_THROW(sgd_step(net, ok, 0.0), InvalidInput);
}

TEST(Evaluate, TieBreakTowardsLowestClass) {
    const Network uniform(ArchSpec(2, {}, 2), std::vector<double>(6, 0.0));
    const Batch data{Matrix(5, 2, {1, 2, 3, 4, 5, 6, 7, 8, 9, 0}), {0, 1, 0, 1, 1}};
    const auto ev = evaluate(uniform, data);
    EXPECT_DOUBLE_EQ(ev.accuracy, 0.4);
    EXPECT_NEAR(ev.mean_loss, std::log(2.0), 1e-15);
}

TEST(Evaluate, PerfectHandBuiltClassifier) {
    // class = sign of the first coordinate
    const Network net(ArchSpec(2, {}, 2), {-1.0, 0.0, 1.0, 0.0, 0.0, 0.0});
    const Batch data{Matrix(4, 2, {-1, 1, -2, -1, 1, 3, 2, -2}), {0, 0, 1, 1}};
    EXPECT_DOUBLE_EQ(evaluate(net, data).accuracy, 1.0);
}

TEST(Evaluate, RangeAndEmptyInput) {
    std::mt19937_64 rng(41);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto net = init_network(ArchSpec(3, {4}, 3), seed);
        const Batch data{random_matrix(20, 3, rng), std::vector<std::size_t>(20, seed % 3)};
        const auto ev = evaluate(net, data);
        EXPECT_GE(ev.accuracy, 0.0);
        EXPECT_LE(ev.accuracy, 1.0);
        EXPECT_GE(ev.mean_loss, 0.0);
    }
    const auto net = init_network(ArchSpec(3, {}, 3), 0);
    EXPECT_THROW(evaluate(net, Batch{Matrix(0, 3), {}}), InvalidInput);
}

TEST(Determinism, IdenticalTrajectories) {
    std::mt19937_64 rng(43);
    const Batch batch{random_matrix(12, 4, rng), {0, 1, 2, 0, 1, 2, 0, 1, 2, 0, 1, 2}};
    auto run = [&] {
        auto net = init_network(ArchSpec(4, {8}, 3), 77);
        for (int step = 0; step < 25; ++step) sgd_step(net, loss_gradient(net, batch), 0.1);
        return net;
    };
    const auto a = run();
    const auto b = run();
    EXPECT_EQ(a, b);
}

}  // namespace
}  // namespace fedkemf
