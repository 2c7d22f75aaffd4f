#include <doctest.h>

#include <cmath>

#include "biasblend/ops.hpp"
#include "biasblend/rng.hpp"

#include "oracles.hpp"

using namespace bb;

namespace {

// relative error against the finite-difference oracle, guarded for tiny
// denominators
double rel_err(const TensorD& fd, const TensorD& analytic) {
    double worst = 0;
    for (std::int64_t i = 0; i < fd.numel(); ++i) {
        const double denom = std::max({1e-6, std::abs(fd.data[i]), std::abs(analytic.data[i])});
        worst = std::max(worst, std::abs(fd.data[i] - analytic.data[i]) / denom);
    }
    return worst;
}

}  // namespace

TEST_CASE("layernorm constant input collapses to the shift") {
    TensorD x = TensorD::full({6}, 3.7);
    TensorD gain = TensorD::full({6}, 2.0);
    TensorD shift({6}, {1, 2, 3, 4, 5, 6});
    TensorD y = ops::layernorm_forward(x, 6, gain, shift);
    for (std::int64_t i = 0; i < 6; ++i) CHECK(y.data[i] == doctest::Approx(shift.data[i]));
}

TEST_CASE("layernorm symmetric pair") {
    TensorD x({2}, {1, -1});
    TensorD y = ops::layernorm_forward(x, 2, TensorD{}, TensorD{});
    CHECK(y.data[0] == doctest::Approx(0.999995).epsilon(1e-6));
    CHECK(y.data[1] == doctest::Approx(-0.999995).epsilon(1e-6));
}

TEST_CASE("layernorm output statistics") {
    Rng rng(11);
    TensorD x = TensorD::uniform({4, 32}, rng, -3, 3);
    TensorD y = ops::layernorm_forward(x, 32, TensorD{}, TensorD{});
    for (std::int64_t r = 0; r < 4; ++r) {
        double mean = 0, var = 0;
        for (std::int64_t i = 0; i < 32; ++i) mean += y.data[r * 32 + i];
        mean /= 32;
        for (std::int64_t i = 0; i < 32; ++i) {
            const double d = y.data[r * 32 + i] - mean;
            var += d * d;
        }
        var /= 32;
        CHECK(std::abs(mean) < 1e-6);
        CHECK(std::abs(var - 1.0) < 1e-4);
    }
}

TEST_CASE("layernorm backward matches central differences") {
    Rng rng(12);
    TensorD x = TensorD::uniform({3, 8}, rng, -2, 2);
    TensorD gain = TensorD::uniform({8}, rng, 0.5, 1.5);
    TensorD shift = TensorD::uniform({8}, rng, -1, 1);
    TensorD dy = TensorD::uniform({3, 8}, rng, -1, 1);
    auto loss = [&](const TensorD& xx) {
        TensorD y = ops::layernorm_forward(xx, 8, gain, shift);
        double s = 0;
        for (std::int64_t i = 0; i < y.numel(); ++i) s += y.data[i] * dy.data[i];
        return s;
    };
    TensorD fd = ops::finite_diff_grad(loss, x);
    auto g = ops::layernorm_backward(x, 8, gain, dy);
    CHECK(rel_err(fd, g.dx) < 1e-3);
}

TEST_CASE("gelu fixed points and asymptote") {
    CHECK(ops::gelu_scalar(0.0) == 0.0);
    CHECK(std::abs(ops::gelu_scalar(10.0) - 10.0) < 1e-6);
    CHECK(ops::gelu_scalar(1.0) == doctest::Approx(0.8413).epsilon(1.2e-3));
}

TEST_CASE("gelu backward matches central differences") {
    Rng rng(13);
    TensorD x = TensorD::uniform({50}, rng, -4, 4);
    TensorD dy = TensorD::full({50}, 1.0);
    auto loss = [&](const TensorD& xx) {
        TensorD y = ops::gelu_forward(xx);
        double s = 0;
        for (auto v : y.data) s += v;
        return s;
    };
    TensorD fd = ops::finite_diff_grad(loss, x);
    TensorD dx = ops::gelu_backward(x, dy);
    CHECK(rel_err(fd, dx) < 1e-3);
}

TEST_CASE("cross entropy of uniform logits is ln C") {
    TensorD logits = TensorD::full({4, 10}, 0.25);
    const double loss = ops::cross_entropy_forward(logits, {0, 3, 5, 9});
    CHECK(loss == doctest::Approx(2.302585).epsilon(1e-6));
}

TEST_CASE("cross entropy with a huge true-class margin goes to zero") {
    TensorD logits = TensorD::zeros({2, 5});
    logits.at(0, 2) = 50.0;
    logits.at(1, 4) = 50.0;
    CHECK(ops::cross_entropy_forward(logits, {2, 4}) < 1e-9);
}

TEST_CASE("cross entropy matches a 64-bit softmax oracle") {
    Rng rng(14);
    TensorD logits = TensorD::uniform({3, 4}, rng, -5, 5);
    std::vector<std::int64_t> labels = {1, 0, 3};
    std::vector<std::vector<double>> rows(3, std::vector<double>(4));
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 4; ++j) rows[i][j] = logits.at(i, j);
    CHECK(std::abs(ops::cross_entropy_forward(logits, labels) -
                   oracle::cross_entropy(rows, labels)) < 1e-6);
}

TEST_CASE("cross entropy rejects out-of-range labels") {
    TensorD logits = TensorD::zeros({2, 3});
    CHECK_THROWS_AS((void)ops::cross_entropy_forward(logits, {0, 3}), std::invalid_argument);
    CHECK_THROWS_AS((void)ops::cross_entropy_forward(logits, {-1, 0}), std::invalid_argument);
}

TEST_CASE("cross entropy backward matches central differences") {
    Rng rng(15);
    TensorD logits = TensorD::uniform({4, 6}, rng, -2, 2);
    std::vector<std::int64_t> labels = {0, 5, 2, 2};
    auto loss = [&](const TensorD& l) { return ops::cross_entropy_forward(l, labels); };
    TensorD fd = ops::finite_diff_grad(loss, logits);
    TensorD probs;
    (void)ops::cross_entropy_forward(logits, labels, &probs);
    TensorD dl = ops::cross_entropy_backward(probs, labels);
    CHECK(rel_err(fd, dl) < 1e-3);
}

TEST_CASE("linear backward matches central differences on w, b and x") {
    Rng rng(16);
    TensorD x = TensorD::uniform({3, 5}, rng, -1, 1);
    TensorD w = TensorD::uniform({4, 5}, rng, -1, 1);
    TensorD b = TensorD::uniform({4}, rng, -1, 1);
    TensorD dy = TensorD::uniform({3, 4}, rng, -1, 1);
    auto weighted = [&](const TensorD& y) {
        double s = 0;
        for (std::int64_t i = 0; i < y.numel(); ++i) s += y.data[i] * dy.data[i];
        return s;
    };
    auto g = ops::linear_backward(x, w, dy);
    TensorD fdw = ops::finite_diff_grad(
        [&](const TensorD& ww) { return weighted(ops::linear_forward(x, ww, b)); }, w);
    TensorD fdx = ops::finite_diff_grad(
        [&](const TensorD& xx) { return weighted(ops::linear_forward(xx, w, b)); }, x);
    TensorD fdb = ops::finite_diff_grad(
        [&](const TensorD& bb_) { return weighted(ops::linear_forward(x, w, bb_)); }, b);
    CHECK(rel_err(fdw, g.dw) < 1e-3);
    CHECK(rel_err(fdx, g.dx) < 1e-3);
    CHECK(rel_err(fdb, g.db) < 1e-3);
}

TEST_CASE("conv2d backward matches central differences") {
    Rng rng(17);
    ops::ConvSpec spec{3, 2, 1, 2, 3};
    TensorD x = TensorD::uniform({2, 2, 5, 5}, rng, -1, 1);
    TensorD k = TensorD::uniform({3, 2, 3, 3}, rng, -1, 1);
    TensorD dy = TensorD::uniform({2, 3, 3, 3}, rng, -1, 1);
    auto weighted = [&](const TensorD& y) {
        double s = 0;
        for (std::int64_t i = 0; i < y.numel(); ++i) s += y.data[i] * dy.data[i];
        return s;
    };
    auto g = ops::conv2d_backward(x, k, spec, dy);
    TensorD fdk = ops::finite_diff_grad(
        [&](const TensorD& kk) { return weighted(kernels::conv2d_batch(x, kk, spec)); }, k);
    TensorD fdx = ops::finite_diff_grad(
        [&](const TensorD& xx) { return weighted(kernels::conv2d_batch(xx, k, spec)); }, x);
    CHECK(rel_err(fdk, g.dk) < 1e-3);
    CHECK(rel_err(fdx, g.dx) < 1e-3);
}

TEST_CASE("finite differences on f = sum(x) give all ones") {
    TensorD x({5}, {0.3, -2, 1, 4, 0});
    TensorD g = ops::finite_diff_grad(
        [](const TensorD& v) {
            double s = 0;
            for (auto d : v.data) s += d;
            return s;
        },
        x);
    for (auto v : g.data) CHECK(v == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("finite differences on the half square norm recover x") {
    TensorD x({2}, {1, 2});
    TensorD g = ops::finite_diff_grad(
        [](const TensorD& v) {
            double s = 0;
            for (auto d : v.data) s += 0.5 * d * d;
            return s;
        },
        x, 1e-5);
    CHECK(std::abs(g.data[0] - 1.0) < 1e-8);
    CHECK(std::abs(g.data[1] - 2.0) < 1e-8);
}

TEST_CASE("finite_diff_grad rejects non-positive step") {
    TensorD x({1}, {1.0});
    CHECK_THROWS_AS((void)ops::finite_diff_grad([](const TensorD&) { return 0.0; }, x, 0.0),
                    std::invalid_argument);
}
