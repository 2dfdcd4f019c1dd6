#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "fastlr/tensor.hpp"
#include "testutil.hpp"

using namespace fastlr;

namespace {

// Runs a finite-difference check of `build` (which maps a flat input vector to
// a scalar loss through tensor ops) against the tape gradient.
double gradcheck(const std::function<Tensor(const Tensor&)>& build,
                 const std::vector<double>& x0, const Shape& shape,
                 double h = 1e-5) {
    Tensor x = Tensor::from_data(shape, x0, /*requires_grad=*/true);
    Tensor loss = build(x);
    GradientMap grads = backward(loss);
    const auto& analytic = grads.at(x);
    auto numeric = testutil::finite_difference(
        [&](const std::vector<double>& xs) {
            Tensor xt = Tensor::from_data(shape, xs, false);
            return build(xt).value();
        },
        x0, h);
    return testutil::max_rel_err(analytic, numeric);
}

}  // namespace

TEST_CASE("sigmoid(0) is 0.5") {
    CHECK(sigmoid(Tensor::scalar(0.0)).value() == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("softmax of equal entries is uniform") {
    Tensor x = Tensor::from_data({1, 3}, {2.5, 2.5, 2.5});
    Tensor y = softmax_rows(x);
    for (double v : y.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("softmax is stable under large inputs") {
    Tensor x = Tensor::from_data({1, 2}, {1000.0, 1001.0});
    Tensor y = softmax_rows(x);
    CHECK(y.data()[0] + y.data()[1] == doctest::Approx(1.0));
    CHECK(std::isfinite(y.data()[0]));
}

TEST_CASE("sum(x*x) gradient is 2x") {
    Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
    Tensor loss = sum(mul(x, x));
    auto grads = backward(loss);
    const auto& g = grads.at(x);
    CHECK(g[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(g[1] == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("log(sigmoid(x)) at 0 has gradient 0.5") {
    Tensor x = Tensor::scalar(0.0, true);
    Tensor loss = log(sigmoid(x));
    auto grads = backward(loss);
    CHECK(grads.at(x)[0] == doctest::Approx(0.5).epsilon(1e-10));
}

TEST_CASE("shape mismatch names both shapes") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({3, 3});
    CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("[2x3]"), ShapeError);
    CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
}

TEST_CASE("log of non-positive input raises DomainError") {
    CHECK_THROWS_AS(log(Tensor::scalar(0.0)), DomainError);
    CHECK_THROWS_AS(log(Tensor::scalar(-1.0)), DomainError);
    CHECK_THROWS_AS(div(Tensor::scalar(1.0), Tensor::scalar(0.0)), DomainError);
}

TEST_CASE("backward errors: non-scalar, detached, repeated") {
    Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
    CHECK_THROWS_AS(backward(mul(x, x)), ShapeError);

    Tensor detached = Tensor::scalar(1.0, false);
    CHECK_THROWS_AS(backward(detached), Error);

    Tensor loss = sum(mul(x, x));
    backward(loss);
    CHECK_THROWS_AS(backward(loss), Error);
    reset_backward(loss);
    CHECK_NOTHROW(backward(loss));
}

TEST_CASE("gradient map entries match tensor shapes") {
    std::mt19937_64 rng(1);
    Tensor x = Tensor::from_data({2, 3}, testutil::random_vec(rng, 6), true);
    Tensor w = Tensor::from_data({3, 2}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6}, true);
    auto grads = backward(sum(matmul(x, w)));
    CHECK(grads.at(x).size() == 6);
    CHECK(grads.at(w).size() == 6);
}

TEST_CASE("finite-difference check across every op") {
    std::mt19937_64 rng(42);
    const int points = 10;
    for (int p = 0; p < points; ++p) {
        Shape s2{3, 4};
        auto x0 = testutil::random_vec(rng, 12);

        CHECK(gradcheck([](const Tensor& x) { return sum(exp(x)); }, x0, s2) < 1e-5);
        CHECK(gradcheck([](const Tensor& x) { return sum(tanh(x)); }, x0, s2) < 1e-5);
        CHECK(gradcheck([](const Tensor& x) { return sum(sigmoid(x)); }, x0, s2) < 1e-5);
        CHECK(gradcheck([](const Tensor& x) { return sum(mul(softmax_rows(x), x)); }, x0, s2) < 1e-5);
        CHECK(gradcheck([](const Tensor& x) { return sum(mul(log_softmax_rows(x), x)); }, x0, s2) < 1e-5);
        CHECK(gradcheck([](const Tensor& x) { return sum(mul(x, tanh(x))); }, x0, s2) < 1e-5);
        CHECK(gradcheck([](const Tensor& x) { return mean(x); }, x0, s2) < 1e-5);
        CHECK(gradcheck([](const Tensor& x) { return sum(transpose(x)); }, x0, s2) < 1e-5);
        CHECK(gradcheck([](const Tensor& x) {
            return sum(mul(slice_rows(x, 1, 3), slice_rows(x, 0, 2)));
        }, x0, s2) < 1e-5);
        CHECK(gradcheck([](const Tensor& x) {
            return sum(mul(slice_cols(x, 1, 3), slice_cols(x, 0, 2)));
        }, x0, s2) < 1e-5);
        CHECK(gradcheck([](const Tensor& x) {
            return sum(concat_rows({x, mul_scalar(x, 2.0)}));
        }, x0, s2) < 1e-5);
        CHECK(gradcheck([](const Tensor& x) {
            return sum(mul(concat_cols({x, x}), concat_cols({x, mul_scalar(x, -2.0)})));
        }, x0, s2) < 1e-5);
        CHECK(gradcheck([](const Tensor& x) {
            return sum(mul(reshape(x, {4, 3}), reshape(x, {4, 3})));
        }, x0, s2) < 1e-5);

        // relu away from the kink
        auto xr = testutil::random_vec(rng, 12);
        for (auto& v : xr) v += (v >= 0 ? 0.5 : -0.5);
        CHECK(gradcheck([](const Tensor& x) { return sum(mul(relu(x), x)); }, xr, s2) < 1e-5);

        // log / div in safe domain
        auto xp = testutil::random_vec(rng, 12, 0.5, 2.0);
        CHECK(gradcheck([](const Tensor& x) { return sum(log(x)); }, xp, s2) < 1e-5);
        CHECK(gradcheck([&](const Tensor& x) {
            Tensor c = Tensor::from_data({3, 4}, std::vector<double>(12, 3.0));
            return sum(div(c, x));
        }, xp, s2) < 1e-5);
        CHECK(gradcheck([](const Tensor& x) {
            return sum(div(x, add_scalar(mul(x, x), 1.0)));
        }, x0, s2) < 1e-5);

        // matmul, both operands
        auto m0 = testutil::random_vec(rng, 12);
        CHECK(gradcheck([](const Tensor& x) {
            Tensor c = Tensor::from_data({4, 2}, {0.3, -0.1, 0.2, 0.7, -0.5, 0.1, 0.4, -0.2});
            return sum(matmul(x, c));
        }, m0, s2) < 1e-5);
        CHECK(gradcheck([](const Tensor& x) {
            Tensor c = Tensor::from_data({2, 3}, {0.3, -0.1, 0.2, 0.7, -0.5, 0.1});
            return sum(mul(matmul(c, x), matmul(c, x)));
        }, m0, s2) < 1e-5);

        // row-broadcast add/mul of a [d] vector over [T×d]
        auto b0 = testutil::random_vec(rng, 4);
        CHECK(gradcheck([&](const Tensor& x) {
            Tensor xc = Tensor::from_data({3, 4}, x0);
            return sum(mul(add(xc, reshape(x, {4})), add(xc, reshape(x, {4}))));
        }, b0, {4}) < 1e-5);

        // layer norm wrt input, gain, bias
        CHECK(gradcheck([](const Tensor& x) {
            Tensor g = Tensor::from_data({4}, {1.1, 0.9, 1.0, 1.2});
            Tensor b = Tensor::from_data({4}, {0.1, -0.1, 0.0, 0.2});
            return sum(mul(layer_norm(x, g, b), layer_norm(x, g, b)));
        }, x0, s2, 1e-5) < 1e-4);
        CHECK(gradcheck([&](const Tensor& g) {
            Tensor x = Tensor::from_data({3, 4}, x0);
            Tensor b = Tensor::from_data({4}, {0.1, -0.1, 0.0, 0.2});
            return sum(mul(layer_norm(x, reshape(g, {4}), b), x));
        }, b0, {4}) < 1e-5);

        // conv1d wrt input and weights, both paddings
        auto c0 = testutil::random_vec(rng, 10);  // [5x2]
        auto w0 = testutil::random_vec(rng, 18);  // [3x2x3]
        for (auto pad : {ConvPadding::Same, ConvPadding::Causal}) {
            CHECK(gradcheck([&](const Tensor& x) {
                Tensor w = Tensor::from_data({3, 2, 3}, w0);
                Tensor b = Tensor::from_data({3}, {0.1, 0.2, -0.1});
                return sum(mul(conv1d(x, w, b, pad), conv1d(x, w, b, pad)));
            }, c0, {5, 2}) < 1e-5);
            CHECK(gradcheck([&](const Tensor& w) {
                Tensor x = Tensor::from_data({5, 2}, c0);
                Tensor b = Tensor::from_data({3}, {0.1, 0.2, -0.1});
                return sum(mul(conv1d(x, reshape(w, {3, 2, 3}), b, pad), Tensor::full({5, 3}, 0.7)));
            }, w0, {18}) < 1e-5);
        }

        // embedding wrt table
        auto e0 = testutil::random_vec(rng, 12);  // [4x3] table
        CHECK(gradcheck([](const Tensor& tbl) {
            Tensor e = embedding(reshape(tbl, {4, 3}), {1, 3, 1, 0});
            return sum(mul(e, e));
        }, e0, {12}) < 1e-5);

        // cross entropy wrt logits
        auto l0 = testutil::random_vec(rng, 12);
        CHECK(gradcheck([](const Tensor& x) {
            return cross_entropy_sum(x, {2, 0, 3});
        }, l0, s2) < 1e-5);
    }
}

TEST_CASE("composite 2-layer MLP gradient vs finite differences") {
    std::mt19937_64 rng(7);
    auto w1v = testutil::random_vec(rng, 4 * 5);
    auto w2v = testutil::random_vec(rng, 5 * 2);
    auto xv = testutil::random_vec(rng, 3 * 4);

    auto run = [&](const std::vector<double>& params, bool grad,
                   std::vector<double>* out_grad) {
        std::vector<double> w1d(params.begin(), params.begin() + 20);
        std::vector<double> w2d(params.begin() + 20, params.end());
        Tensor w1 = Tensor::from_data({4, 5}, w1d, grad);
        Tensor w2 = Tensor::from_data({5, 2}, w2d, grad);
        Tensor x = Tensor::from_data({3, 4}, xv);
        Tensor h = tanh(matmul(x, w1));
        Tensor y = matmul(h, w2);
        Tensor loss = mean(mul(y, y));
        if (grad) {
            auto grads = backward(loss);
            const auto& g1 = grads.at(w1);
            const auto& g2 = grads.at(w2);
            out_grad->assign(g1.begin(), g1.end());
            out_grad->insert(out_grad->end(), g2.begin(), g2.end());
        }
        return loss.value();
    };

    std::vector<double> params = w1v;
    params.insert(params.end(), w2v.begin(), w2v.end());
    std::vector<double> analytic;
    run(params, true, &analytic);
    auto numeric = testutil::finite_difference(
        [&](const std::vector<double>& p) { return run(p, false, nullptr); }, params);
    CHECK(testutil::max_rel_err(analytic, numeric) < 1e-4);
}

TEST_CASE("deterministic losses over repeated runs") {
    auto run = [] {
        std::mt19937_64 rng(123);
        std::vector<double> losses;
        Tensor w = Tensor::from_data({4, 4}, testutil::random_vec(rng, 16), true);
        std::vector<double> wd = w.data();
        for (int step = 0; step < 100; ++step) {
            Tensor wt = Tensor::from_data({4, 4}, wd, true);
            Tensor x = Tensor::from_data({2, 4}, testutil::random_vec(rng, 8));
            Tensor loss = mean(mul(matmul(x, wt), matmul(x, wt)));
            auto grads = backward(loss);
            const auto& g = grads.at(wt);
            for (std::size_t i = 0; i < wd.size(); ++i) wd[i] -= 0.01 * g[i];
            losses.push_back(loss.value());
        }
        return losses;
    };
    auto a = run();
    auto b = run();
    CHECK(a == b);  // bit-identical
}
