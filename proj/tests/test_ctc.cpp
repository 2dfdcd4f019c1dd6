#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>

#include "fastlr/ctc.hpp"
#include "fastlr/rng.hpp"
#include "testutil.hpp"

using namespace fastlr;

namespace {

// Brute-force oracle: enumerate every length-T path over vocab+blank, keep
// those that collapse to y, and sum their probabilities directly.
std::vector<int> collapse(const std::vector<int>& path, int blank) {
    std::vector<int> out;
    int prev = blank;
    for (int c : path) {
        if (c != blank && c != prev) out.push_back(c);
        prev = c;
    }
    return out;
}

double enumerate_ctc_prob(const std::vector<double>& log_probs, std::size_t T,
                          std::size_t cols, const std::vector<int>& y) {
    double total = 0.0;
    int blank = int(cols) - 1;
    std::vector<int> path(T, 0);
    while (true) {
        if (collapse(path, blank) == y) {
            double lp = 0.0;
            for (std::size_t t = 0; t < T; ++t)
                lp += log_probs[t * cols + std::size_t(path[t])];
            total += std::exp(lp);
        }
        std::size_t i = 0;
        for (; i < T; ++i) {
            if (++path[i] < int(cols)) break;
            path[i] = 0;
        }
        if (i == T) break;
    }
    return total;
}

// Random normalized log-prob rows.
std::vector<double> random_log_probs(Rng& rng, std::size_t T, std::size_t cols) {
    std::vector<double> lp(T * cols);
    for (std::size_t t = 0; t < T; ++t) {
        double z = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            double e = std::exp(rng.uniform(-2.0, 2.0));
            lp[t * cols + c] = e;
            z += e;
        }
        for (std::size_t c = 0; c < cols; ++c)
            lp[t * cols + c] = std::log(lp[t * cols + c] / z);
    }
    return lp;
}

}  // namespace

TEST_CASE("uniform 1/3 probs, T=2, y=a: loss is -log(1/3)") {
    // Paths collapsing to "a": aa, a-, -a; each has prob 1/9.
    double u = std::log(1.0 / 3.0);
    Tensor lp = Tensor::from_data({2, 3}, std::vector<double>(6, u));
    Tensor loss = ctc_loss(lp, {0});
    CHECK(loss.value() == doctest::Approx(-std::log(1.0 / 3.0)).epsilon(1e-12));
}

TEST_CASE("empty target: single all-blank path") {
    Rng rng(3);
    auto lpv = random_log_probs(rng, 2, 4);
    Tensor lp = Tensor::from_data({2, 4}, lpv);
    Tensor loss = ctc_loss(lp, {});
    CHECK(loss.value() == doctest::Approx(-(lpv[3] + lpv[7])).epsilon(1e-12));
}

TEST_CASE("infeasible target length raises InfeasibleTarget") {
    Tensor lp = Tensor::from_data({2, 3}, std::vector<double>(6, std::log(1.0 / 3.0)));
    CHECK_THROWS_AS(ctc_loss(lp, {0, 0}), InfeasibleTarget);  // repeat needs a blank
    CHECK_THROWS_AS(ctc_loss(lp, {0, 1, 0}), InfeasibleTarget);
    CHECK(ctc_feasible(3, {0, 1, 0}));
    CHECK_FALSE(ctc_feasible(2, {0, 0}));
}

TEST_CASE("DP equals enumeration on 500 random instances") {
    auto t0 = std::chrono::steady_clock::now();
    Rng rng(2024);
    for (int k = 0; k < 500; ++k) {
        std::size_t V = std::size_t(rng.uniform_int(1, 4));
        std::size_t T = std::size_t(rng.uniform_int(1, 8));
        std::size_t cols = V + 1;
        std::vector<int> y;
        std::size_t ylen = std::size_t(rng.uniform_int(0, 4));
        for (std::size_t i = 0; i < ylen; ++i) y.push_back(int(rng.uniform_int(0, std::int64_t(V) - 1)));
        if (!ctc_feasible(T, y)) {
            ++k;  // still counts as an instance; feasibility is part of the contract
            continue;
        }
        auto lpv = random_log_probs(rng, T, cols);
        Tensor lp = Tensor::from_data({T, cols}, lpv);
        double dp = ctc_loss(lp, y).value();
        double oracle = -std::log(enumerate_ctc_prob(lpv, T, cols, y));
        CHECK(std::abs(dp - oracle) < 1e-6);
    }
    auto secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    CHECK(secs < 30.0);
}

TEST_CASE("gradient vs finite differences") {
    Rng rng(7);
    for (int k = 0; k < 20; ++k) {
        std::size_t T = std::size_t(rng.uniform_int(3, 7));
        std::size_t cols = 4;
        std::vector<int> y = {0, 2};
        auto x0 = random_log_probs(rng, T, cols);
        // Differentiate through a softmax-style head so inputs stay free.
        auto build = [&](const Tensor& x) {
            return ctc_loss(log_softmax_rows(x), y);
        };
        Tensor x = Tensor::from_data({T, cols}, x0, true);
        auto grads = backward(build(x));
        const auto& analytic = grads.at(x);
        auto numeric = testutil::finite_difference(
            [&](const std::vector<double>& xs) {
                return build(Tensor::from_data({T, cols}, xs)).value();
            },
            x0);
        CHECK(testutil::max_rel_err(analytic, numeric) < 1e-4);
    }
}

TEST_CASE("loss is invariant under consistent vocab relabeling") {
    Rng rng(11);
    std::size_t T = 6, V = 3, cols = V + 1;
    auto lpv = random_log_probs(rng, T, cols);
    std::vector<int> y = {0, 2, 1};
    double base = ctc_loss(Tensor::from_data({T, cols}, lpv), y).value();
    // Swap symbols 0 and 2 everywhere (blank stays put).
    std::vector<int> relabel = {2, 1, 0};
    std::vector<double> lpv2(lpv.size());
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t v = 0; v < V; ++v)
            lpv2[t * cols + std::size_t(relabel[v])] = lpv[t * cols + v];
        lpv2[t * cols + V] = lpv[t * cols + V];
    }
    std::vector<int> y2;
    for (int c : y) y2.push_back(relabel[std::size_t(c)]);
    double swapped = ctc_loss(Tensor::from_data({T, cols}, lpv2), y2).value();
    CHECK(swapped == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("greedy decode collapse rules") {
    // frames argmax = [a, a, blank, b] -> "ab"
    double lo = std::log(0.1), hi = std::log(0.7);
    std::vector<double> lpv(4 * 3, lo);
    lpv[0 * 3 + 0] = hi;
    lpv[1 * 3 + 0] = hi;
    lpv[2 * 3 + 2] = hi;
    lpv[3 * 3 + 1] = hi;
    auto out = ctc_greedy_decode(Tensor::from_data({4, 3}, lpv));
    CHECK(out == std::vector<int>{0, 1});

    std::vector<double> blank_only(4 * 3, lo);
    for (int t = 0; t < 4; ++t) blank_only[std::size_t(t) * 3 + 2] = hi;
    CHECK(ctc_greedy_decode(Tensor::from_data({4, 3}, blank_only)).empty());
}

TEST_CASE("greedy decode is idempotent under re-collapse") {
    Rng rng(41);
    for (int k = 0; k < 100; ++k) {
        std::size_t T = std::size_t(rng.uniform_int(1, 12));
        auto lpv = random_log_probs(rng, T, 5);
        auto out = ctc_greedy_decode(Tensor::from_data({T, 5}, lpv));
        for (int c : out) CHECK(c != 4);  // never emits blank
        // Re-encoding the output as a path (blank between repeats) and
        // decoding again reproduces it exactly.
        std::vector<int> path;
        for (std::size_t i = 0; i < out.size(); ++i) {
            if (i && out[i] == out[i - 1]) path.push_back(4);
            path.push_back(out[i]);
        }
        if (!path.empty()) {
            std::vector<double> onehot(path.size() * 5, std::log(1e-6));
            for (std::size_t t = 0; t < path.size(); ++t)
                onehot[t * 5 + std::size_t(path[t])] = std::log(0.99);
            auto redecoded = ctc_greedy_decode(Tensor::from_data({path.size(), 5}, onehot));
            CHECK(redecoded == out);
        }
    }
}
