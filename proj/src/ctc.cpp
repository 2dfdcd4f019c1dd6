#include "fastlr/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fastlr {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    double m = std::max(a, b);
    return m + std::log1p(std::exp(std::min(a, b) - m));
}

}  // namespace

bool ctc_feasible(std::size_t frames, const std::vector<int>& y) {
    std::size_t need = y.size();
    for (std::size_t i = 1; i < y.size(); ++i)
        if (y[i] == y[i - 1]) ++need;  // a blank is forced between repeats
    return frames >= need;
}

Tensor ctc_loss(const Tensor& log_probs, const std::vector<int>& y) {
    if (log_probs.rank() != 2)
        throw ShapeError("ctc_loss expects [Tx(V+1)] log-probs, got " +
                         shape_str(log_probs.shape()));
    const std::size_t T = log_probs.dim(0);
    const std::size_t cols = log_probs.dim(1);
    const int blank = int(cols) - 1;
    for (int t : y)
        if (t < 0 || t >= blank)
            throw ShapeError("ctc_loss: target id " + std::to_string(t) +
                             " outside vocab of " + std::to_string(blank));
    if (!ctc_feasible(T, y))
        throw InfeasibleTarget("ctc_loss: " + std::to_string(T) +
                               " frames cannot realize a target of length " +
                               std::to_string(y.size()) + " with its repeats");

    // Extended sequence: blanks interleaved around every label.
    const std::size_t S = 2 * y.size() + 1;
    std::vector<int> ext(S, blank);
    for (std::size_t i = 0; i < y.size(); ++i) ext[2 * i + 1] = y[i];

    const auto& lp = log_probs.data();
    auto lprob = [&](std::size_t t, int k) { return lp[t * cols + std::size_t(k)]; };

    // Forward lattice, alpha[t][s] includes the emission at frame t.
    std::vector<double> alpha(T * S, kNegInf);
    alpha[0] = lprob(0, ext[0]);
    if (S > 1) alpha[1] = lprob(0, ext[1]);
    for (std::size_t t = 1; t < T; ++t)
        for (std::size_t s = 0; s < S; ++s) {
            double a = alpha[(t - 1) * S + s];
            if (s >= 1) a = log_add(a, alpha[(t - 1) * S + s - 1]);
            if (s >= 2 && ext[s] != blank && ext[s] != ext[s - 2])
                a = log_add(a, alpha[(t - 1) * S + s - 2]);
            if (a != kNegInf) alpha[t * S + s] = a + lprob(t, ext[s]);
        }
    double log_z = alpha[(T - 1) * S + S - 1];
    if (S > 1) log_z = log_add(log_z, alpha[(T - 1) * S + S - 2]);

    // Backward lattice for the analytic gradient; beta[t][s] covers frames
    // strictly after t, so alpha + beta sums full paths through (t, s).
    std::vector<double> beta(T * S, kNegInf);
    beta[(T - 1) * S + S - 1] = 0.0;
    if (S > 1) beta[(T - 1) * S + S - 2] = 0.0;
    for (std::size_t t = T - 1; t-- > 0;)
        for (std::size_t s = 0; s < S; ++s) {
            double b = kNegInf;
            double bn = beta[(t + 1) * S + s];
            if (bn != kNegInf) b = log_add(b, bn + lprob(t + 1, ext[s]));
            if (s + 1 < S) {
                double b1 = beta[(t + 1) * S + s + 1];
                if (b1 != kNegInf) b = log_add(b, b1 + lprob(t + 1, ext[s + 1]));
            }
            if (s + 2 < S && ext[s + 2] != blank && ext[s + 2] != ext[s]) {
                double b2 = beta[(t + 1) * S + s + 2];
                if (b2 != kNegInf) b = log_add(b, b2 + lprob(t + 1, ext[s + 2]));
            }
            beta[t * S + s] = b;
        }

    // d(-logZ)/d(logp[t][k]) = -sum_{s: ext[s]==k} exp(alpha[t][s]+beta[t][s]-logZ)
    std::vector<double> grad(T * cols, 0.0);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t s = 0; s < S; ++s) {
            double post = alpha[t * S + s] + beta[t * S + s] - log_z;
            if (post != kNegInf)
                grad[t * cols + std::size_t(ext[s])] -= std::exp(post);
        }

    auto parent = log_probs.shared_node();
    return make_op({1}, {-log_z}, {log_probs},
        [parent, grad](const std::vector<double>& og, GradientMap& grads) {
            auto& buf = grads.buffer(parent.get(), parent->value.size());
            for (std::size_t i = 0; i < grad.size(); ++i) buf[i] += og[0] * grad[i];
        });
}

std::vector<int> ctc_greedy_decode(const Tensor& log_probs) {
    if (log_probs.rank() != 2)
        throw ShapeError("ctc_greedy_decode expects [Tx(V+1)], got " +
                         shape_str(log_probs.shape()));
    const std::size_t T = log_probs.dim(0);
    const std::size_t cols = log_probs.dim(1);
    const int blank = int(cols) - 1;
    const auto& lp = log_probs.data();
    std::vector<int> out;
    int prev = blank;
    for (std::size_t t = 0; t < T; ++t) {
        const double* row = lp.data() + t * cols;
        int best = int(std::max_element(row, row + cols) - row);
        if (best != blank && best != prev) out.push_back(best);
        prev = best;
    }
    return out;
}

}  // namespace fastlr
