#include "fastlr/integrate_and_fire.hpp"

#include <algorithm>
#include <cmath>

#include "fastlr/errors.hpp"

namespace fastlr {

double WeightSequence::total() const {
    double s = 0.0;
    for (double x : w.data()) s += x;
    return s;
}

Tensor predict_weights(const Tensor& h, const ModelConfig& cfg,
                       const ModelParameters& params, const ForwardCtx& ctx) {
    (void)ctx;  // the weight predictor runs without dropout
    if (h.rank() != 2 || h.dim(1) != static_cast<std::size_t>(cfg.d_hidden))
        throw ShapeError("predict_weights expects [T×d_hidden] input, got " +
                         shape_str(h.shape()));
    Tensor x = relu(conv1d(h, params.at("ifp.conv.W"), params.at("ifp.conv.b"),
                           ConvPadding::Same));
    Tensor w = sigmoid(add(matmul(x, params.at("ifp.fc.W")), params.at("ifp.fc.b")));
    return reshape(w, {h.dim(0)});
}

FiredEmbeddings fire(const Tensor& h, const Tensor& w, const IFConfig& cfg) {
    if (h.rank() != 2) throw ShapeError("fire: states must be 2-D");
    if (w.rank() != 1 || w.dim(0) != h.dim(0))
        throw ShapeError("fire: weights " + shape_str(w.shape()) +
                         " do not match states " + shape_str(h.shape()));
    if (cfg.beta <= 0.0) throw ConfigError("fire: beta must be positive");
    const std::size_t T = h.dim(0), d = h.dim(1);
    const auto& wv = w.data();
    const auto& hv = h.data();
    for (double x : wv)
        if (!(x >= 0.0)) throw DomainError("fire: negative or NaN weight");

    // Cumulative mass; the tolerance nudges near-threshold sums over the line
    // so e.g. scaled weights summing to an integer fire the full count.
    std::vector<double> A(T + 1, 0.0);
    for (std::size_t i = 0; i < T; ++i) A[i + 1] = A[i] + wv[i];
    const double beta = cfg.beta;
    std::size_t n = static_cast<std::size_t>(
        std::floor((A[T] + cfg.fire_tolerance) / beta));

    // coeff[j*T + i] = overlap of [A_i, A_{i+1}] with bin [j*beta, (j+1)*beta].
    std::vector<double> coeff(n * T, 0.0);
    std::vector<std::size_t> boundaries(n);
    std::vector<double> value(n * d, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        double lo = beta * double(j), hi = beta * double(j + 1);
        for (std::size_t i = 0; i < T; ++i) {
            double c = std::min(A[i + 1], hi) - std::max(A[i], lo);
            if (c <= 0.0) continue;
            coeff[j * T + i] = c;
            for (std::size_t k = 0; k < d; ++k) value[j * d + k] += c * hv[i * d + k];
        }
        std::size_t b = 0;
        while (b + 1 < T && A[b + 1] < hi - cfg.fire_tolerance) ++b;
        boundaries[j] = b;
    }

    std::vector<std::vector<std::pair<std::size_t, double>>> consumed(n);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 0; i < T; ++i)
            if (coeff[j * T + i] > 0.0) consumed[j].push_back({i, coeff[j * T + i]});
    std::vector<std::pair<std::size_t, double>> tail;
    double cut = beta * double(n);
    for (std::size_t i = 0; i < T; ++i) {
        double c = A[i + 1] - std::max(A[i], cut);
        if (c > 0.0) tail.push_back({i, c});
    }

    Tensor segments = make_op(
        {n, d}, std::move(value), {h, w},
        [T, d, n, beta, A, coeff, ph = h.shared_node(), pw = w.shared_node(),
         hv](const std::vector<double>& og, GradientMap& grads) {
            if (ph->requires_grad) {
                auto& gh = grads.buffer(ph.get(), T * d);
                for (std::size_t j = 0; j < n; ++j)
                    for (std::size_t i = 0; i < T; ++i) {
                        double c = coeff[j * T + i];
                        if (c == 0.0) continue;
                        for (std::size_t k = 0; k < d; ++k)
                            gh[i * d + k] += c * og[j * d + k];
                    }
            }
            if (pw->requires_grad) {
                // c_{j,i} = min(A_{i+1}, (j+1)b) - max(A_i, jb) and
                // dA_i/dw_k = [k < i], so each open min/max branch spreads a
                // suffix contribution over w_0..w_{i} (or w_0..w_{i-1}).
                auto& gw = grads.buffer(pw.get(), T);
                std::vector<double> bucket(T + 1, 0.0);  // bucket[i]: add to k <= i-1
                for (std::size_t j = 0; j < n; ++j) {
                    double lo = beta * double(j), hi = beta * double(j + 1);
                    for (std::size_t i = 0; i < T; ++i) {
                        if (coeff[j * T + i] <= 0.0) continue;
                        double s = 0.0;
                        for (std::size_t k = 0; k < d; ++k)
                            s += og[j * d + k] * hv[i * d + k];
                        if (A[i + 1] < hi) bucket[i + 1] += s;   // d min / dA_{i+1}
                        if (A[i] > lo) bucket[i] -= s;           // -d max / dA_i
                    }
                }
                double running = 0.0;
                for (std::size_t k = T; k-- > 0;) {
                    running += bucket[k + 1];
                    gw[k] += running;
                }
            }
        });
    return {segments, std::move(boundaries), std::move(consumed), std::move(tail)};
}

Tensor scale_weights(const Tensor& w, double target_sum, const IFConfig& cfg) {
    if (w.rank() != 1) throw ShapeError("scale_weights: weights must be 1-D");
    if (target_sum <= 0.0) throw DomainError("scale_weights: target must be positive");
    const std::size_t T = w.dim(0);
    const auto& wv = w.data();
    double s = 0.0;
    for (double x : wv) {
        if (!(x >= 0.0)) throw DomainError("scale_weights: negative or NaN weight");
        s += x;
    }
    if (s < 1e-9)
        throw DegenerateWeights("scale_weights: total weight " + std::to_string(s) +
                                " too small to scale");
    double ratio = target_sum / s;
    std::vector<double> out(T);
    for (std::size_t i = 0; i < T; ++i) out[i] = wv[i] * ratio;
    // Fold the rounding residue into the last element until the left-to-right
    // sum reproduces the target bit-for-bit (the re-sum itself rounds, so one
    // pass is not always enough). The adjustment is constant w.r.t. the tape.
    double total_fixup = 0.0;
    for (int pass = 0; pass < 8; ++pass) {
        double got = 0.0;
        for (double x : out) got += x;
        if (got == target_sum) break;
        total_fixup += target_sum - got;
        out[T - 1] += target_sum - got;
    }
    if (std::abs(total_fixup) > cfg.tail_epsilon)
        throw DegenerateWeights("scale_weights: rounding fixup " +
                                std::to_string(total_fixup) + " exceeds tail_epsilon");

    return make_op({T}, std::move(out), {w},
        [T, s, ratio, wv, pw = w.shared_node()](const std::vector<double>& og,
                                                GradientMap& grads) {
            if (!pw->requires_grad) return;
            // d out_i / d w_k = ratio * (delta_ik - w_i / s)
            double dot = 0.0;
            for (std::size_t i = 0; i < T; ++i) dot += og[i] * wv[i];
            auto& gw = grads.buffer(pw.get(), T);
            for (std::size_t k = 0; k < T; ++k)
                gw[k] += ratio * (og[k] - dot / s);
        });
}

}  // namespace fastlr
