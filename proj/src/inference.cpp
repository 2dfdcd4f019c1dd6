#include "fastlr/inference.hpp"

#include <algorithm>

#include "fastlr/errors.hpp"
#include "fastlr/text.hpp"

namespace fastlr {

namespace {

std::vector<int> argmax_rows(const Tensor& logits) {
    std::vector<int> out(logits.dim(0));
    std::size_t v = logits.dim(1);
    for (std::size_t t = 0; t < logits.dim(0); ++t) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < v; ++k)
            if (logits.at2(t, k) > logits.at2(t, best)) best = k;
        out[t] = int(best);
    }
    return out;
}

}  // namespace

std::vector<int> nar_decode_states(const Tensor& h, const Tensor& w,
                                   const ModelConfig& cfg, const ModelParameters& params,
                                   FiredEmbeddings* fired_out) {
    FiredEmbeddings fe = fire(h, w);
    if (fired_out) *fired_out = fe;
    if (fe.segments.dim(0) == 0) return {};
    return argmax_rows(decode_nar(fe.segments, cfg, params));
}

NarDecodeResult nar_decode(const Tensor& features, const ModelConfig& cfg,
                           const ModelParameters& params) {
    NarDecodeResult out;
    Tensor h = encode(features, cfg, params);
    out.weights = predict_weights(h, cfg, params);
    out.tokens = nar_decode_states(h, out.weights, cfg, params, &out.fired);
    return out;
}

double teacher_score(const Tensor& h, const std::vector<int>& hyp,
                     const ModelConfig& cfg, const ModelParameters& params) {
    std::vector<int> inputs = {Vocab::kBos};
    inputs.insert(inputs.end(), hyp.begin(), hyp.end());
    std::vector<int> targets = hyp;
    targets.push_back(Vocab::kEos);
    Tensor lp = log_softmax_rows(decode_ar(h, inputs, cfg, params));
    double score = 0.0;
    for (std::size_t t = 0; t < targets.size(); ++t)
        score += lp.at2(t, std::size_t(targets[t]));
    return score;
}

std::vector<int> ar_greedy_decode(const Tensor& h, const ModelConfig& cfg,
                                  const ModelParameters& params, std::size_t max_len) {
    std::vector<int> inputs = {Vocab::kBos};
    std::vector<int> out;
    while (out.size() < max_len) {
        Tensor logits = decode_ar(h, inputs, cfg, params);
        std::size_t t = logits.dim(0) - 1;
        std::size_t best = 0;
        for (std::size_t k = 1; k < logits.dim(1); ++k)
            if (logits.at2(t, k) > logits.at2(t, best)) best = k;
        if (int(best) == Vocab::kEos) break;
        out.push_back(int(best));
        inputs.push_back(int(best));
    }
    return out;
}

}  // namespace fastlr
