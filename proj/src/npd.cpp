#include "fastlr/npd.hpp"

#include <chrono>
#include <cmath>
#include <future>

#include "fastlr/errors.hpp"
#include "fastlr/inference.hpp"

namespace fastlr {

std::vector<Candidate> make_candidates(const Tensor& w, int B, const IFConfig& cfg) {
    if (B < 0) throw ConfigError("make_candidates: beam must be non-negative");
    if (w.rank() != 1) throw ShapeError("make_candidates: weights must be 1-D");
    double total = 0.0;
    for (double x : w.data()) total += x;
    if (total <= 0.0) throw DomainError("make_candidates: weight total must be positive");

    std::vector<Candidate> out;
    for (int b = -B; b <= B; ++b) {
        double biased = total + double(b);
        if (biased < 1.0 - cfg.fire_tolerance) continue;  // would fire nothing
        Candidate c;
        c.bias = b;
        // Zero bias keeps the exact weights so its decode is bit-identical
        // to the no-search pipeline.
        c.scaled_w = WeightSequence{b == 0 ? w : scale_weights(w, biased, cfg)};
        out.push_back(std::move(c));
    }
    if (out.empty())
        throw NoViableCandidate("all biases in [-" + std::to_string(B) + ", " +
                                std::to_string(B) + "] leave total weight below 1 (total " +
                                std::to_string(total) + ")");
    return out;
}

NpdResult rescore_select(std::vector<Candidate> candidates, const Tensor& h,
                         const ModelConfig& model_cfg, const ModelParameters& params,
                         const TeacherRef& teacher, const NpdConfig& cfg) {
    if (candidates.empty()) throw NoViableCandidate("no candidates to rescore");
    if (teacher.cfg == nullptr || teacher.params == nullptr)
        throw ConfigError("rescore_select: teacher model not set");

    auto eval_one = [&](Candidate& c) {
        auto t0 = std::chrono::steady_clock::now();
        c.hypothesis = nar_decode_states(h, c.scaled_w.w, model_cfg, params);
        c.teacher_logprob = teacher_score(h, c.hypothesis, *teacher.cfg, *teacher.params);
        if (cfg.length_normalize)
            c.teacher_logprob /= double(c.hypothesis.size() + 1);
        auto t1 = std::chrono::steady_clock::now();
        c.latency_ns =
            std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count();
    };

    if (cfg.threads > 1) {
        std::vector<std::future<void>> futs;
        futs.reserve(candidates.size());
        for (auto& c : candidates)
            futs.push_back(std::async(std::launch::async, [&eval_one, &c] { eval_one(c); }));
        for (auto& f : futs) f.get();
    } else {
        for (auto& c : candidates) eval_one(c);
    }

    bool any_nonempty = false;
    for (const auto& c : candidates) any_nonempty |= !c.hypothesis.empty();
    if (!any_nonempty)
        throw NoViableCandidate("every candidate decoded to an empty hypothesis");

    std::size_t best = 0;
    for (std::size_t i = 1; i < candidates.size(); ++i) {
        const Candidate &a = candidates[i], &b = candidates[best];
        if (a.teacher_logprob > b.teacher_logprob ||
            (a.teacher_logprob == b.teacher_logprob &&
             (std::abs(a.bias) < std::abs(b.bias) ||
              (std::abs(a.bias) == std::abs(b.bias) && a.bias < b.bias))))
            best = i;
    }
    candidates[best].chosen = true;
    return {best, std::move(candidates)};
}

}  // namespace fastlr
