#pragma once

#include <cstdint>
#include <vector>

#include "fastlr/integrate_and_fire.hpp"
#include "fastlr/tensor.hpp"
#include "fastlr/transformer.hpp"

namespace fastlr {

/// One length-bias decoding candidate.
struct Candidate {
    int bias = 0;
    WeightSequence scaled_w;         // total == original total + bias (1e-6)
    std::vector<int> hypothesis;     // length == fire count of scaled_w
    double teacher_logprob = 0.0;
    std::int64_t latency_ns = 0;
    bool chosen = false;
};

struct NpdConfig {
    int beam = 4;                  // bias range [-B, B]
    bool length_normalize = false; // divide scores by hypothesis length + 1
    int threads = 1;               // candidate-level parallelism
};

/// AR model used to rescore hypotheses; typically the jointly trained
/// auxiliary decoder, but any compatible checkpoint works.
struct TeacherRef {
    const ModelConfig* cfg = nullptr;
    const ModelParameters* params = nullptr;
};

/// One stub per integer bias in [-B, B] whose biased total stays >= 1; the
/// zero-bias stub keeps w untouched so it decodes bit-identically to the
/// plain pipeline. Throws NoViableCandidate when every bias is filtered out.
std::vector<Candidate> make_candidates(const Tensor& w, int B, const IFConfig& cfg = {});

struct NpdResult {
    std::size_t best_index = 0;
    std::vector<Candidate> candidates;  // in bias order, scored
};

/// Decodes every candidate (fire -> NAR decode -> argmax), scores each
/// hypothesis with the teacher, and picks the highest log-prob; ties go to
/// the smaller |bias|, then the smaller bias. Candidates are independent and
/// evaluated concurrently when cfg.threads > 1; the result is
/// schedule-invariant.
NpdResult rescore_select(std::vector<Candidate> candidates, const Tensor& h,
                         const ModelConfig& model_cfg, const ModelParameters& params,
                         const TeacherRef& teacher, const NpdConfig& cfg = {});

}  // namespace fastlr
