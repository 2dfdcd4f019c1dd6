#pragma once

#include <cstddef>
#include <vector>

#include "fastlr/integrate_and_fire.hpp"
#include "fastlr/tensor.hpp"
#include "fastlr/transformer.hpp"

namespace fastlr {

/// One full NAR decoding pass over raw features.
struct NarDecodeResult {
    std::vector<int> tokens;   // argmax per fired position (may be empty)
    Tensor weights;            // raw predicted weights [T]
    FiredEmbeddings fired;
};

/// encode -> predict_weights -> fire -> decode_nar -> per-position argmax.
/// Zero fired embeddings yield an empty token sequence (not an error here).
NarDecodeResult nar_decode(const Tensor& features, const ModelConfig& cfg,
                           const ModelParameters& params);

/// Same pipeline given precomputed encoder states and (possibly scaled)
/// weights; used by the length-bias search.
std::vector<int> nar_decode_states(const Tensor& h, const Tensor& w,
                                   const ModelConfig& cfg, const ModelParameters& params,
                                   FiredEmbeddings* fired_out = nullptr);

/// Teacher-forced log-probability of `hyp` + EOS under the AR decoder,
/// conditioned on encoder states h. An empty hypothesis scores EOS alone.
double teacher_score(const Tensor& h, const std::vector<int>& hyp,
                     const ModelConfig& cfg, const ModelParameters& params);

/// Greedy autoregressive decode starting from BOS; stops at EOS or max_len.
/// Returns the emitted tokens without BOS/EOS.
std::vector<int> ar_greedy_decode(const Tensor& h, const ModelConfig& cfg,
                                  const ModelParameters& params, std::size_t max_len);

}  // namespace fastlr
