#pragma once

#include <vector>

#include "fastlr/tensor.hpp"

namespace fastlr {

/// Negative log-likelihood of target y under the CTC path distribution:
/// -log sum over all length-T blank-augmented paths collapsing to y.
/// `log_probs` is [T x (V+1)] with the blank in the last column; y holds
/// ids in [0, V). Computed by the forward recursion over the
/// blank-interleaved extended sequence, entirely in log space.
/// Differentiable. Throws InfeasibleTarget when T is too short.
Tensor ctc_loss(const Tensor& log_probs, const std::vector<int>& y);

/// Feasibility: T >= |y| + number of adjacent repeats in y.
bool ctc_feasible(std::size_t frames, const std::vector<int>& y);

/// Per-frame argmax, collapse repeats, strip blanks.
std::vector<int> ctc_greedy_decode(const Tensor& log_probs);

}  // namespace fastlr
