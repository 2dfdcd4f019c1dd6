#pragma once

#include <cstddef>
#include <vector>

#include "fastlr/tensor.hpp"
#include "fastlr/transformer.hpp"

namespace fastlr {

struct IFConfig {
    double beta = 1.0;            // firing threshold
    double fire_tolerance = 1e-9; // fire when acc + w >= beta - fire_tolerance
    double tail_epsilon = 1e-6;   // max constant fixup when forcing exact sums
};

/// Output of the firing pass: one embedding row per completed threshold
/// crossing, plus the frame at which each crossing happened and an exact
/// account of where every unit of weight went.
struct FiredEmbeddings {
    Tensor segments;                           // [n x d]
    std::vector<std::size_t> boundary_frames;  // size n, non-decreasing
    // (frame, weight) pairs per segment; weights of a segment sum to beta.
    std::vector<std::vector<std::pair<std::size_t, double>>> consumed;
    // Mass past the last complete crossing, discarded from the output.
    std::vector<std::pair<std::size_t, double>> tail;
};

/// Weight sequence wrapper pairing the differentiable weights with their sum.
struct WeightSequence {
    Tensor w;  // [T]
    double total() const;
};

/// Per-frame accumulation weights: 1-D conv over the encoder states, ReLU,
/// a linear unit, sigmoid. Returns a [T] vector with entries in (0, 1).
Tensor predict_weights(const Tensor& h, const ModelConfig& cfg,
                       const ModelParameters& params, const ForwardCtx& ctx = {});

/// Integrate-and-fire: weights accumulate left to right and emit a weighted
/// sum of the states each time the running total crosses beta, splitting the
/// crossing frame's weight between the two sides. Mass past the last complete
/// crossing is discarded. Equivalently, segment j takes from frame i the
/// overlap of [A_{i-1}, A_i] with [j*beta, (j+1)*beta], where A is the
/// cumulative weight sum; that view also covers weights larger than beta,
/// which fire several times within one frame.
FiredEmbeddings fire(const Tensor& h, const Tensor& w, const IFConfig& cfg = {});

/// Rescale w so its total is exactly target_sum. Gradients flow through the
/// scaling ratio; a residual fixup no larger than tail_epsilon is folded into
/// the last element as a constant. Throws DegenerateWeights when the input
/// total is too small to scale stably.
Tensor scale_weights(const Tensor& w, double target_sum, const IFConfig& cfg = {});

}  // namespace fastlr
