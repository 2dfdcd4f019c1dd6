#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fastlr/tensor.hpp"
#include "fastlr/text.hpp"
#include "fastlr/transformer.hpp"

namespace fastlr {

/// Loss mixing weights for total = l1*ctc + l2*ar + l3*flr. A zero weight
/// skips building that branch entirely, so no gradient can reach parameters
/// used only by it.
struct LossWeights {
    double l1 = 0.5, l2 = 1.0, l3 = 0.0;
    static LossWeights warmup() { return {0.5, 1.0, 0.0}; }
    static LossWeights main_stage() { return {0.5, 0.0, 1.0}; }
};

struct LossComponents {
    double total = 0.0, ctc = 0.0, ar = 0.0, flr = 0.0, quantity = 0.0;
    int ctc_skipped = 0;  // targets too long for their frame count
};

/// One training example: constant feature tensor plus subword target ids
/// (no BOS/EOS; those are added where each branch needs them).
struct BatchItem {
    Tensor features;           // [T x d_input]
    std::vector<int> targets;  // non-empty
};

/// Combined loss over a batch (per-utterance mean). Differentiable scalar plus
/// the component values for logging.
std::pair<Tensor, LossComponents> loss_total(const std::vector<BatchItem>& batch,
                                             const ModelConfig& cfg,
                                             const ModelParameters& params,
                                             const LossWeights& weights,
                                             const ForwardCtx& ctx = {});

// ---- optimizer and loop ----------------------------------------------------

struct TrainConfig {
    ModelConfig model;
    int batch_size = 8;
    int warmup_stage_steps = 1000;  // stage with LossWeights::warmup()
    int main_stage_steps = 2000;    // stage with LossWeights::main_stage()
    int eval_every = 250;
    int dev_eval_limit = 100;       // dev items scored per periodic eval
    int lr_warmup_steps = 4000;     // inverse-sqrt schedule warm-up
    double lr_scale = 1.0;
    double input_noise = 0.0;       // train-time Gaussian noise added to features
    double beta1 = 0.9, beta2 = 0.98, adam_eps = 1e-9;
    double clip_norm = 5.0;
    std::uint64_t seed = 1;
    int threads = 1;                // per-utterance forward/backward parallelism
};

struct TrainState {
    long step = 0;
    std::string stage = "warmup";
    std::uint64_t seed = 0;
    double best_dev_wer = 1e18;
    std::map<std::string, std::vector<double>> m, v;  // Adam moments by name
};

double lr_at(const TrainConfig& cfg, long step);

/// One Adam step with global-norm clipping, updating params in place.
void adam_step(ModelParameters& params, const GradientMap& grads, TrainState& state,
               const TrainConfig& cfg);

struct DevSet {
    std::vector<BatchItem> items;
    std::vector<std::string> transcripts;
};

struct EvalStats {
    double wer = 0.0, cer = 0.0;
    double mean_abs_len_err = 0.0;  // mean |sum(w) - target length|
};

/// Greedy, no-NPD scoring of the dev set. `use_ar` scores the auxiliary AR
/// decoder instead of the I&F + NAR path.
EvalStats evaluate_dev(const ModelConfig& cfg, const ModelParameters& params,
                       const DevSet& dev, const BpeModel& bpe, const Vocab& vocab,
                       std::size_t limit, bool use_ar, int threads = 1);

struct TrainResult {
    std::vector<LossComponents> trace;  // one entry per step
    EvalStats final_nar, final_ar;
    // AR dev stats measured at the warm-up/main boundary, before the main
    // stage stops updating the AR branch (only filled when both stages run).
    EvalStats warmup_end_ar;
    int ctc_skip_warnings = 0;
    std::string best_path, last_path;
};

/// Two-stage loop (warm-up with the AR branch, then main with the NAR
/// branch), periodic dev evaluation, best/last checkpoints, CSV metrics log.
/// Aborts with a component dump if the loss goes non-finite.
TrainResult train_loop(const TrainConfig& cfg, const std::vector<BatchItem>& train,
                       const DevSet& dev, const BpeModel& bpe, const Vocab& vocab,
                       const std::string& out_dir, bool quiet = false);

// ---- checkpoints -----------------------------------------------------------

struct Checkpoint {
    ModelConfig cfg;
    ModelParameters params;
    TrainState state;
};

/// Binary tensor file ("FLRC", f32 payload) plus a `<path>.meta` text sidecar
/// holding the model config and scalar train state.
void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const ModelParameters& params, const TrainState& state);
Checkpoint load_checkpoint(const std::string& path);

/// Flat key=value file with '#' comments; unknown keys are an error.
TrainConfig parse_train_config(const std::string& path);
std::map<std::string, std::string> read_kv_file(const std::string& path);

}  // namespace fastlr
