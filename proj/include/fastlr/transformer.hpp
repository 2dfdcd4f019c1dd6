#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fastlr/rng.hpp"
#include "fastlr/tensor.hpp"

namespace fastlr {

struct ModelConfig {
    int d_hidden = 64;
    int n_enc = 2;
    int n_dec = 2;
    int n_head = 4;
    int conv_ffn_kernel = 9;
    int conv_ffn_filters = 0;  // 0 means the default of 4 * d_hidden
    int d_input = 32;
    int vocab_size = 0;  // set once the vocabulary is known
    int max_positions = 512;
    double dropout = 0.1;
    int if_predictor_kernel = 3;  // weight predictor conv kernel (odd)

    int filters() const { return conv_ffn_filters > 0 ? conv_ffn_filters : 4 * d_hidden; }
    int head_dim() const { return d_hidden / n_head; }
    void validate() const;
};

/// Named parameter collection. The name set is a pure function of the config
/// (expected_entries), so completeness is checkable by a structural walk.
class ModelParameters {
public:
    static ModelParameters init(const ModelConfig& cfg, std::uint64_t seed);
    static std::vector<std::pair<std::string, Shape>> expected_entries(const ModelConfig& cfg);

    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool has(const std::string& name) const { return params_.count(name) > 0; }
    void put(const std::string& name, Tensor t);

    /// Throws ConfigError naming the first missing or extra entry.
    void validate_against(const ModelConfig& cfg) const;

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }
    std::size_t size() const { return params_.size(); }

private:
    std::map<std::string, Tensor> params_;  // ordered: deterministic walks
};

/// Training-time forward context. Null rng (the default) disables dropout;
/// every property test and all inference runs in that mode.
struct ForwardCtx {
    Rng* rng = nullptr;
    double dropout = 0.0;
};

/// Sinusoidal positional encoding rows [count x d] starting at `offset`.
Tensor positional_encoding(std::size_t count, std::size_t d, std::size_t offset = 0);

/// Encoder: input projection + positions, then n_enc pre-norm layers of
/// self-attention and 2-layer 1-D conv feed-forward with ReLU.
Tensor encode(const Tensor& features, const ModelConfig& cfg,
              const ModelParameters& params, const ForwardCtx& ctx = {});

/// Auxiliary AR decoder, teacher-forced: causal self-attention,
/// inter-attention over h, causal conv feed-forward. `inputs_shifted` is the
/// target sequence shifted right with BOS in front. Returns logits [Ty x V].
Tensor decode_ar(const Tensor& h, const std::vector<int>& inputs_shifted,
                 const ModelConfig& cfg, const ModelParameters& params,
                 const ForwardCtx& ctx = {});

/// NAR decoder over fired embeddings: full self-attention, no inter-attention,
/// one parallel pass. Returns logits [n x V]. n == 0 raises EmptyHypothesis.
Tensor decode_nar(const Tensor& fired, const ModelConfig& cfg,
                  const ModelParameters& params, const ForwardCtx& ctx = {});

/// CTC head: two ReLU fully-connected layers and a linear one, then row-wise
/// log-softmax over vocab + blank. Returns log-probs [T x (V+1)].
Tensor ctc_head(const Tensor& h, const ModelConfig& cfg,
                const ModelParameters& params, const ForwardCtx& ctx = {});

}  // namespace fastlr
