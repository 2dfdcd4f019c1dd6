#include "fastlr/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fastlr/errors.hpp"

namespace fastlr {

void ModelConfig::validate() const {
    if (d_hidden <= 0 || n_enc <= 0 || n_dec <= 0 || n_head <= 0)
        throw ConfigError("model dims must be positive");
    if (d_hidden % n_head != 0)
        throw ConfigError("d_hidden (" + std::to_string(d_hidden) +
                          ") not divisible by n_head (" + std::to_string(n_head) + ")");
    if (conv_ffn_kernel <= 0 || conv_ffn_kernel % 2 == 0)
        throw ConfigError("conv_ffn_kernel must be odd and positive");
    if (if_predictor_kernel <= 0 || if_predictor_kernel % 2 == 0)
        throw ConfigError("if_predictor_kernel must be odd and positive");
    if (d_input <= 0) throw ConfigError("d_input must be positive");
    if (vocab_size <= 0) throw ConfigError("vocab_size must be set before building a model");
    if (max_positions <= 0) throw ConfigError("max_positions must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0,1)");
}

namespace {

std::size_t zu(int v) { return static_cast<std::size_t>(v); }

void push_attn(std::vector<std::pair<std::string, Shape>>& out, const std::string& p,
               std::size_t d) {
    out.push_back({p + ".Wq", {d, d}});
    out.push_back({p + ".Wk", {d, d}});
    out.push_back({p + ".Wv", {d, d}});
    out.push_back({p + ".Wo", {d, d}});
}

void push_ln(std::vector<std::pair<std::string, Shape>>& out, const std::string& p,
             std::size_t d) {
    out.push_back({p + ".g", {d}});
    out.push_back({p + ".b", {d}});
}

void push_ffn(std::vector<std::pair<std::string, Shape>>& out, const std::string& p,
              const ModelConfig& cfg) {
    std::size_t d = zu(cfg.d_hidden), f = zu(cfg.filters()), k = zu(cfg.conv_ffn_kernel);
    out.push_back({p + ".conv1.W", {k, d, f}});
    out.push_back({p + ".conv1.b", {f}});
    out.push_back({p + ".conv2.W", {k, f, d}});
    out.push_back({p + ".conv2.b", {d}});
}

}  // namespace

std::vector<std::pair<std::string, Shape>> ModelParameters::expected_entries(
        const ModelConfig& cfg) {
    cfg.validate();
    std::size_t d = zu(cfg.d_hidden);
    std::size_t v = zu(cfg.vocab_size);
    std::vector<std::pair<std::string, Shape>> out;

    out.push_back({"in_proj.W", {zu(cfg.d_input), d}});
    out.push_back({"in_proj.b", {d}});

    for (int i = 0; i < cfg.n_enc; ++i) {
        std::string p = "enc.layer" + std::to_string(i);
        push_ln(out, p + ".ln1", d);
        push_attn(out, p + ".attn", d);
        push_ln(out, p + ".ln2", d);
        push_ffn(out, p + ".ffn", cfg);
    }
    push_ln(out, "enc.final_ln", d);

    out.push_back({"embed.tok", {v, d}});
    out.push_back({"out_proj.W", {d, v}});
    out.push_back({"out_proj.b", {v}});

    for (int i = 0; i < cfg.n_dec; ++i) {
        std::string p = "ardec.layer" + std::to_string(i);
        push_ln(out, p + ".ln1", d);
        push_attn(out, p + ".self_attn", d);
        push_ln(out, p + ".ln_inter", d);
        push_attn(out, p + ".inter_attn", d);
        push_ln(out, p + ".ln2", d);
        push_ffn(out, p + ".ffn", cfg);
    }
    push_ln(out, "ardec.final_ln", d);

    for (int i = 0; i < cfg.n_dec; ++i) {
        std::string p = "nardec.layer" + std::to_string(i);
        push_ln(out, p + ".ln1", d);
        push_attn(out, p + ".attn", d);
        push_ln(out, p + ".ln2", d);
        push_ffn(out, p + ".ffn", cfg);
    }
    push_ln(out, "nardec.final_ln", d);

    out.push_back({"ctc_head.fc1.W", {d, d}});
    out.push_back({"ctc_head.fc1.b", {d}});
    out.push_back({"ctc_head.fc2.W", {d, d}});
    out.push_back({"ctc_head.fc2.b", {d}});
    out.push_back({"ctc_head.fc3.W", {d, v + 1}});
    out.push_back({"ctc_head.fc3.b", {v + 1}});

    std::size_t ik = zu(cfg.if_predictor_kernel);
    out.push_back({"ifp.conv.W", {ik, d, d}});
    out.push_back({"ifp.conv.b", {d}});
    out.push_back({"ifp.fc.W", {d, 1}});
    out.push_back({"ifp.fc.b", {1}});
    return out;
}

ModelParameters ModelParameters::init(const ModelConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    ModelParameters mp;
    for (const auto& [name, shape] : expected_entries(cfg)) {
        std::size_t n = shape_numel(shape);
        std::vector<double> data(n, 0.0);
        bool is_bias = shape.size() == 1 && name.size() > 2 &&
                       (name.rfind(".b") == name.size() - 2);
        bool is_gain = name.rfind(".g") == name.size() - 2;
        if (is_gain) {
            std::fill(data.begin(), data.end(), 1.0);
        } else if (!is_bias) {
            // Xavier-uniform; for conv kernels [k×ci×co] the fans include k.
            double fan_in, fan_out;
            if (shape.size() == 3) {
                fan_in = double(shape[0] * shape[1]);
                fan_out = double(shape[0] * shape[2]);
            } else if (shape.size() == 2) {
                fan_in = double(shape[0]);
                fan_out = double(shape[1]);
            } else {
                fan_in = fan_out = double(shape[0]);
            }
            double s = std::sqrt(6.0 / (fan_in + fan_out));
            for (auto& x : data) x = rng.uniform(-s, s);
        }
        mp.put(name, Tensor::from_data(shape, std::move(data), /*requires_grad=*/true));
    }
    return mp;
}

Tensor& ModelParameters::at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("missing model parameter: " + name);
    return it->second;
}

const Tensor& ModelParameters::at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("missing model parameter: " + name);
    return it->second;
}

void ModelParameters::put(const std::string& name, Tensor t) {
    params_[name] = std::move(t);
}

void ModelParameters::validate_against(const ModelConfig& cfg) const {
    auto expected = expected_entries(cfg);
    for (const auto& [name, shape] : expected) {
        auto it = params_.find(name);
        if (it == params_.end()) throw ConfigError("missing model parameter: " + name);
        if (it->second.shape() != shape)
            throw ConfigError("parameter " + name + " has shape " +
                              shape_str(it->second.shape()) + ", expected " +
                              shape_str(shape));
    }
    if (params_.size() != expected.size()) {
        // Find one offender for the message.
        for (const auto& [name, t] : params_) {
            (void)t;
            bool found = false;
            for (const auto& [en, es] : expected) {
                (void)es;
                if (en == name) { found = true; break; }
            }
            if (!found) throw ConfigError("unexpected model parameter: " + name);
        }
    }
}

// ---- forward passes --------------------------------------------------------

Tensor positional_encoding(std::size_t count, std::size_t d, std::size_t offset) {
    std::vector<double> data(count * d, 0.0);
    for (std::size_t t = 0; t < count; ++t) {
        double pos = double(t + offset);
        for (std::size_t i = 0; i + 1 < d; i += 2) {
            double freq = std::pow(10000.0, -double(i) / double(d));
            data[t * d + i] = std::sin(pos * freq);
            data[t * d + i + 1] = std::cos(pos * freq);
        }
        if (d % 2 == 1) {
            double freq = std::pow(10000.0, -double(d - 1) / double(d));
            data[t * d + d - 1] = std::sin(pos * freq);
        }
    }
    return Tensor::from_data({count, d}, std::move(data));
}

namespace {

Tensor dropout_apply(const Tensor& x, const ForwardCtx& ctx) {
    if (ctx.rng == nullptr || ctx.dropout <= 0.0) return x;
    double keep = 1.0 - ctx.dropout;
    std::vector<double> mask(x.numel());
    for (auto& m : mask) m = (ctx.rng->uniform() < keep) ? 1.0 / keep : 0.0;
    return mul(x, Tensor::from_data(x.shape(), std::move(mask)));
}

Tensor ln(const Tensor& x, const ModelParameters& p, const std::string& prefix) {
    return layer_norm(x, p.at(prefix + ".g"), p.at(prefix + ".b"));
}

std::vector<double> causal_mask(std::size_t tq, std::size_t tk) {
    // Query row t may attend to keys 0..t (offset so the last query sees all
    // keys, which is what incremental decoding needs when tq < tk).
    std::vector<double> m(tq * tk, 0.0);
    std::size_t shift = tk - tq;
    for (std::size_t q = 0; q < tq; ++q)
        for (std::size_t k = q + shift + 1; k < tk; ++k) m[q * tk + k] = -1e30;
    return m;
}

Tensor multihead_attention(const Tensor& q_in, const Tensor& kv_in,
                           const ModelConfig& cfg, const ModelParameters& p,
                           const std::string& prefix, bool causal,
                           const ForwardCtx& ctx) {
    std::size_t dh = zu(cfg.head_dim());
    Tensor Q = matmul(q_in, p.at(prefix + ".Wq"));
    Tensor K = matmul(kv_in, p.at(prefix + ".Wk"));
    Tensor V = matmul(kv_in, p.at(prefix + ".Wv"));
    std::size_t tq = Q.dim(0), tk = K.dim(0);
    std::vector<double> mask;
    if (causal) {
        if (tq > tk) throw ShapeError("causal attention with more queries than keys");
        mask = causal_mask(tq, tk);
    }
    std::vector<Tensor> heads;
    heads.reserve(zu(cfg.n_head));
    for (int h = 0; h < cfg.n_head; ++h) {
        std::size_t c0 = zu(h) * dh, c1 = c0 + dh;
        Tensor qh = slice_cols(Q, c0, c1);
        Tensor kh = slice_cols(K, c0, c1);
        Tensor vh = slice_cols(V, c0, c1);
        Tensor scores = mul_scalar(matmul(qh, transpose(kh)), 1.0 / std::sqrt(double(dh)));
        if (causal) scores = add_mask(scores, mask);
        Tensor att = softmax_rows(scores);
        heads.push_back(matmul(att, vh));
    }
    Tensor out = matmul(heads.size() == 1 ? heads[0] : concat_cols(heads),
                        p.at(prefix + ".Wo"));
    return dropout_apply(out, ctx);
}

Tensor conv_ffn(const Tensor& x, const ModelParameters& p, const std::string& prefix,
                ConvPadding pad, const ForwardCtx& ctx) {
    Tensor h = relu(conv1d(x, p.at(prefix + ".conv1.W"), p.at(prefix + ".conv1.b"), pad));
    Tensor out = conv1d(h, p.at(prefix + ".conv2.W"), p.at(prefix + ".conv2.b"), pad);
    return dropout_apply(out, ctx);
}

}  // namespace

Tensor encode(const Tensor& features, const ModelConfig& cfg,
              const ModelParameters& params, const ForwardCtx& ctx) {
    if (features.rank() != 2 || features.dim(1) != zu(cfg.d_input))
        throw ShapeError("encode expects [T×" + std::to_string(cfg.d_input) +
                         "] features, got " + shape_str(features.shape()));
    std::size_t t = features.dim(0);
    if (t == 0) throw ShapeError("encode: empty input");
    if (t > zu(cfg.max_positions))
        throw ShapeError("encode: " + std::to_string(t) + " frames exceeds max_positions " +
                         std::to_string(cfg.max_positions));
    Tensor x = add(matmul(features, params.at("in_proj.W")), params.at("in_proj.b"));
    x = add(x, positional_encoding(t, zu(cfg.d_hidden)));
    x = dropout_apply(x, ctx);
    for (int i = 0; i < cfg.n_enc; ++i) {
        std::string p = "enc.layer" + std::to_string(i);
        x = add(x, multihead_attention(ln(x, params, p + ".ln1"), ln(x, params, p + ".ln1"),
                                       cfg, params, p + ".attn", /*causal=*/false, ctx));
        x = add(x, conv_ffn(ln(x, params, p + ".ln2"), params, p + ".ffn",
                            ConvPadding::Same, ctx));
    }
    return ln(x, params, "enc.final_ln");
}

Tensor decode_ar(const Tensor& h, const std::vector<int>& inputs_shifted,
                 const ModelConfig& cfg, const ModelParameters& params,
                 const ForwardCtx& ctx) {
    if (inputs_shifted.empty()) throw EmptyHypothesis("decode_ar: empty input sequence");
    std::size_t ty = inputs_shifted.size();
    if (ty > zu(cfg.max_positions))
        throw ShapeError("decode_ar: sequence exceeds max_positions");
    for (int id : inputs_shifted)
        if (id < 0 || id >= cfg.vocab_size)
            throw DomainError("decode_ar: token id " + std::to_string(id) +
                              " outside vocab of " + std::to_string(cfg.vocab_size));
    Tensor x = embedding(params.at("embed.tok"), inputs_shifted);
    x = add(x, positional_encoding(ty, zu(cfg.d_hidden)));
    x = dropout_apply(x, ctx);
    for (int i = 0; i < cfg.n_dec; ++i) {
        std::string p = "ardec.layer" + std::to_string(i);
        Tensor n1 = ln(x, params, p + ".ln1");
        x = add(x, multihead_attention(n1, n1, cfg, params, p + ".self_attn",
                                       /*causal=*/true, ctx));
        x = add(x, multihead_attention(ln(x, params, p + ".ln_inter"), h, cfg, params,
                                       p + ".inter_attn", /*causal=*/false, ctx));
        x = add(x, conv_ffn(ln(x, params, p + ".ln2"), params, p + ".ffn",
                            ConvPadding::Causal, ctx));
    }
    x = ln(x, params, "ardec.final_ln");
    return add(matmul(x, params.at("out_proj.W")), params.at("out_proj.b"));
}

Tensor decode_nar(const Tensor& fired, const ModelConfig& cfg,
                  const ModelParameters& params, const ForwardCtx& ctx) {
    if (fired.rank() != 2 || fired.dim(1) != zu(cfg.d_hidden))
        throw ShapeError("decode_nar expects [n×d_hidden] embeddings, got " +
                         shape_str(fired.shape()));
    std::size_t n = fired.dim(0);
    if (n == 0) throw EmptyHypothesis("decode_nar: zero fired embeddings");
    if (n > zu(cfg.max_positions))
        throw ShapeError("decode_nar: sequence exceeds max_positions");
    Tensor x = add(fired, positional_encoding(n, zu(cfg.d_hidden)));
    x = dropout_apply(x, ctx);
    for (int i = 0; i < cfg.n_dec; ++i) {
        std::string p = "nardec.layer" + std::to_string(i);
        Tensor n1 = ln(x, params, p + ".ln1");
        x = add(x, multihead_attention(n1, n1, cfg, params, p + ".attn",
                                       /*causal=*/false, ctx));
        x = add(x, conv_ffn(ln(x, params, p + ".ln2"), params, p + ".ffn",
                            ConvPadding::Same, ctx));
    }
    x = ln(x, params, "nardec.final_ln");
    return add(matmul(x, params.at("out_proj.W")), params.at("out_proj.b"));
}

Tensor ctc_head(const Tensor& h, const ModelConfig& cfg, const ModelParameters& params,
                const ForwardCtx& ctx) {
    if (h.rank() != 2 || h.dim(1) != zu(cfg.d_hidden))
        throw ShapeError("ctc_head expects [T×d_hidden] input, got " + shape_str(h.shape()));
    Tensor x = relu(add(matmul(h, params.at("ctc_head.fc1.W")), params.at("ctc_head.fc1.b")));
    x = dropout_apply(x, ctx);
    x = relu(add(matmul(x, params.at("ctc_head.fc2.W")), params.at("ctc_head.fc2.b")));
    Tensor logits = add(matmul(x, params.at("ctc_head.fc3.W")), params.at("ctc_head.fc3.b"));
    return log_softmax_rows(logits);
}

}  // namespace fastlr
