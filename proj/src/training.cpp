#include "fastlr/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <mutex>
#include <sstream>

#include "fastlr/ctc.hpp"
#include "fastlr/errors.hpp"
#include "fastlr/inference.hpp"
#include "fastlr/integrate_and_fire.hpp"
#include "fastlr/io_util.hpp"
#include "fastlr/metrics.hpp"
#include "fastlr/rng.hpp"

namespace fastlr {

namespace {

/// Loss for a single utterance. Branches with zero weight are not built.
std::pair<Tensor, LossComponents> utterance_loss(const BatchItem& item,
                                                 const ModelConfig& cfg,
                                                 const ModelParameters& params,
                                                 const LossWeights& lw,
                                                 const ForwardCtx& ctx) {
    if (item.targets.empty()) throw DomainError("training item has no target tokens");
    LossComponents comp;
    Tensor h = encode(item.features, cfg, params, ctx);
    std::vector<Tensor> terms;

    if (lw.l1 > 0.0) {
        if (ctc_feasible(h.dim(0), item.targets)) {
            Tensor lp = ctc_head(h, cfg, params, ctx);
            Tensor lc = ctc_loss(lp, item.targets);
            comp.ctc = lc.value();
            terms.push_back(mul_scalar(lc, lw.l1));
        } else {
            comp.ctc_skipped = 1;
        }
    }

    if (lw.l2 > 0.0) {
        std::vector<int> inputs = {Vocab::kBos};
        inputs.insert(inputs.end(), item.targets.begin(), item.targets.end());
        std::vector<int> targets = item.targets;
        targets.push_back(Vocab::kEos);
        Tensor logits = decode_ar(h, inputs, cfg, params, ctx);
        Tensor ce = mul_scalar(cross_entropy_sum(logits, targets),
                               1.0 / double(targets.size()));
        comp.ar = ce.value();
        terms.push_back(mul_scalar(ce, lw.l2));
    }

    if (lw.l3 > 0.0) {
        double want = double(item.targets.size());
        Tensor w = predict_weights(h, cfg, params, ctx);
        Tensor diff = sub(sum(w), Tensor::scalar(want));
        Tensor quantity = mul(diff, diff);
        Tensor scaled = scale_weights(w, want);
        FiredEmbeddings fe = fire(h, scaled);
        if (fe.segments.dim(0) != item.targets.size())
            throw Error("scaled firing produced " + std::to_string(fe.segments.dim(0)) +
                        " segments for a target of " + std::to_string(item.targets.size()));
        Tensor logits = decode_nar(fe.segments, cfg, params, ctx);
        Tensor ce = mul_scalar(cross_entropy_sum(logits, item.targets), 1.0 / want);
        Tensor flr = add(ce, quantity);
        comp.flr = flr.value();
        comp.quantity = quantity.value();
        terms.push_back(mul_scalar(flr, lw.l3));
    }

    Tensor total;
    if (terms.empty()) {
        total = Tensor::scalar(0.0);
    } else {
        total = terms[0];
        for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
    }
    comp.total = total.value();
    return {total, comp};
}

void add_components(LossComponents& acc, const LossComponents& c, double scale) {
    acc.total += scale * c.total;
    acc.ctc += scale * c.ctc;
    acc.ar += scale * c.ar;
    acc.flr += scale * c.flr;
    acc.quantity += scale * c.quantity;
    acc.ctc_skipped += c.ctc_skipped;
}

}  // namespace

std::pair<Tensor, LossComponents> loss_total(const std::vector<BatchItem>& batch,
                                             const ModelConfig& cfg,
                                             const ModelParameters& params,
                                             const LossWeights& weights,
                                             const ForwardCtx& ctx) {
    if (batch.empty()) throw DomainError("loss_total: empty batch");
    LossComponents comp;
    Tensor total;
    double scale = 1.0 / double(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        auto [t, c] = utterance_loss(batch[i], cfg, params, weights, ctx);
        add_components(comp, c, scale);
        total = i == 0 ? t : add(total, t);
    }
    return {mul_scalar(total, scale), comp};
}

double lr_at(const TrainConfig& cfg, long step) {
    double s = double(std::max<long>(step, 1));
    double w = double(cfg.lr_warmup_steps);
    return cfg.lr_scale / std::sqrt(double(cfg.model.d_hidden)) *
           std::min(1.0 / std::sqrt(s), s / (w * std::sqrt(w)));
}

void adam_step(ModelParameters& params, const GradientMap& grads, TrainState& state,
               const TrainConfig& cfg) {
    state.step += 1;
    double lr = lr_at(cfg, state.step);

    // Norm in parameter-name order: the gradient map's own iteration order
    // depends on heap addresses, which would poison bit-exact determinism.
    double sq = 0.0;
    for (auto& [name, t] : params) {
        (void)name;
        if (const std::vector<double>* g = grads.find(t))
            for (double x : *g) sq += x * x;
    }
    double norm = std::sqrt(sq);
    double clip = (cfg.clip_norm > 0.0 && norm > cfg.clip_norm) ? cfg.clip_norm / norm : 1.0;

    double bc1 = 1.0 - std::pow(cfg.beta1, double(state.step));
    double bc2 = 1.0 - std::pow(cfg.beta2, double(state.step));
    for (auto& [name, t] : params) {
        const std::vector<double>* g = grads.find(t);
        if (g == nullptr) continue;
        auto& m = state.m[name];
        auto& v = state.v[name];
        m.resize(t.numel(), 0.0);
        v.resize(t.numel(), 0.0);
        auto& data = t.mutable_data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            double gi = (*g)[i] * clip;
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            double mhat = m[i] / bc1, vhat = v[i] / bc2;
            data[i] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
        }
    }
}

EvalStats evaluate_dev(const ModelConfig& cfg, const ModelParameters& params,
                       const DevSet& dev, const BpeModel& bpe, const Vocab& vocab,
                       std::size_t limit, bool use_ar, int threads) {
    std::size_t n = std::min(limit, dev.items.size());
    if (n == 0) return {};
    struct Row { double wer_s, wer_d, wer_i, wer_n, cer_s, cer_d, cer_i, cer_n, len_err; };
    std::vector<Row> rows(n);

    auto eval_one = [&](std::size_t i) {
        const BatchItem& item = dev.items[i];
        Tensor h = encode(item.features, cfg, params);
        std::vector<int> hyp_ids;
        double len_err = 0.0;
        if (use_ar) {
            hyp_ids = ar_greedy_decode(h, cfg, params, item.targets.size() * 2 + 12);
        } else {
            Tensor w = predict_weights(h, cfg, params);
            double s = 0.0;
            for (double x : w.data()) s += x;
            len_err = std::abs(s - double(item.targets.size()));
            hyp_ids = nar_decode_states(h, w, cfg, params);
        }
        std::string hyp = bpe_decode(hyp_ids, bpe, vocab);
        const std::string& ref = dev.transcripts[i];
        ErrorBreakdown wer = error_rate(ref, hyp, ErrorUnit::Word);
        ErrorBreakdown cer = error_rate(ref, hyp, ErrorUnit::Char);
        rows[i] = {double(wer.substitutions), double(wer.deletions), double(wer.insertions),
                   double(wer.ref_len),       double(cer.substitutions),
                   double(cer.deletions),     double(cer.insertions),
                   double(cer.ref_len),       len_err};
    };

    if (threads > 1) {
        std::size_t next = 0;
        std::vector<std::future<void>> futs;
        std::mutex mu;
        for (int t = 0; t < threads; ++t)
            futs.push_back(std::async(std::launch::async, [&] {
                for (;;) {
                    std::size_t i;
                    {
                        std::lock_guard<std::mutex> lk(mu);
                        if (next >= n) return;
                        i = next++;
                    }
                    eval_one(i);
                }
            }));
        for (auto& f : futs) f.get();
    } else {
        for (std::size_t i = 0; i < n; ++i) eval_one(i);
    }

    double ws = 0, wn = 0, cs = 0, cn = 0, le = 0;
    for (const auto& r : rows) {
        ws += r.wer_s + r.wer_d + r.wer_i;
        wn += r.wer_n;
        cs += r.cer_s + r.cer_d + r.cer_i;
        cn += r.cer_n;
        le += r.len_err;
    }
    EvalStats out;
    out.wer = wn > 0 ? ws / wn : 0.0;
    out.cer = cn > 0 ? cs / cn : 0.0;
    out.mean_abs_len_err = le / double(n);
    return out;
}

namespace {

struct UttResult {
    double value = 0.0;
    LossComponents comp;
    GradientMap grads;
};

UttResult run_utterance(const BatchItem& item, const ModelConfig& cfg,
                        const ModelParameters& params, const LossWeights& lw,
                        Rng* drop_rng, double dropout) {
    ForwardCtx ctx;
    ctx.rng = drop_rng;
    ctx.dropout = dropout;
    auto [loss, comp] = utterance_loss(item, cfg, params, lw, ctx);
    UttResult r;
    r.value = loss.value();
    r.comp = comp;
    if (loss.requires_grad()) r.grads = backward(loss);
    return r;
}

}  // namespace

TrainResult train_loop(const TrainConfig& cfg, const std::vector<BatchItem>& train,
                       const DevSet& dev, const BpeModel& bpe, const Vocab& vocab,
                       const std::string& out_dir, bool quiet) {
    if (train.empty()) throw DomainError("train_loop: empty training set");
    cfg.model.validate();

    ModelParameters params = ModelParameters::init(cfg.model, cfg.seed);
    TrainState state;
    state.seed = cfg.seed;
    Rng shuffle_rng(cfg.seed ^ 0x5eedULL);

    TrainResult result;
    result.best_path = out_dir + "/best.flrc";
    result.last_path = out_dir + "/last.flrc";
    std::ofstream csv(out_dir + "/metrics.csv");
    if (!csv) throw IoError("cannot write metrics log in " + out_dir);
    {
        std::ostringstream canon;
        const ModelConfig& m = cfg.model;
        canon << m.d_hidden << ' ' << m.n_enc << ' ' << m.n_dec << ' ' << m.n_head
              << ' ' << m.conv_ffn_kernel << ' ' << m.conv_ffn_filters << ' '
              << m.d_input << ' ' << m.vocab_size << ' ' << m.dropout << ' '
              << cfg.batch_size << ' ' << cfg.warmup_stage_steps << ' '
              << cfg.main_stage_steps << ' ' << cfg.lr_warmup_steps << ' '
              << cfg.lr_scale << ' ' << cfg.input_noise << ' ' << cfg.clip_norm;
        csv << file_header(cfg.seed, fnv1a64(canon.str()));
    }
    csv << "step,stage,l_total,l_ctc,l_ar,l_flr,dev_wer,dev_cer\n";

    long total_steps = cfg.warmup_stage_steps + cfg.main_stage_steps;
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::size_t cursor = order.size();  // trigger shuffle on first use

    for (long step = 1; step <= total_steps; ++step) {
        bool warm = step <= cfg.warmup_stage_steps;
        state.stage = warm ? "warmup" : "main";
        LossWeights lw = warm ? LossWeights::warmup() : LossWeights::main_stage();

        std::vector<std::size_t> batch_idx;
        for (int b = 0; b < cfg.batch_size; ++b) {
            if (cursor >= order.size()) {
                for (std::size_t i = order.size(); i-- > 1;)
                    std::swap(order[i], order[shuffle_rng.raw() % (i + 1)]);
                cursor = 0;
            }
            batch_idx.push_back(order[cursor++]);
        }

        // Per-utterance forward/backward in parallel; reduction in batch
        // order keeps the result independent of scheduling.
        std::vector<UttResult> results(batch_idx.size());
        std::vector<Rng> drop_rngs;
        drop_rngs.reserve(batch_idx.size());
        for (std::size_t b = 0; b < batch_idx.size(); ++b)
            drop_rngs.emplace_back(cfg.seed ^ (std::uint64_t(step) << 20) ^ b);
        auto run_one = [&](std::size_t b) {
            const BatchItem* item = &train[batch_idx[b]];
            BatchItem noisy;
            if (cfg.input_noise > 0.0) {
                // Fresh feature noise per visit so the model cannot memorize a
                // fixed acoustic realization of each training utterance.
                std::vector<double> d(item->features.data(),
                                      item->features.data() + item->features.numel());
                for (double& x : d) x += cfg.input_noise * drop_rngs[b].gauss();
                noisy.features = Tensor::from_data(item->features.shape(), std::move(d));
                noisy.targets = item->targets;
                item = &noisy;
            }
            results[b] = run_utterance(*item, cfg.model, params, lw,
                                       cfg.model.dropout > 0.0 ? &drop_rngs[b] : nullptr,
                                       cfg.model.dropout);
        };
        if (cfg.threads > 1) {
            std::vector<std::future<void>> futs;
            for (std::size_t b = 0; b < batch_idx.size(); ++b)
                futs.push_back(std::async(std::launch::async, run_one, b));
            for (auto& f : futs) f.get();
        } else {
            for (std::size_t b = 0; b < batch_idx.size(); ++b) run_one(b);
        }

        double inv = 1.0 / double(batch_idx.size());
        LossComponents comp;
        GradientMap grads;
        for (auto& r : results) {
            add_components(comp, r.comp, inv);
            grads.accumulate(r.grads);
        }
        grads.scale(inv);
        result.ctc_skip_warnings += comp.ctc_skipped;

        if (!std::isfinite(comp.total))
            throw Error("non-finite loss at step " + std::to_string(step) +
                        " (ctc=" + std::to_string(comp.ctc) + ", ar=" +
                        std::to_string(comp.ar) + ", flr=" + std::to_string(comp.flr) +
                        ", quantity=" + std::to_string(comp.quantity) + ")");

        adam_step(params, grads, state, cfg);
        result.trace.push_back(comp);

        bool eval_now = (step % cfg.eval_every == 0) || step == total_steps ||
                        step == cfg.warmup_stage_steps;
        csv << step << ',' << state.stage << ',' << comp.total << ',' << comp.ctc << ','
            << comp.ar << ',' << comp.flr;
        if (eval_now && !dev.items.empty()) {
            // Track the WER of the branch the current stage is training.
            EvalStats es = evaluate_dev(cfg.model, params, dev, bpe, vocab,
                                        std::size_t(cfg.dev_eval_limit), warm,
                                        cfg.threads);
            csv << ',' << es.wer << ',' << es.cer << '\n';
            if (!quiet)
                std::fprintf(stderr, "step %ld [%s] loss %.4f dev_wer %.4f\n", step,
                             state.stage.c_str(), comp.total, es.wer);
            if (warm && step == cfg.warmup_stage_steps) result.warmup_end_ar = es;
            if (es.wer < state.best_dev_wer || (warm && step == cfg.warmup_stage_steps)) {
                // Reset the bar when switching stages: the tracked metric
                // changes from AR to NAR WER.
                if (warm && step == cfg.warmup_stage_steps)
                    state.best_dev_wer = 1e18;
                else
                    state.best_dev_wer = es.wer;
                if (!warm) save_checkpoint(result.best_path, cfg.model, params, state);
            }
        } else {
            csv << ",,\n";
        }
    }

    save_checkpoint(result.last_path, cfg.model, params, state);
    if (cfg.main_stage_steps == 0 || state.best_dev_wer > 1e17)
        save_checkpoint(result.best_path, cfg.model, params, state);

    result.final_nar = evaluate_dev(cfg.model, params, dev, bpe, vocab,
                                    dev.items.size(), false, cfg.threads);
    result.final_ar = evaluate_dev(cfg.model, params, dev, bpe, vocab,
                                   dev.items.size(), true, cfg.threads);
    return result;
}

// ---- checkpoints -----------------------------------------------------------

namespace {
constexpr std::uint32_t kCkptVersion = 1;
}

void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const ModelParameters& params, const TrainState& state) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    out.write("FLRC", 4);
    write_u32(out, kCkptVersion);

    std::uint32_t count = std::uint32_t(params.size());
    for (const auto& [name, vec] : state.m) { (void)name; (void)vec; ++count; }
    for (const auto& [name, vec] : state.v) { (void)name; (void)vec; ++count; }
    write_u32(out, count);

    auto write_tensor = [&](const std::string& name, const Shape& shape,
                            const std::vector<double>& data) {
        write_str(out, name);
        write_u32(out, std::uint32_t(shape.size()));
        for (auto d : shape) write_u32(out, std::uint32_t(d));
        for (double x : data) write_f32(out, float(x));
    };
    for (const auto& [name, t] : params) write_tensor(name, t.shape(), t.data());
    for (const auto& [name, vec] : state.m)
        write_tensor("opt.m:" + name, {vec.size()}, vec);
    for (const auto& [name, vec] : state.v)
        write_tensor("opt.v:" + name, {vec.size()}, vec);
    if (!out) throw IoError("write failure on checkpoint: " + path);

    std::ofstream meta(path + ".meta");
    if (!meta) throw IoError("cannot write checkpoint sidecar: " + path + ".meta");
    meta << "d_hidden=" << cfg.d_hidden << "\nn_enc=" << cfg.n_enc
         << "\nn_dec=" << cfg.n_dec << "\nn_head=" << cfg.n_head
         << "\nconv_ffn_kernel=" << cfg.conv_ffn_kernel
         << "\nconv_ffn_filters=" << cfg.conv_ffn_filters << "\nd_input=" << cfg.d_input
         << "\nvocab_size=" << cfg.vocab_size << "\nmax_positions=" << cfg.max_positions
         << "\ndropout=" << cfg.dropout
         << "\nif_predictor_kernel=" << cfg.if_predictor_kernel
         << "\nstep=" << state.step << "\nstage=" << state.stage
         << "\nseed=" << state.seed << "\nbest_dev_wer=" << state.best_dev_wer << "\n";
}

Checkpoint load_checkpoint(const std::string& path) {
    auto kv = read_kv_file(path + ".meta");
    auto geti = [&](const std::string& k) {
        auto it = kv.find(k);
        if (it == kv.end()) throw ConfigError("checkpoint sidecar missing key: " + k);
        return std::stoi(it->second);
    };
    Checkpoint ck;
    ck.cfg.d_hidden = geti("d_hidden");
    ck.cfg.n_enc = geti("n_enc");
    ck.cfg.n_dec = geti("n_dec");
    ck.cfg.n_head = geti("n_head");
    ck.cfg.conv_ffn_kernel = geti("conv_ffn_kernel");
    ck.cfg.conv_ffn_filters = geti("conv_ffn_filters");
    ck.cfg.d_input = geti("d_input");
    ck.cfg.vocab_size = geti("vocab_size");
    ck.cfg.max_positions = geti("max_positions");
    ck.cfg.dropout = std::stod(kv.at("dropout"));
    ck.cfg.if_predictor_kernel = geti("if_predictor_kernel");
    ck.state.step = std::stol(kv.at("step"));
    ck.state.stage = kv.at("stage");
    ck.state.seed = std::stoull(kv.at("seed"));
    ck.state.best_dev_wer = std::stod(kv.at("best_dev_wer"));

    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != "FLRC")
        throw IoError("not a checkpoint file: " + path);
    std::uint32_t version = read_u32(in);
    if (version != kCkptVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(version));
    std::uint32_t count = read_u32(in);
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = read_str(in);
        std::uint32_t rank = read_u32(in);
        Shape shape(rank);
        std::size_t numel = 1;
        for (auto& d : shape) {
            d = read_u32(in);
            numel *= d;
        }
        std::vector<double> data(numel);
        for (auto& x : data) x = double(read_f32(in));
        if (name.rfind("opt.m:", 0) == 0)
            ck.state.m[name.substr(6)] = std::move(data);
        else if (name.rfind("opt.v:", 0) == 0)
            ck.state.v[name.substr(6)] = std::move(data);
        else
            ck.params.put(name, Tensor::from_data(shape, std::move(data), true));
    }
    ck.params.validate_against(ck.cfg);
    return ck;
}

std::map<std::string, std::string> read_kv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    std::map<std::string, std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("malformed config line: " + line);
        auto trim = [](std::string s) {
            auto a = s.find_first_not_of(" \t\r");
            auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return out;
}

TrainConfig parse_train_config(const std::string& path) {
    auto kv = read_kv_file(path);
    TrainConfig cfg;
    for (const auto& [k, val] : kv) {
        if (k == "d_hidden") cfg.model.d_hidden = std::stoi(val);
        else if (k == "n_enc") cfg.model.n_enc = std::stoi(val);
        else if (k == "n_dec") cfg.model.n_dec = std::stoi(val);
        else if (k == "n_head") cfg.model.n_head = std::stoi(val);
        else if (k == "conv_ffn_kernel") cfg.model.conv_ffn_kernel = std::stoi(val);
        else if (k == "conv_ffn_filters") cfg.model.conv_ffn_filters = std::stoi(val);
        else if (k == "d_input") cfg.model.d_input = std::stoi(val);
        else if (k == "max_positions") cfg.model.max_positions = std::stoi(val);
        else if (k == "dropout") cfg.model.dropout = std::stod(val);
        else if (k == "if_predictor_kernel") cfg.model.if_predictor_kernel = std::stoi(val);
        else if (k == "batch_size") cfg.batch_size = std::stoi(val);
        else if (k == "warmup_stage_steps") cfg.warmup_stage_steps = std::stoi(val);
        else if (k == "main_stage_steps") cfg.main_stage_steps = std::stoi(val);
        else if (k == "eval_every") cfg.eval_every = std::stoi(val);
        else if (k == "dev_eval_limit") cfg.dev_eval_limit = std::stoi(val);
        else if (k == "lr_warmup_steps") cfg.lr_warmup_steps = std::stoi(val);
        else if (k == "lr_scale") cfg.lr_scale = std::stod(val);
        else if (k == "input_noise") cfg.input_noise = std::stod(val);
        else if (k == "clip_norm") cfg.clip_norm = std::stod(val);
        else if (k == "seed") cfg.seed = std::stoull(val);
        else if (k == "threads") cfg.threads = std::stoi(val);
        else throw ConfigError("unknown config key: " + k);
    }
    return cfg;
}

}  // namespace fastlr
