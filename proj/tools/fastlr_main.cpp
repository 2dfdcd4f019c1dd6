// Command-line front end: synthetic data generation, subword learning,
// training, evaluation, decoding, and the decode-latency benchmark.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fastlr/bench.hpp"
#include "fastlr/inference.hpp"
#include "fastlr/io_util.hpp"
#include "fastlr/metrics.hpp"
#include "fastlr/npd.hpp"
#include "fastlr/synthetic.hpp"
#include "fastlr/text.hpp"
#include "fastlr/training.hpp"

namespace {

using json = nlohmann::ordered_json;
using namespace fastlr;

int g_warnings = 0;

void warn(const std::string& msg) {
    ++g_warnings;
    std::fprintf(stderr, "warning: %s\n", msg.c_str());
}

/// FASTLR_SEED beats any seed from a flag or config file.
std::uint64_t effective_seed(std::uint64_t configured) {
    if (const char* env = std::getenv("FASTLR_SEED")) {
        try {
            return std::stoull(env);
        } catch (const std::exception&) {
            throw ConfigError(std::string("FASTLR_SEED is not an integer: ") + env);
        }
    }
    return configured;
}

Tensor features_of(const Utterance& u) {
    std::vector<double> data(u.features.begin(), u.features.end());
    return Tensor::from_data({u.frames, u.feature_dim}, std::move(data));
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    return out;
}

std::string csv_quote(const std::string& s) {
    std::string q = "\"";
    for (char c : s) {
        if (c == '"') q += '"';
        q += c;
    }
    return q + "\"";
}

// ---- make-data -------------------------------------------------------------

int cmd_make_data(CLI::App& app) {
    auto spec = std::make_shared<TaskSpec>();
    auto out_dir = std::make_shared<std::string>();
    auto n_train = std::make_shared<int>(1000);
    auto n_dev = std::make_shared<int>(100);
    app.add_option("--out-dir", *out_dir, "output directory")->required();
    app.add_option("--train", *n_train, "training utterances");
    app.add_option("--dev", *n_dev, "dev utterances");
    app.add_option("--vocab-words", spec->vocab_words);
    app.add_option("--feature-dim", spec->feature_dim);
    app.add_option("--dur-min", spec->dur_min);
    app.add_option("--dur-max", spec->dur_max);
    app.add_option("--noise-sigma", spec->noise_sigma);
    app.add_option("--homophene-pairs", spec->homophene_pairs);
    app.add_option("--sent-min", spec->sent_min);
    app.add_option("--sent-max", spec->sent_max);
    app.add_option("--seed", spec->seed);

    app.callback([=]() {
        spec->seed = effective_seed(spec->seed);
        spec->validate();
        std::filesystem::create_directories(*out_dir);
        Task task = Task::build(*spec);
        auto train = generate(task, *n_train, 0);
        auto dev = generate(task, *n_dev, 1);
        save_dataset(*out_dir + "/train.flrd", train);
        save_dataset(*out_dir + "/dev.flrd", dev);
        write_transcripts(*out_dir + "/train.txt", train);
        write_transcripts(*out_dir + "/dev.txt", dev);

        std::ostringstream canon;
        canon << spec->vocab_words << ' ' << spec->feature_dim << ' ' << spec->dur_min
              << ' ' << spec->dur_max << ' ' << spec->noise_sigma << ' '
              << spec->homophene_pairs << ' ' << spec->sent_min << ' ' << spec->sent_max
              << ' ' << *n_train << ' ' << *n_dev;
        std::ofstream meta = open_out(*out_dir + "/data.meta");
        meta << file_header(spec->seed, fnv1a64(canon.str()));
        meta << "train = " << *n_train << "\ndev = " << *n_dev
             << "\nvocab_words = " << spec->vocab_words
             << "\nfeature_dim = " << spec->feature_dim << "\n";
        std::printf("wrote %d train / %d dev utterances to %s\n", *n_train, *n_dev,
                    out_dir->c_str());
    });
    return 0;
}

// ---- bpe-learn -------------------------------------------------------------

int cmd_bpe_learn(CLI::App& app) {
    auto input = std::make_shared<std::string>();
    auto out_dir = std::make_shared<std::string>();
    auto vocab_size = std::make_shared<std::size_t>(200);
    auto char_mode = std::make_shared<bool>(false);
    app.add_option("--input", *input, "transcript file, one sentence per line")->required();
    app.add_option("--out-dir", *out_dir, "directory for bpe.txt and vocab.txt")->required();
    app.add_option("--vocab-size", *vocab_size, "target subword inventory size");
    app.add_flag("--char", *char_mode, "character model, no merges");

    app.callback([=]() {
        std::ifstream in(*input);
        if (!in) throw IoError("cannot read " + *input);
        std::vector<std::string> corpus;
        for (std::string line; std::getline(in, line);)
            if (!line.empty()) corpus.push_back(line);
        if (corpus.empty()) throw ConfigError("empty transcript file " + *input);

        BpeModel model = *char_mode ? bpe_char_model(corpus)
                                    : bpe_learn(corpus, *vocab_size);
        Vocab vocab = build_vocab(model, corpus);
        std::filesystem::create_directories(*out_dir);
        model.save(*out_dir + "/bpe.txt");
        vocab.save(*out_dir + "/vocab.txt");
        std::printf("learned %zu merges, vocab size %d\n", model.merges.size(),
                    vocab.size());
    });
    return 0;
}

// ---- shared loading --------------------------------------------------------

struct LoadedData {
    std::vector<Utterance> utts;
    std::vector<BatchItem> items;
    std::vector<std::string> transcripts;
};

LoadedData load_items(const std::string& path, const BpeModel& bpe, const Vocab& vocab) {
    LoadedData d;
    d.utts = load_dataset(path);
    for (const Utterance& u : d.utts) {
        BatchItem it;
        it.features = features_of(u);
        EncodeResult enc = bpe_encode(u.transcript, bpe, vocab);
        if (enc.unk_count > 0)
            warn("unknown subwords in transcript of " + u.id);
        it.targets = enc.ids;
        d.items.push_back(std::move(it));
        d.transcripts.push_back(u.transcript);
    }
    return d;
}

// ---- train -----------------------------------------------------------------

int cmd_train(CLI::App& app) {
    auto config = std::make_shared<std::string>();
    auto data = std::make_shared<std::string>();
    auto dev = std::make_shared<std::string>();
    auto bpe_path = std::make_shared<std::string>();
    auto vocab_path = std::make_shared<std::string>();
    auto out_dir = std::make_shared<std::string>();
    auto quiet = std::make_shared<bool>(false);
    app.add_option("--config", *config, "key = value training config")->required();
    app.add_option("--data", *data, "training dataset (.flrd)")->required();
    app.add_option("--dev", *dev, "dev dataset (.flrd)")->required();
    app.add_option("--bpe", *bpe_path, "subword model")->required();
    app.add_option("--vocab", *vocab_path, "vocabulary file")->required();
    app.add_option("--out-dir", *out_dir, "checkpoints and metrics log")->required();
    app.add_flag("--quiet", *quiet);

    app.callback([=]() {
        TrainConfig cfg = parse_train_config(*config);
        cfg.seed = effective_seed(cfg.seed);
        BpeModel bpe = BpeModel::load(*bpe_path);
        Vocab vocab = Vocab::load(*vocab_path);
        if (cfg.model.vocab_size == 0) cfg.model.vocab_size = vocab.size();
        if (cfg.model.vocab_size != vocab.size())
            throw ConfigError("config vocab_size disagrees with " + *vocab_path);

        LoadedData tr = load_items(*data, bpe, vocab);
        LoadedData dv = load_items(*dev, bpe, vocab);
        DevSet devset{dv.items, dv.transcripts};
        std::filesystem::create_directories(*out_dir);
        TrainResult r = train_loop(cfg, tr.items, devset, bpe, vocab, *out_dir, *quiet);
        for (int i = 0; i < r.ctc_skip_warnings; ++i)
            ++g_warnings;
        if (r.ctc_skip_warnings)
            std::fprintf(stderr, "warning: %d utterances skipped the CTC loss\n",
                         r.ctc_skip_warnings);
        std::printf("done: dev WER nar %.4f ar %.4f; best %s\n", r.final_nar.wer,
                    r.final_ar.wer, r.best_path.c_str());
    });
    return 0;
}

// ---- eval ------------------------------------------------------------------

int cmd_eval(CLI::App& app) {
    auto ckpt = std::make_shared<std::string>();
    auto data = std::make_shared<std::string>();
    auto bpe_path = std::make_shared<std::string>();
    auto vocab_path = std::make_shared<std::string>();
    auto hyp_file = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto mode = std::make_shared<std::string>("nar");
    auto limit = std::make_shared<std::size_t>(std::size_t(-1));
    app.add_option("--checkpoint", *ckpt, "model checkpoint (.flrc)");
    app.add_option("--data", *data, "dataset with reference transcripts")->required();
    app.add_option("--bpe", *bpe_path);
    app.add_option("--vocab", *vocab_path);
    app.add_option("--hyp", *hyp_file, "hypothesis file (one per line) instead of a model");
    app.add_option("--out", *out, "per-utterance CSV")->required();
    app.add_option("--mode", *mode)->check(CLI::IsMember({"ar", "nar"}));
    app.add_option("--limit", *limit);

    app.callback([=]() {
        std::vector<Utterance> utts = load_dataset(*data);
        if (utts.size() > *limit) utts.resize(*limit);

        std::vector<std::string> hyps;
        std::uint64_t seed = 0;
        std::uint64_t cfg_hash = 0;
        if (!hyp_file->empty()) {
            std::ifstream in(*hyp_file);
            if (!in) throw IoError("cannot read " + *hyp_file);
            for (std::string line; std::getline(in, line);) hyps.push_back(line);
            if (hyps.size() < utts.size())
                throw ConfigError("hypothesis file has fewer lines than the dataset");
            hyps.resize(utts.size());
            cfg_hash = fnv1a64("hyp-file " + *hyp_file);
        } else {
            if (ckpt->empty() || bpe_path->empty() || vocab_path->empty())
                throw ConfigError("eval needs --checkpoint/--bpe/--vocab or --hyp");
            Checkpoint ck = load_checkpoint(*ckpt);
            BpeModel bpe = BpeModel::load(*bpe_path);
            Vocab vocab = Vocab::load(*vocab_path);
            seed = ck.state.seed;
            cfg_hash = fnv1a64(*mode + " " + std::to_string(ck.cfg.d_hidden) + " " +
                               std::to_string(ck.cfg.vocab_size));
            for (const Utterance& u : utts) {
                Tensor h = encode(features_of(u), ck.cfg, ck.params);
                std::vector<int> ids;
                if (*mode == "ar") {
                    ids = ar_greedy_decode(h, ck.cfg, ck.params, 96);
                } else {
                    Tensor w = predict_weights(h, ck.cfg, ck.params);
                    ids = nar_decode_states(h, w, ck.cfg, ck.params);
                    if (ids.empty()) warn("empty hypothesis for " + u.id);
                }
                hyps.push_back(bpe_decode(ids, bpe, vocab));
            }
        }

        std::ofstream os = open_out(*out);
        os << file_header(seed, cfg_hash);
        os << "id,ref,hyp,word_errors,ref_words,wer,cer\n";
        std::size_t word_err = 0, word_ref = 0, char_err = 0, char_ref = 0;
        for (std::size_t i = 0; i < utts.size(); ++i) {
            ErrorBreakdown w = error_rate(utts[i].transcript, hyps[i], ErrorUnit::Word);
            ErrorBreakdown c = error_rate(utts[i].transcript, hyps[i], ErrorUnit::Char);
            word_err += w.total();
            word_ref += w.ref_len;
            char_err += c.total();
            char_ref += c.ref_len;
            os << utts[i].id << ',' << csv_quote(utts[i].transcript) << ','
               << csv_quote(hyps[i]) << ',' << w.total() << ',' << w.ref_len << ','
               << w.rate << ',' << c.rate << '\n';
        }
        double wer = word_ref ? double(word_err) / double(word_ref) : 0.0;
        double cer = char_ref ? double(char_err) / double(char_ref) : 0.0;
        os << "aggregate,,," << word_err << ',' << word_ref << ',' << wer << ',' << cer
           << '\n';
        std::printf("utterances %zu WER %.4f CER %.4f\n", utts.size(), wer, cer);
    });
    return 0;
}

// ---- decode ----------------------------------------------------------------

int cmd_decode(CLI::App& app) {
    auto ckpt = std::make_shared<std::string>();
    auto teacher_path = std::make_shared<std::string>();
    auto data = std::make_shared<std::string>();
    auto bpe_path = std::make_shared<std::string>();
    auto vocab_path = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto boundaries_path = std::make_shared<std::string>();
    auto npd = std::make_shared<int>(0);
    auto threads = std::make_shared<int>(1);
    auto limit = std::make_shared<std::size_t>(std::size_t(-1));
    app.add_option("--checkpoint", *ckpt)->required();
    app.add_option("--teacher", *teacher_path, "separate rescoring checkpoint");
    app.add_option("--data", *data)->required();
    app.add_option("--bpe", *bpe_path)->required();
    app.add_option("--vocab", *vocab_path)->required();
    app.add_option("--out", *out, "JSON-lines hypotheses")->required();
    app.add_option("--npd", *npd, "length-bias beam B; 0 disables rescoring");
    app.add_option("--emit-boundaries", *boundaries_path, "per-segment frame CSV");
    app.add_option("--threads", *threads, "candidate-level parallelism");
    app.add_option("--limit", *limit);

    app.callback([=]() {
        Checkpoint ck = load_checkpoint(*ckpt);
        Checkpoint teacher_ck;
        bool own_teacher = !teacher_path->empty();
        if (own_teacher) teacher_ck = load_checkpoint(*teacher_path);
        const ModelConfig& tcfg = own_teacher ? teacher_ck.cfg : ck.cfg;
        const ModelParameters& tparams = own_teacher ? teacher_ck.params : ck.params;
        BpeModel bpe = BpeModel::load(*bpe_path);
        Vocab vocab = Vocab::load(*vocab_path);
        std::vector<Utterance> utts = load_dataset(*data);
        if (utts.size() > *limit) utts.resize(*limit);

        std::uint64_t cfg_hash =
            fnv1a64("decode npd=" + std::to_string(*npd) + " ckpt=" +
                    std::to_string(ck.cfg.d_hidden) + "x" +
                    std::to_string(ck.cfg.vocab_size));
        std::ofstream os = open_out(*out);
        os << file_header(ck.state.seed, cfg_hash);
        std::ofstream bos;
        if (!boundaries_path->empty()) {
            bos = open_out(*boundaries_path);
            bos << file_header(ck.state.seed, cfg_hash);
            bos << "id,segment,start_frame,end_frame,frame_weights\n";
        }

        int empty_hyps = 0;
        for (const Utterance& u : utts) {
            Tensor h = encode(features_of(u), ck.cfg, ck.params);
            Tensor w = predict_weights(h, ck.cfg, ck.params);
            json rec;
            rec["id"] = u.id;
            FiredEmbeddings fired;
            std::vector<int> ids;

            if (*npd > 0) {
                NpdConfig nc;
                nc.beam = *npd;
                nc.threads = *threads;
                TeacherRef teacher{&tcfg, &tparams};
                NpdResult r = rescore_select(make_candidates(w, nc.beam), h, ck.cfg,
                                             ck.params, teacher, nc);
                const Candidate& best = r.candidates[r.best_index];
                ids = best.hypothesis;
                fired = fire(h, best.scaled_w.w);
                json cands = json::array();
                for (const Candidate& c : r.candidates)
                    cands.push_back({{"bias", c.bias},
                                     {"len", c.hypothesis.size()},
                                     {"logprob", c.teacher_logprob},
                                     {"chosen", c.chosen}});
                rec["candidates"] = std::move(cands);
            } else {
                ids = nar_decode_states(h, w, ck.cfg, ck.params, &fired);
            }

            if (ids.empty()) {
                warn("empty hypothesis for " + u.id);
                ++empty_hyps;
                rec["warning"] = "empty_hypothesis";
            }
            rec["hypothesis"] = bpe_decode(ids, bpe, vocab);
            rec["fired_len"] = fired.segments.dim(0);
            if (!boundaries_path->empty()) {
                json jb = json::array();
                for (std::size_t j = 0; j < fired.consumed.size(); ++j) {
                    const auto& seg = fired.consumed[j];
                    std::size_t start = seg.empty() ? 0 : seg.front().first;
                    std::size_t end = seg.empty() ? 0 : seg.back().first + 1;
                    jb.push_back({{"segment", j}, {"start", start}, {"end", end}});
                    bos << u.id << ',' << j << ',' << start << ',' << end << ',' << '"';
                    for (std::size_t k = 0; k < seg.size(); ++k)
                        bos << (k ? " " : "") << seg[k].second;
                    bos << '"' << '\n';
                }
                rec["boundaries"] = std::move(jb);
            }
            os << rec.dump() << '\n';
        }
        std::printf("decoded %zu utterances (%d empty hypotheses)\n", utts.size(),
                    empty_hyps);
    });
    return 0;
}

// ---- bench -----------------------------------------------------------------

int cmd_bench(CLI::App& app) {
    auto ckpt = std::make_shared<std::string>();
    auto data = std::make_shared<std::string>();
    auto bpe_path = std::make_shared<std::string>();
    auto vocab_path = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto methods = std::make_shared<std::string>("ar,nar,npd");
    auto opt = std::make_shared<BenchOptions>();
    auto batch = std::make_shared<int>(1);
    auto bucket = std::make_shared<std::size_t>(5);
    app.add_option("--checkpoint", *ckpt)->required();
    app.add_option("--data", *data)->required();
    app.add_option("--bpe", *bpe_path)->required();
    app.add_option("--vocab", *vocab_path)->required();
    app.add_option("--out", *out, "per-utterance latency CSV")->required();
    app.add_option("--methods", *methods, "comma list of ar,nar,npd");
    app.add_option("--npd", opt->npd_beam, "length-bias beam for the npd method");
    app.add_option("--threads", opt->threads, "candidate-level parallelism for npd");
    app.add_option("--warmup", opt->warmup, "leading utterances dropped from stats");
    app.add_option("--limit", opt->limit);
    app.add_option("--batch", *batch)->check(CLI::IsMember({1}));
    app.add_option("--bucket-width", *bucket, "predicted-length bucket width");

    app.callback([=]() {
        Checkpoint ck = load_checkpoint(*ckpt);
        BpeModel bpe = BpeModel::load(*bpe_path);
        Vocab vocab = Vocab::load(*vocab_path);
        std::vector<Utterance> utts = load_dataset(*data);

        opt->methods.clear();
        std::stringstream ss(*methods);
        for (std::string m; std::getline(ss, m, ',');)
            if (!m.empty()) opt->methods.push_back(m);

        std::vector<BenchRecord> records = run_bench(ck.cfg, ck.params, utts, bpe,
                                                     vocab, *opt);
        BenchSummary s = summarize(records, *bucket);
        g_warnings += s.warnings;

        std::uint64_t cfg_hash = fnv1a64(*methods + " npd=" +
                                         std::to_string(opt->npd_beam) + " threads=" +
                                         std::to_string(opt->threads));
        std::ofstream os = open_out(*out);
        os << file_header(ck.state.seed, cfg_hash);
        os << "id,method,pred_len,latency_ns,hypothesis\n";
        for (const BenchRecord& r : records)
            os << r.id << ',' << r.method << ',' << r.pred_len << ',' << r.latency_ns
               << ',' << csv_quote(r.hypothesis) << '\n';

        std::printf("method mean latencies (batch 1, %d warm-up runs dropped):\n",
                    opt->warmup);
        for (const auto& [method, mean] : s.mean_ns)
            std::printf("  %-4s %.3f ms\n", method.c_str(), mean / 1e6);
        if (s.mean_ns.count("ar")) {
            for (const auto& [method, mean] : s.mean_ns)
                if (method != "ar")
                    std::printf("speedup %s over ar: %.2fx\n", method.c_str(),
                                s.mean_ns.at("ar") / mean);
        }
        for (const auto& [method, buckets] : s.buckets) {
            std::printf("%s bucket means (pred_len, width %zu):\n", method.c_str(),
                        *bucket);
            for (const BucketStat& b : buckets)
                std::printf("  [%2zu,%2zu) n=%-3zu %.3f ms\n", b.lo, b.hi, b.count,
                            b.mean_ns / 1e6);
        }
        if (s.warnings)
            std::printf("warnings: %d empty hypotheses\n", s.warnings);
    });
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fastlr: non-autoregressive sequence transduction toy pipeline"};
    app.require_subcommand(1);

    cmd_make_data(*app.add_subcommand("make-data", "generate a synthetic dataset"));
    cmd_bpe_learn(*app.add_subcommand("bpe-learn", "learn a subword model"));
    cmd_train(*app.add_subcommand("train", "two-stage training run"));
    cmd_eval(*app.add_subcommand("eval", "WER/CER evaluation"));
    cmd_decode(*app.add_subcommand("decode", "greedy decode with optional rescoring"));
    cmd_bench(*app.add_subcommand("bench", "decode-latency benchmark"));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const fastlr::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    if (g_warnings)
        std::fprintf(stderr, "completed with %d warning(s)\n", g_warnings);
    return 0;
}
