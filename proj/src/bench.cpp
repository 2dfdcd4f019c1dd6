#include "fastlr/bench.hpp"

#include <algorithm>
#include <chrono>

#include "fastlr/inference.hpp"
#include "fastlr/integrate_and_fire.hpp"
#include "fastlr/npd.hpp"

namespace fastlr {

namespace {

std::int64_t now_ns() {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

Tensor features_of(const Utterance& u) {
    std::vector<double> data(u.features.begin(), u.features.end());
    return Tensor::from_data({u.frames, u.feature_dim}, std::move(data));
}

}  // namespace

std::vector<BenchRecord> run_bench(const ModelConfig& cfg, const ModelParameters& params,
                                   const std::vector<Utterance>& utts, const BpeModel& bpe,
                                   const Vocab& vocab, const BenchOptions& opt) {
    for (const std::string& m : opt.methods)
        if (m != "ar" && m != "nar" && m != "npd")
            throw ConfigError("bench: unknown method '" + m + "'");

    std::size_t count = std::min(opt.limit, utts.size());
    std::vector<BenchRecord> records;

    for (const std::string& method : opt.methods) {
        for (std::size_t i = 0; i < count; ++i) {
            const Utterance& u = utts[i];
            Tensor h = encode(features_of(u), cfg, params);  // untimed front-end

            std::vector<int> hyp;
            std::int64_t t0 = now_ns();
            if (method == "ar") {
                hyp = ar_greedy_decode(h, cfg, params, opt.ar_max_len);
            } else if (method == "nar") {
                Tensor w = predict_weights(h, cfg, params);
                hyp = nar_decode_states(h, w, cfg, params);
            } else {
                Tensor w = predict_weights(h, cfg, params);
                NpdConfig npd;
                npd.beam = opt.npd_beam;
                npd.threads = opt.threads;
                auto cands = make_candidates(w, npd.beam);
                TeacherRef teacher{&cfg, &params};
                NpdResult r = rescore_select(std::move(cands), h, cfg, params, teacher, npd);
                hyp = r.candidates[r.best_index].hypothesis;
            }
            std::int64_t t1 = now_ns();

            if (i < std::size_t(opt.warmup)) continue;  // warm-up: timed, dropped
            BenchRecord rec;
            rec.id = u.id;
            rec.method = method;
            rec.pred_len = hyp.size();
            rec.latency_ns = t1 - t0;
            rec.hypothesis = bpe_decode(hyp, bpe, vocab);
            records.push_back(std::move(rec));
        }
    }
    return records;
}

BenchSummary summarize(const std::vector<BenchRecord>& records, std::size_t bucket_width) {
    if (bucket_width == 0) throw ConfigError("bench: bucket width must be positive");
    BenchSummary s;
    std::map<std::string, std::map<std::size_t, std::pair<double, std::size_t>>> acc;
    std::map<std::string, std::pair<double, std::size_t>> tot;
    for (const BenchRecord& r : records) {
        auto& [sum, n] = acc[r.method][r.pred_len / bucket_width];
        sum += double(r.latency_ns);
        n += 1;
        tot[r.method].first += double(r.latency_ns);
        tot[r.method].second += 1;
        if (r.pred_len == 0) s.warnings += 1;
    }
    for (auto& [method, total] : tot) s.mean_ns[method] = total.first / double(total.second);
    for (auto& [method, by_bucket] : acc)
        for (auto& [b, sum_n] : by_bucket)
            s.buckets[method].push_back({b * bucket_width, (b + 1) * bucket_width,
                                         sum_n.first / double(sum_n.second), sum_n.second});
    return s;
}

}  // namespace fastlr
