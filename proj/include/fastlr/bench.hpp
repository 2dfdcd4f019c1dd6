#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fastlr/synthetic.hpp"
#include "fastlr/text.hpp"
#include "fastlr/transformer.hpp"

namespace fastlr {

/// One timed decode of one utterance. Timings cover decoding from
/// precomputed encoder states only: dataset load, feature generation, and
/// the shared encoder pass (the front-end all methods consume alike) are
/// excluded, so the numbers isolate the sequential-vs-parallel decode cost.
struct BenchRecord {
    std::string id;
    std::string method;        // "ar" | "nar" | "npd"
    std::size_t pred_len = 0;  // emitted subword count
    std::int64_t latency_ns = 0;
    std::string hypothesis;
};

struct BenchOptions {
    std::vector<std::string> methods{"ar", "nar", "npd"};
    int npd_beam = 4;
    int threads = 1;       // candidate-level parallelism for "npd" only
    int warmup = 5;        // leading utterances timed but dropped from records
    std::size_t limit = std::size_t(-1);
    std::size_t ar_max_len = 96;
};

struct BucketStat {
    std::size_t lo = 0, hi = 0;  // pred_len in [lo, hi)
    double mean_ns = 0.0;
    std::size_t count = 0;
};

struct BenchSummary {
    std::map<std::string, double> mean_ns;                    // per method
    std::map<std::string, std::vector<BucketStat>> buckets;   // per method, by lo
    int warnings = 0;                                         // empty hypotheses
};

/// Batch-1 greedy decode of every utterance under each requested method.
/// Records appear method-major in dataset order, minus the warm-up prefix.
std::vector<BenchRecord> run_bench(const ModelConfig& cfg, const ModelParameters& params,
                                   const std::vector<Utterance>& utts, const BpeModel& bpe,
                                   const Vocab& vocab, const BenchOptions& opt);

/// Per-method means and fixed-width predicted-length buckets.
BenchSummary summarize(const std::vector<BenchRecord>& records,
                       std::size_t bucket_width = 5);

}  // namespace fastlr
