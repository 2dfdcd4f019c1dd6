#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fastlr/errors.hpp"

namespace fastlr {

/// Knobs for the synthetic lipreading-like task. Word prototypes stand in for
/// the visual front-end; homophene groups share one prototype so distinct
/// transcripts can map to identical expected features, and the bigram table
/// gives an AR teacher context to disambiguate them with.
struct TaskSpec {
    int vocab_words = 200;
    int feature_dim = 32;
    int dur_min = 3;
    int dur_max = 8;
    double noise_sigma = 0.3;
    int homophene_pairs = 12;
    int crossfade = 1;
    std::uint64_t seed = 1234;
    int sent_min = 2;
    int sent_max = 12;
    int bigram_fanout = 6;

    void validate() const;
};

/// Realized task: word list, prototype assignment, normalized bigram rows.
struct Task {
    TaskSpec spec;
    std::vector<std::string> words;
    std::vector<std::vector<int>> homophene_groups;  // word indices, disjoint
    std::vector<int> proto_of_word;                  // word -> prototype row
    std::vector<std::vector<double>> prototypes;     // [P][feature_dim]
    std::vector<std::vector<double>> bigram;         // [W][W], rows sum to 1
    std::vector<double> start_dist;                  // [W], sums to 1

    static Task build(const TaskSpec& spec);
};

struct Utterance {
    std::string id;
    std::uint32_t frames = 0;      // T
    std::uint32_t feature_dim = 0; // D_in
    std::vector<float> features;   // row-major T x D_in
    std::string transcript;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> boundaries;  // per-token [start,end)

    bool operator==(const Utterance&) const = default;
};

/// Deterministic generation: same task + stream seed gives bit-identical
/// utterances. `stream` separates train/dev draws from one TaskSpec seed.
std::vector<Utterance> generate(const Task& task, int count, std::uint64_t stream = 0);

void save_dataset(const std::string& path, const std::vector<Utterance>& utts);
std::vector<Utterance> load_dataset(const std::string& path);

/// Companion plain-text transcripts (one per line), the BPE learning input.
void write_transcripts(const std::string& path, const std::vector<Utterance>& utts);

}  // namespace fastlr
