#include "fastlr/synthetic.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "fastlr/io_util.hpp"
#include "fastlr/rng.hpp"

namespace fastlr {

void TaskSpec::validate() const {
    if (vocab_words < 2) throw ConfigError("TaskSpec: vocab_words must be >= 2");
    if (feature_dim < 1) throw ConfigError("TaskSpec: feature_dim must be >= 1");
    if (dur_min < 1 || dur_max < dur_min)
        throw ConfigError("TaskSpec: need 1 <= dur_min <= dur_max");
    if (sent_min < 1 || sent_max < sent_min)
        throw ConfigError("TaskSpec: need 1 <= sent_min <= sent_max");
    if (homophene_pairs * 2 > vocab_words)
        throw ConfigError("TaskSpec: more homophene words than vocabulary");
    if (crossfade < 0 || crossfade >= dur_min)
        throw ConfigError("TaskSpec: crossfade must be in [0, dur_min)");
    if (bigram_fanout < 1 || bigram_fanout > vocab_words)
        throw ConfigError("TaskSpec: bigram_fanout out of range");
}

Task Task::build(const TaskSpec& spec) {
    spec.validate();
    Task task;
    task.spec = spec;
    Rng rng(spec.seed);

    // Distinct random lowercase words, 3-8 letters.
    std::set<std::string> seen;
    while (int(task.words.size()) < spec.vocab_words) {
        int len = int(rng.uniform_int(3, 8));
        std::string w;
        for (int i = 0; i < len; ++i) w += char('a' + rng.uniform_int(0, 25));
        if (seen.insert(w).second) task.words.push_back(w);
    }

    // Homophene pairs: consecutive slots of a random permutation, so groups
    // are disjoint by construction.
    std::vector<int> perm(spec.vocab_words);
    for (int i = 0; i < spec.vocab_words; ++i) perm[i] = i;
    for (int i = spec.vocab_words - 1; i > 0; --i)
        std::swap(perm[i], perm[rng.uniform_int(0, i)]);
    task.proto_of_word.assign(spec.vocab_words, -1);
    int next_proto = 0;
    for (int p = 0; p < spec.homophene_pairs; ++p) {
        int a = perm[2 * p], b = perm[2 * p + 1];
        task.homophene_groups.push_back({a, b});
        task.proto_of_word[a] = next_proto;
        task.proto_of_word[b] = next_proto;
        ++next_proto;
    }
    for (int w = 0; w < spec.vocab_words; ++w)
        if (task.proto_of_word[w] < 0) task.proto_of_word[w] = next_proto++;

    task.prototypes.resize(next_proto);
    for (auto& proto : task.prototypes) {
        proto.resize(spec.feature_dim);
        for (auto& v : proto) v = rng.gauss();
    }

    // Concentrated bigram rows: each word transitions to a small successor
    // set with Zipf-like weights, so left context is informative.
    task.bigram.assign(spec.vocab_words, std::vector<double>(spec.vocab_words, 0.0));
    for (int w = 0; w < spec.vocab_words; ++w) {
        std::set<int> succ;
        while (int(succ.size()) < spec.bigram_fanout)
            succ.insert(int(rng.uniform_int(0, spec.vocab_words - 1)));
        double total = 0.0;
        int rank = 0;
        for (int s : succ) {
            double weight = 1.0 / double(1 + rank++);
            task.bigram[w][s] = weight;
            total += weight;
        }
        for (double& v : task.bigram[w]) v /= total;
    }
    task.start_dist.assign(spec.vocab_words, 1.0 / double(spec.vocab_words));
    return task;
}

namespace {

int sample_index(Rng& rng, const std::vector<double>& dist) {
    double u = rng.uniform();
    double acc = 0.0;
    for (int i = 0; i < int(dist.size()); ++i) {
        acc += dist[i];
        if (u < acc) return i;
    }
    return int(dist.size()) - 1;
}

}  // namespace

std::vector<Utterance> generate(const Task& task, int count, std::uint64_t stream) {
    const TaskSpec& spec = task.spec;
    Rng rng(spec.seed ^ (0x9e3779b97f4a7c15ull * (stream + 1)));
    std::vector<Utterance> utts;
    utts.reserve(std::size_t(count));
    for (int u = 0; u < count; ++u) {
        Utterance utt;
        {
            std::ostringstream id;
            id << "utt" << stream << "_" << u;
            utt.id = id.str();
        }
        int len = int(rng.uniform_int(spec.sent_min, spec.sent_max));
        std::vector<int> word_ids(static_cast<std::size_t>(len));
        word_ids[0] = sample_index(rng, task.start_dist);
        for (int i = 1; i < len; ++i)
            word_ids[std::size_t(i)] = sample_index(rng, task.bigram[word_ids[std::size_t(i - 1)]]);

        std::vector<int> durations(static_cast<std::size_t>(len));
        std::uint32_t total = 0;
        for (auto& d : durations) {
            d = int(rng.uniform_int(spec.dur_min, spec.dur_max));
            total += std::uint32_t(d);
        }
        utt.frames = total;
        utt.feature_dim = std::uint32_t(spec.feature_dim);
        utt.features.resize(std::size_t(total) * spec.feature_dim);

        std::string transcript;
        std::uint32_t t = 0;
        for (int i = 0; i < len; ++i) {
            if (i) transcript += ' ';
            transcript += task.words[std::size_t(word_ids[std::size_t(i)])];
            const auto& proto = task.prototypes[std::size_t(task.proto_of_word[std::size_t(word_ids[std::size_t(i)])])];
            const auto* prev = i > 0
                ? &task.prototypes[std::size_t(task.proto_of_word[std::size_t(word_ids[std::size_t(i - 1)])])]
                : nullptr;
            std::uint32_t start = t;
            for (int k = 0; k < durations[std::size_t(i)]; ++k, ++t) {
                // Linear crossfade from the previous prototype over the first
                // `crossfade` frames of each non-initial token.
                double alpha = 1.0;
                if (prev && k < spec.crossfade)
                    alpha = double(k + 1) / double(spec.crossfade + 1);
                for (int dmn = 0; dmn < spec.feature_dim; ++dmn) {
                    double v = alpha * proto[std::size_t(dmn)] +
                               (1.0 - alpha) * (prev ? (*prev)[std::size_t(dmn)] : 0.0);
                    v += spec.noise_sigma * rng.gauss();
                    utt.features[std::size_t(t) * spec.feature_dim + dmn] = float(v);
                }
            }
            utt.boundaries.emplace_back(start, t);
        }
        utt.transcript = std::move(transcript);
        utts.push_back(std::move(utt));
    }
    return utts;
}

// ---- dataset file ---------------------------------------------------------

static constexpr std::uint32_t kDatasetVersion = 1;

void save_dataset(const std::string& path, const std::vector<Utterance>& utts) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open dataset file for writing: " + path);
    os.write("FLRD", 4);
    write_u32(os, kDatasetVersion);
    write_u32(os, std::uint32_t(utts.size()));
    for (const auto& u : utts) {
        write_str(os, u.id);
        write_u32(os, u.frames);
        write_u32(os, u.feature_dim);
        for (float v : u.features) write_f32(os, v);
        write_str(os, u.transcript);
        write_u32(os, std::uint32_t(u.boundaries.size()));
        for (auto [s, e] : u.boundaries) {
            write_u32(os, s);
            write_u32(os, e);
        }
    }
    if (!os) throw IoError("write failure on dataset file: " + path);
}

std::vector<Utterance> load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open dataset file: " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::string(magic, 4) != "FLRD")
        throw IoError("bad dataset magic in " + path);
    std::uint32_t version = read_u32(is);
    if (version != kDatasetVersion)
        throw IoError("unknown dataset version " + std::to_string(version) + " in " + path);
    std::uint32_t count = read_u32(is);
    std::vector<Utterance> utts;
    utts.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        Utterance u;
        u.id = read_str(is);
        u.frames = read_u32(is);
        u.feature_dim = read_u32(is);
        u.features.resize(std::size_t(u.frames) * u.feature_dim);
        for (auto& v : u.features) v = read_f32(is);
        u.transcript = read_str(is);
        std::uint32_t nb = read_u32(is);
        for (std::uint32_t b = 0; b < nb; ++b) {
            std::uint32_t s = read_u32(is);
            std::uint32_t e = read_u32(is);
            u.boundaries.emplace_back(s, e);
        }
        utts.push_back(std::move(u));
    }
    return utts;
}

void write_transcripts(const std::string& path, const std::vector<Utterance>& utts) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open transcript file for writing: " + path);
    for (const auto& u : utts) os << u.transcript << "\n";
}

}  // namespace fastlr
