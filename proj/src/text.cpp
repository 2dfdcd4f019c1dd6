#include "fastlr/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace fastlr {

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    };
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            flush();
        } else if (std::ispunct(c)) {
            flush();
            out.emplace_back(1, char(c));
        } else {
            cur += char(c);
        }
    }
    flush();
    return out;
}

// ---- Vocab ----------------------------------------------------------------

Vocab Vocab::from_units(std::vector<std::string> units) {
    Vocab v;
    v.tokens = {"<s>", "</s>", "<unk>", "<pad>"};
    for (auto& u : units) v.tokens.push_back(std::move(u));
    v.rebuild_index();
    if (int(v.ids_.size()) != v.size())
        throw ConfigError("vocab contains duplicate tokens");
    return v;
}

void Vocab::rebuild_index() {
    ids_.clear();
    for (int i = 0; i < int(tokens.size()); ++i) ids_[tokens[i]] = i;
}

int Vocab::id_of(const std::string& tok) const {
    auto it = ids_.find(tok);
    return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocab::token_of(int id) const {
    if (id < 0 || id >= size())
        throw ConfigError("token id " + std::to_string(id) + " out of vocab of size " +
                          std::to_string(size()));
    return tokens[std::size_t(id)];
}

void Vocab::save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open vocab file for writing: " + path);
    for (const auto& t : tokens) os << t << "\n";
}

Vocab Vocab::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open vocab file: " + path);
    Vocab v;
    std::string line;
    while (std::getline(is, line)) v.tokens.push_back(line);
    if (v.tokens.size() < std::size_t(kReserved))
        throw IoError("vocab file too short: " + path);
    v.rebuild_index();
    return v;
}

// ---- BPE ------------------------------------------------------------------

namespace {

// A word as its current symbol sequence; first symbol carries the marker.
std::vector<std::string> word_symbols(const std::string& word, const std::string& marker) {
    std::vector<std::string> syms;
    bool first = true;
    for (std::size_t i = 0; i < word.size();) {
        // Pass UTF-8 multibyte sequences through as one symbol.
        std::size_t len = 1;
        unsigned char c = word[i];
        if ((c & 0xE0) == 0xC0) len = 2;
        else if ((c & 0xF0) == 0xE0) len = 3;
        else if ((c & 0xF8) == 0xF0) len = 4;
        std::string sym = word.substr(i, len);
        syms.push_back(first ? marker + sym : sym);
        first = false;
        i += len;
    }
    return syms;
}

void apply_merge(std::vector<std::string>& syms,
                 const std::pair<std::string, std::string>& m) {
    std::size_t w = 0;
    for (std::size_t r = 0; r < syms.size();) {
        if (r + 1 < syms.size() && syms[r] == m.first && syms[r + 1] == m.second) {
            syms[w++] = syms[r] + syms[r + 1];
            r += 2;
        } else {
            if (w != r) syms[w] = std::move(syms[r]);
            ++w;
            r += 1;
        }
    }
    syms.resize(w);
}

}  // namespace

std::vector<std::string> BpeModel::segment_word(const std::string& word) const {
    auto syms = word_symbols(word, marker);
    for (const auto& m : merges) apply_merge(syms, m);
    return syms;
}

std::vector<std::string> BpeModel::segment(const std::string& sentence) const {
    std::vector<std::string> out;
    for (const auto& w : tokenize(sentence)) {
        auto syms = segment_word(w);
        out.insert(out.end(), syms.begin(), syms.end());
    }
    return out;
}

void BpeModel::save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open BPE model for writing: " + path);
    os << "FASTLR-BPE 1 " << marker << "\n";
    for (const auto& [a, b] : merges) os << a << " " << b << "\n";
}

BpeModel BpeModel::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open BPE model: " + path);
    std::string line;
    if (!std::getline(is, line)) throw IoError("empty BPE model file: " + path);
    std::istringstream hdr(line);
    std::string magic, version, marker;
    hdr >> magic >> version >> marker;
    if (magic != "FASTLR-BPE") throw IoError("bad BPE model magic in " + path);
    if (version != "1") throw IoError("unknown BPE model version " + version);
    BpeModel m;
    m.marker = marker;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto sp = line.find(' ');
        if (sp == std::string::npos) throw IoError("malformed merge line: " + line);
        m.merges.emplace_back(line.substr(0, sp), line.substr(sp + 1));
    }
    return m;
}

BpeModel bpe_learn(const std::vector<std::string>& corpus, std::size_t vocab_size) {
    if (corpus.empty()) throw ConfigError("bpe_learn: empty corpus");
    BpeModel model;
    model.target_vocab_size = vocab_size;

    // Word frequency table; all pair statistics are weighted by it.
    std::map<std::string, std::size_t> word_freq;
    for (const auto& line : corpus)
        for (const auto& w : tokenize(line)) ++word_freq[w];

    std::vector<std::pair<std::vector<std::string>, std::size_t>> words;
    std::set<std::string> inventory;
    for (const auto& [w, f] : word_freq) {
        auto syms = word_symbols(w, model.marker);
        for (const auto& s : syms) inventory.insert(s);
        words.emplace_back(std::move(syms), f);
    }
    if (vocab_size < inventory.size())
        throw ConfigError("bpe_learn: vocab_size " + std::to_string(vocab_size) +
                          " is smaller than the base character inventory of " +
                          std::to_string(inventory.size()));

    while (inventory.size() < vocab_size) {
        std::map<std::pair<std::string, std::string>, std::size_t> pair_freq;
        for (const auto& [syms, f] : words)
            for (std::size_t i = 0; i + 1 < syms.size(); ++i)
                pair_freq[{syms[i], syms[i + 1]}] += f;
        // Ties go to the lexicographically smaller pair, compared with the
        // word-start marker stripped so "▁l" orders as "l".
        auto strip = [this_marker = model.marker](const std::string& s) {
            return s.rfind(this_marker, 0) == 0 ? s.substr(this_marker.size()) : s;
        };
        std::pair<std::string, std::string> best;
        std::size_t best_freq = 0;
        for (const auto& [p, f] : pair_freq) {
            if (f < best_freq) continue;
            auto key = std::make_pair(strip(p.first), strip(p.second));
            auto best_key = std::make_pair(strip(best.first), strip(best.second));
            if (f > best_freq || key < best_key) {
                best = p;
                best_freq = f;
            }
        }
        if (best_freq < 2) break;
        model.merges.push_back(best);
        inventory.insert(best.first + best.second);
        for (auto& [syms, f] : words) apply_merge(syms, best);
    }
    return model;
}

BpeModel bpe_char_model(const std::vector<std::string>& corpus) {
    if (corpus.empty()) throw ConfigError("bpe_char_model: empty corpus");
    BpeModel model;
    std::set<std::string> inventory;
    for (const auto& line : corpus)
        for (const auto& w : tokenize(line))
            for (const auto& s : word_symbols(w, model.marker)) inventory.insert(s);
    model.target_vocab_size = inventory.size();
    return model;
}

Vocab build_vocab(const BpeModel& model, const std::vector<std::string>& corpus) {
    std::set<std::string> units;
    for (const auto& line : corpus)
        for (const auto& u : model.segment(line)) units.insert(u);
    return Vocab::from_units({units.begin(), units.end()});
}

EncodeResult bpe_encode(const std::string& sentence, const BpeModel& model,
                        const Vocab& vocab) {
    EncodeResult res;
    for (const auto& u : model.segment(sentence)) {
        int id = vocab.id_of(u);
        if (id == Vocab::kUnk) ++res.unk_count;
        res.ids.push_back(id);
    }
    return res;
}

std::string bpe_decode(const std::vector<int>& ids, const BpeModel& model,
                       const Vocab& vocab) {
    std::string out;
    for (int id : ids) {
        if (id == Vocab::kBos || id == Vocab::kEos || id == Vocab::kPad) continue;
        const std::string& tok = vocab.token_of(id);
        if (tok.rfind(model.marker, 0) == 0) {
            if (!out.empty()) out += ' ';
            out += tok.substr(model.marker.size());
        } else {
            out += tok;
        }
    }
    return out;
}

}  // namespace fastlr
