#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "fastlr/errors.hpp"

namespace fastlr {

/// Whitespace tokenizer that splits punctuation off as separate tokens.
std::vector<std::string> tokenize(const std::string& text);

/// Token/id bijection with fixed reserved ids. The CTC blank is not a vocab
/// entry; it occupies the extra column V in the CTC head.
struct Vocab {
    static constexpr int kBos = 0;
    static constexpr int kEos = 1;
    static constexpr int kUnk = 2;
    static constexpr int kPad = 3;
    static constexpr int kReserved = 4;

    std::vector<std::string> tokens;  // index == id, reserved entries first

    static Vocab from_units(std::vector<std::string> units);

    int size() const { return int(tokens.size()); }
    int blank_id() const { return size(); }
    int id_of(const std::string& tok) const;  // kUnk when absent
    const std::string& token_of(int id) const;

    void save(const std::string& path) const;  // one token per line
    static Vocab load(const std::string& path);

private:
    std::unordered_map<std::string, int> ids_;
    void rebuild_index();
};

/// Ordered BPE merge list. A model with zero merges is character mode.
struct BpeModel {
    std::string marker = "\xe2\x96\x81";  // "▁" prefix on word-initial symbols
    std::vector<std::pair<std::string, std::string>> merges;
    std::size_t target_vocab_size = 0;

    std::vector<std::string> segment_word(const std::string& word) const;
    std::vector<std::string> segment(const std::string& sentence) const;

    void save(const std::string& path) const;
    static BpeModel load(const std::string& path);
};

/// Learns merges on the corpus until `vocab_size` distinct subword units
/// exist or no adjacent pair occurs at least twice. Ties between equally
/// frequent pairs go to the lexicographically smaller pair.
BpeModel bpe_learn(const std::vector<std::string>& corpus, std::size_t vocab_size);

/// Character-level model (zero merges) over the corpus character set.
BpeModel bpe_char_model(const std::vector<std::string>& corpus);

/// Vocabulary of every unit the model produces on the corpus, sorted.
Vocab build_vocab(const BpeModel& model, const std::vector<std::string>& corpus);

struct EncodeResult {
    std::vector<int> ids;
    int unk_count = 0;
};

EncodeResult bpe_encode(const std::string& sentence, const BpeModel& model,
                        const Vocab& vocab);
std::string bpe_decode(const std::vector<int>& ids, const BpeModel& model,
                       const Vocab& vocab);

}  // namespace fastlr
