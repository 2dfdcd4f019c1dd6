#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <set>

#include "fastlr/rng.hpp"
#include "fastlr/text.hpp"

using namespace fastlr;

namespace {

std::vector<std::string> random_corpus(int sentences, std::uint64_t seed) {
    // Small word inventory so merges have material to work with.
    Rng rng(seed);
    std::vector<std::string> lexicon;
    for (int i = 0; i < 40; ++i) {
        int len = int(rng.uniform_int(3, 7));
        std::string w;
        for (int k = 0; k < len; ++k) w += char('a' + rng.uniform_int(0, 12));
        lexicon.push_back(w);
    }
    std::vector<std::string> corpus;
    for (int s = 0; s < sentences; ++s) {
        int len = int(rng.uniform_int(2, 9));
        std::string line;
        for (int k = 0; k < len; ++k) {
            if (k) line += ' ';
            line += lexicon[std::size_t(rng.uniform_int(0, int(lexicon.size()) - 1))];
        }
        corpus.push_back(line);
    }
    return corpus;
}

}  // namespace

TEST_CASE("tokenizer splits whitespace and punctuation") {
    auto t = tokenize("hello, world  again");
    REQUIRE(t.size() == 4);
    CHECK(t[0] == "hello");
    CHECK(t[1] == ",");
    CHECK(t[2] == "world");
    CHECK(t[3] == "again");
    CHECK(tokenize("").empty());
}

TEST_CASE("first merge on 'low low lower' is (l,o)") {
    // Pair counts: (▁l,o) freq 3 dominates; with the tie rule the result is
    // the most frequent pair, here marker+l followed by o.
    auto model = bpe_learn({"low low lower"}, 50);
    REQUIRE(!model.merges.empty());
    CHECK(model.merges[0].first == model.marker + "l");
    CHECK(model.merges[0].second == "o");
}

TEST_CASE("single-character corpus learns no merges") {
    auto model = bpe_learn({"a a a"}, 10);
    CHECK(model.merges.empty());
}

TEST_CASE("vocab_size below character inventory is an error") {
    CHECK_THROWS_AS(bpe_learn({"abcdefgh"}, 3), ConfigError);
}

TEST_CASE("learned model yields only in-vocab units on its training corpus") {
    auto corpus = random_corpus(200, 7);
    auto model = bpe_learn(corpus, 120);
    auto vocab = build_vocab(model, corpus);
    for (const auto& line : corpus) {
        auto enc = bpe_encode(line, model, vocab);
        CHECK(enc.unk_count == 0);
        for (int id : enc.ids) CHECK(id >= Vocab::kReserved);
    }
}

TEST_CASE("round trip on 1000 random corpus sentences is exact") {
    auto corpus = random_corpus(1000, 99);
    auto model = bpe_learn(corpus, 150);
    auto vocab = build_vocab(model, corpus);
    for (const auto& line : corpus) {
        auto enc = bpe_encode(line, model, vocab);
        CHECK(bpe_decode(enc.ids, model, vocab) == line);
    }
}

TEST_CASE("empty string encodes to empty sequence") {
    auto corpus = random_corpus(10, 3);
    auto model = bpe_learn(corpus, 60);
    auto vocab = build_vocab(model, corpus);
    CHECK(bpe_encode("", model, vocab).ids.empty());
    CHECK(bpe_decode({}, model, vocab) == "");
}

TEST_CASE("char mode encodes character by character") {
    auto model = bpe_char_model({"ab ba"});
    auto vocab = build_vocab(model, {"ab ba"});
    auto enc = bpe_encode("ab", model, vocab);
    REQUIRE(enc.ids.size() == 2);
    CHECK(vocab.token_of(enc.ids[0]) == model.marker + "a");
    CHECK(vocab.token_of(enc.ids[1]) == "b");
}

TEST_CASE("unknown character becomes UNK with a count") {
    auto model = bpe_learn({"abc abc"}, 10);
    auto vocab = build_vocab(model, {"abc abc"});
    auto enc = bpe_encode("axc", model, vocab);
    CHECK(enc.unk_count >= 1);
}

TEST_CASE("determinism: same corpus and size give identical merge lists") {
    auto corpus = random_corpus(300, 5);
    auto a = bpe_learn(corpus, 100);
    auto b = bpe_learn(corpus, 100);
    CHECK(a.merges == b.merges);
}

TEST_CASE("no duplicate merges") {
    auto corpus = random_corpus(300, 11);
    auto model = bpe_learn(corpus, 140);
    std::set<std::pair<std::string, std::string>> seen(model.merges.begin(),
                                                       model.merges.end());
    CHECK(seen.size() == model.merges.size());
}

TEST_CASE("BPE compresses relative to character level") {
    auto corpus = random_corpus(500, 21);
    auto bpe = bpe_learn(corpus, 160);
    auto chars = bpe_char_model(corpus);
    std::size_t bpe_len = 0, char_len = 0;
    for (const auto& line : corpus) {
        bpe_len += bpe.segment(line).size();
        char_len += chars.segment(line).size();
    }
    CHECK(bpe_len <= char_len);
}

TEST_CASE("model and vocab files round-trip") {
    auto corpus = random_corpus(100, 31);
    auto model = bpe_learn(corpus, 90);
    auto vocab = build_vocab(model, corpus);
    model.save("/tmp/fastlr_test.bpe");
    vocab.save("/tmp/fastlr_test.vocab");
    auto model2 = BpeModel::load("/tmp/fastlr_test.bpe");
    auto vocab2 = Vocab::load("/tmp/fastlr_test.vocab");
    CHECK(model2.merges == model.merges);
    CHECK(model2.marker == model.marker);
    CHECK(vocab2.tokens == vocab.tokens);
    std::remove("/tmp/fastlr_test.bpe");
    std::remove("/tmp/fastlr_test.vocab");
}

TEST_CASE("reserved ids are fixed") {
    CHECK(Vocab::kBos == 0);
    CHECK(Vocab::kEos == 1);
    CHECK(Vocab::kUnk == 2);
    CHECK(Vocab::kPad == 3);
    auto v = Vocab::from_units({"x"});
    CHECK(v.id_of("x") == 4);
    CHECK(v.id_of("missing") == Vocab::kUnk);
    CHECK(v.blank_id() == v.size());
}
