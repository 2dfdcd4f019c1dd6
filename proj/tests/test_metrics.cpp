#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>

#include "fastlr/metrics.hpp"
#include "fastlr/rng.hpp"

using namespace fastlr;

namespace {

// Brute-force recursive edit distance, the oracle for the DP.
std::size_t naive_distance(const std::vector<std::string>& a,
                           const std::vector<std::string>& b,
                           std::size_t i = 0, std::size_t j = 0) {
    if (i == a.size()) return b.size() - j;
    if (j == b.size()) return a.size() - i;
    std::size_t best = naive_distance(a, b, i + 1, j + 1) + (a[i] == b[j] ? 0 : 1);
    best = std::min(best, naive_distance(a, b, i + 1, j) + 1);
    best = std::min(best, naive_distance(a, b, i, j + 1) + 1);
    return best;
}

std::vector<std::string> random_seq(Rng& rng, std::size_t max_len, int alphabet) {
    std::size_t len = std::size_t(rng.uniform_int(0, std::int64_t(max_len)));
    std::vector<std::string> s(len);
    for (auto& t : s) t = std::string(1, char('a' + rng.uniform_int(0, alphabet - 1)));
    return s;
}

}  // namespace

TEST_CASE("identical sequences have zero errors") {
    auto eb = error_rate("a b c", "a b c", ErrorUnit::Word);
    CHECK(eb.substitutions == 0);
    CHECK(eb.deletions == 0);
    CHECK(eb.insertions == 0);
    CHECK(eb.rate == 0.0);
}

TEST_CASE("single substitution") {
    auto eb = error_rate("a b c", "a x c", ErrorUnit::Word);
    CHECK(eb.substitutions == 1);
    CHECK(eb.deletions == 0);
    CHECK(eb.insertions == 0);
    CHECK(eb.rate == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("substitution preferred over insert+delete") {
    auto eb = error_rate("a", "b", ErrorUnit::Word);
    CHECK(eb.substitutions == 1);
    CHECK(eb.total() == 1);
}

TEST_CASE("pure deletions and insertions") {
    auto d = error_rate("a b c d", "a c", ErrorUnit::Word);
    CHECK(d.deletions == 2);
    CHECK(d.total() == 2);
    auto i = error_rate("a c", "a b c d", ErrorUnit::Word);
    CHECK(i.insertions == 2);
    CHECK(i.rate == doctest::Approx(1.0));
}

TEST_CASE("empty reference is an error") {
    CHECK_THROWS_AS(error_rate("", "a b", ErrorUnit::Word), Error);
}

TEST_CASE("char mode counts characters") {
    auto eb = error_rate("abc", "adc", ErrorUnit::Char);
    CHECK(eb.ref_len == 3);
    CHECK(eb.substitutions == 1);
}

TEST_CASE("DP equals brute-force recursion on 200 random pairs") {
    Rng rng(17);
    for (int k = 0; k < 200; ++k) {
        auto ref = random_seq(rng, 7, 3);
        auto hyp = random_seq(rng, 7, 3);
        if (ref.empty()) ref.push_back("a");
        auto eb = error_rate(ref, hyp);
        CHECK(eb.total() == naive_distance(ref, hyp));
    }
}

TEST_CASE("total distance is symmetric with D and I swapped") {
    Rng rng(23);
    for (int k = 0; k < 100; ++k) {
        auto a = random_seq(rng, 6, 3);
        auto b = random_seq(rng, 6, 3);
        if (a.empty()) a.push_back("a");
        if (b.empty()) b.push_back("b");
        auto ab = error_rate(a, b);
        auto ba = error_rate(b, a);
        CHECK(ab.total() == ba.total());
        CHECK(ab.deletions == ba.insertions);
        CHECK(ab.insertions == ba.deletions);
        CHECK(ab.substitutions == ba.substitutions);
    }
}

TEST_CASE("triangle inequality on random triples") {
    Rng rng(31);
    for (int k = 0; k < 100; ++k) {
        auto a = random_seq(rng, 6, 3);
        auto b = random_seq(rng, 6, 3);
        auto c = random_seq(rng, 6, 3);
        if (a.empty()) a.push_back("a");
        if (b.empty()) b.push_back("b");
        if (c.empty()) c.push_back("c");
        auto dab = error_rate(a, b).total();
        auto dbc = error_rate(b, c).total();
        auto dac = error_rate(a, c).total();
        CHECK(dac <= dab + dbc);
    }
}
