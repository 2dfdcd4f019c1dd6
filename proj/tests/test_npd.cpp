#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "fastlr/errors.hpp"
#include "fastlr/inference.hpp"
#include "fastlr/npd.hpp"
#include "fastlr/tensor.hpp"
#include "fastlr/transformer.hpp"
#include "testutil.hpp"

using namespace fastlr;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.d_hidden = 8;
    cfg.n_enc = 1;
    cfg.n_dec = 1;
    cfg.n_head = 2;
    cfg.conv_ffn_kernel = 3;
    cfg.conv_ffn_filters = 12;
    cfg.d_input = 4;
    cfg.vocab_size = 7;
    return cfg;
}

double total_of(const Tensor& w) {
    double s = 0.0;
    for (double x : w.data()) s += x;
    return s;
}

}  // namespace

TEST_CASE("candidate stubs cover every viable integer bias") {
    // Total 14.2: all nine biases stay above 1.
    Tensor w = Tensor::full({20}, 0.71);
    auto cands = make_candidates(w, 4);
    REQUIRE(cands.size() == 9);
    for (std::size_t i = 0; i < 9; ++i) {
        CHECK(cands[i].bias == int(i) - 4);
        CHECK(std::abs(total_of(cands[i].scaled_w.w) - (14.2 + double(cands[i].bias))) <
              1e-6);
    }

    // Zero beam degenerates to the single unbiased candidate, bit-identical.
    auto solo = make_candidates(w, 0);
    REQUIRE(solo.size() == 1);
    CHECK(solo[0].bias == 0);
    CHECK(solo[0].scaled_w.w.data() == w.data());

    // Total 2.5 with B=4: biases -4..-2 would drop below 1 and are filtered.
    Tensor small = Tensor::full({5}, 0.5);
    auto part = make_candidates(small, 4);
    REQUIRE(part.size() == 6);
    CHECK(part.front().bias == -1);
    CHECK(part.back().bias == 4);

    // Nothing viable at all.
    Tensor tiny = Tensor::full({2}, 0.2);
    CHECK_THROWS_AS(make_candidates(tiny, 0), NoViableCandidate);
    CHECK_THROWS_AS(make_candidates(w, -1), ConfigError);
}

TEST_CASE("zero-bias candidate reproduces the plain decode exactly") {
    ModelConfig cfg = tiny_config();
    ModelParameters p = ModelParameters::init(cfg, 3);
    std::mt19937_64 rng(14);
    Tensor x = Tensor::from_data({16, 4}, testutil::random_vec(rng, 64));

    NarDecodeResult plain = nar_decode(x, cfg, p);
    REQUIRE(!plain.tokens.empty());

    Tensor h = encode(x, cfg, p);
    auto cands = make_candidates(plain.weights, 4);
    TeacherRef teacher{&cfg, &p};
    NpdResult res = rescore_select(std::move(cands), h, cfg, p, teacher);

    for (const auto& c : res.candidates) {
        if (c.bias == 0) CHECK(c.hypothesis == plain.tokens);
        // Hypothesis length always equals the fire count of its weights.
        CHECK(c.hypothesis.size() ==
              std::size_t(std::floor(total_of(c.scaled_w.w) + 1e-9)));
    }
    CHECK(res.candidates[res.best_index].chosen);
}

TEST_CASE("selection equals independent sequential re-scoring") {
    ModelConfig cfg = tiny_config();
    ModelParameters p = ModelParameters::init(cfg, 23);
    std::mt19937_64 rng(24);
    TeacherRef teacher{&cfg, &p};

    for (int it = 0; it < 10; ++it) {
        std::size_t t = 10 + rng() % 12;
        Tensor x = Tensor::from_data({t, 4}, testutil::random_vec(rng, t * 4));
        Tensor h = encode(x, cfg, p);
        Tensor w = predict_weights(h, cfg, p);
        if (total_of(w) < 2.0) continue;

        NpdResult res = rescore_select(make_candidates(w, 3), h, cfg, p, teacher);

        // Oracle: re-run the teacher per candidate by hand, then apply the
        // stated tie rules.
        std::size_t best = 0;
        std::vector<double> scores;
        for (const auto& c : res.candidates) {
            std::vector<int> hyp = nar_decode_states(h, c.scaled_w.w, cfg, p);
            CHECK(hyp == c.hypothesis);
            scores.push_back(teacher_score(h, hyp, cfg, p));
            CHECK(scores.back() == doctest::Approx(c.teacher_logprob).epsilon(1e-12));
        }
        for (std::size_t i = 1; i < scores.size(); ++i) {
            int bi = res.candidates[i].bias, bb = res.candidates[best].bias;
            if (scores[i] > scores[best] ||
                (scores[i] == scores[best] &&
                 (std::abs(bi) < std::abs(bb) ||
                  (std::abs(bi) == std::abs(bb) && bi < bb))))
                best = i;
        }
        CHECK(res.best_index == best);
    }
}

TEST_CASE("selection does not depend on evaluation order or thread count") {
    ModelConfig cfg = tiny_config();
    ModelParameters p = ModelParameters::init(cfg, 33);
    std::mt19937_64 rng(34);
    Tensor x = Tensor::from_data({18, 4}, testutil::random_vec(rng, 72));
    Tensor h = encode(x, cfg, p);
    Tensor w = predict_weights(h, cfg, p);
    TeacherRef teacher{&cfg, &p};

    NpdResult seq = rescore_select(make_candidates(w, 4), h, cfg, p, teacher);

    NpdConfig nc;
    nc.threads = 4;
    NpdResult par = rescore_select(make_candidates(w, 4), h, cfg, p, teacher, nc);
    CHECK(par.candidates[par.best_index].bias == seq.candidates[seq.best_index].bias);
    CHECK(par.candidates[par.best_index].hypothesis ==
          seq.candidates[seq.best_index].hypothesis);

    auto shuffled = make_candidates(w, 4);
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    NpdResult mix = rescore_select(std::move(shuffled), h, cfg, p, teacher);
    CHECK(mix.candidates[mix.best_index].bias == seq.candidates[seq.best_index].bias);
}

TEST_CASE("exact score ties break toward the smaller absolute bias") {
    ModelConfig cfg = tiny_config();
    ModelParameters p = ModelParameters::init(cfg, 43);
    std::mt19937_64 rng(44);
    Tensor x = Tensor::from_data({14, 4}, testutil::random_vec(rng, 56));
    Tensor h = encode(x, cfg, p);
    Tensor w = predict_weights(h, cfg, p);
    TeacherRef teacher{&cfg, &p};

    // Hand-built stubs sharing identical weights decode and score identically,
    // forcing the tie rules to decide.
    auto tie = [&](int b1, int b2) {
        std::vector<Candidate> cands(2);
        cands[0].bias = b1;
        cands[0].scaled_w = WeightSequence{w};
        cands[1].bias = b2;
        cands[1].scaled_w = WeightSequence{w};
        NpdResult r = rescore_select(std::move(cands), h, cfg, p, teacher);
        return r.candidates[r.best_index].bias;
    };
    CHECK(tie(2, -2) == -2);   // same |b|: smaller b wins
    CHECK(tie(-2, 2) == -2);
    CHECK(tie(2, 1) == 1);     // smaller |b| wins
    CHECK(tie(-1, 3) == -1);
}

TEST_CASE("empty hypotheses are scored, not dropped, unless all are empty") {
    ModelConfig cfg = tiny_config();
    ModelParameters p = ModelParameters::init(cfg, 53);
    std::mt19937_64 rng(54);
    Tensor x = Tensor::from_data({12, 4}, testutil::random_vec(rng, 48));
    Tensor h = encode(x, cfg, p);
    TeacherRef teacher{&cfg, &p};

    std::vector<Candidate> cands(2);
    cands[0].bias = 0;
    cands[0].scaled_w = WeightSequence{Tensor::full({12}, 0.05)};  // fires nothing
    cands[1].bias = 1;
    cands[1].scaled_w = WeightSequence{Tensor::full({12}, 0.2)};   // fires twice
    NpdResult r = rescore_select(std::move(cands), h, cfg, p, teacher);
    CHECK(r.candidates[0].hypothesis.empty());
    // The empty candidate carries the EOS-only teacher score.
    CHECK(r.candidates[0].teacher_logprob ==
          doctest::Approx(teacher_score(h, {}, cfg, p)).epsilon(1e-12));

    std::vector<Candidate> all_empty(2);
    all_empty[0].scaled_w = WeightSequence{Tensor::full({12}, 0.05)};
    all_empty[1].scaled_w = WeightSequence{Tensor::full({12}, 0.06)};
    CHECK_THROWS_AS(rescore_select(std::move(all_empty), h, cfg, p, teacher),
                    NoViableCandidate);
}
