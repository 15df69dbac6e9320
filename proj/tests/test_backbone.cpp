// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "srm/model/language_model.hpp"
#include "srm/model/rope.hpp"
#include "srm/nn/gradcheck.hpp"

using namespace srm;
using namespace srm::model;

namespace {

BackboneConfig tiny_config() {
    BackboneConfig c;
    c.vocab_size = 12;
    c.hidden_dim = 8;
    c.layers = 2;
    c.heads = 2;
    c.max_len = 16;
    c.ffn_mult = 2;
    return c;
}

LanguageModel tiny_lm(std::uint64_t seed) {
    return LanguageModel(tiny_config(), SpecialTokens{9, 10, 11}, seed);
}

double l2(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

}  // namespace

TEST(Rope, PositionZeroIsIdentity) {
    std::vector<double> v{0.3, -1.2, 2.0, 0.5};
    EXPECT_EQ(rope_rotate(v, 0, 1000.0), v);
}

TEST(Rope, UnitVectorAtPositionOne) {
    auto r = rope_rotate(std::vector<double>{1.0, 0.0}, 1, 1000.0);
    EXPECT_NEAR(r[0], 0.540302, 1e-6);
    EXPECT_NEAR(r[1], 0.841471, 1e-6);
    EXPECT_DOUBLE_EQ(r[0], std::cos(1.0));
    EXPECT_DOUBLE_EQ(r[1], std::sin(1.0));
}

TEST(Rope, OddDimensionRejected) {
    EXPECT_THROW(rope_rotate(std::vector<double>{1.0, 2.0, 3.0}, 1, 1000.0), ValidationError);
}

TEST(Rope, SecondPairUsesBaseScaledFrequency) {
    // d = 4: pair 1 rotates by position * base^(-2/4).
    auto r = rope_rotate(std::vector<double>{0, 0, 1, 0}, 3, 1000.0);
    const double ang = 3.0 * std::pow(1000.0, -0.5);
    EXPECT_NEAR(r[2], std::cos(ang), 1e-15);
    EXPECT_NEAR(r[3], std::sin(ang), 1e-15);
}

TEST(Rope, NormPreservingAndRelative) {
    Rng rng(21);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t d = 2 * (1 + rng.below(8));
        std::vector<double> q(d), k(d);
        for (auto& x : q) x = rng.normal();
        for (auto& x : k) x = rng.normal();
        const std::size_t i = rng.below(50), j = rng.below(50), shift = rng.below(100);
        EXPECT_NEAR(l2(rope_rotate(q, i, 1000.0)), l2(q), 1e-12);
        auto dot = [&](std::size_t a, std::size_t b) {
            auto qa = rope_rotate(q, a, 1000.0);
            auto kb = rope_rotate(k, b, 1000.0);
            double s = 0;
            for (std::size_t e = 0; e < d; ++e) s += qa[e] * kb[e];
            return s;
        };
        EXPECT_NEAR(dot(i, j), dot(i + shift, j + shift), 1e-9);
    }
}

TEST(Backbone, ConfigValidation) {
    BackboneConfig c = tiny_config();
    c.heads = 3;
    EXPECT_THROW(c.validate(), ValidationError);
    BackboneConfig def;
    EXPECT_EQ(def.hidden_dim, 64u);
    EXPECT_EQ(def.layers, 2u);
    EXPECT_EQ(def.heads, 4u);
    EXPECT_EQ(def.max_len, 256u);
    EXPECT_EQ(def.vocab_size, 259u);
    EXPECT_DOUBLE_EQ(def.rope_base, 1000.0);
    EXPECT_NO_THROW(def.validate());
}

TEST(Backbone, PrefixInvariance) {
    auto lm = tiny_lm(4);
    std::vector<TokenId> s{1, 5, 2, 7, 3, 3, 0};
    nn::Graph g(lm.params);
    const auto& full = g.value(lm.net.hidden(g, s));
    for (std::size_t p = 1; p <= s.size(); ++p) {
        nn::Graph h(lm.params);
        const auto& pre = h.value(lm.net.hidden(h, std::span<const TokenId>(s).first(p)));
        for (std::size_t r = 0; r < p; ++r)
            for (std::size_t c = 0; c < pre.cols(); ++c) EXPECT_NEAR(pre(r, c), full(r, c), 1e-9);
    }
}

TEST(Backbone, PerturbingLaterTokenLeavesEarlierStatesExact) {
    auto lm = tiny_lm(5);
    std::vector<TokenId> a{1, 2, 3, 4, 5, 6}, b = a;
    b[4] = 8;
    nn::Graph g(lm.params);
    const auto& ha = g.value(lm.net.hidden(g, a));
    nn::Graph h(lm.params);
    const auto& hb = h.value(lm.net.hidden(h, b));
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < ha.cols(); ++c) EXPECT_EQ(ha(r, c), hb(r, c));
    bool changed = false;
    for (std::size_t c = 0; c < ha.cols(); ++c) changed |= ha(4, c) != hb(4, c);
    EXPECT_TRUE(changed);
}

TEST(Backbone, RejectsOverlongAndOutOfVocab) {
    auto lm = tiny_lm(1);
    nn::Graph g(lm.params);
    std::vector<TokenId> longseq(17, 1);
    EXPECT_THROW(lm.net.hidden(g, longseq), ValidationError);
    std::vector<TokenId> bad{1, 12};
    EXPECT_THROW(lm.net.hidden(g, bad), ValidationError);
    EXPECT_THROW(lm.net.hidden(g, std::vector<TokenId>{}), ValidationError);
    std::vector<TokenId> prompt_only{3};
    EXPECT_NO_THROW(lm.net.hidden(g, prompt_only));
}

TEST(Backbone, LogitRowsNormalise) {
    auto lm = tiny_lm(2);
    std::vector<TokenId> s{1, 2, 3, 4};
    nn::Graph g(lm.params);
    auto logits = lm.net.logits(g, lm.net.hidden(g, s));
    auto probs = g.softmax_rows(logits);
    const auto& P = g.value(probs);
    for (std::size_t r = 0; r < P.rows(); ++r) {
        double z = 0;
        for (std::size_t c = 0; c < P.cols(); ++c) z += P(r, c);
        EXPECT_NEAR(z, 1.0, 1e-12);
    }
    // gather-then-logsoftmax versus logsoftmax-then-gather
    auto a = g.pick(g.log_softmax_rows(g.gather_rows(logits, {2})), {5});
    auto b = g.gather_rows(g.pick(g.log_softmax_rows(logits), {0, 0, 5, 0}), {2});
    EXPECT_NEAR(g.value(a).item(), g.value(b).item(), 1e-12);
}

TEST(Backbone, TiedHiddenRowsGiveTiedLogits) {
    auto lm = tiny_lm(2);
    nn::Graph g(lm.params);
    Rng rng(3);
    auto row = nn::Tensor::randn(1, 8, rng);
    nn::Tensor two(std::vector<std::size_t>{2, 8});
    for (std::size_t c = 0; c < 8; ++c) two(0, c) = two(1, c) = row[c];
    const auto& L = g.value(lm.net.logits(g, g.constant(two)));
    for (std::size_t c = 0; c < L.cols(); ++c) EXPECT_EQ(L(0, c), L(1, c));
}

TEST(Backbone, FiniteDifferenceThroughWholeNetwork) {
    auto lm = tiny_lm(7);
    std::vector<TokenId> prompt{1, 4}, actions{2, 6, 3};
    auto loss_of = [&](nn::Graph& g) { return g.sum(lm.action_log_probs(g, prompt, actions)); };
    nn::Graph g(lm.params);
    auto analytic = g.backward(loss_of(g));
    auto numeric = nn::finite_diff_gradient(
        [&] {
            nn::Graph h(lm.params);
            return double(h.value(loss_of(h)).item());
        },
        lm.params, 1e-5);
    EXPECT_LE(nn::max_relative_error(analytic, numeric, 1e-6), 1e-4);
}

TEST(Decode, SessionMatchesGraphLogProbs) {
    auto lm = tiny_lm(8);
    std::vector<TokenId> prompt{1, 4, 2}, actions{5, 6, 0, 7, 10};
    nn::Graph g(lm.params);
    const auto& lp = g.value(lm.action_log_probs(g, prompt, actions));
    auto plain = action_log_probs(lm, prompt, actions);
    ASSERT_EQ(plain.size(), actions.size());
    for (std::size_t t = 0; t < actions.size(); ++t) EXPECT_NEAR(plain[t], lp[t], 1e-10);
}

TEST(Sampling, GreedyIsReproducibleAndLogProbsRecompute) {
    auto lm = tiny_lm(9);
    std::vector<TokenId> prompt{1, 2};
    GenerationConfig gen;
    gen.temperature = 0.0;
    gen.max_new_tokens = 10;
    auto a = sample_response(lm, prompt, gen);
    gen.seed = 123;
    auto b = sample_response(lm, prompt, gen);
    EXPECT_EQ(a.tokens, b.tokens);
    auto re = action_log_probs(lm, prompt, a.tokens);
    for (std::size_t t = 0; t < re.size(); ++t) EXPECT_NEAR(re[t], a.log_probs[t], 1e-10);
}

TEST(Sampling, StochasticDeterministicGivenSeedAndRecomputes) {
    auto lm = tiny_lm(10);
    std::vector<TokenId> prompt{3};
    auto gen = GenerationConfig::best_of_n_defaults();
    EXPECT_DOUBLE_EQ(gen.temperature, 0.6);
    EXPECT_EQ(gen.top_k, 50u);
    EXPECT_DOUBLE_EQ(gen.top_p, 0.9);
    gen.max_new_tokens = 12;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        gen.seed = seed;
        auto a = sample_response(lm, prompt, gen);
        auto b = sample_response(lm, prompt, gen);
        EXPECT_EQ(a.tokens, b.tokens);
        ASSERT_FALSE(a.tokens.empty());
        EXPECT_NE(a.tokens.front(), lm.specials.eos);
        for (auto t : a.tokens) {
            EXPECT_NE(t, lm.specials.pad);
            EXPECT_NE(t, lm.specials.end);
        }
        if (a.eos) EXPECT_EQ(a.tokens.back(), lm.specials.eos);
        auto re = action_log_probs(lm, prompt, a.tokens);
        for (std::size_t t = 0; t < re.size(); ++t) EXPECT_NEAR(re[t], a.log_probs[t], 1e-10);
    }
}

TEST(Sampling, RejectsBadConfig) {
    auto lm = tiny_lm(1);
    GenerationConfig gen;
    EXPECT_THROW(sample_response(lm, std::vector<TokenId>{}, gen), ValidationError);
    gen.top_p = 0.0;
    EXPECT_THROW(sample_response(lm, std::vector<TokenId>{1}, gen), ValidationError);
    gen.top_p = 1.0;
    gen.temperature = -1;
    EXPECT_THROW(sample_response(lm, std::vector<TokenId>{1}, gen), ValidationError);
}

TEST(Sampling, StopsAtMaxLength) {
    auto lm = tiny_lm(11);
    GenerationConfig gen;
    gen.max_new_tokens = 100;
    gen.seed = 5;
    std::vector<TokenId> prompt(10, 2);
    auto r = sample_response(lm, prompt, gen);
    EXPECT_LE(prompt.size() + r.tokens.size(), lm.config.max_len + 1);
    if (!r.eos) EXPECT_EQ(prompt.size() + r.tokens.size() - 1, lm.config.max_len);
}
