// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "srm/nn/gradcheck.hpp"
#include "srm/reward/aggregation.hpp"
#include "srm/rl/advantage.hpp"
#include "srm/rl/ppo.hpp"
#include "srm/rl/trainer.hpp"

using namespace srm;
using namespace srm::rl;

namespace {

// Direct double loop; sums run from T down to t like the implementation so
// the comparison can be exact.
std::vector<double> brute_force(const std::vector<double>& kl, const std::vector<std::uint8_t>* mask,
                                const std::vector<double>& rewards, double R, double beta) {
    const std::size_t T = kl.size();
    std::vector<double> out(T);
    for (std::size_t t = 0; t < T; ++t) {
        double rs = 0, ks = 0;
        for (std::size_t i = T; i-- > t;) {
            if (mask) rs += (*mask)[i] ? rewards[i] : 0.0;
            ks += kl[i];
        }
        out[t] = (mask ? rs : R) - beta * ks;
    }
    return out;
}

}  // namespace

TEST(Advantage, KlLogRatio) {
    EXPECT_EQ(kl_log_ratio({-1.0, -2.0}, {-1.0, -2.0}), (std::vector<double>{0.0, 0.0}));
    EXPECT_GT(kl_log_ratio({-0.1}, {-2.0})[0], 0.0);
    EXPECT_THROW(kl_log_ratio({-1.0}, {-1.0, -2.0}), ValidationError);
}

TEST(Advantage, ResponseLevelExamples) {
    auto a = response_level_advantage({0.1, 0.2, 0.3}, 1.0, 1.0);
    EXPECT_NEAR(a[0], 0.4, 1e-15);
    EXPECT_NEAR(a[1], 0.5, 1e-15);
    EXPECT_NEAR(a[2], 0.7, 1e-15);
    EXPECT_EQ(response_level_advantage({0.5, -0.2}, 2.5, 0.0), (std::vector<double>{2.5, 2.5}));
    EXPECT_EQ(response_level_advantage({0.0, 0.0, 0.0}, -1.5, 0.3), (std::vector<double>{-1.5, -1.5, -1.5}));
    EXPECT_THROW(response_level_advantage({0.1}, 1.0, -0.1), ValidationError);
}

TEST(Advantage, SentenceLevelExamples) {
    auto a = sentence_level_advantage({0, 0, 0}, {1, 0, 1}, {0.3, 0.0, 0.5}, 0.0);
    EXPECT_NEAR(a[0], 0.8, 1e-15);
    EXPECT_EQ(a[1], 0.5);
    EXPECT_EQ(a[2], 0.5);
    EXPECT_THROW(sentence_level_advantage({0, 0}, {0, 0}, {0, 0}, 0.0), ValidationError);
    EXPECT_THROW(sentence_level_advantage({0, 0}, {0, 1}, {0.2, 0.1}, 0.0), ValidationError);
    // one boundary at the end with no KL reduces to the response form
    auto s = sentence_level_advantage({0.2, 0.1, 0.4}, {0, 0, 1}, {0, 0, 0.7}, 0.0);
    EXPECT_EQ(s, response_level_advantage({0.2, 0.1, 0.4}, 0.7, 0.0));
}

TEST(Advantage, BruteForceAllPatternsUpToSix) {
    Rng rng(17);
    for (std::size_t T = 1; T <= 6; ++T) {
        for (std::uint32_t pattern = 1; pattern < (1u << T); ++pattern) {
            std::vector<std::uint8_t> mask(T);
            std::vector<double> kl(T), rewards(T, 0.0);
            for (std::size_t t = 0; t < T; ++t) {
                mask[t] = (pattern >> t) & 1u;
                kl[t] = rng.normal() * 0.3;
                if (mask[t]) rewards[t] = rng.normal();
            }
            const double R = rng.normal();
            for (double beta : {0.0, 0.01, 1.0}) {
                EXPECT_EQ(sentence_level_advantage(kl, mask, rewards, beta), brute_force(kl, &mask, rewards, 0, beta));
                EXPECT_EQ(response_level_advantage(kl, R, beta), brute_force(kl, nullptr, rewards, R, beta));
            }
        }
    }
}

TEST(Advantage, SuffixIdentityAndPiecewiseConstant) {
    Rng rng(5);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t T = 1 + rng.below(40);
        const std::size_t n = 1 + rng.below(std::min<std::size_t>(T, 8));
        // choose n distinct boundary tokens, the last one on the final token
        std::vector<std::size_t> pos;
        std::vector<std::uint8_t> mask(T, 0);
        mask[T - 1] = 1;
        while (std::count(mask.begin(), mask.end(), 1) < static_cast<long>(n)) mask[rng.below(T)] = 1;
        for (std::size_t t = 0; t < T; ++t)
            if (mask[t]) pos.push_back(t);
        std::vector<double> subseq(n + 1), logits(n);
        for (auto& v : subseq) v = rng.normal();
        for (auto& v : logits) v = rng.normal() * 2;
        const auto diff = reward::differential_rewards(subseq);
        const auto w = reward::softmax(logits);
        std::vector<double> rewards(T, 0.0), kl(T);
        for (std::size_t i = 0; i < n; ++i) rewards[pos[i]] = w[i] * diff[i];
        for (auto& v : kl) v = rng.normal() * 0.1;
        const double agg = reward::aggregate(diff, w, subseq, reward::Variant::Ours);
        const auto a = sentence_level_advantage(kl, mask, rewards, 0.0);
        EXPECT_EQ(a[0], agg);
        EXPECT_EQ(response_level_advantage(kl, agg, 0.0)[0], agg);
        for (std::size_t t = 1; t < T; ++t)
            if (!mask[t - 1]) EXPECT_EQ(a[t], a[t - 1]);
    }
}

TEST(Advantage, Normalisation) {
    std::vector<AdvantageEstimate> c = {{{2.0, 2.0}}, {{2.0}}};
    normalize_advantages(c);
    for (const auto& a : c)
        for (double v : a.values) EXPECT_EQ(v, 0.0);

    Rng rng(3);
    std::vector<AdvantageEstimate> b(5);
    for (auto& a : b)
        for (std::size_t i = 0; i < 1 + rng.below(10); ++i) a.values.push_back(rng.normal() * 3 + 1);
    auto raw = b;
    normalize_advantages(b, false);
    for (std::size_t i = 0; i < b.size(); ++i) EXPECT_EQ(b[i].values, raw[i].values);
    normalize_advantages(b, true);
    double n = 0, s = 0, ss = 0;
    for (const auto& a : b)
        for (double v : a.values) s += v, ss += v * v, n += 1;
    EXPECT_NEAR(s / n, 0.0, 1e-9);
    EXPECT_NEAR(std::sqrt(ss / n), 1.0, 1e-6);
    std::vector<AdvantageEstimate> one = {{{1.0}}};
    EXPECT_THROW(normalize_advantages(one), ValidationError);
}

namespace {

struct PpoFixture {
    std::vector<double> old, adv;
};

}  // namespace

TEST(Ppo, OnPolicyGradientIsPlainPolicyGradient) {
    Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t T = 1 + rng.below(6);
        std::vector<double> old(T), adv(T);
        for (auto& v : old) v = -std::abs(rng.normal());
        for (auto& v : adv) v = rng.normal();
        nn::Graph g;
        auto lp = g.input("lp", nn::Tensor::column(std::vector<real>(old.begin(), old.end())), true);
        auto loss = ppo_clip_loss(g, {{lp, &old, &adv}}, 0.2);
        double mean = 0;
        for (double a : adv) mean += a;
        mean /= static_cast<double>(T);
        EXPECT_NEAR(g.value(loss).item(), -mean, 1e-15);
        g.backward(loss);
        const auto grad = g.grad(lp);
        for (std::size_t t = 0; t < T; ++t) EXPECT_NEAR(grad[t], -adv[t] / static_cast<double>(T), 1e-10);
        EXPECT_NEAR(ppo_clip_loss({old}, {old}, {adv}, 0.2), -mean, 1e-15);
    }
}

TEST(Ppo, ClippedTokenHasZeroGradient) {
    const double eps = 0.2;
    std::vector<double> old{-1.0, -1.0}, adv{1.5, 1.5};
    std::vector<real> now{static_cast<real>(-1.0 + std::log(1 + 2 * eps)), -1.0};
    nn::Graph g;
    auto lp = g.input("lp", nn::Tensor::column(now), true);
    auto loss = ppo_clip_loss(g, {{lp, &old, &adv}}, eps);
    EXPECT_NEAR(g.value(loss).item(), -((1 + eps) * 1.5 + 1.5) / 2, 1e-12);
    g.backward(loss);
    EXPECT_EQ(g.grad(lp)[0], 0.0);
    EXPECT_NEAR(g.grad(lp)[1], -1.5 / 2, 1e-12);
    EXPECT_THROW(ppo_clip_loss({{0.0}}, {{0.0}}, {{1.0}}, 1.0), ValidationError);
    EXPECT_THROW(ppo_clip_loss({{800.0}}, {{0.0}}, {{1.0}}, 0.2), DivergenceError);
}

TEST(Ppo, FiniteDifferenceOnFourTokens) {
    Rng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> old(4), adv(4);
        nn::ParameterStore ps;
        nn::Tensor lp(std::vector<std::size_t>{4, 1});
        for (std::size_t t = 0; t < 4; ++t) {
            old[t] = -1.0 - rng.uniform();
            adv[t] = rng.normal();
            // stay away from the clip kinks at ratio 0.8 and 1.2
            double d;
            do d = rng.normal() * 0.3;
            while (std::abs(std::exp(d) - 0.8) < 0.01 || std::abs(std::exp(d) - 1.2) < 0.01);
            lp[t] = old[t] + d;
        }
        ps.add("lp", lp);
        auto build = [&](nn::Graph& g) { return ppo_clip_loss(g, {{g.param("lp"), &old, &adv}}, 0.2); };
        nn::Graph g(ps);
        auto analytic = g.backward(build(g));
        auto numeric = nn::finite_diff_gradient(
            [&] {
                nn::Graph h(ps);
                return double(h.value(build(h)).item());
            },
            ps, 1e-4);
        EXPECT_LE(nn::max_relative_error(analytic, numeric), 1e-5);
        nn::Graph v(ps);
        std::vector<double> now(ps[0].value.data().begin(), ps[0].value.data().end());
        EXPECT_NEAR(v.value(build(v)).item(), ppo_clip_loss({now}, {old}, {adv}, 0.2), 1e-14);
    }
}

// ---------------------------------------------------------------------------
// Trainer

namespace {

struct World {
    text::Tokenizer tok;
    model::LanguageModel policy;
    reward::RewardModel sentence_rm, response_rm, token_rm;
    std::vector<std::vector<TokenId>> prompts;

    World() {
        model::BackboneConfig pc;
        pc.hidden_dim = 16;
        pc.heads = 2;
        pc.layers = 1;
        pc.max_len = 40;
        pc.ffn_mult = 2;
        policy = model::LanguageModel(pc, tok.specials(), 11);
        reward::RewardConfig rc;
        rc.backbone = pc;
        rc.backbone.max_len = 80;
        rc.d_q = 4;
        auto randomise = [](reward::RewardModel& m, std::uint64_t seed) {
            Rng rng(seed);
            for (std::size_t i : {m.r_weight_index(), m.q_weight_index(), m.k_weight_index()})
                m.params[i].value = nn::Tensor::randn(m.params[i].value.rows(), m.params[i].value.cols(), rng, 0.5);
        };
        sentence_rm = reward::RewardModel(rc, 21, tok.version());
        randomise(sentence_rm, 1);
        rc.variant = reward::Variant::Response;
        response_rm = reward::RewardModel(rc, 22, tok.version());
        randomise(response_rm, 2);
        rc.variant = reward::Variant::Ours;
        rc.objective = reward::Objective::Token;
        token_rm = reward::RewardModel(rc, 23, tok.version());
        randomise(token_rm, 3);
        for (const char* p : {"Q?", "Say Q.", "Hi", "Go.", "More Q", "Why?"}) prompts.push_back(tok.encode(p).ids);
    }

    const reward::RewardModel& rm_for(Mode m) const {
        if (m == Mode::Token) return token_rm;
        if (m == Mode::Res2Sent || m == Mode::Response) return response_rm;
        return sentence_rm;
    }
};

RlConfig small_config() {
    RlConfig c;
    c.rollout_batch = 6;
    c.train_batch = 3;
    c.generation.max_new_tokens = 20;
    c.max_chars = 16;
    c.seed = 99;
    c.adam.lr = 1e-3;
    return c;
}

}  // namespace

TEST(Trainer, ZeroLearningRateLeavesPolicyUnchanged) {
    World w;
    for (Mode mode : {Mode::Sentence, Mode::Sent2Res, Mode::Res2Sent, Mode::Response, Mode::Token}) {
        auto actor = w.policy;
        auto cfg = small_config();
        cfg.adam.lr = 0.0;
        RlTrainer tr(actor, w.policy, w.rm_for(mode), w.tok, cfg, mode);
        auto metrics = tr.train_epoch(w.prompts);
        ASSERT_EQ(metrics.size(), 1u);
        EXPECT_EQ(actor.params, w.policy.params) << to_string(mode);
        EXPECT_TRUE(std::isfinite(metrics[0].loss));
        EXPECT_GT(metrics[0].mean_length, 0.0);
        EXPECT_EQ(metrics[0].mean_kl, 0.0);  // actor and reference coincide
    }
}

TEST(Trainer, RolloutsCarryConsistentRewards) {
    World w;
    auto cfg = small_config();
    auto masked_rm = w.sentence_rm;
    masked_rm.config.mode = reward::BoundaryMode::Masked;
    for (Mode mode : {Mode::Sentence, Mode::Sent2Res, Mode::Res2Sent, Mode::Token}) {
        auto actor = w.policy;
        const auto& rm = mode == Mode::Sent2Res ? masked_rm : w.rm_for(mode);
        RlTrainer tr(actor, w.policy, rm, w.tok, cfg, mode);
        for (const auto& r : tr.collect(w.prompts)) {
            ASSERT_EQ(r.mask.size(), r.size());
            if (r.eos) EXPECT_EQ(r.mask.back(), 0);
            double total = 0;
            for (std::size_t t = 0; t < r.size(); ++t) {
                if (!r.mask[t]) EXPECT_EQ(r.token_rewards[t], 0.0);
                total += r.token_rewards[t];
            }
            // Sentence and token rewards add up to the response reward; Res2Sent
            // telescopes to the final output minus the prompt-only output.
            if (mode == Mode::Sentence || mode == Mode::Token) EXPECT_NEAR(total, r.response_reward, 1e-12) << to_string(mode);
            auto re = model::action_log_probs(w.policy, r.prompt, r.actions);
            for (std::size_t t = 0; t < re.size(); ++t) EXPECT_NEAR(re[t], r.logp_ref[t], 1e-10);
        }
    }
}

TEST(Trainer, SentenceAndSent2ResShareStepZero) {
    World w;
    auto cfg = small_config();
    cfg.beta = 0.0;
    auto a1 = w.policy, a2 = w.policy;
    RlTrainer sentence(a1, w.policy, w.sentence_rm, w.tok, cfg, Mode::Sentence);
    RlTrainer s2r(a2, w.policy, w.sentence_rm, w.tok, cfg, Mode::Sent2Res);
    auto r1 = sentence.collect(w.prompts);
    auto r2 = s2r.collect(w.prompts);
    for (std::size_t i = 0; i < r1.size(); ++i) {
        EXPECT_EQ(r1[i].actions, r2[i].actions);
        EXPECT_EQ(r1[i].response_reward, r2[i].response_reward);
        EXPECT_EQ(advantage_for(r1[i], Mode::Sentence, 0.0).values[0],
                  advantage_for(r2[i], Mode::Sent2Res, 0.0).values[0]);
    }
    auto m1 = sentence.step(w.prompts);
    auto m2 = s2r.step(w.prompts);
    EXPECT_EQ(m1.mean_reward, m2.mean_reward);
    EXPECT_NE(a1.params, a2.params);  // the updates differ
}

TEST(Trainer, RejectsMismatchedRewardModel) {
    World w;
    auto actor = w.policy;
    auto cfg = small_config();
    EXPECT_THROW(RlTrainer(actor, w.policy, w.response_rm, w.tok, cfg, Mode::Sentence), ValidationError);
    EXPECT_THROW(RlTrainer(actor, w.policy, w.sentence_rm, w.tok, cfg, Mode::Response), ValidationError);
    EXPECT_THROW(RlTrainer(actor, w.policy, w.sentence_rm, w.tok, cfg, Mode::Token), ValidationError);
    auto other = w.sentence_rm;
    other.vocab_version = "bpe-9-0000000000000000";
    EXPECT_THROW(RlTrainer(actor, w.policy, other, w.tok, cfg, Mode::Sentence), ValidationError);
    EXPECT_THROW(parse_mode("tokens"), ValidationError);
}

namespace {

// Exact KL(actor || ref) summed over the positions of fixed actor samples.
double exact_kl(const model::LanguageModel& actor, const model::LanguageModel& ref,
                const std::vector<std::vector<TokenId>>& prompts) {
    double total = 0;
    std::size_t positions = 0;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        for (std::uint64_t k = 0; k < 4; ++k) {
            model::GenerationConfig gen{1.0, 0, 1.0, 20, mix_seed(7, i, k)};
            auto s = model::sample_response(actor, prompts[i], gen);
            model::DecodeSession a(actor.net, actor.params), r(ref.net, ref.params);
            std::vector<real> la, lr;
            for (TokenId t : prompts[i]) la = a.step(t), lr = r.step(t);
            for (std::size_t t = 0; t < s.tokens.size(); ++t) {
                const auto pa = model::log_softmax(la), pr = model::log_softmax(lr);
                for (std::size_t v = 0; v < pa.size(); ++v) total += std::exp(pa[v]) * (pa[v] - pr[v]);
                ++positions;
                if (t + 1 < s.tokens.size()) la = a.step(s.tokens[t]), lr = r.step(s.tokens[t]);
            }
        }
    }
    return total / static_cast<double>(positions);
}

}  // namespace

TEST(Trainer, LargeKlPenaltyKeepsPolicyCloser) {
    World w;
    auto run = [&](double beta) {
        auto actor = w.policy;
        auto cfg = small_config();
        cfg.beta = beta;
        cfg.adam.lr = 1e-2;
        cfg.normalize_advantages = false;
        RlTrainer tr(actor, w.policy, w.sentence_rm, w.tok, cfg, Mode::Sentence);
        for (int e = 0; e < 6; ++e) tr.train_epoch(w.prompts);
        return exact_kl(actor, w.policy, w.prompts);
    };
    const double free_kl = run(0.0), tied_kl = run(5.0);
    EXPECT_GT(free_kl, 0.0);
    EXPECT_LT(tied_kl, free_kl);
}
