// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "corpus.hpp"
#include "srm/nn/gradcheck.hpp"
#include "srm/reward/inputs.hpp"
#include "srm/reward/model.hpp"

using namespace srm;
using namespace srm::reward;

namespace {

RewardConfig tiny(Objective obj = Objective::Sentence, Variant v = Variant::Ours) {
    RewardConfig c;
    c.backbone.hidden_dim = 8;
    c.backbone.heads = 2;
    c.backbone.layers = 1;
    c.backbone.ffn_mult = 2;
    c.backbone.max_len = 96;
    c.d_q = 4;
    c.objective = obj;
    c.variant = v;
    return c;
}

// Heads get non-trivial values so every path carries signal.
RewardModel randomised(const RewardConfig& c, std::uint64_t seed) {
    RewardModel m(c, seed);
    Rng rng(seed + 1000);
    for (std::size_t i : {m.r_weight_index(), m.r_bias_index(), m.q_weight_index(), m.k_weight_index()})
        m.params[i].value = nn::Tensor::randn(m.params[i].value.rows(), m.params[i].value.cols(), rng, 0.7);
    return m;
}

const text::Tokenizer kBytes;

RewardInput input_for(const RewardModel& m, const std::string& prompt, const std::string& response) {
    return make_input(m.config, kBytes, prompt, response, 128);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST(Aggregation, DifferentialRewards) {
    auto d = differential_rewards({0.2, 0.5, 0.4});
    ASSERT_EQ(d.size(), 2u);
    EXPECT_NEAR(d[0], 0.3, 1e-15);
    EXPECT_NEAR(d[1], -0.1, 1e-15);
    EXPECT_EQ(differential_rewards({0.7, 0.7, 0.7}), (std::vector<double>{0.0, 0.0}));
    EXPECT_THROW(differential_rewards({1.0}), ValidationError);
}

TEST(Aggregation, VariantFormulas) {
    const std::vector<double> subseq{0.2, 0.5, 0.4}, diff{0.3, -0.1}, w{0.75, 0.25};
    EXPECT_NEAR(aggregate(diff, w, subseq, Variant::Ours), 0.2, 1e-15);
    EXPECT_NEAR(aggregate(diff, w, subseq, Variant::DA), 0.1, 1e-15);
    EXPECT_NEAR(aggregate(diff, w, subseq, Variant::VW), 0.75 * 0.5 + 0.25 * 0.4, 1e-15);
    EXPECT_NEAR(aggregate(diff, w, subseq, Variant::VA), 0.45, 1e-15);
    EXPECT_NEAR(aggregate(diff, w, subseq, Variant::Response), 0.4, 1e-15);
    EXPECT_THROW(aggregate(diff, {1.0}, subseq, Variant::Ours), ValidationError);
    EXPECT_THROW(parse_variant("median"), ValidationError);
    for (Variant v : {Variant::Ours, Variant::VW, Variant::VA, Variant::DA, Variant::Response})
        EXPECT_EQ(parse_variant(to_string(v)), v);
}

TEST(Aggregation, PairwiseAccuracy) {
    EXPECT_DOUBLE_EQ(pairwise_accuracy({1.0}, {0.0}), 1.0);
    EXPECT_DOUBLE_EQ(pairwise_accuracy({0.3, 0.3, 0.3}, {0.3, 0.3, 0.3}), 0.5);
    const std::vector<double> a{0.1, 0.5, -0.2, 0.4, 0.0}, b{0.3, 0.1, -0.2, 0.2, 1.0};
    EXPECT_DOUBLE_EQ(pairwise_accuracy(b, a), 1.0 - pairwise_accuracy(a, b));
    EXPECT_THROW(pairwise_accuracy({}, {}), ValidationError);
}

TEST(RewardModel, ZeroInitHeadGivesZeroRewardsAndLn2Loss) {
    RewardModel m(tiny(), 3);
    auto in = input_for(m, "Q?", "QQ. Q. X.");
    auto out = m.score(in);
    for (double r : out.subseq) EXPECT_EQ(r, 0.0);
    nn::Graph g(m.params);
    auto other = input_for(m, "Q?", "X.");
    EXPECT_NEAR(g.value(m.pair_loss(g, in, other)).item(), std::log(2.0), 1e-15);
    auto sig = m;
    sig.config.bt_form = BtForm::Sigmoid;
    nn::Graph h(sig.params);
    EXPECT_NEAR(h.value(sig.pair_loss(h, in, other)).item(), -0.5, 1e-15);
}

TEST(RewardModel, LossDecreasesMonotonicallyInMargin) {
    double prev = std::numeric_limits<double>::infinity();
    for (double margin = -5; margin <= 30; margin += 0.5) {
        nn::Graph g;
        const double loss = -g.value(g.log_sigmoid(g.constant(nn::Tensor::scalar(margin)))).item();
        EXPECT_LT(loss, prev);
        EXPECT_GT(loss, 0.0);
        prev = loss;
    }
    EXPECT_LT(prev, 1e-12);
}

TEST(RewardModel, SingleSentenceHasTwoSubsequenceRewardsAndUnitWeight) {
    auto m = randomised(tiny(), 4);
    auto out = m.score(input_for(m, "hi", "one sentence only"));
    EXPECT_EQ(out.subseq.size(), 2u);
    ASSERT_EQ(out.weights.size(), 1u);
    EXPECT_DOUBLE_EQ(out.weights[0], 1.0);
}

TEST(RewardModel, GraphAndPlainRoutesAgreeAcrossVariants) {
    for (Variant v : {Variant::Ours, Variant::VW, Variant::VA, Variant::DA, Variant::Response}) {
        for (std::uint64_t seed = 1; seed <= 4; ++seed) {
            auto m = randomised(tiny(Objective::Sentence, v), seed);
            auto in = input_for(m, "prompt", "First one. Second! Third? Fourth.");
            auto plain = m.score(in);
            nn::Graph g(m.params);
            auto vars = m.sentence_forward(g, in);
            EXPECT_NEAR(g.value(vars.aggregate).item(), plain.aggregate, 1e-12) << to_string(v);
            const auto& w = g.value(vars.weights);
            double sw = 0;
            for (std::size_t i = 0; i < plain.weights.size(); ++i) {
                EXPECT_NEAR(w[i], plain.weights[i], 1e-12);
                EXPECT_GT(plain.weights[i], 0.0);
                EXPECT_LT(plain.weights[i], 1.0);
                sw += plain.weights[i];
            }
            EXPECT_NEAR(sw, 1.0, 1e-9);
            double sd = 0;
            for (double d : plain.diff) sd += d;
            EXPECT_NEAR(sd, plain.subseq.back() - plain.subseq.front(), 1e-9);
        }
    }
}

TEST(RewardModel, EditingALaterSentenceLeavesEarlierRewards) {
    auto m = randomised(tiny(), 6);
    auto a = m.score(input_for(m, "p", "Alpha one. Beta two. Gamma three."));
    auto b = m.score(input_for(m, "p", "Alpha one. Beta two. Delta X."));
    ASSERT_EQ(a.diff.size(), 3u);
    ASSERT_EQ(b.diff.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(a.subseq[i], b.subseq[i]);
    EXPECT_EQ(a.diff[0], b.diff[0]);
    EXPECT_EQ(a.diff[1], b.diff[1]);
    EXPECT_NE(a.diff[2], b.diff[2]);
}

TEST(RewardModel, ConstantWeightsDegenerateToResponseLevel) {
    Rng rng(9);
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        auto m = randomised(tiny(), seed);
        auto w = m.score(input_for(m, "same prompt", "A one. B two."));
        auto l = m.score(input_for(m, "same prompt", "C three. D four. E five."));
        const double c = rng.normal();
        double sw = 0, sl = 0;
        for (double d : w.diff) sw += c * d;
        for (double d : l.diff) sl += c * d;
        EXPECT_NEAR(sigmoid(sw - sl), sigmoid(c * (w.subseq.back() - l.subseq.back())), 1e-9);
    }
}

TEST(RewardModel, EndAndMaskedPositions) {
    RewardConfig c = tiny();
    const std::string prompt = "Q?", resp = "Hello world. It works!";
    auto prompt_ids = kBytes.encode(prompt).ids;
    auto seg = text::segment(resp);
    auto end_in = end_mode_input(kBytes, prompt_ids, text::insert_boundary_markers(resp, seg));
    // "Q?" + "Hello world." + END + " It works!" + END
    EXPECT_EQ(end_in.positions, (std::vector<std::size_t>{1, 14, 25}));
    for (std::size_t i = 1; i < end_in.positions.size(); ++i) EXPECT_EQ(end_in.tokens[end_in.positions[i]], 258u);
    auto masked = masked_mode_input(prompt_ids, kBytes.encode(resp), seg);
    auto mask = text::boundary_mask(kBytes.encode(resp), seg);
    std::vector<std::size_t> expect{1};
    for (auto p : mask.positions()) expect.push_back(2 + p);
    EXPECT_EQ(masked.positions, expect);
    EXPECT_LT(masked.positions[0], masked.positions[1]);
    c.mode = BoundaryMode::Masked;
    RewardModel m(c, 1);
    EXPECT_EQ(input_for(m, prompt, resp).positions, expect);
}

TEST(RewardModel, EndInputFromSegmentsMatchesMarkedString) {
    const auto bpe = text::Tokenizer::train(srm::testing::alignment_corpus(200, 4), 320);
    for (const auto& s : srm::testing::alignment_corpus(200, 9)) {
        if (s.find(text::kEndLiteral) != std::string::npos) continue;
        const auto seg = text::segment(s, 32);
        for (const text::Tokenizer* tok : {&kBytes, &bpe}) {
            const auto prompt = tok->encode("P:").ids;
            const auto a = end_mode_input(*tok, prompt, seg);
            const auto b = end_mode_input(*tok, prompt, text::insert_boundary_markers(s, seg));
            EXPECT_EQ(a.tokens, b.tokens) << s;
            EXPECT_EQ(a.positions, b.positions) << s;
        }
    }
}

TEST(RewardModel, InputValidation) {
    auto m = randomised(tiny(), 2);
    RewardInput bad{{1, 2, 3}, {0}, 1};
    EXPECT_THROW(m.score(bad), ValidationError);
    bad.positions = {0, 5};
    EXPECT_THROW(m.score(bad), ValidationError);
    bad.positions = {1, 2};
    EXPECT_THROW(m.score(bad), ValidationError);
    RewardConfig odd = tiny();
    odd.d_q = 3;
    EXPECT_THROW(RewardModel(odd, 1), ValidationError);
}

namespace {

double bt_grad_error(const RewardModel& m0, std::uint64_t seed) {
    RewardModel m = m0;
    std::vector<RewardInput> ins = {input_for(m, "P one", "Good. Very good."), input_for(m, "P one", "Bad X."),
                                    input_for(m, "Other", "Fine!"), input_for(m, "Other", "X? X. X.")};
    if (seed % 2) std::swap(ins[0], ins[1]);
    std::vector<std::pair<const RewardInput*, const RewardInput*>> batch = {{&ins[0], &ins[1]}, {&ins[2], &ins[3]}};
    nn::Graph g(m.params);
    auto analytic = g.backward(m.batch_loss(g, batch));
    auto numeric = nn::finite_diff_gradient(
        [&] {
            nn::Graph h(m.params);
            return double(h.value(m.batch_loss(h, batch)).item());
        },
        m.params, 1e-4);
    return nn::max_relative_error(analytic, numeric, 1e-6);
}

}  // namespace

TEST(RewardGradients, BtLossBothFormsMatchFiniteDifferences) {
    for (BtForm form : {BtForm::NegLogSigmoid, BtForm::Sigmoid}) {
        for (std::uint64_t seed = 1; seed <= 2; ++seed) {
            auto c = tiny();
            c.bt_form = form;
            EXPECT_LE(bt_grad_error(randomised(c, seed), seed), 1e-5) << to_string(form) << " seed " << seed;
        }
    }
}

TEST(TokenObjective, WeightsSumToOneAndSymmetricPairIsLn2) {
    auto m = randomised(tiny(Objective::Token), 5);
    auto a = input_for(m, "p", "Some response here.");
    auto out = m.token_score(a);
    double s = 0, manual = 0;
    for (std::size_t t = 0; t < out.weights.size(); ++t) {
        s += out.weights[t];
        manual += out.weights[t] * out.rewards[t];
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
    EXPECT_NEAR(manual, out.score, 1e-12);
    EXPECT_EQ(out.weights.size(), std::string("Some response here.").size());
    nn::Graph g(m.params);
    EXPECT_NEAR(g.value(m.pair_loss(g, a, a)).item(), std::log(2.0), 1e-12);
    EXPECT_THROW(token_mode_input(kBytes.encode("p").ids, std::vector<TokenId>{}), ValidationError);
}

TEST(TokenObjective, GradientMatchesFiniteDifferences) {
    for (std::uint64_t seed = 1; seed <= 2; ++seed)
        EXPECT_LE(bt_grad_error(randomised(tiny(Objective::Token), seed), seed), 1e-5);
}

TEST(RewardModel, CheckpointRoundTrip) {
    auto c = tiny(Objective::Sentence, Variant::VW);
    c.mode = BoundaryMode::Masked;
    auto m = randomised(c, 12);
    m.vocab_version = kBytes.version();
    const auto dir = std::filesystem::temp_directory_path() / "srm_rm_ckpt";
    std::filesystem::remove_all(dir);
    m.save(dir);
    auto back = RewardModel::load(dir);
    EXPECT_EQ(back.params, m.params);
    EXPECT_EQ(back.config.variant, Variant::VW);
    EXPECT_EQ(back.config.mode, BoundaryMode::Masked);
    EXPECT_EQ(back.config.backbone, c.backbone);
    EXPECT_EQ(back.vocab_version, kBytes.version());
    auto in = input_for(m, "p", "One. Two.");
    EXPECT_EQ(back.score(in).aggregate, m.score(in).aggregate);
    std::filesystem::remove_all(dir);
}
