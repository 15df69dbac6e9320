// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "srm/model/config.hpp"
#include "srm/model/rope.hpp"
#include "srm/model/transformer.hpp"
#include "srm/nn/checkpoint.hpp"
#include "srm/nn/graph.hpp"
#include "srm/reward/aggregation.hpp"
#include "srm/text/segmenter.hpp"

namespace srm::reward {

using model::TokenId;

/// Sentence: differential rewards at boundaries with attention aggregation.
/// Token: the pairwise-token baseline, one reward and one weight per token.
enum class Objective { Sentence, Token };

/// End: boundaries are `<END>` tokens in marked text. Masked: boundaries are
/// the mask bits on unmarked text.
enum class BoundaryMode { End, Masked };

/// NegLogSigmoid is the usual -log sigma(r_w - r_l); Sigmoid is -sigma(r_w - r_l).
enum class BtForm { NegLogSigmoid, Sigmoid };

inline std::string_view to_string(Objective o) { return o == Objective::Sentence ? "sentence" : "token"; }
inline std::string_view to_string(BoundaryMode m) { return m == BoundaryMode::End ? "end" : "masked"; }
inline std::string_view to_string(BtForm f) { return f == BtForm::NegLogSigmoid ? "neg-log-sigmoid" : "sigmoid"; }

inline Objective parse_objective(std::string_view s) {
    if (s == "sentence") return Objective::Sentence;
    if (s == "token") return Objective::Token;
    fail("unknown reward objective '", s, "' (expected sentence or token)");
}
inline BoundaryMode parse_boundary_mode(std::string_view s) {
    if (s == "end") return BoundaryMode::End;
    if (s == "masked") return BoundaryMode::Masked;
    fail("unknown boundary mode '", s, "' (expected end or masked)");
}
inline BtForm parse_bt_form(std::string_view s) {
    if (s == "neg-log-sigmoid") return BtForm::NegLogSigmoid;
    if (s == "sigmoid") return BtForm::Sigmoid;
    fail("unknown BT loss form '", s, "' (expected neg-log-sigmoid or sigmoid)");
}

struct RewardConfig {
    model::BackboneConfig backbone;
    std::size_t d_q = 32;
    Variant variant = Variant::Ours;
    Objective objective = Objective::Sentence;
    BoundaryMode mode = BoundaryMode::End;
    BtForm bt_form = BtForm::NegLogSigmoid;
    double qk_init_std = 0.02;

    void validate() const {
        backbone.validate();
        require(d_q > 0 && d_q % 2 == 0, "d_q must be positive and even for the rotary rotation, got ", d_q);
        require(qk_init_std >= 0, "qk_init_std must be >= 0");
    }
};

/// One scored sequence. For the sentence objective, positions[0] is the last
/// prompt token and positions[1..n] are the boundary tokens. For the token
/// objective only prompt_len matters: every later token is scored.
struct RewardInput {
    std::vector<TokenId> tokens;
    std::vector<std::size_t> positions;
    std::size_t prompt_len = 0;
};

struct SentenceVars {
    nn::Var subseq;     // (n+1) x 1
    nn::Var diff;       // n x 1
    nn::Var weights;    // 1 x n
    nn::Var aggregate;  // 1 x 1
};

struct TokenVars {
    nn::Var rewards;  // 1 x T
    nn::Var weights;  // 1 x T
    nn::Var score;    // 1 x 1
};

struct TokenRewardOutput {
    std::vector<double> rewards;
    std::vector<double> weights;
    double score = 0.0;
};

class RewardModel {
public:
    RewardConfig config;
    std::string vocab_version;
    nn::ParameterStore params;
    model::Transformer net;

    RewardModel() = default;

    RewardModel(const RewardConfig& cfg, std::uint64_t seed, std::string vocab = {})
        : config(cfg), vocab_version(std::move(vocab)) {
        cfg.validate();
        Rng rng(seed);
        net = model::Transformer(cfg.backbone, params, "rm.", rng, false);
        const std::size_t d = cfg.backbone.hidden_dim;
        r_w_ = params.add("rm.head.r.weight", nn::Tensor::matrix(d, 1));
        r_b_ = params.add("rm.head.r.bias", nn::Tensor::matrix(1, 1));
        w_q_ = params.add("rm.head.q.weight", nn::Tensor::randn(d, cfg.d_q, rng, cfg.qk_init_std));
        w_k_ = params.add("rm.head.k.weight", nn::Tensor::randn(d, cfg.d_q, rng, cfg.qk_init_std));
    }

    std::size_t r_weight_index() const noexcept { return r_w_; }
    std::size_t r_bias_index() const noexcept { return r_b_; }
    std::size_t q_weight_index() const noexcept { return w_q_; }
    std::size_t k_weight_index() const noexcept { return w_k_; }

    void check_input(const RewardInput& in) const {
        require(!in.tokens.empty(), "reward input has no tokens");
        require(in.prompt_len >= 1 && in.prompt_len < in.tokens.size(), "reward input needs a non-empty prompt (",
                in.prompt_len, ") and a non-empty response (", in.tokens.size(), " tokens total)");
        if (config.objective == Objective::Token) return;
        require(in.positions.size() >= 2, "reward input has no sentence boundaries");
        require(in.positions[0] == in.prompt_len - 1, "positions[0] must be the last prompt token");
        for (std::size_t i = 1; i < in.positions.size(); ++i)
            require(in.positions[i] > in.positions[i - 1], "boundary positions must be strictly ascending (index ", i,
                    ")");
        require(in.positions.back() < in.tokens.size(), "boundary position ", in.positions.back(),
                " is beyond the sequence length ", in.tokens.size());
    }

    SentenceVars sentence_forward(nn::Graph& g, const RewardInput& in) const {
        require(config.objective == Objective::Sentence, "sentence_forward on a token-objective model");
        check_input(in);
        const std::size_t n = in.positions.size() - 1;
        nn::Var h = net.hidden(g, in.tokens);
        nn::Var hp = g.gather_rows(h, in.positions);
        SentenceVars v;
        v.subseq = g.add_row(g.matmul(hp, g.param(r_w_)), g.param(r_b_));
        std::vector<std::size_t> hi(n), lo(n), sentence_pos(n);
        for (std::size_t i = 0; i < n; ++i) {
            hi[i] = i + 1;
            lo[i] = i;
            sentence_pos[i] = i + 1;
        }
        nn::Var later = g.gather_rows(v.subseq, hi);
        v.diff = g.sub(later, g.gather_rows(v.subseq, lo));
        nn::Var hb = g.gather_rows(hp, hi);
        nn::Var keys = g.rope(g.matmul(hb, g.param(w_k_)), sentence_pos, config.backbone.rope_base);
        nn::Var query = g.rope(g.matmul(g.gather_rows(hp, {n}), g.param(w_q_)), {n}, config.backbone.rope_base);
        v.weights = g.softmax_rows(g.matmul(query, g.transpose(keys)));
        switch (config.variant) {
            case Variant::Ours: v.aggregate = g.matmul(v.weights, v.diff); break;
            case Variant::VW: v.aggregate = g.matmul(v.weights, later); break;
            case Variant::VA: v.aggregate = g.mean(later); break;
            case Variant::DA: v.aggregate = g.mean(v.diff); break;
            case Variant::Response: v.aggregate = g.gather_rows(v.subseq, {n}); break;
        }
        return v;
    }

    TokenVars token_forward(nn::Graph& g, const RewardInput& in) const {
        require(config.objective == Objective::Token, "token_forward on a sentence-objective model");
        check_input(in);
        std::vector<std::size_t> rows;
        for (std::size_t t = in.prompt_len; t < in.tokens.size(); ++t) rows.push_back(t);
        nn::Var h = g.gather_rows(net.hidden(g, in.tokens), rows);
        TokenVars v;
        v.rewards = g.transpose(g.add_row(g.matmul(h, g.param(r_w_)), g.param(r_b_)));
        nn::Var q = g.matmul(h, g.param(w_q_));
        nn::Var k = g.matmul(h, g.param(w_k_));
        // Row r holds softmax over queries t of q_t . k_r; averaging rows gives w_t.
        v.weights = g.mean_rows(g.softmax_rows(g.matmul(k, g.transpose(q))));
        v.score = g.matmul(v.weights, g.transpose(v.rewards));
        return v;
    }

    /// Scalar response reward used for preference training and ranking.
    nn::Var response_reward(nn::Graph& g, const RewardInput& in) const {
        return config.objective == Objective::Sentence ? sentence_forward(g, in).aggregate : token_forward(g, in).score;
    }

    /// Loss for one preference pair under the configured form.
    nn::Var pair_loss(nn::Graph& g, const RewardInput& chosen, const RewardInput& rejected) const {
        nn::Var margin = g.sub(response_reward(g, chosen), response_reward(g, rejected));
        return config.bt_form == BtForm::NegLogSigmoid ? g.neg(g.log_sigmoid(margin)) : g.neg(g.sigmoid(margin));
    }

    nn::Var batch_loss(nn::Graph& g, const std::vector<std::pair<const RewardInput*, const RewardInput*>>& batch) const {
        require(!batch.empty(), "preference loss of an empty batch");
        nn::Var total = pair_loss(g, *batch[0].first, *batch[0].second);
        for (std::size_t i = 1; i < batch.size(); ++i) total = g.add(total, pair_loss(g, *batch[i].first, *batch[i].second));
        return g.scale(total, 1.0 / static_cast<double>(batch.size()));
    }

    /// Sentence outputs with the heads evaluated outside the graph; only the
    /// trunk runs through it. Serves as an independent check of sentence_forward.
    SentenceRewardOutput score(const RewardInput& in) const {
        require(config.objective == Objective::Sentence, "score() needs a sentence-objective model");
        check_input(in);
        nn::Graph g(params);
        const nn::Tensor& H = g.value(net.hidden(g, in.tokens));
        const std::size_t d = config.backbone.hidden_dim, dq = config.d_q, n = in.positions.size() - 1;
        const nn::Tensor& rw = params[r_w_].value;
        const double rb = params[r_b_].value[0];
        auto project = [&](std::size_t row, const nn::Tensor& w) {
            std::vector<double> out(w.cols(), 0.0);
            for (std::size_t a = 0; a < d; ++a)
                for (std::size_t b = 0; b < w.cols(); ++b) out[b] += double(H(row, a)) * double(w(a, b));
            return out;
        };
        SentenceRewardOutput out;
        for (std::size_t p : in.positions) out.subseq.push_back(project(p, rw)[0] + rb);
        out.diff = differential_rewards(out.subseq);
        const auto q = model::rope_rotate(project(in.positions[n], params[w_q_].value), n, config.backbone.rope_base);
        std::vector<double> logits(n);
        for (std::size_t i = 1; i <= n; ++i) {
            const auto k = model::rope_rotate(project(in.positions[i], params[w_k_].value), i, config.backbone.rope_base);
            double s = 0;
            for (std::size_t e = 0; e < dq; ++e) s += q[e] * k[e];
            logits[i - 1] = s;
        }
        out.weights = softmax(logits);
        out.aggregate = reward::aggregate(out.diff, out.weights, out.subseq, config.variant);
        return out;
    }

    TokenRewardOutput token_score(const RewardInput& in) const {
        nn::Graph g(params);
        TokenVars v = token_forward(g, in);
        TokenRewardOutput out;
        for (real x : g.value(v.rewards).data()) out.rewards.push_back(x);
        for (real x : g.value(v.weights).data()) out.weights.push_back(x);
        out.score = g.value(v.score).item();
        return out;
    }

    double response_score(const RewardInput& in) const {
        nn::Graph g(params);
        return g.value(response_reward(g, in)).item();
    }

    std::map<std::string, std::string> manifest_meta() const {
        auto num = [](double v) {
            char buf[40];
            std::snprintf(buf, sizeof buf, "%.17g", v);
            return std::string(buf);
        };
        const auto& b = config.backbone;
        return {{"kind", "reward-model"},
                {"objective", std::string(to_string(config.objective))},
                {"variant", std::string(to_string(config.variant))},
                {"boundary_mode", std::string(to_string(config.mode))},
                {"bt_form", std::string(to_string(config.bt_form))},
                {"d_q", std::to_string(config.d_q)},
                {"qk_init_std", num(config.qk_init_std)},
                {"vocab_version", vocab_version.empty() ? "-" : vocab_version},
                {"segmenter_rules", std::string(text::kSegmenterRuleVersion)},
                {"backbone.vocab_size", std::to_string(b.vocab_size)},
                {"backbone.hidden_dim", std::to_string(b.hidden_dim)},
                {"backbone.layers", std::to_string(b.layers)},
                {"backbone.heads", std::to_string(b.heads)},
                {"backbone.max_len", std::to_string(b.max_len)},
                {"backbone.ffn_mult", std::to_string(b.ffn_mult)},
                {"backbone.rope_base", num(b.rope_base)}};
    }

    void save(const std::filesystem::path& dir) const { nn::save_checkpoint(dir, params, manifest_meta()); }

    static RewardModel load(const std::filesystem::path& dir) {
        const auto man = nn::read_manifest(dir);
        require(man.get("kind") == "reward-model", "checkpoint at ", dir.string(), " is not a reward model");
        RewardConfig cfg;
        cfg.objective = parse_objective(man.get("objective"));
        cfg.variant = parse_variant(man.get("variant"));
        cfg.mode = parse_boundary_mode(man.get("boundary_mode"));
        cfg.bt_form = parse_bt_form(man.get("bt_form"));
        cfg.d_q = std::stoull(man.get("d_q"));
        cfg.qk_init_std = std::stod(man.get("qk_init_std"));
        cfg.backbone.vocab_size = std::stoull(man.get("backbone.vocab_size"));
        cfg.backbone.hidden_dim = std::stoull(man.get("backbone.hidden_dim"));
        cfg.backbone.layers = std::stoull(man.get("backbone.layers"));
        cfg.backbone.heads = std::stoull(man.get("backbone.heads"));
        cfg.backbone.max_len = std::stoull(man.get("backbone.max_len"));
        cfg.backbone.ffn_mult = std::stoull(man.get("backbone.ffn_mult"));
        cfg.backbone.rope_base = std::stod(man.get("backbone.rope_base"));
        require(man.get("segmenter_rules") == text::kSegmenterRuleVersion, "checkpoint was built with segmenter rules ",
                man.get("segmenter_rules"), " but this build uses ", text::kSegmenterRuleVersion);
        const std::string vocab = man.get("vocab_version");
        RewardModel m(cfg, 0, vocab == "-" ? std::string() : vocab);
        nn::load_checkpoint(dir, m.params);
        return m;
    }

private:
    std::size_t r_w_ = 0, r_b_ = 0, w_q_ = 0, w_k_ = 0;
};

}  // namespace srm::reward
