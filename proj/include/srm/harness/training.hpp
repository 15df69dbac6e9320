// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include "srm/core/random.hpp"
#include "srm/harness/synthetic.hpp"
#include "srm/model/language_model.hpp"
#include "srm/nn/adam.hpp"
#include "srm/nn/checkpoint.hpp"
#include "srm/reward/inputs.hpp"
#include "srm/reward/model.hpp"
#include "srm/text/tokenizer.hpp"

namespace srm::harness {

using model::TokenId;

struct TrainLoopConfig {
    std::size_t epochs = 1;
    std::size_t batch_size = 8;
    nn::AdamConfig adam{};
};

// ---------------------------------------------------------------------------
// Reward model

struct EncodedPair {
    reward::RewardInput chosen, rejected;
};

inline std::vector<EncodedPair> encode_preferences(const reward::RewardConfig& cfg, const text::Tokenizer& tok,
                                                   const std::vector<PreferenceRecord>& records,
                                                   std::size_t max_chars) {
    std::vector<EncodedPair> out;
    out.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        try {
            out.push_back({reward::make_input(cfg, tok, r.prompt, r.chosen, max_chars),
                           reward::make_input(cfg, tok, r.prompt, r.rejected, max_chars)});
        } catch (const ValidationError& e) {
            fail("preference record ", i, ": ", e.what());
        }
        for (const auto* in : {&out.back().chosen, &out.back().rejected})
            require(in->tokens.size() <= cfg.backbone.max_len, "preference record ", i, " needs ", in->tokens.size(),
                    " tokens but the reward model max_len is ", cfg.backbone.max_len);
    }
    return out;
}

/// Fraction of pairs the model ranks correctly, ties counted as one half.
inline double pairwise_accuracy(const reward::RewardModel& rm, const std::vector<EncodedPair>& pairs) {
    std::vector<double> c, r;
    c.reserve(pairs.size());
    r.reserve(pairs.size());
    for (const auto& p : pairs) {
        c.push_back(rm.response_score(p.chosen));
        r.push_back(rm.response_score(p.rejected));
    }
    return reward::pairwise_accuracy(c, r);
}

struct RmTrainResult {
    reward::RewardModel model;
    std::vector<double> loss_curve;  // one entry per optimizer step
    double initial_heldout_accuracy = 0.0;
    double heldout_accuracy = 0.0;
};

/// Bradley-Terry training over shuffled minibatches; the order of epoch e
/// comes from mix(seed, e).
inline RmTrainResult train_reward_model(const reward::RewardConfig& cfg, const TrainLoopConfig& loop,
                                        const text::Tokenizer& tok, const std::vector<PreferenceRecord>& train,
                                        const std::vector<PreferenceRecord>& heldout, std::size_t max_chars,
                                        std::uint64_t seed) {
    require(!train.empty(), "no training pairs");
    require(loop.epochs >= 1 && loop.batch_size >= 1, "epochs and batch size must be positive");
    RmTrainResult res{reward::RewardModel(cfg, mix_seed(seed, 0x4d), tok.version()), {}, 0.0, 0.0};
    const auto train_in = encode_preferences(cfg, tok, train, max_chars);
    const auto held_in = encode_preferences(cfg, tok, heldout, max_chars);
    if (!held_in.empty()) res.initial_heldout_accuracy = pairwise_accuracy(res.model, held_in);
    nn::AdamState opt(res.model.params, loop.adam);
    std::vector<std::size_t> order(train_in.size());
    for (std::size_t epoch = 0; epoch < loop.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(mix_seed(seed, epoch, 0x5f));
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        for (std::size_t b = 0; b < order.size(); b += loop.batch_size) {
            std::vector<std::pair<const reward::RewardInput*, const reward::RewardInput*>> batch;
            for (std::size_t k = b; k < std::min(order.size(), b + loop.batch_size); ++k)
                batch.emplace_back(&train_in[order[k]].chosen, &train_in[order[k]].rejected);
            nn::Graph g(res.model.params);
            nn::Var loss = res.model.batch_loss(g, batch);
            const double value = g.value(loss).item();
            if (!std::isfinite(value))
                throw DivergenceError(srm::detail::concat("reward model loss is ", value, " at epoch ", epoch,
                                                          " step ", res.loss_curve.size()));
            res.loss_curve.push_back(value);
            nn::adam_step(res.model.params, g.backward(loss), opt);
        }
    }
    if (!held_in.empty()) res.heldout_accuracy = pairwise_accuracy(res.model, held_in);
    return res;
}

// ---------------------------------------------------------------------------
// Policy warm-up and persistence

/// Supervised warm-up on prompt/response text; each response is followed by
/// EOS. Returns the per-step mean token NLL.
inline std::vector<double> sft_train(model::LanguageModel& policy, const text::Tokenizer& tok,
                                     const std::vector<std::pair<std::string, std::string>>& demos,
                                     const TrainLoopConfig& loop, std::uint64_t seed) {
    require(!demos.empty(), "no demonstrations for warm-up");
    std::vector<std::pair<std::vector<TokenId>, std::vector<TokenId>>> data;
    for (std::size_t i = 0; i < demos.size(); ++i) {
        auto p = tok.encode(demos[i].first).ids;
        auto a = tok.encode(demos[i].second).ids;
        a.push_back(tok.specials().eos);
        require(!p.empty() && p.size() + a.size() <= policy.config.max_len + 1, "demonstration ", i,
                " does not fit the policy max_len ", policy.config.max_len);
        data.emplace_back(std::move(p), std::move(a));
    }
    nn::AdamState opt(policy.params, loop.adam);
    std::vector<double> curve;
    std::vector<std::size_t> order(data.size());
    for (std::size_t epoch = 0; epoch < loop.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(mix_seed(seed, epoch, 0x5f7));
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        for (std::size_t b = 0; b < order.size(); b += loop.batch_size) {
            nn::Graph g(policy.params);
            nn::Var total{};
            std::size_t tokens = 0;
            for (std::size_t k = b; k < std::min(order.size(), b + loop.batch_size); ++k) {
                const auto& [p, a] = data[order[k]];
                nn::Var s = g.sum(policy.action_log_probs(g, p, a));
                total = k == b ? s : g.add(total, s);
                tokens += a.size();
            }
            nn::Var loss = g.scale(total, -1.0 / static_cast<double>(tokens));
            curve.push_back(g.value(loss).item());
            nn::adam_step(policy.params, g.backward(loss), opt);
        }
    }
    return curve;
}

inline void save_policy(const std::filesystem::path& dir, const model::LanguageModel& m, const std::string& vocab) {
    const auto& b = m.config;
    char base[40];
    std::snprintf(base, sizeof base, "%.17g", b.rope_base);
    nn::save_checkpoint(dir, m.params,
                        {{"kind", "policy"},
                         {"vocab_version", vocab},
                         {"backbone.vocab_size", std::to_string(b.vocab_size)},
                         {"backbone.hidden_dim", std::to_string(b.hidden_dim)},
                         {"backbone.layers", std::to_string(b.layers)},
                         {"backbone.heads", std::to_string(b.heads)},
                         {"backbone.max_len", std::to_string(b.max_len)},
                         {"backbone.ffn_mult", std::to_string(b.ffn_mult)},
                         {"backbone.rope_base", base},
                         {"special.pad", std::to_string(m.specials.pad)},
                         {"special.eos", std::to_string(m.specials.eos)},
                         {"special.end", std::to_string(m.specials.end)}});
}

inline model::LanguageModel load_policy(const std::filesystem::path& dir, const std::string& expected_vocab) {
    const auto man = nn::read_manifest(dir);
    require(man.get("kind") == "policy", "checkpoint at ", dir.string(), " is not a policy");
    require(man.get("vocab_version") == expected_vocab, "policy checkpoint vocabulary ", man.get("vocab_version"),
            " does not match tokenizer ", expected_vocab);
    model::BackboneConfig b;
    b.vocab_size = std::stoull(man.get("backbone.vocab_size"));
    b.hidden_dim = std::stoull(man.get("backbone.hidden_dim"));
    b.layers = std::stoull(man.get("backbone.layers"));
    b.heads = std::stoull(man.get("backbone.heads"));
    b.max_len = std::stoull(man.get("backbone.max_len"));
    b.ffn_mult = std::stoull(man.get("backbone.ffn_mult"));
    b.rope_base = std::stod(man.get("backbone.rope_base"));
    model::SpecialTokens sp{static_cast<TokenId>(std::stoul(man.get("special.pad"))),
                            static_cast<TokenId>(std::stoul(man.get("special.eos"))),
                            static_cast<TokenId>(std::stoul(man.get("special.end")))};
    model::LanguageModel m(b, sp, 0);
    nn::load_checkpoint(dir, m.params);
    return m;
}

// ---------------------------------------------------------------------------
// Scoring free text

struct ScoredResponse {
    text::Segmentation segmentation;
    reward::SentenceRewardOutput sentences;  // empty for the token objective
    double reward = 0.0;
};

/// Scores one response the way the RL loop does: sentence models see the
/// response in their training form, token models see raw tokens.
inline ScoredResponse score_response(const reward::RewardModel& rm, const text::Tokenizer& tok,
                                     std::span<const TokenId> prompt_ids, std::span<const TokenId> response_ids,
                                     std::size_t max_chars) {
    ScoredResponse out;
    if (rm.config.objective == reward::Objective::Token) {
        out.reward = rm.token_score(reward::token_mode_input(prompt_ids, response_ids)).score;
        return out;
    }
    const auto spans = tok.spans(response_ids);
    out.segmentation = text::segment(tok.decode(response_ids), max_chars);
    const auto in = rm.config.mode == reward::BoundaryMode::End
                        ? reward::end_mode_input(tok, prompt_ids, out.segmentation)
                        : reward::masked_mode_input(prompt_ids, spans, out.segmentation);
    out.sentences = rm.score(in);
    out.reward = out.sentences.aggregate;
    return out;
}

}  // namespace srm::harness
