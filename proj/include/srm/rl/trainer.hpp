// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <string>
#include <string_view>
#include <vector>

#include "srm/core/random.hpp"
#include "srm/model/language_model.hpp"
#include "srm/nn/adam.hpp"
#include "srm/reward/inputs.hpp"
#include "srm/reward/model.hpp"
#include "srm/rl/advantage.hpp"
#include "srm/rl/ppo.hpp"
#include "srm/text/tokenizer.hpp"

namespace srm::rl {

/// Which reward reaches which tokens.
///   Sentence  sentence model, w_i * rhat_i on boundary tokens, sentence advantage
///   Sent2Res  sentence model, its aggregate on the last token, response advantage
///   Res2Sent  response-variant model, differences of its outputs on boundary tokens
///   Response  response-variant model, its final output on the last token
///   Token     token-objective model, w_t * r_t on every token
enum class Mode { Sentence, Sent2Res, Res2Sent, Response, Token };

inline std::string_view to_string(Mode m) {
    switch (m) {
        case Mode::Sentence: return "sentence";
        case Mode::Sent2Res: return "sent2res";
        case Mode::Res2Sent: return "res2sent";
        case Mode::Response: return "response";
        case Mode::Token: return "token";
    }
    return "?";
}

inline Mode parse_mode(std::string_view s) {
    for (Mode m : {Mode::Sentence, Mode::Sent2Res, Mode::Res2Sent, Mode::Response, Mode::Token})
        if (to_string(m) == s) return m;
    fail("unknown RL mode '", s, "' (expected sentence, sent2res, res2sent, response or token)");
}

/// Differential: w_i * rhat_i on boundary i. RawSubsequence: w_i * subseq_i.
enum class BoundaryReward { Differential, RawSubsequence };

struct RlConfig {
    double beta = 0.01;
    double clip_eps = 0.2;
    std::size_t rollout_batch = 64;
    std::size_t train_batch = 16;
    std::size_t epochs_per_batch = 1;
    bool normalize_advantages = true;
    BoundaryReward boundary_reward = BoundaryReward::Differential;
    nn::AdamConfig adam{};
    model::GenerationConfig generation{1.0, 0, 1.0, 48, 0};
    std::size_t max_chars = 128;
    std::uint64_t seed = 0;

    void validate() const {
        require(beta >= 0.0, "beta must be >= 0");
        require(clip_eps > 0.0 && clip_eps < 1.0, "clip epsilon must lie in (0, 1)");
        require(rollout_batch >= 1 && train_batch >= 1, "batch sizes must be positive");
        require(epochs_per_batch >= 1, "epochs_per_batch must be >= 1");
        generation.validate();
    }
};

struct StepMetrics {
    std::size_t step = 0;
    double mean_reward = 0.0;  // mean scalar response reward of the rollouts
    double mean_kl = 0.0;      // mean per-token log ratio old vs reference
    double loss = 0.0;         // mean PPO loss over the minibatches
    double mean_length = 0.0;  // mean number of actions, EOS included
    double eos_rate = 0.0;
    double grad_norm = 0.0;    // mean pre-clip gradient norm
};

/// Checks that the reward model fits the mode and shares the policy vocabulary.
inline void check_compatible(Mode mode, const reward::RewardModel& rm, const model::LanguageModel& policy,
                             const text::Tokenizer& tok) {
    using reward::Objective;
    using reward::Variant;
    const auto& c = rm.config;
    switch (mode) {
        case Mode::Sentence:
        case Mode::Sent2Res:
            require(c.objective == Objective::Sentence && c.variant != Variant::Response, "mode ", to_string(mode),
                    " needs a sentence reward model with attention weights, got objective ", to_string(c.objective),
                    " variant ", to_string(c.variant));
            break;
        case Mode::Res2Sent:
        case Mode::Response:
            require(c.objective == Objective::Sentence && c.variant == Variant::Response, "mode ", to_string(mode),
                    " needs a response-variant reward model, got variant ", to_string(c.variant));
            break;
        case Mode::Token:
            require(c.objective == Objective::Token, "mode token needs a token-objective reward model");
            break;
    }
    require(rm.vocab_version == tok.version(), "reward model vocabulary ", rm.vocab_version,
            " does not match the policy tokenizer ", tok.version());
    require(policy.config.vocab_size == tok.vocab_size(), "policy vocabulary size ", policy.config.vocab_size,
            " does not match the tokenizer (", tok.vocab_size(), ")");
    const auto sp = tok.specials();
    require(policy.specials.pad == sp.pad && policy.specials.eos == sp.eos && policy.specials.end == sp.end,
            "policy special tokens disagree with the tokenizer");
    // END mode adds one token per sentence and a sentence holds at least one
    // text token, so twice the policy length always fits.
    const bool marked = c.objective == Objective::Sentence && c.mode == reward::BoundaryMode::End;
    const std::size_t need = marked ? 2 * policy.config.max_len : policy.config.max_len;
    require(c.backbone.max_len >= need, "reward model max_len ", c.backbone.max_len, " is too short for policy max_len ",
            policy.config.max_len, " (needs ", need, ")");
}

/// Fills mask, token_rewards and response_reward of a sampled rollout.
inline void assign_rewards(Rollout& r, Mode mode, const reward::RewardModel& rm, const text::Tokenizer& tok,
                           const RlConfig& cfg) {
    const std::size_t T = r.size();
    const std::size_t text_len = r.eos ? T - 1 : T;
    require(text_len >= 1, "rollout has no text tokens");
    std::span<const TokenId> text_ids(r.actions.data(), text_len);
    r.mask.assign(T, 0);
    r.token_rewards.assign(T, 0.0);

    if (mode == Mode::Token) {
        const auto out = rm.token_score(reward::token_mode_input(r.prompt, text_ids));
        for (std::size_t t = 0; t < text_len; ++t) {
            r.mask[t] = 1;
            r.token_rewards[t] = out.weights[t] * out.rewards[t];
        }
        r.response_reward = out.score;
        return;
    }

    // The reward model sees the response the way it was trained (END-marked
    // or not); rewards land on the policy's own boundary tokens.
    const auto spans = tok.spans(text_ids);
    const std::string text = tok.decode(text_ids);
    const auto seg = text::segment(text, cfg.max_chars);
    const auto bits = text::boundary_mask(spans, seg).positions();
    const auto in = rm.config.mode == reward::BoundaryMode::End ? reward::end_mode_input(tok, r.prompt, seg)
                                                                 : reward::masked_mode_input(r.prompt, spans, seg);
    const auto out = rm.score(in);
    for (std::size_t i = 0; i < bits.size(); ++i) {
        const std::size_t t = bits[i];
        r.mask[t] = 1;
        switch (mode) {
            case Mode::Sentence:
                r.token_rewards[t] = out.weights[i] * (cfg.boundary_reward == BoundaryReward::Differential
                                                           ? out.diff[i]
                                                           : out.subseq[i + 1]);
                break;
            case Mode::Res2Sent: r.token_rewards[t] = out.diff[i]; break;
            default: break;
        }
    }
    r.response_reward = mode == Mode::Sentence || mode == Mode::Sent2Res ? out.aggregate : out.subseq.back();
}

inline AdvantageEstimate advantage_for(const Rollout& r, Mode mode, double beta) {
    switch (mode) {
        case Mode::Sentence:
        case Mode::Res2Sent:
        case Mode::Token: return sentence_level_advantage(r, beta);
        case Mode::Sent2Res:
        case Mode::Response: return response_level_advantage(r, r.response_reward, beta);
    }
    fail("unknown mode");
}

class RlTrainer {
public:
    RlTrainer(model::LanguageModel& actor, const model::LanguageModel& ref, const reward::RewardModel& rm,
              const text::Tokenizer& tok, RlConfig cfg, Mode mode)
        : actor_(&actor), ref_(&ref), rm_(&rm), tok_(&tok), cfg_(std::move(cfg)), mode_(mode), opt_(actor.params, cfg_.adam) {
        cfg_.validate();
        check_compatible(mode_, rm, actor, tok);
        require(ref.config == actor.config, "reference and actor configurations differ");
    }

    Mode mode() const noexcept { return mode_; }
    std::size_t steps_done() const noexcept { return step_; }

    /// Samples one rollout per prompt from the current actor and scores it.
    /// Prompt i of step s uses seed mix(seed, s, i).
    std::vector<Rollout> collect(const std::vector<std::vector<TokenId>>& prompts) const {
        std::vector<Rollout> out;
        out.reserve(prompts.size());
        for (std::size_t i = 0; i < prompts.size(); ++i) {
            model::GenerationConfig gen = cfg_.generation;
            gen.seed = mix_seed(cfg_.seed, step_, i);
            auto sample = model::sample_response(*actor_, prompts[i], gen);
            Rollout r;
            r.prompt = prompts[i];
            r.actions = std::move(sample.tokens);
            r.logp_old = std::move(sample.log_probs);
            r.eos = sample.eos;
            r.logp_ref = model::action_log_probs(*ref_, r.prompt, r.actions);
            assign_rewards(r, mode_, *rm_, *tok_, cfg_);
            out.push_back(std::move(r));
        }
        return out;
    }

    /// One rollout batch: sample, score, compute advantages, then optimise the
    /// clipped objective over train_batch-sized minibatches.
    StepMetrics step(const std::vector<std::vector<TokenId>>& prompts) {
        require(!prompts.empty(), "RL step with no prompts");
        auto rollouts = collect(prompts);
        std::vector<AdvantageEstimate> adv;
        adv.reserve(rollouts.size());
        for (const auto& r : rollouts) adv.push_back(advantage_for(r, mode_, cfg_.beta));
        normalize_advantages(adv, cfg_.normalize_advantages);

        StepMetrics m;
        m.step = step_;
        double kl_sum = 0, kl_n = 0;
        for (const auto& r : rollouts) {
            m.mean_reward += r.response_reward;
            m.mean_length += static_cast<double>(r.size());
            m.eos_rate += r.eos ? 1.0 : 0.0;
            for (double k : kl_log_ratio(r)) kl_sum += k, kl_n += 1;
        }
        const double nr = static_cast<double>(rollouts.size());
        m.mean_reward /= nr;
        m.mean_length /= nr;
        m.eos_rate /= nr;
        m.mean_kl = kl_sum / kl_n;

        std::size_t updates = 0;
        for (std::size_t epoch = 0; epoch < cfg_.epochs_per_batch; ++epoch) {
            for (std::size_t b = 0; b < rollouts.size(); b += cfg_.train_batch) {
                const std::size_t e = std::min(rollouts.size(), b + cfg_.train_batch);
                nn::Graph g(actor_->params);
                std::vector<PpoTerm> terms;
                for (std::size_t i = b; i < e; ++i)
                    terms.push_back({actor_->action_log_probs(g, rollouts[i].prompt, rollouts[i].actions),
                                     &rollouts[i].logp_old, &adv[i].values});
                nn::Var loss = ppo_clip_loss(g, terms, cfg_.clip_eps);
                m.loss += g.value(loss).item();
                m.grad_norm += nn::adam_step(actor_->params, g.backward(loss), opt_);
                ++updates;
            }
        }
        m.loss /= static_cast<double>(updates);
        m.grad_norm /= static_cast<double>(updates);
        ++step_;
        return m;
    }

    /// One pass over `prompts` in rollout_batch-sized slices.
    std::vector<StepMetrics> train_epoch(const std::vector<std::vector<TokenId>>& prompts) {
        std::vector<StepMetrics> out;
        for (std::size_t b = 0; b < prompts.size(); b += cfg_.rollout_batch) {
            const std::size_t e = std::min(prompts.size(), b + cfg_.rollout_batch);
            out.push_back(step({prompts.begin() + static_cast<std::ptrdiff_t>(b),
                                prompts.begin() + static_cast<std::ptrdiff_t>(e)}));
        }
        return out;
    }

private:
    model::LanguageModel* actor_;
    const model::LanguageModel* ref_;
    const reward::RewardModel* rm_;
    const text::Tokenizer* tok_;
    RlConfig cfg_;
    Mode mode_;
    nn::AdamState opt_;
    std::size_t step_ = 0;
};

}  // namespace srm::rl
