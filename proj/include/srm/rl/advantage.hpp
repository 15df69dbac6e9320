// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "srm/core/error.hpp"
#include "srm/model/config.hpp"

namespace srm::rl {

using model::TokenId;

/// One sampled trajectory with everything the update needs.
struct Rollout {
    std::vector<TokenId> prompt;
    std::vector<TokenId> actions;       // includes the EOS token when one was sampled
    std::vector<double> logp_old;       // sampling policy
    std::vector<double> logp_ref;       // frozen reference policy
    std::vector<std::uint8_t> mask;     // tokens that carry a reward
    std::vector<double> token_rewards;  // non-zero only where mask is set
    double response_reward = 0.0;       // scalar reward for the whole response
    bool eos = false;

    std::size_t size() const noexcept { return actions.size(); }
};

struct AdvantageEstimate {
    std::vector<double> values;
    bool normalized = false;
    double mean = 0.0;
    double std = 1.0;
};

/// log pi_old(a_t|s_t) - log pi_ref(a_t|s_t) per token.
inline std::vector<double> kl_log_ratio(const std::vector<double>& logp_old, const std::vector<double>& logp_ref) {
    require(logp_old.size() == logp_ref.size(), "kl_log_ratio: ", logp_old.size(), " old log-probs vs ",
            logp_ref.size(), " reference log-probs");
    std::vector<double> out(logp_old.size());
    for (std::size_t t = 0; t < out.size(); ++t) out[t] = logp_old[t] - logp_ref[t];
    return out;
}

inline std::vector<double> kl_log_ratio(const Rollout& r) {
    require(r.logp_old.size() == r.size(), "rollout has ", r.logp_old.size(), " old log-probs for ", r.size(),
            " actions");
    return kl_log_ratio(r.logp_old, r.logp_ref);
}

/// A_t = R - beta * sum_{i>=t} kl_i. Only the last token is rewarded.
inline std::vector<double> response_level_advantage(const std::vector<double>& kl, double R, double beta) {
    require(beta >= 0.0, "beta must be >= 0, got ", beta);
    require(!kl.empty(), "advantage of an empty trajectory");
    std::vector<double> out(kl.size());
    double tail = 0.0;
    for (std::size_t t = kl.size(); t-- > 0;) {
        tail += kl[t];
        out[t] = R - beta * tail;
    }
    return out;
}

/// A_t = sum_{i>=t} rewards_i - beta * sum_{i>=t} kl_i, where rewards are
/// non-zero only on boundary tokens.
inline std::vector<double> sentence_level_advantage(const std::vector<double>& kl,
                                                    const std::vector<std::uint8_t>& mask,
                                                    const std::vector<double>& rewards, double beta) {
    require(beta >= 0.0, "beta must be >= 0, got ", beta);
    require(!kl.empty(), "advantage of an empty trajectory");
    require(mask.size() == kl.size() && rewards.size() == kl.size(), "sentence advantage: ", kl.size(),
            " tokens but mask ", mask.size(), " and rewards ", rewards.size());
    bool any = false;
    for (std::size_t t = 0; t < mask.size(); ++t) {
        any |= mask[t] != 0;
        require(mask[t] != 0 || rewards[t] == 0.0, "reward at token ", t, " which is not a boundary");
    }
    require(any, "boundary mask has no set bits");
    std::vector<double> out(kl.size());
    double r_tail = 0.0, kl_tail = 0.0;
    for (std::size_t t = kl.size(); t-- > 0;) {
        r_tail += rewards[t];
        kl_tail += kl[t];
        out[t] = r_tail - beta * kl_tail;
    }
    return out;
}

inline AdvantageEstimate response_level_advantage(const Rollout& r, double R, double beta) {
    return {response_level_advantage(kl_log_ratio(r), R, beta)};
}

inline AdvantageEstimate sentence_level_advantage(const Rollout& r, double beta) {
    return {sentence_level_advantage(kl_log_ratio(r), r.mask, r.token_rewards, beta)};
}

/// Whitens all tokens of the batch jointly: (A - mean) / (std + 1e-8).
inline void normalize_advantages(std::vector<AdvantageEstimate>& batch, bool enabled = true) {
    if (!enabled) return;
    double n = 0, sum = 0;
    for (const auto& a : batch)
        for (double v : a.values) sum += v, n += 1;
    require(n >= 2, "advantage normalisation needs at least two tokens in the batch");
    const double mean = sum / n;
    double var = 0;
    for (const auto& a : batch)
        for (double v : a.values) var += (v - mean) * (v - mean);
    const double std = std::sqrt(var / n);
    for (auto& a : batch) {
        for (double& v : a.values) v = (v - mean) / (std + 1e-8);
        a.normalized = true;
        a.mean = mean;
        a.std = std;
    }
}

}  // namespace srm::rl
