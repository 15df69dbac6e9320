// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "srm/core/error.hpp"
#include "srm/nn/graph.hpp"

namespace srm::rl {

/// One trajectory's contribution: new log-probs as a T x 1 graph node.
struct PpoTerm {
    nn::Var logp_new;
    const std::vector<double>* logp_old;
    const std::vector<double>* advantages;
};

/// -(1/N) sum_t min(r_t A_t, clip(r_t, 1-eps, 1+eps) A_t) over all N tokens of
/// all terms, with r_t = exp(logp_new - logp_old). On a tie the unclipped
/// branch takes the gradient, so at r = 1 this is the plain policy gradient.
inline nn::Var ppo_clip_loss(nn::Graph& g, const std::vector<PpoTerm>& terms, double eps) {
    require(eps > 0.0 && eps < 1.0, "clip epsilon must lie in (0, 1), got ", eps);
    require(!terms.empty(), "PPO loss of an empty batch");
    std::size_t count = 0;
    nn::Var total{};
    for (std::size_t i = 0; i < terms.size(); ++i) {
        const auto& term = terms[i];
        const std::size_t T = term.logp_old->size();
        require(T > 0 && term.advantages->size() == T && g.value(term.logp_new).rows() == T, "PPO term ", i,
                ": log-prob and advantage lengths disagree");
        nn::Var old = g.constant(nn::Tensor::column(std::vector<real>(term.logp_old->begin(), term.logp_old->end())));
        nn::Var adv = g.constant(nn::Tensor::column(std::vector<real>(term.advantages->begin(), term.advantages->end())));
        nn::Var ratio = g.exp(g.sub(term.logp_new, old));
        nn::Var surr = g.minimum(g.mul(ratio, adv), g.mul(g.clip(ratio, 1.0 - eps, 1.0 + eps), adv));
        nn::Var s = g.sum(surr);
        total = i == 0 ? s : g.add(total, s);
        count += T;
    }
    return g.scale(total, -1.0 / static_cast<double>(count));
}

/// Same quantity on plain arrays.
inline double ppo_clip_loss(const std::vector<std::vector<double>>& logp_new,
                            const std::vector<std::vector<double>>& logp_old,
                            const std::vector<std::vector<double>>& advantages, double eps) {
    require(eps > 0.0 && eps < 1.0, "clip epsilon must lie in (0, 1), got ", eps);
    require(!logp_new.empty() && logp_new.size() == logp_old.size() && logp_new.size() == advantages.size(),
            "PPO loss: batch sizes disagree");
    double acc = 0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < logp_new.size(); ++i) {
        require(logp_new[i].size() == logp_old[i].size() && logp_new[i].size() == advantages[i].size(),
                "PPO term ", i, ": lengths disagree");
        for (std::size_t t = 0; t < logp_new[i].size(); ++t) {
            const double r = std::exp(logp_new[i][t] - logp_old[i][t]);
            if (!std::isfinite(r)) throw DivergenceError(srm::detail::concat("non-finite PPO ratio at term ", i, " token ", t));
            const double a = advantages[i][t];
            acc += std::min(r * a, std::clamp(r, 1.0 - eps, 1.0 + eps) * a);
            ++count;
        }
    }
    require(count > 0, "PPO loss over zero tokens");
    return -acc / static_cast<double>(count);
}

}  // namespace srm::rl
