// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "srm/core/random.hpp"
#include "srm/harness/synthetic.hpp"
#include "srm/harness/training.hpp"
#include "srm/model/language_model.hpp"
#include "srm/reward/model.hpp"
#include "srm/text/tokenizer.hpp"

namespace srm::harness {

struct BonConfig {
    std::vector<std::size_t> ns{2, 4, 8, 16, 32};
    std::size_t candidates = 32;
    model::GenerationConfig generation = model::GenerationConfig::best_of_n_defaults();
    std::size_t max_chars = 128;
    std::uint64_t seed = 0;

    void validate() const {
        require(!ns.empty(), "best-of-N needs at least one N");
        for (std::size_t i = 0; i < ns.size(); ++i) {
            require(ns[i] >= 1, "N must be >= 1");
            require(i == 0 || ns[i] > ns[i - 1], "N values must be strictly increasing");
        }
        require(ns.back() <= candidates, "N = ", ns.back(), " exceeds the ", candidates, " sampled candidates");
        generation.validate();
    }
};

struct BonPrompt {
    std::string prompt;
    std::vector<std::string> candidates;
    std::vector<double> rewards;  // reward model
    std::vector<double> oracle;   // ground truth
    std::string greedy;
    double greedy_oracle = 0.0;
    std::vector<std::size_t> selected;  // one index per N
};

struct BonRow {
    std::size_t n = 0;
    double mean_reward = 0.0;  // reward model score of the selection
    double mean_oracle = 0.0;
    double win_rate = 0.0;  // against greedy under the oracle, ties count one half
};

struct BonResult {
    std::vector<BonPrompt> prompts;
    std::vector<BonRow> table;
};

/// Index of the best of the first n scores; earlier candidates win ties.
inline std::size_t select_best(const std::vector<double>& scores, std::size_t n) {
    require(n >= 1 && n <= scores.size(), "cannot select among the first ", n, " of ", scores.size(), " candidates");
    std::size_t best = 0;
    for (std::size_t i = 1; i < n; ++i)
        if (scores[i] > scores[best]) best = i;
    return best;
}

namespace detail {

inline std::string response_text(const text::Tokenizer& tok, const model::SampleResult& s) {
    std::span<const TokenId> ids(s.tokens.data(), s.tokens.size() - (s.eos ? 1 : 0));
    return tok.decode(ids);
}

}  // namespace detail

/// Samples `candidates` responses per prompt once; N selects among the first
/// N of them, so the candidate sets are nested. Candidate k of prompt i uses
/// seed mix(seed, i, k).
inline BonResult best_of_n(const std::vector<std::string>& prompts, const model::LanguageModel& policy,
                           const reward::RewardModel& rm, const text::Tokenizer& tok, const SyntheticOracle& oracle,
                           const BonConfig& cfg) {
    cfg.validate();
    require(!prompts.empty(), "best-of-N needs prompts");
    BonResult res;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        BonPrompt bp;
        bp.prompt = prompts[i];
        const auto prompt_ids = tok.encode(prompts[i]).ids;
        for (std::size_t k = 0; k < cfg.candidates; ++k) {
            auto gen = cfg.generation;
            gen.seed = mix_seed(cfg.seed, i, k);
            const auto s = model::sample_response(policy, prompt_ids, gen);
            std::span<const TokenId> ids(s.tokens.data(), s.tokens.size() - (s.eos ? 1 : 0));
            bp.candidates.push_back(tok.decode(ids));
            bp.rewards.push_back(score_response(rm, tok, prompt_ids, ids, cfg.max_chars).reward);
            bp.oracle.push_back(oracle.total(bp.candidates.back()));
        }
        auto greedy = cfg.generation;
        greedy.temperature = 0.0;
        bp.greedy = detail::response_text(tok, model::sample_response(policy, prompt_ids, greedy));
        bp.greedy_oracle = oracle.total(bp.greedy);
        for (std::size_t n : cfg.ns) bp.selected.push_back(select_best(bp.rewards, n));
        res.prompts.push_back(std::move(bp));
    }
    for (std::size_t j = 0; j < cfg.ns.size(); ++j) {
        BonRow row;
        row.n = cfg.ns[j];
        for (const auto& bp : res.prompts) {
            const std::size_t s = bp.selected[j];
            row.mean_reward += bp.rewards[s];
            row.mean_oracle += bp.oracle[s];
            row.win_rate += bp.oracle[s] > bp.greedy_oracle ? 1.0 : bp.oracle[s] == bp.greedy_oracle ? 0.5 : 0.0;
        }
        const double n = static_cast<double>(res.prompts.size());
        row.mean_reward /= n;
        row.mean_oracle /= n;
        row.win_rate /= n;
        res.table.push_back(row);
    }
    return res;
}

}  // namespace srm::harness
