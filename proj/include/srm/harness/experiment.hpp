// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "srm/harness/best_of_n.hpp"
#include "srm/harness/synthetic.hpp"
#include "srm/harness/training.hpp"
#include "srm/rl/trainer.hpp"

namespace srm::harness {

/// One sentence of one sampled response, for visualisation.
struct SentenceDump {
    std::size_t response = 0;
    std::size_t sentence = 0;
    std::size_t start = 0, end = 0;  // byte offsets into the response
    std::string text;
    double subseq = 0.0;  // reward of the prefix ending with this sentence
    double diff = 0.0;
    double weight = 0.0;
    double oracle = 0.0;
};

struct RlRun {
    rl::Mode mode = rl::Mode::Sentence;
    std::uint64_t seed = 0;
    std::vector<rl::StepMetrics> steps;
    std::vector<SentenceDump> sentences;
};

struct RlRunConfig {
    rl::RlConfig rl;
    std::size_t steps = 8;
    std::size_t dump_responses = 4;  // responses sampled after training for the sentence dump
};

/// Step s trains on prompts [s*B, (s+1)*B) of the list, wrapping around.
/// Runs with equal seeds see the same prompts in the same order.
inline RlRun run_rl_experiment(const model::LanguageModel& init, const reward::RewardModel& rm,
                               const text::Tokenizer& tok, const std::vector<std::string>& prompts,
                               const SyntheticOracle& oracle, const RlRunConfig& cfg, rl::Mode mode) {
    require(!prompts.empty(), "RL experiment needs prompts");
    require(cfg.steps >= 1, "RL experiment needs at least one step");
    std::vector<std::vector<TokenId>> ids;
    ids.reserve(prompts.size());
    for (const auto& p : prompts) ids.push_back(tok.encode(p).ids);

    RlRun run;
    run.mode = mode;
    run.seed = cfg.rl.seed;
    model::LanguageModel actor = init;
    rl::RlTrainer trainer(actor, init, rm, tok, cfg.rl, mode);
    const std::size_t B = cfg.rl.rollout_batch;
    for (std::size_t s = 0; s < cfg.steps; ++s) {
        std::vector<std::vector<TokenId>> batch;
        batch.reserve(B);
        for (std::size_t i = 0; i < B; ++i) batch.push_back(ids[(s * B + i) % ids.size()]);
        run.steps.push_back(trainer.step(batch));
    }

    if (rm.config.objective == reward::Objective::Sentence) {
        for (std::size_t r = 0; r < std::min(cfg.dump_responses, ids.size()); ++r) {
            auto gen = cfg.rl.generation;
            gen.seed = mix_seed(cfg.rl.seed, 0xd0, r);
            const auto s = model::sample_response(actor, ids[r], gen);
            std::span<const TokenId> resp(s.tokens.data(), s.tokens.size() - (s.eos ? 1 : 0));
            const auto scored = score_response(rm, tok, ids[r], resp, cfg.rl.max_chars);
            const auto& chunks = scored.segmentation.chunks;
            for (std::size_t i = 0; i < chunks.size(); ++i)
                run.sentences.push_back({r, i, chunks[i].start, chunks[i].end, chunks[i].text,
                                         scored.sentences.subseq[i + 1], scored.sentences.diff[i],
                                         scored.sentences.weights[i], oracle.sentence_quality(chunks[i].text)});
        }
    }
    return run;
}

/// Number of optimizer steps taken before the mean reward first reaches
/// `threshold`; step s is measured after s updates.
inline std::optional<std::size_t> steps_to_threshold(const std::vector<rl::StepMetrics>& curve, double threshold) {
    for (const auto& m : curve)
        if (m.mean_reward >= threshold) return m.step;
    return std::nullopt;
}

}  // namespace srm::harness
