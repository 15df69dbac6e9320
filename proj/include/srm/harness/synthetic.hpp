// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <string>
#include <string_view>
#include <vector>

#include "srm/core/error.hpp"
#include "srm/core/random.hpp"
#include "srm/text/segmenter.hpp"

namespace srm::harness {

/// Per-sentence quality. CountTarget counts the target symbol;
/// TargetMinusOfftopic also subtracts one per off-topic symbol.
enum class Quality { CountTarget, TargetMinusOfftopic };

inline std::string_view to_string(Quality q) {
    return q == Quality::CountTarget ? "count_target" : "target_minus_offtopic";
}

inline Quality parse_quality(std::string_view s) {
    if (s == "count_target") return Quality::CountTarget;
    if (s == "target_minus_offtopic") return Quality::TargetMinusOfftopic;
    fail("unknown quality function '", s, "' (expected count_target or target_minus_offtopic)");
}

/// Responses are sentences of filler letters sprinkled with a target and an
/// off-topic symbol, each ending in '.', joined by single spaces. Each
/// sentence draws its own target rate, so sentences differ in quality.
struct SyntheticTaskSpec {
    std::string filler = "abcdefgh";
    char target = 'Q';
    char offtopic = 'X';
    std::size_t min_sentences = 1, max_sentences = 4;
    std::size_t min_chars = 3, max_chars = 8;  // letters per sentence, before the '.'
    std::vector<double> target_rates{0.0, 0.15, 0.3, 0.5};
    double offtopic_rate = 0.1;
    Quality quality = Quality::CountTarget;
    double label_noise = 0.0;
    std::size_t min_prompt_chars = 2, max_prompt_chars = 4;

    void validate() const {
        require(!filler.empty(), "synthetic task needs filler symbols");
        for (char c : filler)
            require(c != target && c != offtopic && c != '.' && c != ' ' && c != '?',
                    "filler symbol '", c, "' collides with a reserved symbol");
        require(target != offtopic, "target and off-topic symbols must differ");
        require(min_sentences >= 1 && min_sentences <= max_sentences, "sentence count range [", min_sentences, ", ",
                max_sentences, "] is empty or starts at zero");
        require(min_chars >= 1 && min_chars <= max_chars, "sentence length range [", min_chars, ", ", max_chars,
                "] is empty or starts at zero");
        require(!target_rates.empty(), "at least one target rate is needed");
        for (double r : target_rates) require(r >= 0.0 && r <= 1.0, "target rate ", r, " outside [0, 1]");
        require(offtopic_rate >= 0.0 && offtopic_rate <= 1.0, "off-topic rate outside [0, 1]");
        require(label_noise >= 0.0 && label_noise <= 0.5, "label noise must lie in [0, 0.5]");
        require(min_prompt_chars >= 1 && min_prompt_chars <= max_prompt_chars, "prompt length range is empty");
    }
};

/// Ground-truth scorer. Sentences are found with the same segmenter the
/// models use.
class SyntheticOracle {
public:
    explicit SyntheticOracle(SyntheticTaskSpec spec, std::size_t max_chars = 128)
        : spec_(std::move(spec)), max_chars_(max_chars) {
        spec_.validate();
    }

    const SyntheticTaskSpec& spec() const noexcept { return spec_; }

    double sentence_quality(std::string_view sentence) const {
        double q = 0;
        for (char c : sentence) {
            if (c == spec_.target) q += 1;
            if (c == spec_.offtopic && spec_.quality == Quality::TargetMinusOfftopic) q -= 1;
        }
        return q;
    }

    std::vector<double> sentence_scores(std::string_view response) const {
        const auto seg = text::segment(response, max_chars_);
        std::vector<double> out;
        out.reserve(seg.n_c());
        for (const auto& c : seg.chunks) out.push_back(sentence_quality(c.text));
        return out;
    }

    double total(std::string_view response) const {
        double t = 0;
        for (double s : sentence_scores(response)) t += s;
        return t;
    }

    /// 0 if `a` is preferred, 1 if `b`; ties go to the first.
    int label(std::string_view a, std::string_view b) const { return total(b) > total(a) ? 1 : 0; }

private:
    SyntheticTaskSpec spec_;
    std::size_t max_chars_;
};

inline std::string sample_prompt(const SyntheticTaskSpec& spec, Rng& rng) {
    const std::size_t n = spec.min_prompt_chars + rng.below(spec.max_prompt_chars - spec.min_prompt_chars + 1);
    std::string p;
    for (std::size_t i = 0; i < n; ++i) p += spec.filler[rng.below(spec.filler.size())];
    return p + "?";
}

inline std::string sample_response(const SyntheticTaskSpec& spec, Rng& rng) {
    const std::size_t n = spec.min_sentences + rng.below(spec.max_sentences - spec.min_sentences + 1);
    std::string out;
    for (std::size_t s = 0; s < n; ++s) {
        if (s > 0) out += ' ';
        const double rate = spec.target_rates[rng.below(spec.target_rates.size())];
        const std::size_t len = spec.min_chars + rng.below(spec.max_chars - spec.min_chars + 1);
        for (std::size_t i = 0; i < len; ++i) {
            if (rng.bernoulli(rate))
                out += spec.target;
            else if (rng.bernoulli(spec.offtopic_rate))
                out += spec.offtopic;
            else
                out += spec.filler[rng.below(spec.filler.size())];
        }
        out += '.';
    }
    return out;
}

struct PreferenceRecord {
    std::string prompt, chosen, rejected;

    void validate() const {
        require(!prompt.empty() && !chosen.empty() && !rejected.empty(), "preference fields must be non-empty");
        require(chosen != rejected, "chosen and rejected responses are identical");
    }

    friend bool operator==(const PreferenceRecord&, const PreferenceRecord&) = default;
};

struct SyntheticDataset {
    std::vector<PreferenceRecord> records;
    std::vector<bool> flipped;  // label noise applied
};

/// Draws pairs until their oracle totals differ; label = argmax of total,
/// flipped with probability label_noise. Pair i depends only on (seed, i).
inline SyntheticDataset synth_generate(const SyntheticOracle& oracle, std::size_t count, std::uint64_t seed) {
    require(count >= 1, "synth_generate needs count >= 1");
    const auto& spec = oracle.spec();
    {
        // Zero-variance quality would make every pair a tie.
        Rng probe(mix_seed(seed, 0x5eed));
        const double first = oracle.total(sample_response(spec, probe));
        bool varies = false;
        for (int i = 0; i < 256 && !varies; ++i) varies = oracle.total(sample_response(spec, probe)) != first;
        require(varies, "degenerate synthetic task: response quality has zero variance");
    }
    SyntheticDataset out;
    out.records.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Rng rng(mix_seed(seed, i));
        PreferenceRecord r;
        r.prompt = sample_prompt(spec, rng);
        std::string a, b;
        for (int attempt = 0;; ++attempt) {
            require(attempt < 10000, "synthetic task could not produce a non-tied pair");
            a = sample_response(spec, rng);
            b = sample_response(spec, rng);
            if (oracle.total(a) != oracle.total(b)) break;
        }
        const bool flip = spec.label_noise > 0 && rng.bernoulli(spec.label_noise);
        const bool a_wins = (oracle.label(a, b) == 0) != flip;
        r.chosen = a_wins ? a : b;
        r.rejected = a_wins ? b : a;
        out.records.push_back(std::move(r));
        out.flipped.push_back(flip);
    }
    return out;
}

/// Prompt/response pairs drawn from the task distribution, for warm-up.
inline std::vector<std::pair<std::string, std::string>> synth_demonstrations(const SyntheticTaskSpec& spec,
                                                                             std::size_t count, std::uint64_t seed) {
    std::vector<std::pair<std::string, std::string>> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Rng rng(mix_seed(seed, i, 0xde70));
        auto p = sample_prompt(spec, rng);
        out.emplace_back(std::move(p), sample_response(spec, rng));
    }
    return out;
}

inline std::vector<std::string> synth_prompts(const SyntheticTaskSpec& spec, std::size_t count, std::uint64_t seed) {
    std::vector<std::string> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Rng rng(mix_seed(seed, i, 0x9a0));
        out.push_back(sample_prompt(spec, rng));
    }
    return out;
}

}  // namespace srm::harness
