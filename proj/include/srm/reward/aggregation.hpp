// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "srm/core/error.hpp"

namespace srm::reward {

/// How sentence-level quantities become one response reward.
///   Ours      sum_i w_i * rhat_i
///   VW        sum_i w_i * subseq_i
///   VA        mean_i subseq_i
///   DA        mean_i rhat_i
///   Response  subseq_n
enum class Variant { Ours, VW, VA, DA, Response };

inline std::string_view to_string(Variant v) {
    switch (v) {
        case Variant::Ours: return "ours";
        case Variant::VW: return "vw";
        case Variant::VA: return "va";
        case Variant::DA: return "da";
        case Variant::Response: return "response";
    }
    return "?";
}

inline Variant parse_variant(std::string_view s) {
    for (Variant v : {Variant::Ours, Variant::VW, Variant::VA, Variant::DA, Variant::Response})
        if (to_string(v) == s) return v;
    fail("unknown aggregation variant '", s, "' (expected ours, vw, va, da or response)");
}

struct SentenceRewardOutput {
    std::vector<double> subseq;   // n_c + 1 entries, [0] is the prompt-only reward
    std::vector<double> diff;     // n_c entries
    std::vector<double> weights;  // n_c entries
    double aggregate = 0.0;
};

inline std::vector<double> differential_rewards(const std::vector<double>& subseq) {
    require(subseq.size() >= 2, "differential rewards need the prompt reward and at least one sentence");
    std::vector<double> out(subseq.size() - 1);
    for (std::size_t i = 1; i < subseq.size(); ++i) out[i - 1] = subseq[i] - subseq[i - 1];
    return out;
}

inline std::vector<double> softmax(const std::vector<double>& logits) {
    require(!logits.empty(), "softmax of an empty list");
    const double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> out(logits.size());
    double z = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) z += out[i] = std::exp(logits[i] - mx);
    for (double& v : out) v /= z;
    return out;
}

inline double aggregate(const std::vector<double>& diff, const std::vector<double>& weights,
                        const std::vector<double>& subseq, Variant variant) {
    const std::size_t n = diff.size();
    require(n >= 1 && weights.size() == n && subseq.size() == n + 1, "aggregate: expected ", n, " weights and ",
            n + 1, " subsequence rewards, got ", weights.size(), " and ", subseq.size());
    // Weighted sums run from the last sentence back, the same order as the
    // suffix sums in the advantage, so the two agree bit for bit.
    double acc = 0;
    switch (variant) {
        case Variant::Ours:
            for (std::size_t i = n; i-- > 0;) acc += weights[i] * diff[i];
            return acc;
        case Variant::VW:
            for (std::size_t i = n; i-- > 0;) acc += weights[i] * subseq[i + 1];
            return acc;
        case Variant::VA:
            for (std::size_t i = 1; i <= n; ++i) acc += subseq[i];
            return acc / static_cast<double>(n);
        case Variant::DA:
            for (double d : diff) acc += d;
            return acc / static_cast<double>(n);
        case Variant::Response: return subseq[n];
    }
    fail("unknown aggregation variant");
}

/// Fraction of pairs where chosen outscores rejected; ties count one half.
inline double pairwise_accuracy(const std::vector<double>& chosen, const std::vector<double>& rejected) {
    require(!chosen.empty(), "pairwise accuracy of an empty dataset");
    require(chosen.size() == rejected.size(), "pairwise accuracy: ", chosen.size(), " chosen vs ", rejected.size(),
            " rejected scores");
    double hits = 0;
    for (std::size_t i = 0; i < chosen.size(); ++i) hits += chosen[i] > rejected[i] ? 1.0 : chosen[i] == rejected[i] ? 0.5 : 0.0;
    return hits / static_cast<double>(chosen.size());
}

}  // namespace srm::reward
