// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "srm/reward/model.hpp"
#include "srm/text/alignment.hpp"
#include "srm/text/segmenter.hpp"
#include "srm/text/tokenizer.hpp"

namespace srm::reward {

namespace detail {

inline RewardInput with_prompt(std::vector<TokenId> prompt_ids, std::span<const TokenId> response_ids) {
    require(!prompt_ids.empty(), "reward input needs a non-empty prompt");
    RewardInput in;
    in.prompt_len = prompt_ids.size();
    in.tokens = std::move(prompt_ids);
    in.tokens.insert(in.tokens.end(), response_ids.begin(), response_ids.end());
    in.positions.push_back(in.prompt_len - 1);
    return in;
}

}  // namespace detail

/// Input from `<END>`-marked text: boundaries are the END token indices.
inline RewardInput end_mode_input(const text::Tokenizer& tok, std::span<const TokenId> prompt_ids,
                                  const text::MarkedText& marked) {
    const auto enc = tok.encode_marked(marked);
    RewardInput in = detail::with_prompt({prompt_ids.begin(), prompt_ids.end()}, enc.ids);
    const TokenId end = tok.specials().end;
    for (std::size_t i = 0; i < enc.size(); ++i)
        if (enc.ids[i] == end) in.positions.push_back(in.prompt_len + i);
    require(in.positions.size() >= 2, "marked response has no <END> token");
    return in;
}

/// END-mode input built chunk by chunk, the same ids encode_marked gives for
/// the marked string but without a round trip through the literal.
inline RewardInput end_mode_input(const text::Tokenizer& tok, std::span<const TokenId> prompt_ids,
                                  const text::Segmentation& seg) {
    RewardInput in = detail::with_prompt({prompt_ids.begin(), prompt_ids.end()}, {});
    const TokenId end = tok.specials().end;
    for (const auto& c : seg.chunks) {
        const auto part = tok.encode(c.text);
        in.tokens.insert(in.tokens.end(), part.ids.begin(), part.ids.end());
        in.tokens.push_back(end);
        in.positions.push_back(in.tokens.size() - 1);
    }
    require(in.positions.size() >= 2, "segmentation has no chunks");
    return in;
}

/// Input from unmarked response tokens: boundaries are the mask bits.
inline RewardInput masked_mode_input(std::span<const TokenId> prompt_ids, const text::TokenizedText& response,
                                     const text::Segmentation& seg) {
    const auto mask = text::boundary_mask(response, seg);
    RewardInput in = detail::with_prompt({prompt_ids.begin(), prompt_ids.end()}, response.ids);
    for (std::size_t p : mask.positions()) in.positions.push_back(in.prompt_len + p);
    return in;
}

/// Prompt plus response tokens; the token objective scores every response token.
inline RewardInput token_mode_input(std::span<const TokenId> prompt_ids, std::span<const TokenId> response_ids) {
    require(!response_ids.empty(), "token objective needs at least one response token");
    return detail::with_prompt({prompt_ids.begin(), prompt_ids.end()}, response_ids);
}

/// Builds the input a model of configuration `cfg` expects for a raw
/// prompt/response string pair.
inline RewardInput make_input(const RewardConfig& cfg, const text::Tokenizer& tok, std::string_view prompt,
                              std::string_view response, std::size_t max_chars) {
    const auto prompt_ids = tok.encode(prompt).ids;
    if (cfg.objective == Objective::Token) return token_mode_input(prompt_ids, tok.encode(response).ids);
    const auto seg = text::segment(response, max_chars);
    if (cfg.mode == BoundaryMode::End)
        return end_mode_input(tok, prompt_ids, text::insert_boundary_markers(response, seg));
    return masked_mode_input(prompt_ids, tok.encode(response), seg);
}

/// Token indices where the heads are read: the last prompt token, then one per
/// sentence.
inline std::vector<std::size_t> boundary_positions(const RewardInput& in) { return in.positions; }

}  // namespace srm::reward
