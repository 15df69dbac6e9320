// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "srm/core/error.hpp"
#include "srm/text/segmenter.hpp"
#include "srm/text/tokenizer.hpp"

namespace srm::text {

/// One bit per token; bit i marks the token that receives sentence i's reward.
struct BoundaryMask {
    std::vector<std::uint8_t> bits;

    std::size_t size() const noexcept { return bits.size(); }
    std::size_t count() const noexcept { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1)); }

    std::vector<std::size_t> positions() const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < bits.size(); ++i)
            if (bits[i]) out.push_back(i);
        return out;
    }

    friend bool operator==(const BoundaryMask&, const BoundaryMask&) = default;
};

namespace detail {

// Token designated for a chunk ending at byte e (exclusive): the token whose
// span holds byte e-1, else the first token starting at or after e, else the
// last token.
inline std::size_t designated_token(const TokenizedText& tok, std::size_t e) {
    const auto& off = tok.offsets;
    auto it = std::upper_bound(off.begin(), off.end(), e - 1,
                               [](std::size_t v, const auto& span) { return v < span.second; });
    if (it != off.end() && it->first <= e - 1) return static_cast<std::size_t>(it - off.begin());
    auto after = std::find_if(off.begin(), off.end(), [&](const auto& span) { return span.first >= e; });
    if (after != off.end()) return static_cast<std::size_t>(after - off.begin());
    return off.size() - 1;
}

inline void check_tiling(const TokenizedText& tok) {
    std::size_t prev = 0;
    for (std::size_t i = 0; i < tok.size(); ++i) {
        require(tok.offsets[i].first == prev && tok.offsets[i].second > prev, "token ", i,
                " span does not continue the tiling");
        prev = tok.offsets[i].second;
    }
}

}  // namespace detail

/// Designated boundary token per chunk, before collision handling.
inline std::vector<std::size_t> designated_tokens(const TokenizedText& tok, const Segmentation& seg) {
    require(tok.size() > 0, "boundary_mask: no tokens");
    require(tok.offsets.size() == tok.ids.size(), "boundary_mask: offsets and ids differ in length");
    detail::check_tiling(tok);
    require(tok.text_length() == seg.text_length(), "boundary_mask: tokens cover ", tok.text_length(),
            " bytes but the segmentation covers ", seg.text_length());
    std::vector<std::size_t> out;
    out.reserve(seg.n_c());
    for (const Chunk& c : seg.chunks) out.push_back(detail::designated_token(tok, c.end));
    return out;
}

/// Builds the mask so popcount == n_c. When two chunks designate the same
/// token (a merge spans a boundary), the later one moves to the next token;
/// if that runs off the end, bits are pushed back from the last token.
inline BoundaryMask boundary_mask(const TokenizedText& tok, const Segmentation& seg) {
    auto pos = designated_tokens(tok, seg);
    const std::size_t T = tok.size(), n = pos.size();
    require(n <= T, "boundary_mask: ", n, " chunks cannot map onto ", T, " tokens");
    for (std::size_t i = 1; i < n; ++i) pos[i] = std::max(pos[i], pos[i - 1] + 1);
    if (pos.back() >= T) {
        pos.back() = T - 1;
        for (std::size_t i = n - 1; i-- > 0;) pos[i] = std::min(pos[i], pos[i + 1] - 1);
    }
    BoundaryMask m;
    m.bits.assign(T, 0);
    for (std::size_t p : pos) m.bits[p] = 1;
    return m;
}

struct MaskReport {
    std::size_t bit_count = 0;
    std::size_t n_c = 0;
    std::vector<std::pair<std::size_t, std::size_t>> bit_spans;  // byte span of each set bit's token
    std::size_t collision_shifts = 0;                            // bits moved off their designated token
    bool concat_differs = false;  // per-chunk encoding != whole-text encoding (informational)
    std::vector<std::string> violations;

    bool ok() const noexcept { return violations.empty(); }
};

/// Diagnostics only; never throws on a bad mask. Pass the tokenizer to also
/// compare per-chunk and whole-string encodings.
inline MaskReport verify_mask(const BoundaryMask& mask, const TokenizedText& tok, const Segmentation& seg,
                              const Tokenizer* tokenizer = nullptr) {
    MaskReport r;
    r.bit_count = mask.count();
    r.n_c = seg.n_c();
    if (mask.size() != tok.size())
        r.violations.push_back(srm::detail::concat("mask has ", mask.size(), " bits for ", tok.size(), " tokens"));
    if (tok.text_length() != seg.text_length())
        r.violations.push_back(srm::detail::concat("tokens cover ", tok.text_length(), " bytes but the segmentation covers ",
                                                   seg.text_length()));
    if (r.bit_count != r.n_c)
        r.violations.push_back(srm::detail::concat("mask sets ", r.bit_count, " bits but there are ", r.n_c,
                                                   " chunks"));
    const auto bits = mask.positions();
    for (std::size_t b : bits)
        if (b < tok.size()) r.bit_spans.push_back(tok.offsets[b]);
    if (r.violations.empty()) {
        const auto want = designated_tokens(tok, seg);
        const auto expected = boundary_mask(tok, seg).positions();
        for (std::size_t i = 0; i < bits.size(); ++i) {
            if (bits[i] != want[i]) ++r.collision_shifts;
            if (bits[i] != expected[i])
                r.violations.push_back(srm::detail::concat("bit ", i, " sits on token ", bits[i], " but chunk end ",
                                                           seg.chunks[i].end, " maps to token ", expected[i]));
        }
    }
    if (tokenizer != nullptr) {
        std::vector<TokenId> concat;
        for (const Chunk& c : seg.chunks) {
            auto part = tokenizer->encode(c.text);
            concat.insert(concat.end(), part.ids.begin(), part.ids.end());
        }
        r.concat_differs = concat != tok.ids;
    }
    return r;
}

/// END-mode boundaries: the token before each END, indexed as if the END
/// tokens were removed. Comparable with boundary_mask(...).positions().
inline std::vector<std::size_t> end_token_boundaries(const TokenizedText& marked, TokenId end) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0, seen = 0; i < marked.size(); ++i) {
        if (marked.ids[i] != end) continue;
        require(i > seen, "END token at ", i, " follows no text token");
        out.push_back(i - 1 - seen++);
    }
    return out;
}

/// `id<TAB>i1 i2 ...` with the set-bit indices ascending.
inline std::string format_mask_dump(std::string_view id, const BoundaryMask& mask) {
    std::string out(id);
    out += '\t';
    bool first = true;
    for (std::size_t p : mask.positions()) {
        if (!first) out += ' ';
        out += std::to_string(p);
        first = false;
    }
    return out;
}

}  // namespace srm::text
