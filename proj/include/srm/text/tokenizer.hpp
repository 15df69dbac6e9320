// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "srm/core/error.hpp"
#include "srm/model/config.hpp"
#include "srm/text/segmenter.hpp"

namespace srm::text {

using model::TokenId;

/// Token ids with half-open byte spans into the encoded string.
struct TokenizedText {
    std::vector<TokenId> ids;
    std::vector<std::pair<std::size_t, std::size_t>> offsets;

    std::size_t size() const noexcept { return ids.size(); }
    std::size_t text_length() const noexcept { return offsets.empty() ? 0 : offsets.back().second; }
    friend bool operator==(const TokenizedText&, const TokenizedText&) = default;
};

inline constexpr std::string_view kVocabHeader = "srm-bpe-merges v1";

/// Byte-level BPE. Ids 0..255 are raw bytes, merge k creates id 256 + k, and
/// the special tokens PAD, EOS, END follow the last merge. With no merges the
/// tokenizer is plain byte-level.
class Tokenizer {
public:
    using Merge = std::pair<TokenId, TokenId>;

    Tokenizer() { rebuild(); }
    explicit Tokenizer(std::vector<Merge> merges) : merges_(std::move(merges)) { rebuild(); }

    /// Greedy pair-frequency training: each round merges the most frequent
    /// adjacent pair (ties go to the smallest pair) until vocab_size is
    /// reached or no pair occurs twice. vocab_size counts bytes, merges and
    /// the three specials.
    static Tokenizer train(const std::vector<std::string>& corpus, std::size_t vocab_size = 512) {
        require(vocab_size >= 259, "vocab_size must be >= 259 (bytes plus three specials), got ", vocab_size);
        const std::size_t target = vocab_size - 259;
        std::vector<std::vector<TokenId>> seqs;
        seqs.reserve(corpus.size());
        for (const auto& s : corpus) {
            auto& seq = seqs.emplace_back();
            for (unsigned char c : s) seq.push_back(c);
        }
        std::vector<Merge> merges;
        std::unordered_map<std::uint64_t, std::size_t> counts;
        while (merges.size() < target) {
            counts.clear();
            for (const auto& s : seqs)
                for (std::size_t i = 0; i + 1 < s.size(); ++i) ++counts[key(s[i], s[i + 1])];
            std::uint64_t best_key = 0;
            std::size_t best_count = 0;
            for (const auto& [k, n] : counts)
                if (n > best_count || (n == best_count && k < best_key)) {
                    best_key = k;
                    best_count = n;
                }
            if (best_count < 2) break;
            const Merge best{static_cast<TokenId>(best_key >> 32), static_cast<TokenId>(best_key & 0xFFFFFFFFu)};
            const TokenId id = static_cast<TokenId>(256 + merges.size());
            merges.push_back(best);
            for (auto& s : seqs) apply_merge(s, best, id);
        }
        return Tokenizer(std::move(merges));
    }

    const std::vector<Merge>& merges() const noexcept { return merges_; }
    bool byte_level() const noexcept { return merges_.empty(); }
    std::size_t vocab_size() const noexcept { return 259 + merges_.size(); }

    model::SpecialTokens specials() const noexcept {
        const auto base = static_cast<TokenId>(256 + merges_.size());
        return {base, base + 1, base + 2};
    }

    /// FNV-1a fingerprint of the merge list; equal strings mean identical
    /// tokenization.
    const std::string& version() const noexcept { return version_; }

    TokenizedText encode(std::string_view text) const {
        TokenizedText out;
        out.ids.reserve(text.size());
        for (unsigned char c : text) out.ids.push_back(c);
        std::vector<std::size_t> width(text.size(), 1);
        if (!merges_.empty() && text.size() > 1) {
            // Repeatedly merge the lowest-ranked adjacent pair present.
            while (true) {
                std::size_t best_rank = merges_.size();
                for (std::size_t i = 0; i + 1 < out.ids.size(); ++i) {
                    auto it = rank_.find(key(out.ids[i], out.ids[i + 1]));
                    if (it != rank_.end() && it->second < best_rank) best_rank = it->second;
                }
                if (best_rank == merges_.size()) break;
                const Merge m = merges_[best_rank];
                const TokenId id = static_cast<TokenId>(256 + best_rank);
                std::size_t w = 0;
                for (std::size_t r = 0; r < out.ids.size(); ++r) {
                    if (r + 1 < out.ids.size() && out.ids[r] == m.first && out.ids[r + 1] == m.second) {
                        out.ids[w] = id;
                        width[w] = width[r] + width[r + 1];
                        ++r;
                    } else {
                        out.ids[w] = out.ids[r];
                        width[w] = width[r];
                    }
                    ++w;
                }
                out.ids.resize(w);
                width.resize(w);
            }
        }
        out.offsets.reserve(out.ids.size());
        std::size_t pos = 0;
        for (std::size_t i = 0; i < out.ids.size(); ++i) {
            out.offsets.emplace_back(pos, pos + width[i]);
            pos += width[i];
        }
        return out;
    }

    /// Encodes `<END>`-marked text. Each chunk is encoded on its own and each
    /// literal becomes the END id, so merges never cross a marker. Offsets
    /// index the marked string.
    TokenizedText encode_marked(const MarkedText& marked) const {
        TokenizedText out;
        const TokenId end_id = specials().end;
        std::string_view s = marked.value;
        std::size_t pos = 0, seen = 0;
        while (pos < s.size()) {
            const std::size_t k = s.find(kEndLiteral, pos);
            const std::size_t stop = k == std::string_view::npos ? s.size() : k;
            if (stop > pos) {
                auto part = encode(s.substr(pos, stop - pos));
                for (std::size_t i = 0; i < part.size(); ++i) {
                    out.ids.push_back(part.ids[i]);
                    out.offsets.emplace_back(part.offsets[i].first + pos, part.offsets[i].second + pos);
                }
            }
            if (k == std::string_view::npos) break;
            out.ids.push_back(end_id);
            out.offsets.emplace_back(k, k + kEndLiteral.size());
            ++seen;
            pos = k + kEndLiteral.size();
        }
        require(seen == marked.n_chunks, "marked text carries ", seen, " <END> literals but ", marked.n_chunks,
                " chunks");
        return out;
    }

    /// Drops END tokens and shifts offsets back onto the unmarked string.
    TokenizedText strip_end_tokens(const TokenizedText& marked) const {
        TokenizedText out;
        const TokenId end_id = specials().end;
        std::size_t removed = 0;
        for (std::size_t i = 0; i < marked.size(); ++i) {
            const auto [a, b] = marked.offsets[i];
            if (marked.ids[i] == end_id) {
                removed += b - a;
                continue;
            }
            out.ids.push_back(marked.ids[i]);
            out.offsets.emplace_back(a - removed, b - removed);
        }
        return out;
    }

    /// Offsets for an existing id sequence (for example sampled policy tokens)
    /// without re-encoding. Only text tokens are allowed.
    TokenizedText spans(std::span<const TokenId> ids) const {
        TokenizedText out;
        out.ids.assign(ids.begin(), ids.end());
        std::size_t pos = 0;
        for (TokenId id : ids) {
            require(id < specials().pad, "token id ", id, " has no text span");
            out.offsets.emplace_back(pos, pos + pieces_[id].size());
            pos += pieces_[id].size();
        }
        return out;
    }

    /// Concatenates token bytes. END decodes to its literal; PAD and EOS are
    /// not text and are rejected.
    std::string decode(std::span<const TokenId> ids) const {
        std::string out;
        const auto sp = specials();
        for (TokenId id : ids) {
            if (id == sp.end) {
                out += kEndLiteral;
                continue;
            }
            require(id < sp.pad, "cannot decode non-text token id ", id);
            out += pieces_[id];
        }
        return out;
    }

    void save(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError(srm::detail::concat("cannot write vocabulary file ", path.string()));
        out << kVocabHeader << '\n';
        for (const auto& [a, b] : merges_) out << a << ' ' << b << '\n';
        if (!out) throw IoError(srm::detail::concat("failed writing vocabulary file ", path.string()));
    }

    static Tokenizer load(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError(srm::detail::concat("cannot open vocabulary file ", path.string()));
        std::string line;
        require(static_cast<bool>(std::getline(in, line)) && line == kVocabHeader, path.string(),
                ":1: missing header '", kVocabHeader, "'");
        std::vector<Merge> merges;
        std::size_t lineno = 1;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            std::istringstream ls(line);
            long long a = -1, b = -1;
            std::string rest;
            ls >> a >> b;
            require(!ls.fail() && !(ls >> rest), path.string(), ":", lineno, ": expected two token ids");
            const long long limit = 256 + static_cast<long long>(merges.size());
            require(a >= 0 && b >= 0 && a < limit && b < limit, path.string(), ":", lineno,
                    ": merge refers to an id not yet defined");
            merges.emplace_back(static_cast<TokenId>(a), static_cast<TokenId>(b));
        }
        return Tokenizer(std::move(merges));
    }

    friend bool operator==(const Tokenizer& a, const Tokenizer& b) { return a.merges_ == b.merges_; }

private:
    static std::uint64_t key(TokenId a, TokenId b) { return (std::uint64_t(a) << 32) | b; }

    static void apply_merge(std::vector<TokenId>& s, Merge m, TokenId id) {
        std::size_t w = 0;
        for (std::size_t r = 0; r < s.size(); ++r) {
            if (r + 1 < s.size() && s[r] == m.first && s[r + 1] == m.second) {
                s[w++] = id;
                ++r;
            } else {
                s[w++] = s[r];
            }
        }
        s.resize(w);
    }

    void rebuild() {
        pieces_.assign(256, std::string());
        for (int b = 0; b < 256; ++b) pieces_[b] = std::string(1, static_cast<char>(b));
        rank_.clear();
        for (std::size_t k = 0; k < merges_.size(); ++k) {
            const auto [a, b] = merges_[k];
            require(a < 256 + k && b < 256 + k, "merge ", k, " refers to an undefined id");
            rank_.emplace(key(a, b), k);
            pieces_.push_back(pieces_[a] + pieces_[b]);
        }
        std::uint64_t h = 1469598103934665603ULL;
        auto mix = [&](std::uint64_t v) {
            for (int i = 0; i < 4; ++i) {
                h ^= (v >> (8 * i)) & 0xFF;
                h *= 1099511628211ULL;
            }
        };
        for (const auto& [a, b] : merges_) mix(a), mix(b);
        char buf[32];
        std::snprintf(buf, sizeof buf, "bpe-%zu-%016llx", merges_.size(), static_cast<unsigned long long>(h));
        version_ = buf;
    }

    std::vector<Merge> merges_;
    std::unordered_map<std::uint64_t, std::size_t> rank_;
    std::vector<std::string> pieces_;
    std::string version_;
};

}  // namespace srm::text
