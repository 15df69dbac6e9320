// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "srm/core/error.hpp"

namespace srm::text {

/// Bumped whenever a rule below changes, so stored corpora can be re-checked.
inline constexpr std::string_view kSegmenterRuleVersion = "srm-rules-1";
inline constexpr std::string_view kEndLiteral = "<END>";

/// Offsets are byte offsets into the UTF-8 source, half-open.
struct Chunk {
    std::size_t start = 0;
    std::size_t end = 0;
    std::string text;

    std::size_t size() const noexcept { return end - start; }
    friend bool operator==(const Chunk&, const Chunk&) = default;
};

struct Segmentation {
    std::vector<Chunk> chunks;

    std::size_t n_c() const noexcept { return chunks.size(); }
    std::size_t text_length() const noexcept { return chunks.empty() ? 0 : chunks.back().end; }

    std::vector<std::size_t> ends() const {
        std::vector<std::size_t> out;
        out.reserve(chunks.size());
        for (const auto& c : chunks) out.push_back(c.end);
        return out;
    }

    friend bool operator==(const Segmentation&, const Segmentation&) = default;
};

/// Builds a Segmentation from ascending chunk-end offsets. The last offset must
/// equal the text length.
inline Segmentation segmentation_from_offsets(std::string_view text, const std::vector<std::size_t>& ends) {
    require(!text.empty(), "cannot segment empty text");
    require(!ends.empty(), "segmentation has no offsets");
    Segmentation seg;
    std::size_t prev = 0;
    for (std::size_t i = 0; i < ends.size(); ++i) {
        require(ends[i] <= text.size(), "offset ", i, " (", ends[i], ") is beyond the text length ", text.size());
        require(ends[i] > prev, "offset ", i, " (", ends[i], ") does not increase past ", prev,
                " and would leave an empty chunk");
        seg.chunks.push_back({prev, ends[i], std::string(text.substr(prev, ends[i] - prev))});
        prev = ends[i];
    }
    require(prev == text.size(), "offset ", ends.size() - 1, " (", prev, ") must equal the text length ", text.size());
    return seg;
}

/// Checks that `seg` tiles `text` exactly.
inline void check_partition(std::string_view text, const Segmentation& seg) {
    require(!seg.chunks.empty(), "segmentation is empty");
    std::size_t prev = 0;
    for (std::size_t i = 0; i < seg.chunks.size(); ++i) {
        const Chunk& c = seg.chunks[i];
        require(c.start == prev && c.end > c.start && c.end <= text.size(), "chunk ", i, " span [", c.start, ", ",
                c.end, ") does not continue the partition of a ", text.size(), "-byte text");
        require(text.substr(c.start, c.size()) == c.text, "chunk ", i, " text disagrees with its span");
        prev = c.end;
    }
    require(prev == text.size(), "segmentation covers ", prev, " of ", text.size(), " bytes");
}

namespace detail {

inline bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }
inline bool is_terminal(char c) { return c == '.' || c == '!' || c == '?'; }
inline bool is_closer(char c) { return c == '"' || c == '\'' || c == ')' || c == ']' || c == '}'; }

inline bool all_space(std::string_view s) {
    return std::all_of(s.begin(), s.end(), [](char c) { return is_space(c); });
}

inline constexpr std::array<std::string_view, 9> kAbbreviations = {"Mr", "Mrs", "Dr", "Prof", "vs", "e.g", "i.e",
                                                                     "St", "Jr"};

// `word` is the run of non-space bytes before a lone full stop.
inline bool is_abbreviation(std::string_view word) {
    while (!word.empty() && (word.front() == '(' || word.front() == '"' || word.front() == '\'')) word.remove_prefix(1);
    return std::find(kAbbreviations.begin(), kAbbreviations.end(), word) != kAbbreviations.end();
}

// inside[i] is true when byte i lies within a ``` fenced span (fence bytes included).
inline std::vector<bool> fenced_bytes(std::string_view text) {
    std::vector<bool> inside(text.size(), false);
    bool open = false;
    for (std::size_t i = 0; i < text.size();) {
        if (text.compare(i, 3, "```") == 0) {
            inside[i] = inside[i + 1] = inside[i + 2] = true;
            open = !open;
            i += 3;
            continue;
        }
        inside[i] = open;
        ++i;
    }
    return inside;
}

// Sentence-final split points (exclusive chunk ends), not including text.size().
inline std::vector<std::size_t> primary_splits(std::string_view text) {
    const auto fenced = fenced_bytes(text);
    std::vector<std::size_t> cuts;
    const std::size_t n = text.size();
    std::size_t i = 0;
    while (i < n) {
        const char c = text[i];
        if (fenced[i] || !(is_terminal(c) || c == '\n')) {
            ++i;
            continue;
        }
        std::size_t j = i;
        if (c == '\n') {
            while (j < n && text[j] == '\n' && !fenced[j]) ++j;
        } else {
            while (j < n && (is_terminal(text[j]) || is_closer(text[j])) && !fenced[j]) ++j;
            const bool at_space = j == n || is_space(text[j]);
            bool protect = !at_space;
            if (!protect && j == i + 1 && c == '.') {
                std::size_t w = i;
                while (w > 0 && !is_space(text[w - 1])) --w;
                protect = is_abbreviation(text.substr(w, i - w));
            }
            if (protect) {
                i = j;
                continue;
            }
            while (j < n && text[j] == '\n' && !fenced[j]) ++j;
        }
        if (j < n) cuts.push_back(j);
        i = j;
    }
    return cuts;
}

inline constexpr std::array<std::string_view, 9> kResplitMarkers = {"...", "\n", "!", "?", ";", ":", ".", ",", "\t"};

// Cut points after each maximal run of `marker` inside s, excluding a run that
// ends the string.
inline std::vector<std::size_t> marker_cuts(std::string_view s, std::string_view marker) {
    std::vector<std::size_t> cuts;
    std::size_t i = 0;
    while (i < s.size()) {
        if (s.compare(i, marker.size(), marker) != 0) {
            ++i;
            continue;
        }
        std::size_t j = i + marker.size();
        while (s.compare(j, marker.size(), marker) == 0) j += marker.size();
        if (j < s.size()) cuts.push_back(j);
        i = j;
    }
    return cuts;
}

inline bool utf8_continuation(char c) { return (static_cast<unsigned char>(c) & 0xC0) == 0x80; }

// Appends ends (relative to `base`) of pieces no longer than max_chars.
inline void resplit(std::string_view s, std::size_t base, std::size_t max_chars, std::vector<std::size_t>& out) {
    if (s.size() <= max_chars) {
        out.push_back(base + s.size());
        return;
    }
    for (std::string_view marker : kResplitMarkers) {
        auto cuts = marker_cuts(s, marker);
        if (cuts.empty()) continue;
        std::size_t prev = 0;
        cuts.push_back(s.size());
        for (std::size_t cut : cuts) {
            resplit(s.substr(prev, cut - prev), base + prev, max_chars, out);
            prev = cut;
        }
        return;
    }
    std::size_t cut = max_chars;
    while (cut > 1 && utf8_continuation(s[cut])) --cut;
    out.push_back(base + cut);
    resplit(s.substr(cut), base + cut, max_chars, out);
}

}  // namespace detail

/// Rule-based sentence segmentation. Splits after runs of . ! ? (and any
/// closing quotes or brackets) when followed by whitespace or the end, and
/// after newlines. A lone full stop after a listed abbreviation is not a
/// boundary, and nothing inside ``` fences is split. Whitespace-only pieces
/// join the preceding chunk. Chunks longer than max_chars are re-split on the
/// ordered marker list and finally hard-split on a UTF-8 character boundary.
inline Segmentation segment(std::string_view text, std::size_t max_chars = 128) {
    require(!text.empty(), "cannot segment empty text: a response needs at least one token");
    require(max_chars >= 8, "max_chars must be >= 8, got ", max_chars);

    std::vector<std::size_t> ends = detail::primary_splits(text);
    ends.push_back(text.size());

    std::vector<std::size_t> merged;
    std::size_t prev = 0;
    for (std::size_t e : ends) {
        const bool blank = detail::all_space(text.substr(prev, e - prev));
        if (blank && !merged.empty())
            merged.back() = e;
        else if (!blank || e == text.size())
            merged.push_back(e);
        // a leading blank piece simply extends into the next chunk
        prev = e;
    }

    std::vector<std::size_t> bounded;
    prev = 0;
    for (std::size_t e : merged) {
        detail::resplit(text.substr(prev, e - prev), prev, max_chars, bounded);
        prev = e;
    }
    return segmentation_from_offsets(text, bounded);
}

/// Text with a `<END>` literal after every chunk. Only reward-model inputs use
/// this form; the policy never sees it.
struct MarkedText {
    std::string value;
    std::size_t n_chunks = 0;
    friend bool operator==(const MarkedText&, const MarkedText&) = default;
};

inline MarkedText insert_boundary_markers(std::string_view text, const Segmentation& seg) {
    check_partition(text, seg);
    require(text.find(kEndLiteral) == std::string_view::npos,
            "text already contains the reserved literal <END>; it cannot be marked unambiguously");
    MarkedText out;
    out.value.reserve(text.size() + seg.n_c() * kEndLiteral.size());
    for (const Chunk& c : seg.chunks) {
        out.value += c.text;
        out.value += kEndLiteral;
    }
    out.n_chunks = seg.n_c();
    return out;
}

inline std::string strip_boundary_markers(std::string_view marked) {
    std::string out;
    out.reserve(marked.size());
    std::size_t i = 0;
    while (i < marked.size()) {
        const std::size_t k = marked.find(kEndLiteral, i);
        if (k == std::string_view::npos) {
            out.append(marked.substr(i));
            break;
        }
        out.append(marked.substr(i, k - i));
        i = k + kEndLiteral.size();
    }
    return out;
}

inline std::string strip_boundary_markers(const MarkedText& m) { return strip_boundary_markers(m.value); }

/// One line of an external segmentation file: id, then chunk-end offsets.
struct ExternalSegmentation {
    std::string id;
    std::vector<std::size_t> ends;
};

/// Parses `id<TAB>e1 e2 ...` records. Blank lines are skipped.
inline std::vector<ExternalSegmentation> load_external_segmentations(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(srm::detail::concat("cannot open segmentation file ", path.string()));
    std::vector<ExternalSegmentation> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (lineno == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        require(tab != std::string::npos && tab > 0, path.string(), ":", lineno, ": expected `id<TAB>offsets`");
        ExternalSegmentation rec{line.substr(0, tab), {}};
        std::size_t pos = tab + 1, idx = 0;
        while (pos < line.size()) {
            while (pos < line.size() && line[pos] == ' ') ++pos;
            if (pos >= line.size()) break;
            std::size_t next = pos;
            while (next < line.size() && std::isdigit(static_cast<unsigned char>(line[next]))) ++next;
            require(next > pos && (next == line.size() || line[next] == ' '), path.string(), ":", lineno,
                    ": offset ", idx, " is not a non-negative integer");
            const std::size_t v = std::stoull(line.substr(pos, next - pos));
            require(rec.ends.empty() || v > rec.ends.back(), path.string(), ":", lineno, ": offset ", idx, " (", v,
                    ") is not ascending");
            rec.ends.push_back(v);
            pos = next;
            ++idx;
        }
        require(!rec.ends.empty(), path.string(), ":", lineno, ": record has no offsets");
        out.push_back(std::move(rec));
    }
    return out;
}

/// Looks up `id` in the file and validates it against `text`.
inline Segmentation load_external_segmentation(const std::filesystem::path& path, std::string_view id,
                                               std::string_view text) {
    for (const auto& rec : load_external_segmentations(path))
        if (rec.id == id) return segmentation_from_offsets(text, rec.ends);
    fail("no segmentation record with id '", id, "' in ", path.string());
}

}  // namespace srm::text
