// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "srm/core/error.hpp"
#include "srm/harness/synthetic.hpp"

namespace srm::harness {

/// One JSON object per line: {"prompt": ..., "chosen": ..., "rejected": ...}.
inline void save_preferences(const std::filesystem::path& path, const std::vector<PreferenceRecord>& records) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError(srm::detail::concat("cannot write preferences to ", path.string()));
    for (const auto& r : records) {
        nlohmann::ordered_json j;
        j["prompt"] = r.prompt;
        j["chosen"] = r.chosen;
        j["rejected"] = r.rejected;
        os << j.dump(-1, ' ', false, nlohmann::ordered_json::error_handler_t::replace) << '\n';
    }
    if (!os) throw IoError(srm::detail::concat("write failed for ", path.string()));
}

/// Blank lines are skipped. Any malformed line is an error naming its line
/// number; so is a file without records.
inline std::vector<PreferenceRecord> load_preferences(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError(srm::detail::concat("cannot open preferences file ", path.string()));
    std::vector<PreferenceRecord> out;
    std::string line;
    for (std::size_t lineno = 1; std::getline(is, line); ++lineno) {
        if (lineno == 1 && line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        auto where = [&] { return srm::detail::concat(path.string(), ":", lineno, ": "); };
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            fail(where(), "invalid JSON (", e.what(), ")");
        }
        require(j.is_object(), where(), "expected a JSON object");
        PreferenceRecord r;
        for (auto [key, field] : {std::pair{"prompt", &r.prompt}, {"chosen", &r.chosen}, {"rejected", &r.rejected}}) {
            require(j.contains(key), where(), "missing field '", key, "'");
            require(j[key].is_string(), where(), "field '", key, "' must be a string");
            *field = j[key].get<std::string>();
        }
        try {
            r.validate();
        } catch (const ValidationError& e) {
            fail(where(), e.what());
        }
        out.push_back(std::move(r));
    }
    require(!out.empty(), "no preference records in ", path.string());
    return out;
}

}  // namespace srm::harness
