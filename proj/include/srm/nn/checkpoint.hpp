// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "srm/core/error.hpp"
#include "srm/nn/parameters.hpp"

namespace srm::nn {

inline constexpr int kCheckpointFormatVersion = 1;

// Checkpoint layout: <dir>/manifest.txt describes metadata and the ordered
// parameter list; <dir>/params.bin holds the values as little-endian IEEE-754
// doubles, parameter after parameter, in manifest order.
//
//   srm-checkpoint 1
//   meta variant ours
//   param backbone.embed 2 259 64
struct CheckpointManifest {
    int format_version = kCheckpointFormatVersion;
    std::map<std::string, std::string> meta;
    std::vector<std::pair<std::string, Shape>> params;

    const std::string& get(const std::string& key) const {
        auto it = meta.find(key);
        if (it == meta.end()) throw ValidationError("checkpoint manifest lacks '" + key + "'");
        return it->second;
    }
};

namespace detail {

inline void put_le_double(std::ostream& os, double v) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
    os.write(buf, 8);
}

inline double get_le_double(std::istream& is) {
    unsigned char buf[8];
    is.read(reinterpret_cast<char*>(buf), 8);
    if (!is) throw IoError("checkpoint parameter data truncated");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return std::bit_cast<double>(bits);
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& dir, const ParameterStore& params,
                            const std::map<std::string, std::string>& meta) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    std::ofstream man(dir / "manifest.txt", std::ios::binary);
    std::ofstream bin(dir / "params.bin", std::ios::binary);
    if (!man || !bin) throw IoError("cannot write checkpoint to " + dir.string());
    man << "srm-checkpoint " << kCheckpointFormatVersion << "\n";
    for (const auto& [k, v] : meta) {
        require(k.find_first_of(" \t\n") == std::string::npos && v.find('\n') == std::string::npos,
                "checkpoint metadata must be single-line, key without spaces");
        man << "meta " << k << " " << v << "\n";
    }
    for (const auto& p : params) {
        man << "param " << p.name << " " << p.value.shape().size();
        for (auto d : p.value.shape()) man << " " << d;
        man << "\n";
        for (real v : p.value.data()) detail::put_le_double(bin, static_cast<double>(v));
    }
    if (!man || !bin) throw IoError("failed writing checkpoint to " + dir.string());
}

inline CheckpointManifest read_manifest(const std::filesystem::path& dir) {
    std::ifstream man(dir / "manifest.txt", std::ios::binary);
    if (!man) throw IoError("cannot open checkpoint manifest in " + dir.string());
    CheckpointManifest out;
    std::string line;
    std::getline(man, line);
    {
        std::istringstream hs(line);
        std::string magic;
        hs >> magic >> out.format_version;
        if (magic != "srm-checkpoint") throw ValidationError("not a checkpoint manifest: " + dir.string());
        if (out.format_version != kCheckpointFormatVersion)
            throw ValidationError("unsupported checkpoint format version " + std::to_string(out.format_version));
    }
    while (std::getline(man, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string kind, key;
        ls >> kind >> key;
        if (kind == "meta") {
            std::string rest;
            std::getline(ls, rest);
            if (!rest.empty() && rest.front() == ' ') rest.erase(0, 1);
            out.meta[key] = rest;
        } else if (kind == "param") {
            std::size_t rank = 0;
            ls >> rank;
            Shape s(rank);
            for (auto& d : s) ls >> d;
            if (!ls) throw ValidationError("malformed manifest line: " + line);
            out.params.emplace_back(key, std::move(s));
        } else {
            throw ValidationError("unknown manifest record: " + line);
        }
    }
    return out;
}

/// Loads values into an existing store whose layout must match the manifest.
inline CheckpointManifest load_checkpoint(const std::filesystem::path& dir, ParameterStore& params) {
    CheckpointManifest man = read_manifest(dir);
    require(man.params.size() == params.size(), "checkpoint has ", man.params.size(),
            " parameters, model expects ", params.size());
    std::ifstream bin(dir / "params.bin", std::ios::binary);
    if (!bin) throw IoError("cannot open checkpoint data in " + dir.string());
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& [name, shape] = man.params[i];
        require(name == params[i].name, "checkpoint parameter ", i, " is '", name, "', model expects '",
                params[i].name, "'");
        require(shape == params[i].value.shape(), "checkpoint shape for '", name, "' is ", shape_string(shape),
                ", model expects ", shape_string(params[i].value.shape()));
        for (auto& v : params[i].value.data()) v = static_cast<real>(detail::get_le_double(bin));
    }
    if (bin.peek() != std::char_traits<char>::eof()) throw ValidationError("trailing bytes in checkpoint data");
    return man;
}

}  // namespace srm::nn
