// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "srm/harness/best_of_n.hpp"
#include "srm/harness/experiment.hpp"

namespace srm::harness {

/// Everything `report` needs; serialised as JSON between CLI invocations.
struct MetricsBundle {
    std::vector<RlRun> runs;
    std::optional<double> threshold_delta;
    std::vector<BonRow> bon;
};

/// Compact JSON; sampled text may hold invalid UTF-8, which becomes U+FFFD.
inline std::string dump_line(const nlohmann::ordered_json& j, int indent = -1) {
    return j.dump(indent, ' ', false, nlohmann::ordered_json::error_handler_t::replace);
}

inline nlohmann::ordered_json step_to_json(const rl::StepMetrics& m) {
    nlohmann::ordered_json j;
    j["step"] = m.step;
    j["mean_reward"] = m.mean_reward;
    j["mean_kl"] = m.mean_kl;
    j["loss"] = m.loss;
    j["mean_length"] = m.mean_length;
    j["eos_rate"] = m.eos_rate;
    j["grad_norm"] = m.grad_norm;
    return j;
}

inline nlohmann::ordered_json bundle_to_json(const MetricsBundle& b) {
    nlohmann::ordered_json j;
    j["format"] = "srm-metrics-bundle-1";
    if (b.threshold_delta) j["threshold_delta"] = *b.threshold_delta;
    j["runs"] = nlohmann::ordered_json::array();
    for (const auto& r : b.runs) {
        nlohmann::ordered_json jr;
        jr["mode"] = std::string(to_string(r.mode));
        jr["seed"] = r.seed;
        jr["steps"] = nlohmann::ordered_json::array();
        for (const auto& m : r.steps) jr["steps"].push_back(step_to_json(m));
        jr["sentences"] = nlohmann::ordered_json::array();
        for (const auto& s : r.sentences) {
            nlohmann::ordered_json js;
            js["response"] = s.response;
            js["sentence"] = s.sentence;
            js["start"] = s.start;
            js["end"] = s.end;
            js["text"] = s.text;
            js["subseq"] = s.subseq;
            js["diff"] = s.diff;
            js["weight"] = s.weight;
            js["oracle"] = s.oracle;
            jr["sentences"].push_back(js);
        }
        j["runs"].push_back(jr);
    }
    j["bon"] = nlohmann::ordered_json::array();
    for (const auto& row : b.bon) {
        nlohmann::ordered_json jb;
        jb["n"] = row.n;
        jb["mean_reward"] = row.mean_reward;
        jb["mean_oracle"] = row.mean_oracle;
        jb["win_rate"] = row.win_rate;
        j["bon"].push_back(jb);
    }
    return j;
}

inline MetricsBundle bundle_from_json(const nlohmann::json& j) {
    MetricsBundle b;
    try {
        require(j.value("format", "") == "srm-metrics-bundle-1", "not a metrics bundle");
        if (j.contains("threshold_delta")) b.threshold_delta = j["threshold_delta"].get<double>();
        for (const auto& jr : j.at("runs")) {
            RlRun r;
            r.mode = rl::parse_mode(jr.at("mode").get<std::string>());
            r.seed = jr.at("seed").get<std::uint64_t>();
            for (const auto& js : jr.at("steps"))
                r.steps.push_back({js.at("step").get<std::size_t>(), js.at("mean_reward").get<double>(),
                                   js.at("mean_kl").get<double>(), js.at("loss").get<double>(),
                                   js.at("mean_length").get<double>(), js.at("eos_rate").get<double>(),
                                   js.at("grad_norm").get<double>()});
            for (const auto& js : jr.at("sentences"))
                r.sentences.push_back({js.at("response").get<std::size_t>(), js.at("sentence").get<std::size_t>(),
                                       js.at("start").get<std::size_t>(), js.at("end").get<std::size_t>(),
                                       js.at("text").get<std::string>(), js.at("subseq").get<double>(),
                                       js.at("diff").get<double>(), js.at("weight").get<double>(),
                                       js.at("oracle").get<double>()});
            b.runs.push_back(std::move(r));
        }
        if (j.contains("bon"))
            for (const auto& jb : j.at("bon"))
                b.bon.push_back({jb.at("n").get<std::size_t>(), jb.at("mean_reward").get<double>(),
                                 jb.at("mean_oracle").get<double>(), jb.at("win_rate").get<double>()});
    } catch (const nlohmann::json::exception& e) {
        fail("malformed metrics bundle: ", e.what());
    }
    return b;
}

inline void save_bundle(const std::filesystem::path& path, const MetricsBundle& b) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError(srm::detail::concat("cannot write ", path.string()));
    os << dump_line(bundle_to_json(b), 1) << '\n';
}

inline MetricsBundle load_bundle(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError(srm::detail::concat("cannot open metrics bundle ", path.string()));
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
        fail("metrics bundle ", path.string(), ": ", e.what());
    }
    return bundle_from_json(j);
}

namespace detail {

inline std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

// Tabs and newlines would break the row structure.
inline std::string tsv_field(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '\t') out += "\\t";
        else if (c == '\n') out += "\\n";
        else if (c == '\r') out += "\\r";
        else if (c == '\\') out += "\\\\";
        else out += c;
    }
    return out;
}

}  // namespace detail

struct ReportFiles {
    std::filesystem::path curves, sentences, summary, bon;
};

/// Writes curves.csv, sentences.tsv, summary.tsv and, when present,
/// bon.csv. Output depends only on the bundle.
inline ReportFiles report(const MetricsBundle& b, const std::filesystem::path& dir) {
    require(!b.runs.empty() || !b.bon.empty(), "report of an empty metrics bundle");
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir))
        throw IoError(srm::detail::concat("cannot create report directory ", dir.string()));
    auto open = [&](const std::filesystem::path& p) {
        std::ofstream os(p, std::ios::binary);
        if (!os) throw IoError(srm::detail::concat("cannot write ", p.string()));
        return os;
    };
    using detail::num;
    ReportFiles files{dir / "curves.csv", dir / "sentences.tsv", dir / "summary.tsv", {}};
    {
        auto os = open(files.curves);
        os << "mode,seed,step,mean_reward,mean_kl,loss,mean_length,eos_rate,grad_norm\n";
        for (const auto& r : b.runs)
            for (const auto& m : r.steps)
                os << to_string(r.mode) << ',' << r.seed << ',' << m.step << ',' << num(m.mean_reward) << ','
                   << num(m.mean_kl) << ',' << num(m.loss) << ',' << num(m.mean_length) << ',' << num(m.eos_rate)
                   << ',' << num(m.grad_norm) << '\n';
    }
    {
        auto os = open(files.sentences);
        os << "mode\tseed\tresponse\tsentence\tstart\tend\tsubseq\tdiff\tweight\toracle\ttext\n";
        for (const auto& r : b.runs)
            for (const auto& s : r.sentences)
                os << to_string(r.mode) << '\t' << r.seed << '\t' << s.response << '\t' << s.sentence << '\t'
                   << s.start << '\t' << s.end << '\t' << num(s.subseq) << '\t' << num(s.diff) << '\t'
                   << num(s.weight) << '\t' << num(s.oracle) << '\t' << detail::tsv_field(s.text) << '\n';
    }
    {
        // One row per mode, in the fixed mode order, averaged over seeds.
        auto os = open(files.summary);
        os << "mode\truns\tfinal_mean_reward\tfinal_mean_kl\tfinal_mean_length\tmean_steps_to_threshold\treached\n";
        for (rl::Mode mode : {rl::Mode::Sentence, rl::Mode::Sent2Res, rl::Mode::Res2Sent, rl::Mode::Response,
                              rl::Mode::Token}) {
            std::size_t n = 0, reached = 0;
            double reward = 0, kl = 0, len = 0, steps = 0;
            for (const auto& r : b.runs) {
                if (r.mode != mode || r.steps.empty()) continue;
                ++n;
                reward += r.steps.back().mean_reward;
                kl += r.steps.back().mean_kl;
                len += r.steps.back().mean_length;
                if (b.threshold_delta) {
                    if (auto s = steps_to_threshold(r.steps, r.steps.front().mean_reward + *b.threshold_delta)) {
                        ++reached;
                        steps += static_cast<double>(*s);
                    }
                }
            }
            if (n == 0) continue;
            const double dn = static_cast<double>(n);
            os << to_string(mode) << '\t' << n << '\t' << num(reward / dn) << '\t' << num(kl / dn) << '\t'
               << num(len / dn) << '\t' << (reached ? num(steps / static_cast<double>(reached)) : "-") << '\t'
               << reached << '\n';
        }
    }
    if (!b.bon.empty()) {
        files.bon = dir / "bon.csv";
        auto os = open(files.bon);
        os << "n,mean_reward,mean_oracle,win_rate_vs_greedy\n";
        for (const auto& row : b.bon)
            os << row.n << ',' << num(row.mean_reward) << ',' << num(row.mean_oracle) << ',' << num(row.win_rate)
               << '\n';
    }
    return files;
}

}  // namespace srm::harness
