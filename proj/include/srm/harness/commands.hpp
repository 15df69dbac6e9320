// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "srm/harness/best_of_n.hpp"
#include "srm/harness/config.hpp"
#include "srm/harness/experiment.hpp"
#include "srm/harness/preferences.hpp"
#include "srm/harness/report.hpp"
#include "srm/harness/synthetic.hpp"
#include "srm/harness/training.hpp"
#include "srm/text/alignment.hpp"

// Subcommand bodies shared by the CLI and the tests. Every command writes
// into cfg.paths.out and records its metrics in metrics.jsonl there.

namespace srm::harness {

// Sub-seeds for the independent random streams of one experiment.
enum class Stream : std::uint64_t { TrainPairs = 1, HeldoutPairs, RlPrompts, BonPrompts, Demos, PolicyInit, Texts };

inline std::uint64_t stream_seed(const ExperimentConfig& cfg, Stream s) {
    return mix_seed(cfg.seed, 0x57, static_cast<std::uint64_t>(s));
}

/// Appends one JSON object per line; a single writer per file.
class MetricsWriter {
public:
    explicit MetricsWriter(const std::filesystem::path& path) : path_(path), os_(path, std::ios::binary) {
        if (!os_) throw IoError(srm::detail::concat("cannot write metrics to ", path.string()));
    }

    void write(const nlohmann::ordered_json& j) {
        os_ << dump_line(j) << '\n';
        if (!os_) throw IoError(srm::detail::concat("write failed for ", path_.string()));
    }

private:
    std::filesystem::path path_;
    std::ofstream os_;
};

namespace detail {

inline std::filesystem::path prepare_out(const ExperimentConfig& cfg) {
    require(!cfg.paths.out.empty(), "no output directory: set paths.out or pass --out");
    std::error_code ec;
    std::filesystem::create_directories(cfg.paths.out, ec);
    if (ec || !std::filesystem::is_directory(cfg.paths.out))
        throw IoError(srm::detail::concat("cannot create output directory ", cfg.paths.out.string()));
    return cfg.paths.out;
}

inline std::ofstream open_out(const std::filesystem::path& p) {
    std::ofstream os(p, std::ios::binary);
    if (!os) throw IoError(srm::detail::concat("cannot write ", p.string()));
    return os;
}

struct TextRecord {
    std::string id, text;
};

/// JSONL with a "text" field and an optional "id"; ids default to the line
/// number. Without a file, synthetic responses stand in.
inline std::vector<TextRecord> load_texts(const ExperimentConfig& cfg) {
    std::vector<TextRecord> out;
    if (!cfg.paths.texts) {
        Rng rng(stream_seed(cfg, Stream::Texts));
        for (std::size_t i = 0; i < cfg.data.rl_prompts; ++i)
            out.push_back({std::to_string(i + 1), sample_response(cfg.task, rng)});
        return out;
    }
    std::ifstream is(*cfg.paths.texts, std::ios::binary);
    if (!is) throw IoError(srm::detail::concat("cannot open ", cfg.paths.texts->string()));
    std::string line;
    for (std::size_t lineno = 1; std::getline(is, line); ++lineno) {
        if (lineno == 1 && line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        const std::string where = srm::detail::concat(cfg.paths.texts->string(), ":", lineno, ": ");
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            fail(where, "invalid JSON (", e.what(), ")");
        }
        require(j.is_object() && j.contains("text") && j["text"].is_string(), where, "expected {\"text\": ...}");
        std::string id = std::to_string(lineno);
        if (j.contains("id")) {
            require(j["id"].is_string() || j["id"].is_number_integer(), where, "id must be a string or integer");
            id = j["id"].is_string() ? j["id"].get<std::string>() : std::to_string(j["id"].get<long long>());
        }
        out.push_back({id, j["text"].get<std::string>()});
        require(!out.back().text.empty(), where, "empty text");
    }
    require(!out.empty(), "no texts in ", cfg.paths.texts->string());
    return out;
}

/// One prompt per line.
inline std::vector<std::string> load_prompts(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError(srm::detail::concat("cannot open prompts file ", path.string()));
    std::vector<std::string> out;
    std::string line;
    for (std::size_t lineno = 1; std::getline(is, line); ++lineno) {
        if (lineno == 1 && line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) out.push_back(line);
    }
    require(!out.empty(), "no prompts in ", path.string());
    return out;
}

inline text::Tokenizer tokenizer_for(const ExperimentConfig& cfg, const std::vector<std::string>& corpus) {
    if (cfg.paths.tokenizer) return text::Tokenizer::load(*cfg.paths.tokenizer);
    if (cfg.vocab_size == text::Tokenizer().vocab_size()) return text::Tokenizer();
    require(!corpus.empty(), "vocab_size ", cfg.vocab_size, " needs a tokenizer file (paths.tokenizer)");
    return text::Tokenizer::train(corpus, cfg.vocab_size);
}

inline model::BackboneConfig with_vocab(model::BackboneConfig b, const text::Tokenizer& tok) {
    b.vocab_size = tok.vocab_size();
    return b;
}

inline reward::RewardModel load_reward(const ExperimentConfig& cfg, const text::Tokenizer& tok) {
    require(cfg.paths.reward_checkpoint.has_value(), "paths.reward_checkpoint is required");
    auto rm = reward::RewardModel::load(*cfg.paths.reward_checkpoint);
    require(rm.vocab_version == tok.version(), "reward checkpoint vocabulary ", rm.vocab_version,
            " does not match the tokenizer ", tok.version());
    return rm;
}

/// Loads the policy checkpoint, or warms up a fresh policy on synthetic
/// demonstrations and saves it under out/policy.
inline model::LanguageModel policy_for(const ExperimentConfig& cfg, const text::Tokenizer& tok,
                                       const std::filesystem::path& out, MetricsWriter& metrics) {
    if (cfg.paths.policy_checkpoint) return load_policy(*cfg.paths.policy_checkpoint, tok.version());
    model::LanguageModel policy(with_vocab(cfg.policy, tok), tok.specials(), stream_seed(cfg, Stream::PolicyInit));
    const auto demos = synth_demonstrations(cfg.task, cfg.data.demonstrations, stream_seed(cfg, Stream::Demos));
    const auto curve = sft_train(policy, tok, demos, cfg.sft, stream_seed(cfg, Stream::Demos));
    for (std::size_t i = 0; i < curve.size(); ++i)
        metrics.write({{"phase", "sft"}, {"step", i}, {"loss", curve[i]}});
    save_policy(out / "policy", policy, tok.version());
    return policy;
}

inline std::vector<std::string> corpus_of(const std::vector<PreferenceRecord>& records) {
    std::vector<std::string> out;
    for (const auto& r : records) {
        out.push_back(r.prompt);
        out.push_back(r.chosen);
        out.push_back(r.rejected);
    }
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------

struct SegmentSummary {
    std::size_t texts = 0, sentences = 0, max_chunk = 0;
};

inline SegmentSummary cmd_segment(const ExperimentConfig& cfg) {
    const auto out = detail::prepare_out(cfg);
    const auto texts = detail::load_texts(cfg);
    auto os = detail::open_out(out / "segments.jsonl");
    SegmentSummary sum;
    for (const auto& t : texts) {
        const auto seg = text::segment(t.text, cfg.max_chars);
        text::check_partition(t.text, seg);
        nlohmann::ordered_json j;
        j["id"] = t.id;
        j["n_c"] = seg.n_c();
        j["ends"] = seg.ends();
        if (t.text.find(text::kEndLiteral) == std::string::npos) {
            const auto marked = text::insert_boundary_markers(t.text, seg);
            require(text::strip_boundary_markers(marked) == t.text, "text ", t.id, ": marker round trip failed");
            j["marked"] = marked.value;
        }
        os << dump_line(j) << '\n';
        ++sum.texts;
        sum.sentences += seg.n_c();
        for (const auto& c : seg.chunks) sum.max_chunk = std::max(sum.max_chunk, c.size());
    }
    MetricsWriter m(out / "metrics.jsonl");
    m.write({{"command", "segment"},
             {"rules", std::string(text::kSegmenterRuleVersion)},
             {"max_chars", cfg.max_chars},
             {"texts", sum.texts},
             {"sentences", sum.sentences},
             {"max_chunk_bytes", sum.max_chunk}});
    return sum;
}

struct AlignSummary {
    std::size_t texts = 0, bits = 0, sentences = 0, collisions = 0, concat_differs = 0, violations = 0,
                mode_disagreements = 0;
};

/// Writes masks.tsv and checks every mask, including END-mode agreement.
/// Any violation fails the command after the files are written.
inline AlignSummary cmd_align(const ExperimentConfig& cfg) {
    const auto out = detail::prepare_out(cfg);
    const auto texts = detail::load_texts(cfg);
    std::vector<std::string> corpus;
    for (const auto& t : texts) corpus.push_back(t.text);
    const auto tok = detail::tokenizer_for(cfg, corpus);
    tok.save(out / "tokenizer.txt");
    auto os = detail::open_out(out / "masks.tsv");
    AlignSummary sum;
    std::string first_problem;
    for (const auto& t : texts) {
        const auto seg = text::segment(t.text, cfg.max_chars);
        const auto enc = tok.encode(t.text);
        const auto mask = text::boundary_mask(enc, seg);
        const auto rep = text::verify_mask(mask, enc, seg, &tok);
        os << text::format_mask_dump(t.id, mask) << '\n';
        ++sum.texts;
        sum.bits += rep.bit_count;
        sum.sentences += rep.n_c;
        sum.collisions += rep.collision_shifts;
        sum.concat_differs += rep.concat_differs ? 1 : 0;
        sum.violations += rep.violations.size();
        if (!rep.ok() && first_problem.empty()) first_problem = t.id + ": " + rep.violations.front();
        if (t.text.find(text::kEndLiteral) == std::string::npos) {
            const auto marked = tok.encode_marked(text::insert_boundary_markers(t.text, seg));
            const auto plain = tok.strip_end_tokens(marked);
            if (text::end_token_boundaries(marked, tok.specials().end) != text::boundary_mask(plain, seg).positions()) {
                ++sum.mode_disagreements;
                if (first_problem.empty()) first_problem = t.id + ": END and masked boundaries disagree";
            }
        }
    }
    MetricsWriter m(out / "metrics.jsonl");
    m.write({{"command", "align"},
             {"vocab_version", tok.version()},
             {"texts", sum.texts},
             {"sentences", sum.sentences},
             {"mask_bits", sum.bits},
             {"collision_shifts", sum.collisions},
             {"concat_differs", sum.concat_differs},
             {"violations", sum.violations},
             {"mode_disagreements", sum.mode_disagreements}});
    require(sum.violations == 0 && sum.mode_disagreements == 0, "alignment check failed (", first_problem, ")");
    return sum;
}

struct RmSummary {
    double heldout_accuracy = 0.0, initial_heldout_accuracy = 0.0;
    std::size_t train_pairs = 0, heldout_pairs = 0, steps = 0;
};

/// Pairs come from paths.preferences (held-out from paths.heldout, or the
/// last fifth of the file) or from the synthetic task.
inline RmSummary cmd_train_rm(const ExperimentConfig& cfg) {
    const auto out = detail::prepare_out(cfg);
    std::vector<PreferenceRecord> train, heldout;
    if (cfg.paths.preferences) {
        train = load_preferences(*cfg.paths.preferences);
        if (cfg.paths.heldout) {
            heldout = load_preferences(*cfg.paths.heldout);
        } else if (train.size() >= 2) {
            const std::size_t k = std::max<std::size_t>(1, train.size() / 5);
            heldout.assign(train.end() - static_cast<std::ptrdiff_t>(k), train.end());
            train.resize(train.size() - k);
        }
    } else {
        const SyntheticOracle oracle(cfg.task, cfg.max_chars);
        train = synth_generate(oracle, cfg.data.train_pairs, stream_seed(cfg, Stream::TrainPairs)).records;
        if (cfg.data.heldout_pairs > 0)
            heldout = synth_generate(oracle, cfg.data.heldout_pairs, stream_seed(cfg, Stream::HeldoutPairs)).records;
        save_preferences(out / "preferences.jsonl", train);
        if (!heldout.empty()) save_preferences(out / "heldout.jsonl", heldout);
    }
    const auto tok = detail::tokenizer_for(cfg, detail::corpus_of(train));
    tok.save(out / "tokenizer.txt");
    auto rc = cfg.reward;
    rc.backbone = detail::with_vocab(rc.backbone, tok);
    const auto res = train_reward_model(rc, cfg.reward_training, tok, train, heldout, cfg.max_chars, cfg.seed);
    res.model.save(out / "reward_model");
    MetricsWriter m(out / "metrics.jsonl");
    for (std::size_t i = 0; i < res.loss_curve.size(); ++i)
        m.write({{"phase", "reward"}, {"step", i}, {"loss", res.loss_curve[i]}});
    RmSummary sum{res.heldout_accuracy, res.initial_heldout_accuracy, train.size(), heldout.size(),
                  res.loss_curve.size()};
    m.write({{"command", "train-rm"},
             {"vocab_version", tok.version()},
             {"objective", std::string(to_string(rc.objective))},
             {"variant", std::string(to_string(rc.variant))},
             {"boundary_mode", std::string(to_string(rc.mode))},
             {"train_pairs", sum.train_pairs},
             {"heldout_pairs", sum.heldout_pairs},
             {"initial_heldout_accuracy", sum.initial_heldout_accuracy},
             {"heldout_accuracy", sum.heldout_accuracy}});
    return sum;
}

inline double cmd_eval_rm(const ExperimentConfig& cfg) {
    const auto out = detail::prepare_out(cfg);
    const auto tok = detail::tokenizer_for(cfg, {});
    const auto rm = detail::load_reward(cfg, tok);
    std::vector<PreferenceRecord> records;
    if (cfg.paths.heldout)
        records = load_preferences(*cfg.paths.heldout);
    else if (cfg.paths.preferences)
        records = load_preferences(*cfg.paths.preferences);
    else
        records = synth_generate(SyntheticOracle(cfg.task, cfg.max_chars), std::max<std::size_t>(1, cfg.data.heldout_pairs),
                                 stream_seed(cfg, Stream::HeldoutPairs))
                      .records;
    const auto pairs = encode_preferences(rm.config, tok, records, cfg.max_chars);
    const double acc = pairwise_accuracy(rm, pairs);
    MetricsWriter m(out / "metrics.jsonl");
    m.write({{"command", "eval-rm"}, {"pairs", records.size()}, {"accuracy", acc}});
    return acc;
}

inline MetricsBundle cmd_train_rl(const ExperimentConfig& cfg) {
    const auto out = detail::prepare_out(cfg);
    const auto tok = detail::tokenizer_for(cfg, {});
    const auto rm = detail::load_reward(cfg, tok);
    MetricsWriter m(out / "metrics.jsonl");
    const auto policy = detail::policy_for(cfg, tok, out, m);
    const auto prompts = cfg.paths.prompts
                             ? detail::load_prompts(*cfg.paths.prompts)
                             : synth_prompts(cfg.task, cfg.data.rl_prompts, stream_seed(cfg, Stream::RlPrompts));
    const SyntheticOracle oracle(cfg.task, cfg.max_chars);
    // Surface a mode/checkpoint mismatch before any run starts.
    for (rl::Mode mode : cfg.modes) rl::check_compatible(mode, rm, policy, tok);
    MetricsBundle bundle;
    bundle.threshold_delta = cfg.threshold_delta;
    for (rl::Mode mode : cfg.modes) {
        auto rc = cfg.rl;
        rc.rl.seed = cfg.seed;
        auto run = run_rl_experiment(policy, rm, tok, prompts, oracle, rc, mode);
        for (const auto& s : run.steps) {
            auto j = step_to_json(s);
            j["mode"] = std::string(to_string(mode));
            m.write(j);
        }
        bundle.runs.push_back(std::move(run));
    }
    save_bundle(out / "bundle.json", bundle);
    return bundle;
}

inline BonResult cmd_bon(const ExperimentConfig& cfg) {
    const auto out = detail::prepare_out(cfg);
    const auto tok = detail::tokenizer_for(cfg, {});
    const auto rm = detail::load_reward(cfg, tok);
    MetricsWriter m(out / "metrics.jsonl");
    const auto policy = detail::policy_for(cfg, tok, out, m);
    const auto prompts = cfg.paths.prompts
                             ? detail::load_prompts(*cfg.paths.prompts)
                             : synth_prompts(cfg.task, cfg.data.bon_prompts, stream_seed(cfg, Stream::BonPrompts));
    auto bc = cfg.bon;
    bc.seed = cfg.seed;
    const auto res = best_of_n(prompts, policy, rm, tok, SyntheticOracle(cfg.task, cfg.max_chars), bc);
    for (const auto& row : res.table)
        m.write({{"command", "bon"},
                 {"n", row.n},
                 {"mean_reward", row.mean_reward},
                 {"mean_oracle", row.mean_oracle},
                 {"win_rate_vs_greedy", row.win_rate}});
    auto os = detail::open_out(out / "selections.jsonl");
    for (const auto& p : res.prompts) {
        nlohmann::ordered_json j;
        j["prompt"] = p.prompt;
        j["greedy"] = p.greedy;
        j["greedy_oracle"] = p.greedy_oracle;
        j["selected"] = nlohmann::ordered_json::array();
        for (std::size_t k = 0; k < p.selected.size(); ++k)
            j["selected"].push_back({{"n", bc.ns[k]},
                                     {"text", p.candidates[p.selected[k]]},
                                     {"reward", p.rewards[p.selected[k]]},
                                     {"oracle", p.oracle[p.selected[k]]}});
        os << dump_line(j) << '\n';
    }
    MetricsBundle bundle;
    bundle.bon = res.table;
    save_bundle(out / "bundle.json", bundle);
    return res;
}

/// Merges the bundles (runs concatenated, last BoN table wins) and writes
/// the report files.
inline ReportFiles cmd_report(const ExperimentConfig& cfg, const std::vector<std::filesystem::path>& inputs) {
    require(!inputs.empty(), "report needs at least one bundle (--in)");
    MetricsBundle merged;
    for (const auto& p : inputs) {
        auto b = load_bundle(p);
        for (auto& r : b.runs) merged.runs.push_back(std::move(r));
        if (b.threshold_delta) merged.threshold_delta = b.threshold_delta;
        if (!b.bon.empty()) merged.bon = b.bon;
    }
    return report(merged, detail::prepare_out(cfg));
}

}  // namespace srm::harness
