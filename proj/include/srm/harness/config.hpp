// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "srm/harness/best_of_n.hpp"
#include "srm/harness/experiment.hpp"
#include "srm/harness/synthetic.hpp"
#include "srm/harness/training.hpp"
#include "srm/reward/model.hpp"
#include "srm/rl/trainer.hpp"
#include "srm/text/segmenter.hpp"

namespace srm::harness {

struct DataConfig {
    std::size_t train_pairs = 512;
    std::size_t heldout_pairs = 256;
    std::size_t demonstrations = 2000;
    std::size_t rl_prompts = 512;
    std::size_t bon_prompts = 100;
};

struct PathsConfig {
    std::filesystem::path out;
    std::optional<std::filesystem::path> preferences, heldout, texts, prompts, tokenizer, reward_checkpoint,
        policy_checkpoint;
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::size_t vocab_size = 259;  // 259 = bytes plus specials, larger trains merges
    SyntheticTaskSpec task;
    DataConfig data;
    std::size_t max_chars = 128;
    std::string segmenter_rules{text::kSegmenterRuleVersion};
    model::BackboneConfig policy;
    reward::RewardConfig reward;
    TrainLoopConfig reward_training;
    TrainLoopConfig sft;
    RlRunConfig rl;
    std::vector<rl::Mode> modes{rl::Mode::Sentence, rl::Mode::Sent2Res};
    double threshold_delta = 5.0;
    BonConfig bon;
    PathsConfig paths;

    ExperimentConfig() {
        task.min_sentences = 2;
        task.max_sentences = 6;
        task.max_chars = 6;
        policy.hidden_dim = 32;
        policy.heads = 4;
        policy.layers = 2;
        policy.max_len = 64;
        policy.ffn_mult = 2;
        reward.backbone = policy;
        reward.backbone.max_len = 128;
        reward.d_q = 16;
        reward_training = {1, 8, {}};
        sft = {2, 16, {}};
        sft.adam.lr = 3e-3;
        rl.rl.generation.max_new_tokens = 60;
        rl.steps = 8;
    }

    /// Cross-field checks plus derived seeds.
    void validate() const {
        task.validate();
        require(segmenter_rules == text::kSegmenterRuleVersion, "config asks for segmenter rules '", segmenter_rules,
                "' but this build implements ", text::kSegmenterRuleVersion);
        require(max_chars >= 8, "max_chars must be >= 8");
        require(vocab_size >= 259, "vocab_size must be at least 259 (bytes plus three specials)");
        policy.validate();
        reward.validate();
        rl.rl.validate();
        bon.validate();
        require(!modes.empty(), "rl.modes is empty");
        require(data.train_pairs >= 1, "data.train_pairs must be >= 1");
    }
};

namespace detail {

/// Reads one JSON object, remembering which keys were used so that typos
/// are reported instead of silently ignored.
class Section {
public:
    Section(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
        require(j_.is_object(), "config: ", path_.empty() ? "top level" : path_, " must be an object");
    }

    ~Section() noexcept(false) {
        if (std::uncaught_exceptions() > 0) return;
        for (auto it = j_.begin(); it != j_.end(); ++it)
            require(used_.count(it.key()), "config: unknown key '", name(it.key()), "'");
    }

    bool has(const std::string& key) const { return j_.contains(key); }

    template <class T>
    void get(const std::string& key, T& out) {
        used_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            fail("config: '", name(key), "' has the wrong type");
        }
    }

    template <class F>
    void section(const std::string& key, F&& f) {
        used_.insert(key);
        if (!j_.contains(key)) return;
        Section s(j_.at(key), name(key));
        f(s);
    }

    std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

private:
    const nlohmann::json& j_;
    std::string path_;
    std::set<std::string> used_;
};

inline void read_backbone(Section& s, model::BackboneConfig& b) {
    s.get("hidden_dim", b.hidden_dim);
    s.get("layers", b.layers);
    s.get("heads", b.heads);
    s.get("max_len", b.max_len);
    s.get("ffn_mult", b.ffn_mult);
    s.get("rope_base", b.rope_base);
}

inline void read_adam(Section& s, nn::AdamConfig& a) {
    s.get("lr", a.lr);
    s.get("beta1", a.beta1);
    s.get("beta2", a.beta2);
    s.get("eps", a.eps);
    s.get("weight_decay", a.weight_decay);
    s.get("clip_norm", a.clip_norm);
}

inline void read_loop(Section& s, TrainLoopConfig& l) {
    s.get("epochs", l.epochs);
    s.get("batch_size", l.batch_size);
    s.section("adam", [&](Section& a) { read_adam(a, l.adam); });
}

inline void read_generation(Section& s, model::GenerationConfig& g) {
    s.get("temperature", g.temperature);
    s.get("top_k", g.top_k);
    s.get("top_p", g.top_p);
    s.get("max_new_tokens", g.max_new_tokens);
}

template <class E, class Parse>
void read_enum(Section& s, const std::string& key, E& out, Parse parse) {
    std::string v;
    s.get(key, v);
    if (!v.empty()) out = parse(v);
}

inline char single_char(const std::string& v, const std::string& key) {
    require(v.size() == 1, "config: '", key, "' must be a single character");
    return v[0];
}

}  // namespace detail

/// Parses a JSON config. Relative paths are resolved against `base`; input
/// paths must exist. The seed is mandatory.
inline ExperimentConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base = {}) {
    using detail::Section;
    ExperimentConfig c;
    Section top(j, "");
    require(j.is_object() && j.contains("seed"), "config: 'seed' is required");
    top.get("seed", c.seed);
    top.get("vocab_size", c.vocab_size);
    top.get("max_chars", c.max_chars);
    top.get("segmenter_rules", c.segmenter_rules);

    top.section("task", [&](Section& s) {
        auto& t = c.task;
        s.get("filler", t.filler);
        std::string ch;
        s.get("target", ch);
        if (!ch.empty()) t.target = detail::single_char(ch, s.name("target"));
        ch.clear();
        s.get("offtopic", ch);
        if (!ch.empty()) t.offtopic = detail::single_char(ch, s.name("offtopic"));
        s.get("min_sentences", t.min_sentences);
        s.get("max_sentences", t.max_sentences);
        s.get("min_chars", t.min_chars);
        s.get("max_chars", t.max_chars);
        s.get("target_rates", t.target_rates);
        s.get("offtopic_rate", t.offtopic_rate);
        detail::read_enum(s, "quality", t.quality, parse_quality);
        s.get("label_noise", t.label_noise);
        s.get("min_prompt_chars", t.min_prompt_chars);
        s.get("max_prompt_chars", t.max_prompt_chars);
    });
    top.section("data", [&](Section& s) {
        s.get("train_pairs", c.data.train_pairs);
        s.get("heldout_pairs", c.data.heldout_pairs);
        s.get("demonstrations", c.data.demonstrations);
        s.get("rl_prompts", c.data.rl_prompts);
        s.get("bon_prompts", c.data.bon_prompts);
    });
    top.section("policy", [&](Section& s) { detail::read_backbone(s, c.policy); });
    top.section("reward", [&](Section& s) {
        auto& r = c.reward;
        s.section("backbone", [&](Section& b) { detail::read_backbone(b, r.backbone); });
        s.get("d_q", r.d_q);
        s.get("qk_init_std", r.qk_init_std);
        detail::read_enum(s, "variant", r.variant, reward::parse_variant);
        detail::read_enum(s, "objective", r.objective, reward::parse_objective);
        detail::read_enum(s, "boundary_mode", r.mode, reward::parse_boundary_mode);
        detail::read_enum(s, "bt_form", r.bt_form, reward::parse_bt_form);
        s.section("training", [&](Section& t) { detail::read_loop(t, c.reward_training); });
    });
    top.section("sft", [&](Section& s) { detail::read_loop(s, c.sft); });
    top.section("rl", [&](Section& s) {
        auto& r = c.rl.rl;
        s.get("beta", r.beta);
        s.get("clip_eps", r.clip_eps);
        s.get("rollout_batch", r.rollout_batch);
        s.get("train_batch", r.train_batch);
        s.get("epochs_per_batch", r.epochs_per_batch);
        s.get("normalize_advantages", r.normalize_advantages);
        std::string br;
        s.get("boundary_reward", br);
        if (!br.empty()) {
            require(br == "differential" || br == "raw-subsequence", "config: rl.boundary_reward must be "
                    "differential or raw-subsequence");
            r.boundary_reward = br == "differential" ? rl::BoundaryReward::Differential : rl::BoundaryReward::RawSubsequence;
        }
        s.section("adam", [&](Section& a) { detail::read_adam(a, r.adam); });
        s.section("generation", [&](Section& g) { detail::read_generation(g, r.generation); });
        s.get("steps", c.rl.steps);
        s.get("dump_responses", c.rl.dump_responses);
        s.get("threshold_delta", c.threshold_delta);
        std::vector<std::string> modes;
        s.get("modes", modes);
        if (s.has("modes")) {
            c.modes.clear();
            for (const auto& m : modes) c.modes.push_back(rl::parse_mode(m));
        }
    });
    top.section("bon", [&](Section& s) {
        s.get("ns", c.bon.ns);
        s.get("candidates", c.bon.candidates);
        s.section("generation", [&](Section& g) { detail::read_generation(g, c.bon.generation); });
    });
    top.section("paths", [&](Section& s) {
        auto resolve = [&](const std::string& key, std::optional<std::filesystem::path>& out) {
            std::string v;
            s.get(key, v);
            if (v.empty()) return;
            std::filesystem::path p(v);
            if (p.is_relative() && !base.empty()) p = base / p;
            require(std::filesystem::exists(p), "config: ", s.name(key), " = '", p.string(), "' does not exist");
            out = p;
        };
        std::string out;
        s.get("out", out);
        if (!out.empty()) {
            c.paths.out = out;
            if (c.paths.out.is_relative() && !base.empty()) c.paths.out = base / c.paths.out;
        }
        resolve("preferences", c.paths.preferences);
        resolve("heldout", c.paths.heldout);
        resolve("texts", c.paths.texts);
        resolve("prompts", c.paths.prompts);
        resolve("tokenizer", c.paths.tokenizer);
        resolve("reward_checkpoint", c.paths.reward_checkpoint);
        resolve("policy_checkpoint", c.paths.policy_checkpoint);
    });

    c.rl.rl.max_chars = c.max_chars;
    c.bon.max_chars = c.max_chars;
    c.validate();
    return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError(srm::detail::concat("cannot open config file ", path.string()));
    std::stringstream ss;
    ss << is.rdbuf();
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(ss.str(), nullptr, true, true);
    } catch (const nlohmann::json::parse_error& e) {
        fail("config ", path.string(), ": ", e.what());
    }
    return parse_config(j, path.parent_path());
}

}  // namespace srm::harness
