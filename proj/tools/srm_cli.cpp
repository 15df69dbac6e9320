// SPDX-License-Identifier: Apache-2.0
// Command-line front end. Exit codes: 0 ok, 1 validation or I/O error,
// 2 training divergence.
#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "srm/harness/commands.hpp"

namespace {

using namespace srm;
using namespace srm::harness;

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool config_required = true) {
    auto* opt = cmd->add_option("--config", c.config, "JSON experiment config")->check(CLI::ExistingFile);
    if (config_required) opt->required();
    cmd->add_option("--seed", c.seed, "override the config seed");
    cmd->add_option("--out", c.out, "output directory (overrides paths.out)");
}

ExperimentConfig resolve(const Common& c) {
    ExperimentConfig cfg;
    if (!c.config.empty()) cfg = load_config(c.config);
    if (c.seed) cfg.seed = *c.seed;
    if (!c.out.empty()) cfg.paths.out = c.out;
    return cfg;
}

int exit_code(const Error& e) {
    switch (e.kind()) {
        case ErrorKind::Divergence: return 2;
        case ErrorKind::Validation:
        case ErrorKind::Io: return 1;
    }
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sentence-level reward modelling toolkit"};
    app.require_subcommand(1);
    Common common;

    auto* segment = app.add_subcommand("segment", "split texts into sentences and insert <END> markers");
    add_common(segment, common);
    auto* align = app.add_subcommand("align", "compute and verify boundary masks");
    add_common(align, common);
    auto* train_rm = app.add_subcommand("train-rm", "train a reward model on preference pairs");
    add_common(train_rm, common);
    auto* eval_rm = app.add_subcommand("eval-rm", "held-out pairwise accuracy of a reward model");
    add_common(eval_rm, common);
    auto* train_rl = app.add_subcommand("train-rl", "policy optimisation against a reward model");
    add_common(train_rl, common);
    std::vector<std::string> modes;
    train_rl->add_option("--mode", modes, "sentence, sent2res, res2sent, response or token (repeatable)");
    std::string reward_ckpt, policy_ckpt, tokenizer;
    for (auto* cmd : {eval_rm, train_rl})
        cmd->add_option("--reward", reward_ckpt, "reward checkpoint directory")->check(CLI::ExistingDirectory);
    auto* bon = app.add_subcommand("bon", "best-of-N selection against greedy decoding");
    add_common(bon, common);
    bon->add_option("--reward", reward_ckpt, "reward checkpoint directory")->check(CLI::ExistingDirectory);
    for (auto* cmd : {train_rl, bon})
        cmd->add_option("--policy", policy_ckpt, "policy checkpoint directory")->check(CLI::ExistingDirectory);
    for (auto* cmd : {align, eval_rm, train_rl, bon})
        cmd->add_option("--tokenizer", tokenizer, "tokenizer file")->check(CLI::ExistingFile);
    auto* rep = app.add_subcommand("report", "curves, per-sentence dumps and a summary from metric bundles");
    add_common(rep, common, false);
    std::vector<std::string> inputs;
    rep->add_option("--in", inputs, "metrics bundle (repeatable)")->required()->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        ExperimentConfig cfg = resolve(common);
        if (!reward_ckpt.empty()) cfg.paths.reward_checkpoint = reward_ckpt;
        if (!policy_ckpt.empty()) cfg.paths.policy_checkpoint = policy_ckpt;
        if (!tokenizer.empty()) cfg.paths.tokenizer = tokenizer;
        if (!modes.empty()) {
            cfg.modes.clear();
            for (const auto& m : modes) cfg.modes.push_back(rl::parse_mode(m));
        }

        if (segment->parsed()) {
            const auto s = cmd_segment(cfg);
            std::printf("segmented %zu texts into %zu sentences\n", s.texts, s.sentences);
        } else if (align->parsed()) {
            const auto s = cmd_align(cfg);
            std::printf("aligned %zu texts, %zu mask bits, %zu collision shifts\n", s.texts, s.bits, s.collisions);
        } else if (train_rm->parsed()) {
            const auto s = cmd_train_rm(cfg);
            std::printf("trained on %zu pairs in %zu steps; held-out accuracy %.4f (initial %.4f)\n", s.train_pairs,
                        s.steps, s.heldout_accuracy, s.initial_heldout_accuracy);
        } else if (eval_rm->parsed()) {
            std::printf("pairwise accuracy %.4f\n", cmd_eval_rm(cfg));
        } else if (train_rl->parsed()) {
            const auto b = cmd_train_rl(cfg);
            for (const auto& r : b.runs)
                std::printf("%-9s reward %.4f -> %.4f over %zu steps\n", std::string(to_string(r.mode)).c_str(),
                            r.steps.front().mean_reward, r.steps.back().mean_reward, r.steps.size());
        } else if (bon->parsed()) {
            for (const auto& row : cmd_bon(cfg).table)
                std::printf("N=%-3zu reward %.4f oracle %.4f win-rate %.3f\n", row.n, row.mean_reward, row.mean_oracle,
                            row.win_rate);
        } else if (rep->parsed()) {
            std::vector<std::filesystem::path> paths(inputs.begin(), inputs.end());
            const auto f = cmd_report(cfg, paths);
            std::printf("wrote %s\n", f.summary.string().c_str());
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
