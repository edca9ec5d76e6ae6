// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "deiii/run.hpp"

// Command-line surface. `cli_main` takes the argument list (without the
// program name) and returns the process exit code: 0 success, 1 usage or
// config error, 2 data error, 3 numeric failure.

namespace deiii {

namespace detail {

inline Split parse_split_flag(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    throw ConfigError("unknown split \"" + s + "\" (use train, val, or test)");
}

// Runs fn<T> for the selected floating-point width.
template <class Fn>
int with_precision(Precision p, Fn&& fn) {
    if (p == Precision::F32) return fn(float{});
    return fn(double{});
}

}  // namespace detail

inline int cli_main(const std::vector<std::string>& args) {
    CLI::App app{"DE-III style audio-visual emotion recognition at desk scale"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::string ckpt_path;
    std::string head_str;
    std::string split_str = "test";
    std::string precision_str;
    std::string sample_id;
    std::string direction = "video-query";
    std::vector<std::string> variants;
    std::uint64_t seed = 0;
    bool force = false;

    auto add_common = [&](CLI::App* cmd, bool with_precision_flag = true) {
        cmd->add_option("--config", config_path, "Run config JSON file")->required();
        cmd->add_option("--seed", seed, "Override the configured seed");
        cmd->add_option("--out", out_dir, "Override the configured output directory");
        if (with_precision_flag)
            cmd->add_option("--precision", precision_str, "Floating-point width: f32 or f64");
    };

    CLI::App* synth = app.add_subcommand("synth", "Generate the configured synthetic dataset");
    add_common(synth, false);
    synth->add_flag("--force", force, "Replace an existing non-empty dataset directory");

    CLI::App* train = app.add_subcommand("train", "Train a model and keep the best checkpoint");
    add_common(train);

    CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpointed model on one split");
    add_common(eval);
    eval->add_option("--ckpt", ckpt_path, "Checkpoint path (default: <output>/model.ckpt)");
    eval->add_option("--split", split_str, "Split to evaluate: train, val, or test");
    eval->add_option("--head", head_str, "Prediction head: fusion, video, or audio");

    CLI::App* ablate = app.add_subcommand("ablate", "Train and compare a list of variants");
    add_common(ablate);
    ablate->add_option("--variant", variants, "Comma-separated variant names")
        ->required()
        ->delimiter(',');

    CLI::App* heatmap = app.add_subcommand("heatmap", "Export attention weights for one sample");
    add_common(heatmap);
    heatmap->add_option("--ckpt", ckpt_path, "Checkpoint path (default: <output>/model.ckpt)");
    heatmap->add_option("--sample", sample_id, "Sample id from the manifest")->required();
    heatmap->add_option("--direction", direction,
                        "Attention direction: video-query, audio-query, or ov");

    std::vector<std::string> argv_store{"deiii"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    argv.reserve(argv_store.size());
    for (const auto& a : argv_store) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());

        RunConfig cfg = RunConfig::load_file(config_path);
        const bool seed_given = app.get_subcommands().front()->count("--seed") > 0;
        if (seed_given) cfg.train.seed = seed;
        if (!precision_str.empty()) cfg.train.precision = parse_precision(precision_str);

        if (synth->parsed()) {
            if (!out_dir.empty()) cfg.data.root = out_dir;
            if (seed_given && cfg.data.synth) cfg.data.synth->seed = seed;
            const Manifest manifest = run_synth(cfg, force);
            std::printf("synth: wrote %zu samples under %s\n", manifest.samples.size(),
                        cfg.data.root.c_str());
            return 0;
        }
        if (!out_dir.empty()) cfg.output = out_dir;

        if (train->parsed()) {
            return detail::with_precision(cfg.train.precision, [&](auto tag) {
                using T = decltype(tag);
                const TrainOutcome outcome = run_train<T>(cfg);
                std::printf("train: %zu epochs, selected head %s (val %.4f at epoch %zu)\n",
                            outcome.epochs_run, head_name(outcome.selected_head), outcome.best_score,
                            outcome.best_epoch);
                std::printf("train: checkpoint %s\n", outcome.checkpoint_path.c_str());
                return 0;
            });
        }
        if (eval->parsed()) {
            const Split split = detail::parse_split_flag(split_str);
            std::optional<HeadId> head;
            if (!head_str.empty()) head = parse_head(head_str);
            if (ckpt_path.empty()) ckpt_path = cfg.default_checkpoint();
            return detail::with_precision(cfg.train.precision, [&](auto tag) {
                using T = decltype(tag);
                const nlohmann::json report = run_eval<T>(cfg, ckpt_path, split, head);
                std::printf("%s\n", report.dump(2).c_str());
                return 0;
            });
        }
        if (ablate->parsed()) {
            return detail::with_precision(cfg.train.precision, [&](auto tag) {
                using T = decltype(tag);
                const nlohmann::json rows = run_ablate<T>(cfg, variants);
                std::printf("%s\n", rows.dump(2).c_str());
                return 0;
            });
        }
        if (heatmap->parsed()) {
            if (ckpt_path.empty()) ckpt_path = cfg.default_checkpoint();
            return detail::with_precision(cfg.train.precision, [&](auto tag) {
                using T = decltype(tag);
                const nlohmann::json meta = run_heatmap<T>(cfg, ckpt_path, sample_id, direction);
                std::printf("%s\n", meta.dump(2).c_str());
                return 0;
            });
        }
        return 1;  // unreachable: require_subcommand(1) guarantees a branch
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 2;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

}  // namespace deiii
