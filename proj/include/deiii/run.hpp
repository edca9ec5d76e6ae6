// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "deiii/data.hpp"
#include "deiii/model.hpp"

// Run orchestration shared by the command-line tool and the test suites:
// run configs with strict parsing and defaults, the training loop with early
// stopping and best-checkpoint tracking, split evaluation, the ablation grid,
// and attention heatmap export.

namespace deiii {

// ---- precision --------------------------------------------------------------------

enum class Precision { F32, F64 };

inline const char* precision_name(Precision p) { return p == Precision::F32 ? "f32" : "f64"; }

inline Precision parse_precision(const std::string& s) {
    if (s == "f32") return Precision::F32;
    if (s == "f64") return Precision::F64;
    throw ConfigError("unknown precision \"" + s + "\" (use f32 or f64)");
}

// ---- run configuration ------------------------------------------------------------

inline nlohmann::json synth_spec_to_json(const SynthSpec& s) {
    return nlohmann::json{{"classes", s.classes},
                          {"audio-dim", s.audio_dim},
                          {"video-dim", s.video_dim},
                          {"flow-dim", s.flow_dim},
                          {"video-len", s.video_len},
                          {"audio-len", s.audio_len},
                          {"mode", synth_mode_name(s.mode)},
                          {"noise", s.noise},
                          {"signal", s.signal},
                          {"continuous-labels", s.continuous_labels},
                          {"seed", s.seed},
                          {"train-count", s.train_count},
                          {"val-count", s.val_count},
                          {"test-count", s.test_count}};
}

inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
    static const std::set<std::string> known{"classes",     "audio-dim",  "video-dim",
                                             "flow-dim",    "video-len",  "audio-len",
                                             "mode",        "noise",      "signal",
                                             "continuous-labels", "seed", "train-count",
                                             "val-count",   "test-count"};
    if (!j.is_object()) throw ConfigError("data.synth must be a JSON object");
    for (const auto& [key, _] : j.items())
        if (!known.count(key)) throw ConfigError("data.synth: unknown key \"" + key + "\"");
    SynthSpec s;
    try {
        if (j.contains("classes")) s.classes = j.at("classes").get<std::size_t>();
        if (j.contains("audio-dim")) s.audio_dim = j.at("audio-dim").get<std::size_t>();
        if (j.contains("video-dim")) s.video_dim = j.at("video-dim").get<std::size_t>();
        if (j.contains("flow-dim")) s.flow_dim = j.at("flow-dim").get<std::size_t>();
        if (j.contains("video-len")) s.video_len = j.at("video-len").get<std::size_t>();
        if (j.contains("audio-len")) s.audio_len = j.at("audio-len").get<std::size_t>();
        if (j.contains("mode")) s.mode = parse_synth_mode(j.at("mode").get<std::string>());
        if (j.contains("noise")) s.noise = j.at("noise").get<double>();
        if (j.contains("signal")) s.signal = j.at("signal").get<double>();
        if (j.contains("continuous-labels")) s.continuous_labels = j.at("continuous-labels").get<bool>();
        if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("train-count")) s.train_count = j.at("train-count").get<std::size_t>();
        if (j.contains("val-count")) s.val_count = j.at("val-count").get<std::size_t>();
        if (j.contains("test-count")) s.test_count = j.at("test-count").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("data.synth: ") + e.what());
    }
    s.validate();
    return s;
}

struct TrainSettings {
    double lr = 1e-3;  // desk-scale default; the full-scale preset is 5e-6
    double weight_decay = 0.0;  // full-scale preset: 5e-2
    std::size_t epochs = 20;
    std::size_t batch_size = 8;
    std::size_t early_stop_patience = 5;  // 0 disables early stopping
    std::uint64_t seed = 1;
    Precision precision = Precision::F64;

    void validate() const {
        if (!(std::isfinite(lr)) || lr < 0) throw ConfigError("train: lr must be finite and >= 0");
        if (!(std::isfinite(weight_decay)) || weight_decay < 0)
            throw ConfigError("train: weight-decay must be finite and >= 0");
        if (batch_size == 0) throw ConfigError("train: batch-size must be positive");
    }

    nlohmann::json to_json() const {
        return nlohmann::json{{"lr", lr},
                              {"weight-decay", weight_decay},
                              {"epochs", epochs},
                              {"batch-size", batch_size},
                              {"early-stop-patience", early_stop_patience},
                              {"seed", seed},
                              {"precision", precision_name(precision)}};
    }

    static TrainSettings from_json(const nlohmann::json& j) {
        static const std::set<std::string> known{"lr",   "weight-decay", "epochs",   "batch-size",
                                                 "early-stop-patience", "seed", "precision"};
        if (!j.is_object()) throw ConfigError("train section must be a JSON object");
        for (const auto& [key, _] : j.items())
            if (!known.count(key)) throw ConfigError("train: unknown key \"" + key + "\"");
        TrainSettings t;
        try {
            if (j.contains("lr")) t.lr = j.at("lr").get<double>();
            if (j.contains("weight-decay")) t.weight_decay = j.at("weight-decay").get<double>();
            if (j.contains("epochs")) t.epochs = j.at("epochs").get<std::size_t>();
            if (j.contains("batch-size")) t.batch_size = j.at("batch-size").get<std::size_t>();
            if (j.contains("early-stop-patience"))
                t.early_stop_patience = j.at("early-stop-patience").get<std::size_t>();
            if (j.contains("seed")) t.seed = j.at("seed").get<std::uint64_t>();
            if (j.contains("precision")) t.precision = parse_precision(j.at("precision").get<std::string>());
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("train: ") + e.what());
        }
        t.validate();
        return t;
    }
};

struct DataSettings {
    std::string root = "data";
    std::optional<SynthSpec> synth;

    nlohmann::json to_json() const {
        nlohmann::json j{{"root", root}};
        if (synth) j["synth"] = synth_spec_to_json(*synth);
        return j;
    }

    static DataSettings from_json(const nlohmann::json& j) {
        static const std::set<std::string> known{"root", "synth"};
        if (!j.is_object()) throw ConfigError("data section must be a JSON object");
        for (const auto& [key, _] : j.items())
            if (!known.count(key)) throw ConfigError("data: unknown key \"" + key + "\"");
        DataSettings d;
        try {
            if (j.contains("root")) d.root = j.at("root").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("data: ") + e.what());
        }
        if (j.contains("synth")) d.synth = synth_spec_from_json(j.at("synth"));
        if (d.root.empty()) throw ConfigError("data: root must not be empty");
        return d;
    }
};

struct RunConfig {
    ModelConfig model;
    TrainSettings train;
    DataSettings data;
    std::string output = "run-out";

    nlohmann::json to_json() const {
        return nlohmann::json{{"model", model.to_json()},
                              {"train", train.to_json()},
                              {"data", data.to_json()},
                              {"output", output}};
    }

    static RunConfig from_json(const nlohmann::json& j) {
        static const std::set<std::string> known{"model", "train", "data", "output"};
        if (!j.is_object()) throw ConfigError("run config must be a JSON object");
        for (const auto& [key, _] : j.items())
            if (!known.count(key)) throw ConfigError("run config: unknown key \"" + key + "\"");
        RunConfig cfg;
        if (j.contains("model")) cfg.model = ModelConfig::from_json(j.at("model"));
        if (j.contains("train")) cfg.train = TrainSettings::from_json(j.at("train"));
        if (j.contains("data")) cfg.data = DataSettings::from_json(j.at("data"));
        try {
            if (j.contains("output")) cfg.output = j.at("output").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("run config: ") + e.what());
        }
        if (cfg.output.empty()) throw ConfigError("run config: output must not be empty");
        return cfg;
    }

    static RunConfig load_file(const std::string& path) {
        std::string text;
        try {
            text = detail::slurp(path);
        } catch (const DataError& e) {
            throw ConfigError(e.what());  // an unreadable config is a usage problem
        }
        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(text);
        } catch (const nlohmann::json::parse_error& e) {
            throw ConfigError(path + ": invalid JSON: " + e.what());
        }
        return from_json(doc);
    }

    // Writes the effective config (defaults applied) so a run can be reproduced
    // from its own output directory.
    void echo_into(const std::filesystem::path& dir) const {
        std::filesystem::create_directories(dir);
        detail::spill((dir / "config.json").string(), to_json().dump(2) + "\n");
    }

    std::string manifest_path() const {
        return (std::filesystem::path(data.root) / "manifest.json").string();
    }

    std::string default_checkpoint() const {
        return (std::filesystem::path(output) / "model.ckpt").string();
    }
};

// ---- split evaluation --------------------------------------------------------------

template <std::floating_point T>
struct SplitEval {
    MetricReport video, audio, fusion;
    std::size_t count = 0;
};

inline double metric_score(const MetricReport& r) {
    if (r.discrete) return r.accuracy;
    return (r.ccc_valence + r.ccc_arousal + r.ccc_dominance) / 3.0;
}

namespace detail {

inline std::size_t argmax_row(const std::vector<double>& row) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < row.size(); ++i)
        if (row[i] > row[best]) best = i;
    return best;
}

}  // namespace detail

// Evaluates all three heads over the given sample indices (inference mode, no
// dropout). Discrete: argmax predictions. Continuous: stacked [B x 3] outputs.
template <std::floating_point T>
SplitEval<T> evaluate_split(const DeIiiModel<T>& model, const Dataset<T>& ds,
                            const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw DataError("evaluate: split has no samples");
    SplitEval<T> ev;
    ev.count = indices.size();
    const bool discrete = model.cfg.task == Task::Discrete;
    std::array<std::vector<std::size_t>, 3> preds;  // video, audio, fusion
    std::vector<std::size_t> labels;
    std::array<Tensor<T>, 3> cont;
    Tensor<T> target;
    if (!discrete) {
        for (auto& c : cont) c = Tensor<T>(Shape{indices.size(), 3});
        target = Tensor<T>(Shape{indices.size(), 3});
    }
    for (std::size_t b = 0; b < indices.size(); ++b) {
        const LoadedSample<T>& s = ds.samples[indices[b]];
        ForwardOutput<T> fwd = model.forward(s);
        const std::array<const Var<T>*, 3> heads{&fwd.video_head, &fwd.audio_head, &fwd.fusion_head};
        if (discrete) {
            if (!s.discrete) throw DataError("evaluate: continuous labels fed to a discrete task");
            for (std::size_t h = 0; h < 3; ++h) {
                const Tensor<T>& logits = heads[h]->value();
                std::vector<double> row(logits.size());
                for (std::size_t i = 0; i < row.size(); ++i)
                    row[i] = static_cast<double>(logits.data()[i]);
                preds[h].push_back(detail::argmax_row(row));
            }
            labels.push_back(s.label_class);
        } else {
            if (s.discrete) throw DataError("evaluate: discrete labels fed to a continuous task");
            for (std::size_t h = 0; h < 3; ++h)
                for (std::size_t d = 0; d < 3; ++d) cont[h].at(b, d) = heads[h]->value().at(d);
            for (std::size_t d = 0; d < 3; ++d) target.at(b, d) = static_cast<T>(s.label_vad[d]);
        }
    }
    if (discrete) {
        ev.video = report_discrete(preds[0], labels, model.cfg.classes);
        ev.audio = report_discrete(preds[1], labels, model.cfg.classes);
        ev.fusion = report_discrete(preds[2], labels, model.cfg.classes);
    } else {
        ev.video = report_continuous(cont[0], target);
        ev.audio = report_continuous(cont[1], target);
        ev.fusion = report_continuous(cont[2], target);
    }
    return ev;
}

inline nlohmann::json metrics_json(const MetricReport& r) {
    if (r.discrete)
        return nlohmann::json{{"accuracy", r.accuracy},
                              {"f1_macro", r.f1_macro},
                              {"f1_micro", r.f1_micro},
                              {"f1_per_class", r.f1_per_class}};
    return nlohmann::json{{"ccc_valence", r.ccc_valence},
                          {"ccc_arousal", r.ccc_arousal},
                          {"ccc_dominance", r.ccc_dominance}};
}

// ---- training ----------------------------------------------------------------------

struct TrainOutcome {
    HeadId selected_head = HeadId::Fusion;
    std::size_t best_epoch = 0;  // 1-based; 0 means no epoch ran
    double best_score = 0;
    std::size_t epochs_run = 0;
    std::string checkpoint_path;
    std::string log_path;
};

namespace detail {

// Seed salts keeping the shuffle/dropout streams independent of how many draws
// model construction consumed, so data order is identical across variants.
inline constexpr std::uint64_t kShuffleSalt = 101;
inline constexpr std::uint64_t kDropoutSalt = 102;

inline nlohmann::json run_echo(HeadId head, std::size_t epoch, const nlohmann::json& val,
                               const RunConfig& cfg) {
    return nlohmann::json{
        {"selected-head", head_name(head)}, {"best-epoch", epoch}, {"val", val}, {"config", cfg.to_json()}};
}

}  // namespace detail

// Full training run: loads the dataset, trains with AdamW and early stopping,
// writes a JSON-lines epoch log, keeps the best-validation checkpoint, and
// records the selected head. A non-finite loss aborts after the log and the
// last good checkpoint are on disk; the error propagates to the caller.
template <std::floating_point T>
TrainOutcome run_train(const RunConfig& cfg) {
    namespace fs = std::filesystem;
    cfg.model.validate();
    cfg.train.validate();
    cfg.echo_into(cfg.output);

    Dataset<T> ds = load_dataset<T>(cfg.manifest_path());
    const std::vector<std::size_t> train_idx = ds.split_indices(Split::Train);
    const std::vector<std::size_t> val_idx = ds.split_indices(Split::Val);
    if (train_idx.empty()) throw DataError(cfg.manifest_path() + ": no samples in the train split");
    if (val_idx.empty()) throw DataError(cfg.manifest_path() + ": no samples in the val split");

    Rng build_rng(cfg.train.seed);
    DeIiiModel<T> model = DeIiiModel<T>::build(cfg.model, build_rng);
    ParamList<T> params = model.params();
    AdamW<T> opt;
    opt.lr = cfg.train.lr;
    opt.weight_decay = cfg.train.weight_decay;
    opt.init(params);
    Rng shuffle_rng = Rng(cfg.train.seed).derive(detail::kShuffleSalt);
    Rng drop_rng = Rng(cfg.train.seed).derive(detail::kDropoutSalt);
    Rng* drop = cfg.model.dropout > 0 ? &drop_rng : nullptr;

    TrainOutcome out;
    out.checkpoint_path = cfg.default_checkpoint();
    out.log_path = (fs::path(cfg.output) / "train_log.jsonl").string();

    std::ofstream log(out.log_path, std::ios::trunc);
    if (!log.good()) throw DataError(out.log_path + ": cannot open for writing");
    save_model(out.checkpoint_path, model,
               detail::run_echo(HeadId::Fusion, 0, nlohmann::json(), cfg).dump());

    double best = -std::numeric_limits<double>::infinity();
    std::size_t bad_epochs = 0;
    auto finish = [&](bool aborted, const std::string& error) {
        nlohmann::json summary{{"selected-head", head_name(out.selected_head)},
                               {"best-epoch", out.best_epoch},
                               {"best-val", out.best_epoch == 0 ? nlohmann::json() : nlohmann::json(best)},
                               {"epochs-run", out.epochs_run},
                               {"aborted", aborted}};
        if (aborted) summary["error"] = error;
        detail::spill((fs::path(cfg.output) / "summary.json").string(), summary.dump(2) + "\n");
    };

    try {
        for (std::size_t epoch = 1; epoch <= cfg.train.epochs; ++epoch) {
            const auto batches = epoch_batches(train_idx, cfg.train.batch_size, shuffle_rng);
            double sum_v = 0, sum_a = 0, sum_f = 0;
            std::size_t seen = 0;
            for (const auto& batch_idx : batches) {
                Batch<T> batch;
                batch.samples.reserve(batch_idx.size());
                for (std::size_t i : batch_idx) batch.samples.push_back(&ds.samples[i]);
                const LossBundle b = train_step(model, opt, params, batch, drop);
                const double w = static_cast<double>(batch_idx.size());
                sum_v += b.l_v * w;
                sum_a += b.l_a * w;
                sum_f += b.l_f * w;
                seen += batch_idx.size();
            }
            out.epochs_run = epoch;
            const double n = static_cast<double>(seen);
            const LossBundle mean = LossBundle::of(sum_v / n, sum_a / n, sum_f / n);

            const SplitEval<T> ev = evaluate_split(model, ds, val_idx);
            const double sv = metric_score(ev.video);
            const double sa = metric_score(ev.audio);
            const double sf = metric_score(ev.fusion);
            const HeadId head = select_head({{HeadId::Fusion, sf}, {HeadId::Video, sv}, {HeadId::Audio, sa}});
            const double score = head == HeadId::Fusion ? sf : head == HeadId::Video ? sv : sa;

            nlohmann::json val{{"fusion", sf}, {"video", sv}, {"audio", sa}};
            nlohmann::json line{{"epoch", epoch}, {"L_V", mean.l_v}, {"L_A", mean.l_a},
                                {"L_F", mean.l_f}, {"total", mean.total}, {"val", val}};
            log << line.dump() << "\n";
            log.flush();

            if (score > best) {
                best = score;
                bad_epochs = 0;
                out.best_epoch = epoch;
                out.best_score = score;
                out.selected_head = head;
                save_model(out.checkpoint_path, model, detail::run_echo(head, epoch, val, cfg).dump());
            } else if (cfg.train.early_stop_patience > 0 &&
                       ++bad_epochs >= cfg.train.early_stop_patience) {
                break;
            }
        }
    } catch (const NumericError& e) {
        log.flush();
        finish(true, e.what());
        throw;
    }
    finish(false, "");
    return out;
}

// ---- evaluation command ------------------------------------------------------------

// Reads the run echo block a training run stored inside the checkpoint.
template <std::floating_point T>
nlohmann::json checkpoint_run_echo(const std::string& path) {
    const Checkpoint<T> ckpt = read_checkpoint<T>(path);
    nlohmann::json cfg = nlohmann::json::parse(ckpt.config_json, nullptr, false);
    if (cfg.is_discarded() || !cfg.contains("run")) return nlohmann::json();
    return cfg.at("run");
}

// Evaluates one head (requested, or the head recorded at training time) on a
// split and writes eval-<split>.json into the output directory.
template <std::floating_point T>
nlohmann::json run_eval(const RunConfig& cfg, const std::string& ckpt_path, Split split,
                        std::optional<HeadId> head_flag) {
    namespace fs = std::filesystem;
    DeIiiModel<T> model = load_model<T>(ckpt_path, cfg.model);
    HeadId head = HeadId::Fusion;
    if (head_flag) {
        head = *head_flag;
    } else {
        const nlohmann::json echo = checkpoint_run_echo<T>(ckpt_path);
        if (echo.is_object() && echo.contains("selected-head"))
            head = parse_head(echo.at("selected-head").get<std::string>());
    }

    Dataset<T> ds = load_dataset<T>(cfg.manifest_path());
    const SplitEval<T> ev = evaluate_split(model, ds, ds.split_indices(split));
    const MetricReport& r = head == HeadId::Fusion ? ev.fusion : head == HeadId::Video ? ev.video : ev.audio;

    nlohmann::json report{{"task", task_name(model.cfg.task)},
                          {"variant", variant_name(model.cfg.variant)},
                          {"head", head_name(head)},
                          {"split", split_name(split)},
                          {"samples", ev.count},
                          {"metrics", metrics_json(r)}};
    fs::create_directories(cfg.output);
    detail::spill((fs::path(cfg.output) / ("eval-" + std::string(split_name(split)) + ".json")).string(),
                  report.dump(2) + "\n");
    return report;
}

// ---- ablation grid -----------------------------------------------------------------

// Trains each variant with the shared seed and dataset (identical shuffle
// stream), evaluates its recorded head on the test split, and emits one row
// per variant. A variant that fails is reported in the JSON output and skipped
// in the CSV; it does not abort the remaining grid.
template <std::floating_point T>
nlohmann::json run_ablate(const RunConfig& cfg, const std::vector<std::string>& variants) {
    namespace fs = std::filesystem;
    if (variants.empty()) throw ConfigError("ablate: need at least one variant");
    const bool discrete = cfg.model.task == Task::Discrete;
    std::string csv = discrete ? "variant,f1_macro,f1_micro,accuracy\n"
                               : "variant,ccc_valence,ccc_arousal,ccc_dominance\n";
    nlohmann::json rows = nlohmann::json::array();
    for (const std::string& name : variants) {
        nlohmann::json row{{"variant", name}};
        try {
            RunConfig sub = cfg;
            sub.model.variant = parse_variant(name);
            sub.model.validate();
            sub.output = (fs::path(cfg.output) / name).string();
            const TrainOutcome outcome = run_train<T>(sub);
            const nlohmann::json report = run_eval<T>(sub, outcome.checkpoint_path, Split::Test, {});
            const nlohmann::json& m = report.at("metrics");
            char buf[160];
            if (discrete) {
                row["f1_macro"] = m.at("f1_macro").get<double>();
                row["f1_micro"] = m.at("f1_micro").get<double>();
                row["accuracy"] = m.at("accuracy").get<double>();
                std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f\n", name.c_str(),
                              m.at("f1_macro").get<double>(), m.at("f1_micro").get<double>(),
                              m.at("accuracy").get<double>());
            } else {
                row["ccc_valence"] = m.at("ccc_valence").get<double>();
                row["ccc_arousal"] = m.at("ccc_arousal").get<double>();
                row["ccc_dominance"] = m.at("ccc_dominance").get<double>();
                std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f\n", name.c_str(),
                              m.at("ccc_valence").get<double>(), m.at("ccc_arousal").get<double>(),
                              m.at("ccc_dominance").get<double>());
            }
            row["head"] = report.at("head");
            csv += buf;
        } catch (const std::exception& e) {
            row["error"] = e.what();
            std::fprintf(stderr, "ablate: variant %s failed: %s\n", name.c_str(), e.what());
        }
        rows.push_back(std::move(row));
    }
    fs::create_directories(cfg.output);
    detail::spill((fs::path(cfg.output) / "ablate.csv").string(), csv);
    detail::spill((fs::path(cfg.output) / "ablate.json").string(), rows.dump(2) + "\n");
    return rows;
}

// ---- heatmap export ----------------------------------------------------------------

namespace detail {

inline std::string format_csv(const Tensor<double>& m) {
    std::string out;
    char buf[32];
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) {
            std::snprintf(buf, sizeof buf, "%.6f", m.at(r, c));
            out += buf;
            out += c + 1 == m.cols() ? '\n' : ',';
        }
    }
    return out;
}

// 8-bit binary PGM, min-max normalized per matrix: the maximum cell maps to
// 255 and the minimum to 0. A constant matrix (including 1x1) renders as 255.
inline std::string format_pgm(const Tensor<double>& m) {
    std::string out = "P5\n" + std::to_string(m.cols()) + " " + std::to_string(m.rows()) + "\n255\n";
    double lo = m.at(0, 0), hi = m.at(0, 0);
    for (std::size_t i = 0; i < m.size(); ++i) {
        lo = std::min(lo, static_cast<double>(m.data()[i]));
        hi = std::max(hi, static_cast<double>(m.data()[i]));
    }
    for (std::size_t i = 0; i < m.size(); ++i) {
        const double v = static_cast<double>(m.data()[i]);
        const long byte = hi == lo ? 255 : std::lround((v - lo) / (hi - lo) * 255.0);
        out += static_cast<char>(static_cast<unsigned char>(byte));
    }
    return out;
}

}  // namespace detail

// Forwards one sample through a trained checkpoint and exports the requested
// attention matrix as CSV (6-decimal cells) and PGM (min-max grayscale).
// Directions: video-query (n x m), audio-query (m x n), ov (timesteps x 2).
template <std::floating_point T>
nlohmann::json run_heatmap(const RunConfig& cfg, const std::string& ckpt_path,
                           const std::string& sample_id, const std::string& direction) {
    namespace fs = std::filesystem;
    if (direction != "video-query" && direction != "audio-query" && direction != "ov")
        throw ConfigError("heatmap: unknown direction \"" + direction +
                          "\" (use video-query, audio-query, or ov)");
    DeIiiModel<T> model = load_model<T>(ckpt_path, cfg.model);

    const Manifest manifest = Manifest::load(cfg.manifest_path());
    std::size_t index = manifest.samples.size();
    for (std::size_t i = 0; i < manifest.samples.size(); ++i)
        if (manifest.samples[i].id == sample_id) index = i;
    if (index == manifest.samples.size())
        throw DataError("heatmap: no sample with id \"" + sample_id + "\" in " + cfg.manifest_path());

    Dataset<T> ds = load_dataset<T>(cfg.manifest_path());
    ForwardOutput<T> fwd = model.forward(ds.samples[index]);
    const std::optional<AttentionRecord<T>>* rec = &fwd.video_query_record;
    if (direction == "audio-query") rec = &fwd.audio_query_record;
    if (direction == "ov") rec = &fwd.ov_record;
    if (!rec->has_value())
        throw ConfigError("heatmap: direction " + direction + " is unavailable for variant " +
                          variant_name(model.cfg.variant));

    const Tensor<double> weights = (*rec)->weights.template cast<double>();
    fs::create_directories(cfg.output);
    const std::string base = (fs::path(cfg.output) / ("heatmap-" + sample_id + "-" + direction)).string();
    detail::spill(base + ".csv", detail::format_csv(weights));
    detail::spill(base + ".pgm", detail::format_pgm(weights));
    return nlohmann::json{{"rows", weights.rows()},
                          {"cols", weights.cols()},
                          {"query", (*rec)->query_modality},
                          {"keys", (*rec)->key_modality},
                          {"csv", base + ".csv"},
                          {"pgm", base + ".pgm"}};
}

// ---- synth command -----------------------------------------------------------------

// Materializes the configured synthetic dataset under data.root. An existing
// non-empty target is only replaced when force is set.
inline Manifest run_synth(const RunConfig& cfg, bool force) {
    namespace fs = std::filesystem;
    if (!cfg.data.synth) throw ConfigError("synth: config has no data.synth section");
    const std::string& root = cfg.data.root;
    if (fs::exists(root) && !fs::is_empty(root)) {
        if (!force)
            throw ConfigError("synth: output directory " + root +
                              " exists and is not empty (pass --force to replace it)");
        fs::remove_all(root);
    }
    Manifest manifest = synth_generate(*cfg.data.synth, root);
    cfg.echo_into(root);
    return manifest;
}

}  // namespace deiii
