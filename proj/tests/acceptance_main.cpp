// SPDX-License-Identifier: Apache-2.0
// Release gate: one PASS/FAIL line per shipping criterion, nonzero exit if any
// fail. The learning criteria train real models and dominate the runtime.
#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "deiii/run.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace deiii;
using TensorD = Tensor<double>;
using VarD = Var<double>;

namespace {

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

struct Gate {
    int index = 0;
    int failures = 0;

    void run(const std::string& name, const std::function<std::string()>& criterion) {
        ++index;
        bool ok = false;
        std::string detail;
        try {
            detail = criterion();
            ok = true;
        } catch (const std::exception& e) {
            detail = e.what();
        }
        if (!ok) ++failures;
        std::printf("%s  [%d/9] %-22s %s\n", ok ? "PASS" : "FAIL", index, name.c_str(),
                    detail.c_str());
        std::fflush(stdout);
    }
};

// Thrown by criteria to fail with a readable reason instead of an assert.
struct Unmet : std::runtime_error {
    explicit Unmet(const std::string& what) : std::runtime_error(what) {}
};

void require(bool cond, const std::string& why) {
    if (!cond) throw Unmet(why);
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag)
        : path(fs::temp_directory_path() / ("deiii-acceptance-" + tag)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string str(const std::string& rel = "") const {
        return (rel.empty() ? path : path / rel).string();
    }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- criterion 1: gradient fidelity ------------------------------------------------

std::string check_gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(41);
    Rng data_rng(42);
    double worst = 0;
    std::size_t checks = 0;

    auto note = [&](double rel) {
        worst = std::max(worst, rel);
        ++checks;
    };
    // Scalarize a block output against fixed random coefficients so every
    // output coordinate contributes to the checked gradient.
    auto weigh = [&](const VarD& out, const TensorD& c) { return sum_all(mul(out, VarD::leaf(c))); };
    auto against_param = [&](VarD* p, const std::function<VarD()>& loss) {
        TensorD w0 = p->value();
        note(grad_check<double>(
            [&](const VarD& w) {
                *p = w;
                return loss();
            },
            w0));
        *p = VarD::leaf(w0, true);
    };

    {  // linear
        auto lin = Linear<double>::make(5, 4, rng);
        TensorD x = oracles::random_tensor(data_rng, {3, 5});
        TensorD c = oracles::random_tensor(data_rng, {3, 4});
        note(grad_check<double>([&](const VarD& v) { return weigh(lin.forward(v), c); }, x));
        against_param(&lin.weight, [&] { return weigh(lin.forward(VarD::leaf(x)), c); });
    }
    {  // multi-head self-attention
        auto mhsa = MultiHeadSelfAttention<double>::make(6, 2, rng);
        TensorD x = oracles::random_tensor(data_rng, {4, 6});
        TensorD c = oracles::random_tensor(data_rng, {4, 6});
        note(grad_check<double>([&](const VarD& v) { return weigh(mhsa.forward(v).first, c); }, x));
        against_param(&mhsa.q.weight, [&] { return weigh(mhsa.forward(VarD::leaf(x)).first, c); });
    }
    {  // conformer block
        auto block = ConformerBlock<double>::make(6, 2, 3, rng);
        TensorD x = oracles::random_tensor(data_rng, {4, 6});
        TensorD c = oracles::random_tensor(data_rng, {4, 6});
        note(grad_check<double>([&](const VarD& v) { return weigh(block.forward(v), c); }, x));
        against_param(&block.conv.dw, [&] { return weigh(block.forward(VarD::leaf(x)), c); });
    }
    {  // transformer block
        auto block = TransformerBlock<double>::make(6, 2, rng);
        TensorD x = oracles::random_tensor(data_rng, {4, 6});
        TensorD c = oracles::random_tensor(data_rng, {4, 6});
        note(grad_check<double>([&](const VarD& v) { return weigh(block.forward(v), c); }, x));
        against_param(&block.mhsa.q.weight, [&] { return weigh(block.forward(VarD::leaf(x)), c); });
    }
    {  // pairwise flow/video fusion
        auto ov = OvFusionParams<double>::make(6, rng);
        TensorD o = oracles::random_tensor(data_rng, {4, 6});
        TensorD v = oracles::random_tensor(data_rng, {4, 6});
        TensorD c = oracles::random_tensor(data_rng, {4, 6});
        note(grad_check<double>(
            [&](const VarD& vo) { return weigh(ov_fuse(ov, vo, VarD::leaf(v)).first, c); }, o));
        note(grad_check<double>(
            [&](const VarD& vv) { return weigh(ov_fuse(ov, VarD::leaf(o), vv).first, c); }, v));
        against_param(&ov.fc.weight,
                      [&] { return weigh(ov_fuse(ov, VarD::leaf(o), VarD::leaf(v)).first, c); });
    }
    {  // inter-modal attention (with learnable temperature)
        auto ife = IfeParams<double>::make(6, rng, /*learnable_temperature=*/true);
        TensorD q = oracles::random_tensor(data_rng, {3, 6});
        TensorD k = oracles::random_tensor(data_rng, {4, 6});
        TensorD c = oracles::random_tensor(data_rng, {3, 6});
        auto call = [&](const VarD& qv, const VarD& kv) {
            return weigh(ife_attend(ife, qv, kv, "q", "k").first, c);
        };
        note(grad_check<double>([&](const VarD& v) { return call(v, VarD::leaf(k)); }, q));
        note(grad_check<double>([&](const VarD& v) { return call(VarD::leaf(q), v); }, k));
        against_param(&ife.w_q.weight, [&] { return call(VarD::leaf(q), VarD::leaf(k)); });
        against_param(&ife.temperature, [&] { return call(VarD::leaf(q), VarD::leaf(k)); });
    }
    {  // temporal max pool
        TensorD x = oracles::random_tensor(data_rng, {4, 6});
        TensorD c = oracles::random_tensor(data_rng, {6});
        note(grad_check<double>([&](const VarD& v) { return weigh(temporal_max_pool(v), c); }, x));
    }
    {  // both losses
        TensorD logits = oracles::random_tensor(data_rng, {5, 4}, -2.0, 2.0);
        const std::vector<std::size_t> labels{1, 0, 3, 2, 0};
        note(grad_check<double>([&](const VarD& v) { return cross_entropy(v, labels); }, logits));
        TensorD pred = oracles::random_tensor(data_rng, {6, 3});
        TensorD target = oracles::random_tensor(data_rng, {6, 3});
        note(grad_check<double>([&](const VarD& v) { return ccc_loss(v, target); }, pred));
    }
    {  // full model forward + joint loss
        ModelConfig cfg;
        cfg.variant = Variant::IfeFusion;
        cfg.model_dim = 8;
        cfg.heads = 2;
        cfg.audio_blocks = cfg.video_blocks = cfg.flow_blocks = 1;
        cfg.classes = 2;
        cfg.audio_in = 3;
        cfg.video_in = 4;
        cfg.flow_in = 4;
        cfg.learnable_temperature = true;
        Rng mrng(43);
        DeIiiModel<double> model = DeIiiModel<double>::build(cfg, mrng);
        std::vector<LoadedSample<double>> samples;
        for (std::size_t i = 0; i < 2; ++i) {
            LoadedSample<double> s;
            s.audio = oracles::random_tensor(data_rng, {2, cfg.audio_in});
            s.video = oracles::random_tensor(data_rng, {3, cfg.video_in});
            s.flow = oracles::random_tensor(data_rng, {3, cfg.flow_in});
            s.label_class = i;
            samples.push_back(std::move(s));
        }
        Batch<double> batch;
        for (const auto& s : samples) batch.samples.push_back(&s);
        auto joint = [&] { return batch_losses(model, batch).total; };
        against_param(&model.flow_stack->proj.weight, joint);
        against_param(&model.audio_stack.conformers[0].ffn1.w1.weight, joint);
        against_param(&model.ife_v->w_val.weight, joint);
        against_param(&model.head_fusion.w2.bias, joint);
    }

    const double dt = seconds_since(t0);
    require(worst < 1e-4, fmt("max rel err %.2e >= 1e-4", worst));
    require(dt < 60.0, fmt("took %.1fs >= 60s", dt));
    return fmt("max rel err %.1e over %zu checks in %.1fs", worst, checks, dt);
}

// ---- criterion 2: attention invariants ---------------------------------------------

std::string check_attention_invariants() {
    Rng rng(77);
    double worst_alpha = 0, worst_beta = 0, max_abs_s = 0;
    for (int it = 0; it < 1000; ++it) {
        const std::size_t d = 2 * (1 + rng.below(4));  // 2, 4, 6, 8
        const std::size_t nq = 1 + rng.below(5);
        const std::size_t nk = 1 + rng.below(5);
        auto ife = IfeParams<double>::make(d, rng, /*learnable_temperature=*/it % 3 == 0);
        TensorD q = oracles::random_tensor(rng, {nq, d}, -3.0, 3.0);
        TensorD k = oracles::random_tensor(rng, {nk, d}, -3.0, 3.0);
        auto [out, rec] = ife_attend(ife, VarD::leaf(q), VarD::leaf(k), "q", "k");
        for (std::size_t i = 0; i < nq; ++i) {
            double row = 0;
            for (std::size_t j = 0; j < nk; ++j) {
                row += rec.weights.at(i, j);
                max_abs_s = std::max(max_abs_s, std::abs(rec.similarities.at(i, j)));
            }
            worst_alpha = std::max(worst_alpha, std::abs(row - 1.0));
        }
        auto ov = OvFusionParams<double>::make(d, rng);
        TensorD o = oracles::random_tensor(rng, {nq, d}, -3.0, 3.0);
        TensorD v = oracles::random_tensor(rng, {nq, d}, -3.0, 3.0);
        auto [fused, beta] = ov_fuse(ov, VarD::leaf(o), VarD::leaf(v));
        for (std::size_t i = 0; i < nq; ++i)
            worst_beta =
                std::max(worst_beta, std::abs(beta.weights.at(i, 0) + beta.weights.at(i, 1) - 1.0));
    }
    require(worst_alpha < 1e-12, fmt("alpha row sum off by %.2e >= 1e-12", worst_alpha));
    require(worst_beta < 1e-12, fmt("beta pair sum off by %.2e >= 1e-12", worst_beta));
    require(max_abs_s <= 1.0, fmt("similarity |s| = %.17g > 1", max_abs_s));
    return fmt("1000 calls: row sums off by <= %.1e, |s| <= %.15f", std::max(worst_alpha, worst_beta),
               max_abs_s);
}

// ---- criterion 3: metric and loss oracles ------------------------------------------

std::string check_metric_oracles() {
    Rng rng(301);
    double worst = 0;
    auto note = [&](double got, double want) { worst = std::max(worst, std::abs(got - want)); };

    for (int it = 0; it < 100; ++it) {
        const std::size_t b = 2 + rng.below(39);
        std::vector<double> x(b), y(b);
        for (std::size_t i = 0; i < b; ++i) {
            x[i] = rng.uniform(-2, 2);
            y[i] = rng.uniform(-2, 2);
        }
        note(ccc(x, y), oracles::naive_ccc(x, y));
    }
    for (int it = 0; it < 100; ++it) {
        const std::size_t b = 2 + rng.below(20);
        TensorD pred = oracles::random_tensor(rng, {b, 3}, -2.0, 2.0);
        TensorD target = oracles::random_tensor(rng, {b, 3}, -2.0, 2.0);
        double want = 0;
        auto column = [&](const TensorD& t, std::size_t d) {
            std::vector<double> col(b);
            for (std::size_t i = 0; i < b; ++i) col[i] = t.at(i, d);
            return col;
        };
        for (std::size_t d = 0; d < 3; ++d)
            want += (1.0 - oracles::naive_ccc(column(pred, d), column(target, d))) / 3.0;
        note(ccc_loss(VarD::leaf(pred), target).value().at(0), want);
    }
    for (int it = 0; it < 100; ++it) {
        const std::size_t c = 2 + rng.below(5);
        const std::size_t n = 1 + rng.below(60);
        std::vector<std::size_t> preds(n), labels(n);
        for (std::size_t i = 0; i < n; ++i) {
            preds[i] = rng.below(c);
            labels[i] = rng.below(c);
        }
        const F1Result got = f1_scores(preds, labels, c);
        const oracles::NaiveF1 want = oracles::naive_f1(preds, labels, c);
        note(got.macro, want.macro);
        note(got.micro, want.micro);
        for (std::size_t k = 0; k < c; ++k) note(got.per_class[k], want.per_class[k]);
        double hits = 0;
        for (std::size_t i = 0; i < n; ++i) hits += preds[i] == labels[i] ? 1 : 0;
        note(accuracy(preds, labels), hits / static_cast<double>(n));
    }
    for (int it = 0; it < 100; ++it) {
        const std::size_t b = 1 + rng.below(12);
        const std::size_t c = 2 + rng.below(5);
        TensorD logits = oracles::random_tensor(rng, {b, c}, -3.0, 3.0);
        std::vector<std::size_t> labels(b);
        for (std::size_t i = 0; i < b; ++i) labels[i] = rng.below(c);
        note(cross_entropy(VarD::leaf(logits), labels).value().at(0),
             oracles::naive_cross_entropy(logits, labels));
    }

    // Worked values.
    note(ccc({1, 2, 3}, {2, 4, 6}), 4.0 / 11.0);
    const F1Result worked = f1_scores({0, 0, 1, 1}, {0, 1, 1, 1}, 2);
    note(worked.macro, 11.0 / 15.0);
    note(cross_entropy(VarD::leaf(TensorD(Shape{2, 5}, 0.7)), {0, 4}).value().at(0), std::log(5.0));

    require(worst < 1e-12, fmt("max oracle gap %.2e >= 1e-12", worst));
    return fmt("ccc, ccc_loss, f1, accuracy, cross-entropy within %.1e of transcriptions", worst);
}

// ---- learning criteria helpers ------------------------------------------------------

RunConfig learning_config(const std::string& root, const std::string& out) {
    RunConfig cfg;
    cfg.model.variant = Variant::IfeVideo;
    cfg.model.model_dim = 16;
    cfg.model.heads = 2;
    cfg.model.audio_blocks = cfg.model.video_blocks = cfg.model.flow_blocks = 1;
    cfg.model.classes = 4;
    cfg.model.audio_in = cfg.model.video_in = cfg.model.flow_in = 16;
    cfg.train.lr = 2e-3;
    cfg.train.epochs = 200;
    cfg.train.batch_size = 16;
    cfg.train.early_stop_patience = 8;
    cfg.train.seed = 1;
    cfg.data.root = root;
    cfg.data.synth = SynthSpec{};
    cfg.output = out;
    return cfg;
}

double test_accuracy(const RunConfig& cfg, Split split) {
    const TrainOutcome outcome = run_train<double>(cfg);
    const nlohmann::json report = run_eval<double>(cfg, outcome.checkpoint_path, split, {});
    return report.at("metrics").at("accuracy").get<double>();
}

// ---- criterion 4: end-to-end learning ----------------------------------------------

std::string check_learning() {
    const auto t0 = std::chrono::steady_clock::now();
    TempDir tmp("learn");
    RunConfig cfg = learning_config(tmp.str("data"), tmp.str("out"));
    run_synth(cfg, /*force=*/true);
    const TrainOutcome outcome = run_train<double>(cfg);
    const double train_acc = run_eval<double>(cfg, outcome.checkpoint_path, Split::Train, {})
                                 .at("metrics")
                                 .at("accuracy")
                                 .get<double>();
    const double test_acc = run_eval<double>(cfg, outcome.checkpoint_path, Split::Test, {})
                                .at("metrics")
                                .at("accuracy")
                                .get<double>();
    const double dt = seconds_since(t0);
    require(outcome.epochs_run <= 200, fmt("ran %zu epochs > 200", outcome.epochs_run));
    require(train_acc >= 0.95, fmt("train accuracy %.3f < 0.95", train_acc));
    require(test_acc >= 0.90, fmt("test accuracy %.3f < 0.90", test_acc));
    require(dt < 300.0, fmt("took %.1fs >= 300s", dt));
    return fmt("train acc %.3f, test acc %.3f after %zu epochs in %.1fs", train_acc, test_acc,
               outcome.epochs_run, dt);
}

// ---- criteria 5 and 6: fusion and flow advantages -----------------------------------

std::string check_margins(const std::string& tag, SynthMode mode, Variant strong, Variant weak,
                          const std::function<void(RunConfig&)>& tweak) {
    TempDir tmp(tag);
    RunConfig base = learning_config(tmp.str("data"), tmp.str("out"));
    base.data.synth->mode = mode;
    base.data.synth->seed = 7;
    tweak(base);
    run_synth(base, /*force=*/true);

    std::string margins;
    for (std::uint64_t seed : {1, 2, 3}) {
        double acc[2];
        Variant variants[2] = {strong, weak};
        for (int i = 0; i < 2; ++i) {
            RunConfig cfg = base;
            cfg.model.variant = variants[i];
            cfg.train.seed = seed;
            cfg.output = tmp.str("out-" + std::string(variant_name(variants[i])) + "-" +
                                 std::to_string(seed));
            acc[i] = test_accuracy(cfg, Split::Test);
        }
        const double margin = acc[0] - acc[1];
        margins += fmt("%s%+.2f", margins.empty() ? "" : "/", margin);
        require(margin >= 0.10, fmt("seed %" PRIu64 ": %s %.2f vs %s %.2f, margin %+.2f < 0.10",
                                    seed, variant_name(strong).c_str(), acc[0],
                                    variant_name(weak).c_str(), acc[1], margin));
    }
    return fmt("%s leads %s by %s accuracy on 3/3 seeds", variant_name(strong).c_str(),
               variant_name(weak).c_str(), margins.c_str());
}

std::string check_fusion_advantage() {
    return check_margins("fusion", SynthMode::JointOnly, Variant::IfeVideo, Variant::NoneIfe,
                         [](RunConfig& cfg) {
                             cfg.model.model_dim = 32;
                             cfg.train.batch_size = 8;
                             cfg.train.early_stop_patience = 40;
                             cfg.data.synth->signal = 2.0;
                             cfg.data.synth->train_count = 300;
                         });
}

std::string check_flow_advantage() {
    return check_margins("flow", SynthMode::FlowOnly, Variant::IfeVideo, Variant::IfeVF,
                         [](RunConfig& cfg) {
                             cfg.train.epochs = 60;
                             cfg.train.batch_size = 8;
                             cfg.train.early_stop_patience = 10;
                         });
}

// ---- criterion 7: determinism -------------------------------------------------------

std::string check_determinism() {
    TempDir tmp("determinism");
    RunConfig cfg = learning_config(tmp.str("data"), tmp.str("out-a"));
    cfg.model.model_dim = 8;
    cfg.model.audio_in = cfg.model.video_in = cfg.model.flow_in = 4;
    cfg.train.epochs = 3;
    cfg.train.early_stop_patience = 0;
    cfg.train.batch_size = 4;
    cfg.train.seed = 5;
    cfg.data.synth->audio_dim = cfg.data.synth->video_dim = cfg.data.synth->flow_dim = 4;
    cfg.data.synth->video_len = 3;
    cfg.data.synth->audio_len = 2;
    cfg.data.synth->train_count = 12;
    cfg.data.synth->val_count = 6;
    cfg.data.synth->test_count = 6;
    run_synth(cfg, /*force=*/true);

    const TrainOutcome first = run_train<double>(cfg);
    cfg.output = tmp.str("out-b");
    const TrainOutcome second = run_train<double>(cfg);
    const std::string log_a = detail::slurp(first.log_path);
    const std::string log_b = detail::slurp(second.log_path);
    require(!log_a.empty(), "first run produced an empty loss log");
    require(log_a == log_b, "loss logs differ between identical runs");
    return fmt("identical %zu-byte loss logs across two seeded runs", log_a.size());
}

// ---- criterion 8: heatmap export ----------------------------------------------------

// Parses a 6-decimal CSV matrix back into rows of doubles.
std::vector<std::vector<double>> parse_csv(const std::string& text) {
    std::vector<std::vector<double>> rows;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        std::vector<double> row;
        std::size_t cell = start;
        while (cell < end) {
            std::size_t comma = text.find(',', cell);
            if (comma == std::string::npos || comma > end) comma = end;
            row.push_back(std::stod(text.substr(cell, comma - cell)));
            cell = comma + 1;
        }
        if (!row.empty()) rows.push_back(std::move(row));
        start = end + 1;
    }
    return rows;
}

std::string check_heatmaps() {
    TempDir tmp("heatmap");
    RunConfig cfg = learning_config(tmp.str("data"), tmp.str("out"));
    cfg.model.variant = Variant::IfeFusion;
    cfg.model.model_dim = 8;
    cfg.model.classes = 2;
    cfg.model.audio_in = cfg.model.video_in = cfg.model.flow_in = 4;
    cfg.train.epochs = 2;
    cfg.train.early_stop_patience = 0;
    cfg.train.batch_size = 4;
    cfg.data.synth->classes = 2;
    cfg.data.synth->audio_dim = cfg.data.synth->video_dim = cfg.data.synth->flow_dim = 4;
    cfg.data.synth->video_len = 3;  // n frames
    cfg.data.synth->audio_len = 2;  // m audio steps
    cfg.data.synth->train_count = 8;
    cfg.data.synth->val_count = 4;
    cfg.data.synth->test_count = 4;
    run_synth(cfg, /*force=*/true);
    const TrainOutcome outcome = run_train<double>(cfg);

    double worst_row = 0;
    const struct {
        const char* direction;
        std::size_t rows, cols;
    } cases[] = {{"video-query", 3, 2}, {"audio-query", 2, 3}};
    for (const auto& c : cases) {
        const nlohmann::json meta =
            run_heatmap<double>(cfg, outcome.checkpoint_path, "train0000", c.direction);
        require(meta.at("rows") == c.rows && meta.at("cols") == c.cols,
                fmt("%s matrix is %zu x %zu, expected %zu x %zu", c.direction,
                    meta.at("rows").get<std::size_t>(), meta.at("cols").get<std::size_t>(), c.rows,
                    c.cols));
        const auto rows = parse_csv(detail::slurp(meta.at("csv").get<std::string>()));
        require(rows.size() == c.rows, fmt("%s CSV has %zu rows", c.direction, rows.size()));
        for (const auto& row : rows) {
            require(row.size() == c.cols, fmt("%s CSV row width %zu", c.direction, row.size()));
            double sum = 0;
            for (double v : row) sum += v;
            worst_row = std::max(worst_row, std::abs(sum - 1.0));
        }
    }
    require(worst_row <= 5e-6, fmt("rounded CSV row sum off by %.2e > 5e-6", worst_row));

    // Degenerate single-frame, single-window case.
    RunConfig one = cfg;
    one.data.root = tmp.str("data1");
    one.output = tmp.str("out1");
    one.data.synth->video_len = 1;
    one.data.synth->audio_len = 1;
    one.train.epochs = 1;
    run_synth(one, /*force=*/true);
    const TrainOutcome tiny = run_train<double>(one);
    const nlohmann::json meta = run_heatmap<double>(one, tiny.checkpoint_path, "train0000", "video-query");
    const std::string csv = detail::slurp(meta.at("csv").get<std::string>());
    require(csv == "1.000000\n", "1x1 CSV is not the single cell 1.000000");
    return fmt("n x m and m x n exports, row sums off by <= %.1e, 1x1 emits 1.000000", worst_row);
}

// ---- criterion 9: file-format round-trip --------------------------------------------

std::string check_round_trip() {
    TempDir tmp("roundtrip");
    Rng rng(909);
    const std::string a = tmp.str("a.def1"), b = tmp.str("b.def1");
    for (int it = 0; it < 100; ++it) {
        const std::size_t rank = 1 + rng.below(3);
        Shape shape(rank);
        for (auto& d : shape) d = 1 + rng.below(6);
        if (it % 2 == 0) {
            const TensorD t = oracles::random_tensor(rng, shape, -1e6, 1e6);
            write_feature_file(a, t);
            write_feature_file(b, read_feature_file<double>(a));
        } else {
            Tensor<float> t(shape);
            for (std::size_t i = 0; i < t.size(); ++i)
                t.data()[i] = static_cast<float>(rng.uniform(-1e6, 1e6));
            write_feature_file(a, t);
            write_feature_file(b, read_feature_file<float>(a));
        }
        require(detail::slurp(a) == detail::slurp(b), fmt("round trip %d not byte-identical", it));
    }

    write_feature_file(a, oracles::random_tensor(rng, {2, 3}));
    const std::string good = detail::slurp(a);
    std::size_t rejected = 0;
    const struct {
        const char* what;
        std::function<std::string()> corrupt;
    } battery[] = {
        {"bad magic", [&] { std::string s = good; s[0] = 'X'; return s; }},
        {"bad version", [&] { std::string s = good; s[4] = 9; return s; }},
        {"bad dtype", [&] { std::string s = good; s[6] = 7; return s; }},
        {"zero rank", [&] { std::string s = good; s[7] = 0; return s; }},
        {"huge rank", [&] { std::string s = good; s[7] = 9; return s; }},
        {"zero dim", [&] { std::string s = good; s[8] = s[9] = s[10] = s[11] = 0; return s; }},
        {"truncated payload", [&] { return good.substr(0, good.size() - 3); }},
        {"trailing bytes", [&] { return good + "xx"; }},
    };
    for (const auto& c : battery) {
        detail::spill(b, c.corrupt());
        try {
            read_feature_file<double>(b);
        } catch (const DataError&) {
            ++rejected;
            continue;
        }
        throw Unmet(fmt("corrupted file (%s) was accepted", c.what));
    }
    return fmt("100 tensors byte-identical after write-read-write; %zu corruptions rejected",
               rejected);
}

}  // namespace

int main() {
    Gate gate;
    gate.run("gradient fidelity", check_gradients);
    gate.run("attention invariants", check_attention_invariants);
    gate.run("metric oracles", check_metric_oracles);
    gate.run("end-to-end learning", check_learning);
    gate.run("fusion advantage", check_fusion_advantage);
    gate.run("flow advantage", check_flow_advantage);
    gate.run("determinism", check_determinism);
    gate.run("heatmap export", check_heatmaps);
    gate.run("file round-trip", check_round_trip);
    std::printf("%d/9 criteria met\n", 9 - gate.failures);
    return gate.failures == 0 ? 0 : 1;
}
