// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "deiii/data.hpp"
#include "deiii/fusion.hpp"
#include "deiii/losses.hpp"
#include "deiii/nn.hpp"

// The assembled network: audio/visual encoder stacks, pairwise flow/frame
// fusion, inter-modal enhancement, three prediction heads, and the training
// machinery (AdamW, batched steps, head selection, checkpoints).

namespace deiii {

// ---- configuration ---------------------------------------------------------------

// Ablation variants. The IFE-V-* family keeps the video-query enhancement and
// varies how the visual stream is formed.
enum class Variant {
    IfeVideo,   // video-query IFE only
    IfeAudio,   // audio-query IFE only
    IfeFusion,  // both directions
    NoneIfe,    // neither (enhanced features equal the raw encodings)
    IfeVO,      // visual stream from flow features alone
    IfeVF,      // visual stream from frame features alone
    IfeVFosc,   // raw flow/frame concatenated along time, one visual stack
    IfeVFodc,   // raw flow/frame concatenated along channels, one visual stack
    IfeVFods,   // raw flow/frame summed, one visual stack
    IfeVEarly,  // fusion applied to projected raw features, before the stack
    IfeVTrans,  // visual stacks use vanilla transformer blocks
};

inline const std::vector<std::pair<Variant, std::string>>& variant_names() {
    static const std::vector<std::pair<Variant, std::string>> names{
        {Variant::IfeVideo, "IFE-Video"},   {Variant::IfeAudio, "IFE-Audio"},
        {Variant::IfeFusion, "IFE-Fusion"}, {Variant::NoneIfe, "None-IFE"},
        {Variant::IfeVO, "IFE-V-O"},        {Variant::IfeVF, "IFE-V-F"},
        {Variant::IfeVFosc, "IFE-V-FOSC"},  {Variant::IfeVFodc, "IFE-V-FODC"},
        {Variant::IfeVFods, "IFE-V-FODS"},  {Variant::IfeVEarly, "IFE-V-Early"},
        {Variant::IfeVTrans, "IFE-V-Trans"}};
    return names;
}

inline std::string variant_name(Variant v) {
    for (const auto& [var, name] : variant_names())
        if (var == v) return name;
    throw std::logic_error("variant_name: unmapped variant");
}

inline Variant parse_variant(const std::string& s) {
    for (const auto& [var, name] : variant_names())
        if (name == s) return var;
    std::string known;
    for (const auto& [var, name] : variant_names()) known += (known.empty() ? "" : ", ") + name;
    throw ConfigError("unknown variant \"" + s + "\" (known: " + known + ")");
}

enum class Task { Discrete, Continuous };

inline const char* task_name(Task t) { return t == Task::Discrete ? "discrete" : "continuous"; }

inline Task parse_task(const std::string& s) {
    if (s == "discrete") return Task::Discrete;
    if (s == "continuous") return Task::Continuous;
    throw ConfigError("unknown task \"" + s + "\" (use discrete or continuous)");
}

struct ModelConfig {
    Variant variant = Variant::IfeVideo;
    std::size_t model_dim = 64;
    std::size_t heads = 4;
    std::size_t audio_blocks = 3;
    std::size_t video_blocks = 3;
    std::size_t flow_blocks = 2;
    Task task = Task::Discrete;
    std::size_t classes = 4;  // discrete only; continuous heads emit 3 values
    std::size_t audio_in = 16;
    std::size_t video_in = 16;
    std::size_t flow_in = 16;
    std::size_t kernel = 3;  // desk scale; the full-scale preset uses 7
    bool learnable_temperature = false;
    bool positional = false;
    double dropout = 0.0;

    std::size_t head_out() const { return task == Task::Discrete ? classes : 3; }

    bool combines_raw_streams() const {
        return variant == Variant::IfeVFosc || variant == Variant::IfeVFodc ||
               variant == Variant::IfeVFods;
    }

    bool uses_flow() const { return variant != Variant::IfeVF; }
    bool uses_video() const { return variant != Variant::IfeVO; }
    bool has_ov() const {
        switch (variant) {
            case Variant::IfeVideo:
            case Variant::IfeAudio:
            case Variant::IfeFusion:
            case Variant::NoneIfe:
            case Variant::IfeVEarly:
            case Variant::IfeVTrans: return true;
            default: return false;
        }
    }
    bool has_ife_video_query() const {
        return variant != Variant::NoneIfe && variant != Variant::IfeAudio;
    }
    bool has_ife_audio_query() const {
        return variant == Variant::IfeAudio || variant == Variant::IfeFusion;
    }

    void validate() const {
        if (model_dim == 0 || heads == 0 || model_dim % heads != 0)
            throw ConfigError("model: dim " + std::to_string(model_dim) + " must be divisible by " +
                              std::to_string(heads) + " heads");
        if (kernel % 2 == 0) throw ConfigError("model: conv kernel must be odd, got " + std::to_string(kernel));
        if (audio_in == 0 || video_in == 0 || flow_in == 0)
            throw ConfigError("model: input dims must be positive");
        if (task == Task::Discrete && classes < 2)
            throw ConfigError("model: discrete task needs at least 2 classes");
        if (dropout < 0.0 || dropout >= 1.0)
            throw ConfigError("model: dropout must be in [0, 1), got " + std::to_string(dropout));
        if (combines_raw_streams() && flow_in != video_in)
            throw ConfigError("model: " + variant_name(variant) + " combines raw flow/frame features; " +
                              "flow dim " + std::to_string(flow_in) + " must equal video dim " +
                              std::to_string(video_in));
    }

    nlohmann::json to_json() const {
        return nlohmann::json{{"variant", variant_name(variant)},
                              {"model-dim", model_dim},
                              {"heads", heads},
                              {"blocks", {audio_blocks, video_blocks, flow_blocks}},
                              {"task", task_name(task)},
                              {"classes", classes},
                              {"input-dims", {audio_in, video_in, flow_in}},
                              {"kernel", kernel},
                              {"learnable-temperature", learnable_temperature},
                              {"positional", positional},
                              {"dropout", dropout}};
    }

    static ModelConfig from_json(const nlohmann::json& j);
};

inline ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    static const std::set<std::string> known{"variant", "model-dim", "heads",  "blocks",
                                             "task",    "classes",   "input-dims", "kernel",
                                             "learnable-temperature", "positional", "dropout"};
    if (!j.is_object()) throw ConfigError("model config must be a JSON object");
    for (const auto& [key, _] : j.items())
        if (!known.count(key)) throw ConfigError("model config: unknown key \"" + key + "\"");
    ModelConfig cfg;
    try {
        if (j.contains("variant")) cfg.variant = parse_variant(j.at("variant").get<std::string>());
        if (j.contains("model-dim")) cfg.model_dim = j.at("model-dim").get<std::size_t>();
        if (j.contains("heads")) cfg.heads = j.at("heads").get<std::size_t>();
        if (j.contains("blocks")) {
            const auto& b = j.at("blocks");
            if (!b.is_array() || b.size() != 3)
                throw ConfigError("model config: blocks must be [audio, video, flow]");
            cfg.audio_blocks = b.at(0).get<std::size_t>();
            cfg.video_blocks = b.at(1).get<std::size_t>();
            cfg.flow_blocks = b.at(2).get<std::size_t>();
        }
        if (j.contains("task")) cfg.task = parse_task(j.at("task").get<std::string>());
        if (j.contains("classes")) cfg.classes = j.at("classes").get<std::size_t>();
        if (j.contains("input-dims")) {
            const auto& d = j.at("input-dims");
            if (!d.is_array() || d.size() != 3)
                throw ConfigError("model config: input-dims must be [audio, video, flow]");
            cfg.audio_in = d.at(0).get<std::size_t>();
            cfg.video_in = d.at(1).get<std::size_t>();
            cfg.flow_in = d.at(2).get<std::size_t>();
        }
        if (j.contains("kernel")) cfg.kernel = j.at("kernel").get<std::size_t>();
        if (j.contains("learnable-temperature"))
            cfg.learnable_temperature = j.at("learnable-temperature").get<bool>();
        if (j.contains("positional")) cfg.positional = j.at("positional").get<bool>();
        if (j.contains("dropout")) cfg.dropout = j.at("dropout").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

// ---- forward output ---------------------------------------------------------------

template <std::floating_point T>
struct ForwardOutput {
    Var<T> video_head;   // [C] from pooled enhanced visual features
    Var<T> audio_head;   // [C] from pooled enhanced audio features
    Var<T> fusion_head;  // [C] from their concatenation
    std::optional<AttentionRecord<T>> ov_record;           // (beta_o, beta_v) per timestep
    std::optional<AttentionRecord<T>> video_query_record;  // visual queries onto audio keys
    std::optional<AttentionRecord<T>> audio_query_record;  // audio queries onto visual keys
};

// ---- model ------------------------------------------------------------------------

template <std::floating_point T>
struct DeIiiModel {
    ModelConfig cfg;
    EncoderStack<T> audio_stack;
    std::optional<EncoderStack<T>> video_stack;  // also the single/combined visual stack
    std::optional<EncoderStack<T>> flow_stack;
    std::optional<Linear<T>> early_proj_o;  // Early variant: raw-feature projections
    std::optional<Linear<T>> early_proj_v;
    std::optional<OvFusionParams<T>> ov;
    std::optional<IfeParams<T>> ife_v;  // visual queries, audio keys
    std::optional<IfeParams<T>> ife_a;  // audio queries, visual keys
    MlpHead<T> head_video;
    MlpHead<T> head_audio;
    MlpHead<T> head_fusion;

    // Parameters are created in a fixed order so a seed fully determines them.
    static DeIiiModel build(const ModelConfig& cfg, Rng& rng) {
        cfg.validate();
        DeIiiModel m;
        m.cfg = cfg;
        const std::size_t d = cfg.model_dim;
        const bool trans = cfg.variant == Variant::IfeVTrans;
        m.audio_stack = EncoderStack<T>::make(cfg.audio_in, d, cfg.audio_blocks, cfg.heads,
                                              cfg.kernel, rng, false, cfg.positional);
        switch (cfg.variant) {
            case Variant::IfeVideo:
            case Variant::IfeAudio:
            case Variant::IfeFusion:
            case Variant::NoneIfe:
            case Variant::IfeVTrans:
                m.flow_stack = EncoderStack<T>::make(cfg.flow_in, d, cfg.flow_blocks, cfg.heads,
                                                     cfg.kernel, rng, trans, cfg.positional);
                m.video_stack = EncoderStack<T>::make(cfg.video_in, d, cfg.video_blocks, cfg.heads,
                                                      cfg.kernel, rng, trans, cfg.positional);
                m.ov = OvFusionParams<T>::make(d, rng);
                break;
            case Variant::IfeVO:
                m.flow_stack = EncoderStack<T>::make(cfg.flow_in, d, cfg.video_blocks, cfg.heads,
                                                     cfg.kernel, rng, false, cfg.positional);
                break;
            case Variant::IfeVF:
                m.video_stack = EncoderStack<T>::make(cfg.video_in, d, cfg.video_blocks, cfg.heads,
                                                      cfg.kernel, rng, false, cfg.positional);
                break;
            case Variant::IfeVFosc:
            case Variant::IfeVFods:
                m.video_stack = EncoderStack<T>::make(cfg.video_in, d, cfg.video_blocks, cfg.heads,
                                                      cfg.kernel, rng, false, cfg.positional);
                break;
            case Variant::IfeVFodc:
                m.video_stack = EncoderStack<T>::make(cfg.flow_in + cfg.video_in, d, cfg.video_blocks,
                                                      cfg.heads, cfg.kernel, rng, false, cfg.positional);
                break;
            case Variant::IfeVEarly:
                m.early_proj_o = Linear<T>::make(cfg.flow_in, d, rng);
                m.early_proj_v = Linear<T>::make(cfg.video_in, d, rng);
                m.ov = OvFusionParams<T>::make(d, rng);
                m.video_stack = EncoderStack<T>::make(d, d, cfg.video_blocks, cfg.heads, cfg.kernel,
                                                      rng, false, cfg.positional);
                break;
        }
        if (cfg.has_ife_video_query()) m.ife_v = IfeParams<T>::make(d, rng, cfg.learnable_temperature);
        if (cfg.has_ife_audio_query()) m.ife_a = IfeParams<T>::make(d, rng, cfg.learnable_temperature);
        const std::size_t out = cfg.head_out();
        m.head_video = MlpHead<T>::make(d, d, out, rng);
        m.head_audio = MlpHead<T>::make(d, d, out, rng);
        m.head_fusion = MlpHead<T>::make(2 * d, d, out, rng);
        return m;
    }

    ParamList<T> params() {
        ParamList<T> out;
        audio_stack.collect("audio", out);
        if (flow_stack) flow_stack->collect("flow", out);
        if (video_stack) video_stack->collect("video", out);
        if (early_proj_o) early_proj_o->collect("early.o", out);
        if (early_proj_v) early_proj_v->collect("early.v", out);
        if (ov) ov->collect("ov", out);
        if (ife_v) ife_v->collect("ife_v", out);
        if (ife_a) ife_a->collect("ife_a", out);
        head_video.collect("head.video", out);
        head_audio.collect("head.audio", out);
        head_fusion.collect("head.fusion", out);
        return out;
    }

    // Full forward pass over one sample. When `drop_rng` is non-null and the
    // config sets dropout > 0, dropout is applied to encoder outputs and head
    // inputs (training mode).
    ForwardOutput<T> forward(const LoadedSample<T>& sample, Rng* drop_rng = nullptr) const {
        ForwardOutput<T> out;
        auto drop = [&](Var<T> x) {
            return drop_rng != nullptr && cfg.dropout > 0 ? dropout(x, cfg.dropout, *drop_rng) : x;
        };
        check_dims(sample);
        Var<T> a_bar = drop(audio_stack.forward(Var<T>::leaf(sample.audio)));
        Var<T> ov_bar = drop(visual_forward(sample, out));

        Var<T> ov_hat = ov_bar;
        if (ife_v) {
            auto [enhanced, record] = ife_attend(*ife_v, ov_bar, a_bar, "video", "audio");
            ov_hat = enhanced;
            out.video_query_record = std::move(record);
        }
        Var<T> a_hat = a_bar;
        if (ife_a) {
            auto [enhanced, record] = ife_attend(*ife_a, a_bar, ov_bar, "audio", "video");
            a_hat = enhanced;
            out.audio_query_record = std::move(record);
        }

        Var<T> ov_star = drop(temporal_max_pool(ov_hat));
        Var<T> a_star = drop(temporal_max_pool(a_hat));
        out.video_head = head_video.forward(ov_star);
        out.audio_head = head_audio.forward(a_star);
        out.fusion_head = head_fusion.forward(concat(ov_star, a_star, 0));
        return out;
    }

private:
    void check_dims(const LoadedSample<T>& sample) const {
        if (sample.audio.rank() != 2 || sample.audio.dim(1) != cfg.audio_in)
            throw DataError("forward: audio features " + shape_str(sample.audio.shape()) +
                            " do not match configured dim " + std::to_string(cfg.audio_in));
        if (cfg.uses_video() && (sample.video.rank() != 2 || sample.video.dim(1) != cfg.video_in))
            throw DataError("forward: video features " + shape_str(sample.video.shape()) +
                            " do not match configured dim " + std::to_string(cfg.video_in));
        if (cfg.uses_flow()) {
            if (!sample.flow.has_value())
                throw DataError("forward: variant " + variant_name(cfg.variant) +
                                " requires a flow stream but the sample has none");
            if (sample.flow->rank() != 2 || sample.flow->dim(1) != cfg.flow_in)
                throw DataError("forward: flow features " + shape_str(sample.flow->shape()) +
                                " do not match configured dim " + std::to_string(cfg.flow_in));
        }
        if (cfg.combines_raw_streams() && sample.flow->dim(0) != sample.video.dim(0) &&
            cfg.variant != Variant::IfeVFosc)
            throw DataError("forward: " + variant_name(cfg.variant) +
                            " needs equal flow/frame sequence lengths, got " +
                            std::to_string(sample.flow->dim(0)) + " and " +
                            std::to_string(sample.video.dim(0)));
    }

    // Produces the (fused) visual sequence per variant and fills `out.ov_record`.
    Var<T> visual_forward(const LoadedSample<T>& sample, ForwardOutput<T>& out) const {
        switch (cfg.variant) {
            case Variant::IfeVideo:
            case Variant::IfeAudio:
            case Variant::IfeFusion:
            case Variant::NoneIfe:
            case Variant::IfeVTrans: {
                Var<T> o_bar = flow_stack->forward(Var<T>::leaf(*sample.flow));
                Var<T> v_bar = video_stack->forward(Var<T>::leaf(sample.video));
                auto [fused, record] = ov_fuse(*ov, o_bar, v_bar);
                out.ov_record = std::move(record);
                return fused;
            }
            case Variant::IfeVO: return flow_stack->forward(Var<T>::leaf(*sample.flow));
            case Variant::IfeVF: return video_stack->forward(Var<T>::leaf(sample.video));
            case Variant::IfeVFosc: {
                Var<T> joined = concat(Var<T>::leaf(*sample.flow), Var<T>::leaf(sample.video), 0);
                return video_stack->forward(joined);
            }
            case Variant::IfeVFodc: {
                Var<T> joined = concat(Var<T>::leaf(*sample.flow), Var<T>::leaf(sample.video), 1);
                return video_stack->forward(joined);
            }
            case Variant::IfeVFods: {
                Var<T> summed = add(Var<T>::leaf(*sample.flow), Var<T>::leaf(sample.video));
                return video_stack->forward(summed);
            }
            case Variant::IfeVEarly: {
                Var<T> o_proj = early_proj_o->forward(Var<T>::leaf(*sample.flow));
                Var<T> v_proj = early_proj_v->forward(Var<T>::leaf(sample.video));
                auto [fused, record] = ov_fuse(*ov, o_proj, v_proj);
                out.ov_record = std::move(record);
                return video_stack->forward(fused);
            }
        }
        throw std::logic_error("visual_forward: unmapped variant");
    }
};

// ---- optimizer --------------------------------------------------------------------

// AdamW with decoupled weight decay: the decay step theta -= lr*wd*theta is
// applied separately from the bias-corrected adaptive step.
template <std::floating_point T>
struct AdamW {
    double lr = 1e-3;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t step_count = 0;
    std::vector<Tensor<T>> m;
    std::vector<Tensor<T>> v;

    void init(const ParamList<T>& params) {
        m.clear();
        v.clear();
        m.reserve(params.size());
        v.reserve(params.size());
        for (const auto& p : params) {
            m.emplace_back(p.param.value().shape());
            v.emplace_back(p.param.value().shape());
        }
        step_count = 0;
    }

    // Reads each parameter's accumulated gradient, applies the update, and
    // clears the gradient.
    void step(ParamList<T>& params) {
        if (params.size() != m.size())
            throw std::invalid_argument("adamw: optimizer state tracks " + std::to_string(m.size()) +
                                        " tensors, got " + std::to_string(params.size()));
        ++step_count;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor<T> theta = params[i].param.value();
            if (!(theta.shape() == m[i].shape()))
                throw std::invalid_argument("adamw: parameter " + params[i].name + " shape " +
                                            shape_str(theta.shape()) + " does not match state " +
                                            shape_str(m[i].shape()));
            const Tensor<T> g = params[i].param.grad();
            for (std::size_t k = 0; k < theta.size(); ++k) {
                const double gk = static_cast<double>(g.data()[k]);
                double mk = beta1 * static_cast<double>(m[i].data()[k]) + (1.0 - beta1) * gk;
                double vk = beta2 * static_cast<double>(v[i].data()[k]) + (1.0 - beta2) * gk * gk;
                m[i].data()[k] = static_cast<T>(mk);
                v[i].data()[k] = static_cast<T>(vk);
                double value = static_cast<double>(theta.data()[k]);
                value -= lr * weight_decay * value;  // decoupled decay
                value -= lr * (mk / bc1) / (std::sqrt(vk / bc2) + eps);
                theta.data()[k] = static_cast<T>(value);
            }
            params[i].param.set_value(std::move(theta));
            params[i].param.zero_grad();
        }
    }
};

// ---- training steps ---------------------------------------------------------------

template <std::floating_point T>
struct Batch {
    std::vector<const LoadedSample<T>*> samples;
};

namespace detail {

template <std::floating_point T>
Var<T> stack_rows(const std::vector<Var<T>>& rows) {
    Var<T> out;
    for (const auto& r : rows) {
        Var<T> row = reshape(r, Shape{1, r.value().dim(0)});
        out = out.defined() ? concat(out, row, 0) : row;
    }
    return out;
}

}  // namespace detail

// Losses of the three heads over one batch: cross-entropy (discrete) or mean
// 1-CCC (continuous). Returned Vars share one graph so a single backward pass
// covers all heads. Non-finite numerics surface as NumericError naming the head.
template <std::floating_point T>
struct BatchLosses {
    Var<T> l_v, l_a, l_f, total;
    std::vector<Tensor<T>> video_rows, audio_rows, fusion_rows;  // per-sample head outputs
};

template <std::floating_point T>
BatchLosses<T> batch_losses(const DeIiiModel<T>& model, const Batch<T>& batch, Rng* drop_rng = nullptr) {
    if (batch.samples.empty()) throw std::invalid_argument("batch_losses: empty batch");
    std::vector<Var<T>> video_rows, audio_rows, fusion_rows;
    video_rows.reserve(batch.samples.size());
    for (const LoadedSample<T>* s : batch.samples) {
        ForwardOutput<T> fwd = model.forward(*s, drop_rng);
        video_rows.push_back(fwd.video_head);
        audio_rows.push_back(fwd.audio_head);
        fusion_rows.push_back(fwd.fusion_head);
    }
    Var<T> video_mat = detail::stack_rows(video_rows);
    Var<T> audio_mat = detail::stack_rows(audio_rows);
    Var<T> fusion_mat = detail::stack_rows(fusion_rows);

    BatchLosses<T> out;
    auto head_loss = [&](const Var<T>& mat, const char* head) {
        try {
            if (model.cfg.task == Task::Discrete) {
                std::vector<std::size_t> labels;
                labels.reserve(batch.samples.size());
                for (const LoadedSample<T>* s : batch.samples) {
                    if (!s->discrete)
                        throw DataError("batch_losses: continuous labels fed to a discrete task");
                    if (s->label_class >= model.cfg.classes)
                        throw DataError("batch_losses: label " + std::to_string(s->label_class) +
                                        " out of range for " + std::to_string(model.cfg.classes) +
                                        " classes");
                    labels.push_back(s->label_class);
                }
                return cross_entropy(mat, labels);
            }
            Tensor<T> target(Shape{batch.samples.size(), 3});
            for (std::size_t i = 0; i < batch.samples.size(); ++i) {
                if (batch.samples[i]->discrete)
                    throw DataError("batch_losses: discrete labels fed to a continuous task");
                for (std::size_t d = 0; d < 3; ++d)
                    target.at(i, d) = static_cast<T>(batch.samples[i]->label_vad[d]);
            }
            return ccc_loss(mat, target);
        } catch (const NumericError& e) {
            throw NumericError("batch_losses: non-finite loss in " + std::string(head) +
                               " head: " + e.what());
        }
    };
    out.l_v = head_loss(video_mat, "video");
    out.l_a = head_loss(audio_mat, "audio");
    out.l_f = head_loss(fusion_mat, "fusion");
    out.total = add(add(out.l_v, out.l_a), out.l_f);
    for (const auto& r : video_rows) out.video_rows.push_back(r.value());
    for (const auto& r : audio_rows) out.audio_rows.push_back(r.value());
    for (const auto& r : fusion_rows) out.fusion_rows.push_back(r.value());
    return out;
}

// One optimization step over a batch; returns the per-head loss breakdown.
// A non-finite loss aborts the step before any parameter is touched.
template <std::floating_point T>
LossBundle train_step(DeIiiModel<T>& model, AdamW<T>& opt, ParamList<T>& params, const Batch<T>& batch,
                      Rng* drop_rng = nullptr) {
    BatchLosses<T> losses = batch_losses(model, batch, drop_rng);
    backward(losses.total);
    opt.step(params);
    return LossBundle::of(static_cast<double>(losses.l_v.value().at(0)),
                          static_cast<double>(losses.l_a.value().at(0)),
                          static_cast<double>(losses.l_f.value().at(0)));
}

// ---- head selection ---------------------------------------------------------------

enum class HeadId { Fusion, Video, Audio };

inline const char* head_name(HeadId h) {
    switch (h) {
        case HeadId::Fusion: return "fusion";
        case HeadId::Video: return "video";
        default: return "audio";
    }
}

inline HeadId parse_head(const std::string& s) {
    if (s == "fusion") return HeadId::Fusion;
    if (s == "video") return HeadId::Video;
    if (s == "audio") return HeadId::Audio;
    throw ConfigError("unknown head \"" + s + "\" (use fusion, video, or audio)");
}

// Picks the head with the best validation metric; ties resolve in the fixed
// order fusion, video, audio.
inline HeadId select_head(const std::vector<std::pair<HeadId, double>>& scored) {
    if (scored.empty()) throw std::invalid_argument("select_head: no evaluated heads");
    const HeadId order[3] = {HeadId::Fusion, HeadId::Video, HeadId::Audio};
    bool found = false;
    HeadId best = HeadId::Fusion;
    double best_score = 0;
    for (HeadId h : order) {
        for (const auto& [head, score] : scored) {
            if (head != h) continue;
            if (!found || score > best_score) {
                found = true;
                best = h;
                best_score = score;
            }
        }
    }
    return best;
}

// ---- checkpoints ------------------------------------------------------------------

template <std::floating_point T>
void save_model(const std::string& path, DeIiiModel<T>& model, const std::string& extra_json = "") {
    Checkpoint<T> ckpt;
    nlohmann::json cfg = model.cfg.to_json();
    if (!extra_json.empty()) cfg["run"] = nlohmann::json::parse(extra_json);
    ckpt.config_json = cfg.dump();
    for (auto& p : model.params()) ckpt.entries.emplace_back(p.name, p.param.value());
    write_checkpoint(path, ckpt);
}

// Rebuilds the model recorded at `path`. The stored config echo must match
// `expected` exactly when provided.
template <std::floating_point T>
DeIiiModel<T> load_model(const std::string& path, const std::optional<ModelConfig>& expected = {}) {
    Checkpoint<T> ckpt = read_checkpoint<T>(path);
    nlohmann::json cfg_json;
    try {
        cfg_json = nlohmann::json::parse(ckpt.config_json);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": corrupt config echo: " + e.what());
    }
    cfg_json.erase("run");
    ModelConfig cfg = ModelConfig::from_json(cfg_json);
    if (expected && !(expected->to_json() == cfg.to_json()))
        throw ConfigError(path + ": checkpoint config does not match the requested config");
    Rng rng(0);
    DeIiiModel<T> model = DeIiiModel<T>::build(cfg, rng);
    ParamList<T> params = model.params();
    std::map<std::string, Var<T>> by_name;
    for (auto& p : params) by_name.emplace(p.name, p.param);
    std::set<std::string> seen;
    for (const auto& [name, tensor] : ckpt.entries) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw DataError(path + ": unexpected parameter \"" + name + "\"");
        if (!(it->second.value().shape() == tensor.shape()))
            throw DataError(path + ": parameter \"" + name + "\" has shape " +
                            shape_str(tensor.shape()) + ", model expects " +
                            shape_str(it->second.value().shape()));
        it->second.set_value(tensor);
        seen.insert(name);
    }
    if (seen.size() != by_name.size())
        throw DataError(path + ": checkpoint is missing " +
                        std::to_string(by_name.size() - seen.size()) + " parameters");
    return model;
}

}  // namespace deiii
