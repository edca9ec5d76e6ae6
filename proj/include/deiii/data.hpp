// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "deiii/errors.hpp"
#include "deiii/rng.hpp"
#include "deiii/tensor.hpp"

// On-disk formats (feature files, manifests, checkpoints), flow preprocessing,
// frame pairing, batching, and the synthetic dataset generator.

namespace deiii {

// ---- binary primitives -----------------------------------------------------------

namespace detail {

inline void put_bytes(std::string& out, const void* p, std::size_t n) {
    out.append(static_cast<const char*>(p), n);
}

inline void put_u16(std::string& out, std::uint16_t v) {
    const unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                                static_cast<unsigned char>(v >> 8)};
    put_bytes(out, b, 2);
}

inline void put_u32(std::string& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    put_bytes(out, b, 4);
}

// Cursor over a loaded file; every failure names the byte offset.
struct ByteReader {
    const std::string& bytes;
    std::size_t pos = 0;
    const std::string& path;

    void need(std::size_t n, const char* what) const {
        if (pos + n > bytes.size())
            throw DataError(path + ": truncated " + what + " at offset " + std::to_string(pos) +
                            " (need " + std::to_string(n) + " bytes, have " +
                            std::to_string(bytes.size() - pos) + ")");
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return static_cast<std::uint8_t>(bytes[pos++]);
    }
    std::uint16_t u16(const char* what) {
        need(2, what);
        std::uint16_t v = 0;
        for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
        pos += 2;
        return v;
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
};

inline std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(path + ": cannot open for reading");
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

inline void spill(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(path + ": cannot open for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError(path + ": write failed");
}

template <std::floating_point T>
constexpr std::uint8_t dtype_code() {
    return std::is_same_v<T, float> ? 0 : 1;
}

template <std::floating_point T>
void put_payload(std::string& out, const Tensor<T>& t) {
    for (std::size_t i = 0; i < t.size(); ++i) {
        if constexpr (std::is_same_v<T, float>) {
            std::uint32_t bits;
            float v = t.data()[i];
            std::memcpy(&bits, &v, 4);
            put_u32(out, bits);
        } else {
            std::uint64_t bits;
            double v = t.data()[i];
            std::memcpy(&bits, &v, 8);
            put_u32(out, static_cast<std::uint32_t>(bits & 0xffffffffu));
            put_u32(out, static_cast<std::uint32_t>(bits >> 32));
        }
    }
}

// Shared tail of the tensor wire format: dtype, rank, shape, payload.
template <std::floating_point T>
void put_tensor(std::string& out, const Tensor<T>& t) {
    out.push_back(static_cast<char>(dtype_code<T>()));
    out.push_back(static_cast<char>(t.rank()));
    for (std::size_t d = 0; d < t.rank(); ++d) put_u32(out, static_cast<std::uint32_t>(t.dim(d)));
    put_payload(out, t);
}

template <std::floating_point T>
Tensor<T> take_tensor(ByteReader& r) {
    const std::size_t dtype_off = r.pos;
    const std::uint8_t dtype = r.u8("dtype");
    if (dtype > 1)
        throw DataError(r.path + ": unsupported dtype " + std::to_string(dtype) + " at offset " +
                        std::to_string(dtype_off));
    if (dtype == 1 && std::is_same_v<T, float>)
        throw DataError(r.path + ": refusing to narrow 64-bit payload (dtype at offset " +
                        std::to_string(dtype_off) + ") into 32-bit tensors");
    const std::size_t rank_off = r.pos;
    const std::uint8_t rank = r.u8("rank");
    if (rank < 1 || rank > 8)
        throw DataError(r.path + ": bad rank " + std::to_string(rank) + " at offset " +
                        std::to_string(rank_off));
    Shape shape(rank);
    for (std::size_t d = 0; d < rank; ++d) {
        const std::size_t off = r.pos;
        shape[d] = r.u32("shape");
        if (shape[d] == 0)
            throw DataError(r.path + ": zero dimension at offset " + std::to_string(off));
    }
    const std::size_t count = shape_numel(shape);
    const std::size_t elem = dtype == 0 ? 4 : 8;
    r.need(count * elem, "payload");
    Tensor<T> t(shape);
    for (std::size_t i = 0; i < count; ++i) {
        double v;
        if (dtype == 0) {
            const std::uint32_t bits = r.u32("payload");
            float f;
            std::memcpy(&f, &bits, 4);
            v = static_cast<double>(f);
        } else {
            const std::uint32_t lo = r.u32("payload"), hi = r.u32("payload");
            const std::uint64_t bits = (static_cast<std::uint64_t>(hi) << 32) | lo;
            double d;
            std::memcpy(&d, &bits, 8);
            v = d;
        }
        if (!std::isfinite(v))
            throw DataError(r.path + ": non-finite value at element " + std::to_string(i) +
                            " (offset " + std::to_string(r.pos - elem) + ")");
        t.data()[i] = static_cast<T>(v);
    }
    return t;
}

}  // namespace detail

// ---- feature files ---------------------------------------------------------------

// Layout: "DEF1" | version u16 | dtype u8 (0 = f32, 1 = f64) | rank u8 |
// shape rank x u32 | row-major little-endian payload.
inline constexpr std::uint16_t kFeatureVersion = 1;

template <std::floating_point T>
void write_feature_file(const std::string& path, const Tensor<T>& t) {
    ensure_finite(t, "write_feature_file");
    std::string out;
    out.reserve(16 + t.size() * sizeof(T));
    detail::put_bytes(out, "DEF1", 4);
    detail::put_u16(out, kFeatureVersion);
    detail::put_tensor(out, t);
    detail::spill(path, out);
}

template <std::floating_point T>
Tensor<T> read_feature_file(const std::string& path) {
    const std::string bytes = detail::slurp(path);
    detail::ByteReader r{bytes, 0, path};
    r.need(4, "magic");
    if (bytes.compare(0, 4, "DEF1") != 0) throw DataError(path + ": bad magic at offset 0");
    r.pos = 4;
    const std::uint16_t version = r.u16("version");
    if (version != kFeatureVersion)
        throw DataError(path + ": unsupported version " + std::to_string(version) + " at offset 4");
    Tensor<T> t = detail::take_tensor<T>(r);
    if (r.pos != bytes.size())
        throw DataError(path + ": " + std::to_string(bytes.size() - r.pos) +
                        " trailing bytes after payload at offset " + std::to_string(r.pos));
    return t;
}

// ---- checkpoints -----------------------------------------------------------------

// Named-tensor container: "DEC1" | version u16 | count u32 | config_len u32 |
// config JSON bytes | count x (name_len u16 | name | tensor as in DEF1).
template <std::floating_point T>
struct Checkpoint {
    std::string config_json;
    std::vector<std::pair<std::string, Tensor<T>>> entries;
};

template <std::floating_point T>
void write_checkpoint(const std::string& path, const Checkpoint<T>& ckpt) {
    std::string out;
    detail::put_bytes(out, "DEC1", 4);
    detail::put_u16(out, kFeatureVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(ckpt.entries.size()));
    detail::put_u32(out, static_cast<std::uint32_t>(ckpt.config_json.size()));
    detail::put_bytes(out, ckpt.config_json.data(), ckpt.config_json.size());
    for (const auto& [name, tensor] : ckpt.entries) {
        ensure_finite(tensor, ("write_checkpoint(" + name + ")").c_str());
        detail::put_u16(out, static_cast<std::uint16_t>(name.size()));
        detail::put_bytes(out, name.data(), name.size());
        detail::put_tensor(out, tensor);
    }
    detail::spill(path, out);
}

template <std::floating_point T>
Checkpoint<T> read_checkpoint(const std::string& path) {
    const std::string bytes = detail::slurp(path);
    detail::ByteReader r{bytes, 0, path};
    r.need(4, "magic");
    if (bytes.compare(0, 4, "DEC1") != 0) throw DataError(path + ": bad magic at offset 0");
    r.pos = 4;
    const std::uint16_t version = r.u16("version");
    if (version != kFeatureVersion)
        throw DataError(path + ": unsupported version " + std::to_string(version) + " at offset 4");
    const std::uint32_t count = r.u32("entry count");
    const std::uint32_t config_len = r.u32("config length");
    r.need(config_len, "config");
    Checkpoint<T> ckpt;
    ckpt.config_json = bytes.substr(r.pos, config_len);
    r.pos += config_len;
    ckpt.entries.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint16_t name_len = r.u16("name length");
        r.need(name_len, "name");
        std::string name = bytes.substr(r.pos, name_len);
        r.pos += name_len;
        ckpt.entries.emplace_back(std::move(name), detail::take_tensor<T>(r));
    }
    if (r.pos != bytes.size())
        throw DataError(path + ": " + std::to_string(bytes.size() - r.pos) +
                        " trailing bytes after payload at offset " + std::to_string(r.pos));
    return ckpt;
}

// ---- manifests -------------------------------------------------------------------

enum class Split { Train, Val, Test };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        default: return "test";
    }
}

inline Split parse_split(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    throw DataError("manifest: unknown split \"" + s + "\"");
}

struct SampleEntry {
    std::string id;
    std::string audio_path;
    std::string video_path;
    std::string flow_path;  // empty when the sample has no flow stream
    bool discrete = true;
    std::size_t label_class = 0;
    std::array<double, 3> label_vad{};
    Split split = Split::Train;

    bool has_flow() const { return !flow_path.empty(); }
};

struct Manifest {
    std::vector<SampleEntry> samples;

    std::vector<std::size_t> split_indices(Split s) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < samples.size(); ++i)
            if (samples[i].split == s) out.push_back(i);
        return out;
    }

    nlohmann::json to_json() const {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& s : samples) {
            nlohmann::json j{{"id", s.id},
                             {"audio-path", s.audio_path},
                             {"video-path", s.video_path},
                             {"split", split_name(s.split)}};
            if (s.has_flow()) j["flow-path"] = s.flow_path;
            if (s.discrete)
                j["label"] = s.label_class;
            else
                j["label"] = s.label_vad;
            arr.push_back(std::move(j));
        }
        return arr;
    }

    void save(const std::string& path) const { detail::spill(path, to_json().dump(2) + "\n"); }

    static Manifest load(const std::string& path) {
        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(detail::slurp(path));
        } catch (const nlohmann::json::parse_error& e) {
            throw DataError(path + ": invalid JSON: " + e.what());
        }
        if (!doc.is_array()) throw DataError(path + ": manifest must be a JSON array");
        Manifest m;
        std::set<std::string> ids;
        int label_kind = -1;  // 0 discrete, 1 continuous
        for (const auto& j : doc) {
            if (!j.is_object()) throw DataError(path + ": manifest entries must be objects");
            for (const auto& [key, _] : j.items())
                if (key != "id" && key != "audio-path" && key != "video-path" && key != "flow-path" &&
                    key != "label" && key != "split")
                    throw DataError(path + ": unknown manifest key \"" + key + "\"");
            SampleEntry s;
            try {
                s.id = j.at("id").get<std::string>();
                s.audio_path = j.at("audio-path").get<std::string>();
                s.video_path = j.at("video-path").get<std::string>();
                if (j.contains("flow-path")) s.flow_path = j.at("flow-path").get<std::string>();
                s.split = parse_split(j.at("split").get<std::string>());
                const auto& label = j.at("label");
                if (label.is_number_integer()) {
                    const long long v = label.get<long long>();
                    if (v < 0) throw DataError(path + ": negative class label for id \"" + s.id + "\"");
                    s.discrete = true;
                    s.label_class = static_cast<std::size_t>(v);
                } else if (label.is_array() && label.size() == 3) {
                    s.discrete = false;
                    for (std::size_t d = 0; d < 3; ++d) s.label_vad[d] = label.at(d).get<double>();
                } else {
                    throw DataError(path + ": label for id \"" + s.id +
                                    "\" must be an integer class or 3 floats");
                }
            } catch (const nlohmann::json::exception& e) {
                throw DataError(path + ": malformed manifest entry: " + e.what());
            }
            if (!ids.insert(s.id).second)
                throw DataError(path + ": duplicate sample id \"" + s.id + "\"");
            if (label_kind == -1)
                label_kind = s.discrete ? 0 : 1;
            else if ((label_kind == 0) != s.discrete)
                throw DataError(path + ": mixed discrete and continuous labels");
            m.samples.push_back(std::move(s));
        }
        return m;
    }
};

// ---- preprocessing ---------------------------------------------------------------

// Scale the whole clip by the root-mean-square of its element magnitudes, so
// the normalized clip has unit magnitude spread. Near-zero spread leaves the
// clip unchanged.
template <std::floating_point T>
Tensor<T> normalize_flow(const Tensor<T>& flow) {
    if (flow.rank() != 2)
        throw std::invalid_argument("normalize_flow: expected rank 2, got " + shape_str(flow.shape()));
    double acc = 0;
    for (std::size_t i = 0; i < flow.size(); ++i) {
        const double v = static_cast<double>(flow.data()[i]);
        acc += v * v;
    }
    const double sigma = std::sqrt(acc / static_cast<double>(flow.size()));
    if (sigma < 1e-12) return flow;
    Tensor<T> out = flow;
    for (auto& v : out.data()) v = static_cast<T>(static_cast<double>(v) / sigma);
    return out;
}

// Frame pairs (i, min(i+W, n-1)) for i = 0, S, 2S, ... while i < n-1. With
// W = S = 1 this is the n-1 adjacent pairs; the flow sequence built from them
// is front-padded with one zero entry so n flows align with n frames.
inline std::vector<std::pair<std::size_t, std::size_t>> pair_flow_frames(std::size_t n_frames,
                                                                         std::size_t window,
                                                                         std::size_t stride) {
    if (window < 1 || stride < 1)
        throw std::invalid_argument("pair_flow_frames: window and stride must be >= 1");
    if (n_frames < 2)
        throw std::invalid_argument("pair_flow_frames: need at least 2 frames, got " +
                                    std::to_string(n_frames));
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < n_frames - 1; i += stride)
        pairs.emplace_back(i, std::min(i + window, n_frames - 1));
    return pairs;
}

// ---- batching --------------------------------------------------------------------

// Deterministic per-epoch shuffle of `indices` chopped into batches; the final
// short batch is kept.
inline std::vector<std::vector<std::size_t>> epoch_batches(std::vector<std::size_t> indices,
                                                           std::size_t batch_size, Rng& rng) {
    if (indices.empty()) throw DataError("epoch_batches: empty split");
    if (batch_size == 0) throw std::invalid_argument("epoch_batches: batch size must be positive");
    for (std::size_t i = indices.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.below(i));
        std::swap(indices[i - 1], indices[j]);
    }
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t at = 0; at < indices.size(); at += batch_size) {
        const std::size_t len = std::min(batch_size, indices.size() - at);
        batches.emplace_back(indices.begin() + static_cast<std::ptrdiff_t>(at),
                             indices.begin() + static_cast<std::ptrdiff_t>(at + len));
    }
    return batches;
}

// ---- synthetic generator ---------------------------------------------------------

enum class SynthMode { All, Audio, Video, FlowOnly, JointOnly };

inline const char* synth_mode_name(SynthMode m) {
    switch (m) {
        case SynthMode::All: return "all";
        case SynthMode::Audio: return "audio";
        case SynthMode::Video: return "video";
        case SynthMode::FlowOnly: return "flow_only";
        default: return "joint_only";
    }
}

inline SynthMode parse_synth_mode(const std::string& s) {
    if (s == "all") return SynthMode::All;
    if (s == "audio") return SynthMode::Audio;
    if (s == "video") return SynthMode::Video;
    if (s == "flow_only") return SynthMode::FlowOnly;
    if (s == "joint_only") return SynthMode::JointOnly;
    throw ConfigError("synth: unknown mode \"" + s + "\"");
}

struct SynthSpec {
    std::size_t classes = 4;
    std::size_t audio_dim = 16;
    std::size_t video_dim = 16;
    std::size_t flow_dim = 16;
    std::size_t video_len = 8;  // n frames (and padded flow length)
    std::size_t audio_len = 6;  // m audio steps
    SynthMode mode = SynthMode::All;
    double noise = 0.1;
    double signal = 1.0;
    bool continuous_labels = false;
    std::uint64_t seed = 1;
    std::size_t train_count = 200;
    std::size_t val_count = 50;
    std::size_t test_count = 50;

    void validate() const {
        if (classes < 2) throw ConfigError("synth: need at least 2 classes");
        if (audio_dim == 0 || video_dim == 0 || flow_dim == 0 || video_len == 0 || audio_len == 0)
            throw ConfigError("synth: dims and lengths must be positive");
        if (noise < 0) throw ConfigError("synth: noise must be >= 0");
        if (train_count == 0 || val_count == 0 || test_count == 0)
            throw ConfigError("synth: split sizes must be positive");
        if (mode == SynthMode::FlowOnly && video_len < 2)
            throw ConfigError("synth: flow_only mode needs at least 2 frames (flow row 0 is the pad)");
    }
};

// Orthonormal class directions via Gram-Schmidt over seeded gaussian draws.
// More classes than dimensions cannot be mutually orthogonal and is rejected.
template <std::floating_point T>
Tensor<T> orthonormal_directions(std::size_t classes, std::size_t dim, Rng rng) {
    if (classes > dim)
        throw ConfigError("synth: " + std::to_string(classes) +
                          " orthogonal class directions do not fit in dimension " + std::to_string(dim));
    Tensor<T> dirs(Shape{classes, dim});
    for (std::size_t c = 0; c < classes; ++c) {
        while (true) {
            std::vector<double> v(dim);
            for (auto& x : v) x = rng.normal();
            for (std::size_t p = 0; p < c; ++p) {
                double dot = 0;
                for (std::size_t j = 0; j < dim; ++j) dot += v[j] * static_cast<double>(dirs.at(p, j));
                for (std::size_t j = 0; j < dim; ++j) v[j] -= dot * static_cast<double>(dirs.at(p, j));
            }
            double norm = 0;
            for (double x : v) norm += x * x;
            norm = std::sqrt(norm);
            if (norm < 1e-8) continue;  // degenerate draw; retry
            for (std::size_t j = 0; j < dim; ++j) dirs.at(c, j) = static_cast<T>(v[j] / norm);
            break;
        }
    }
    return dirs;
}

struct SynthDirections {
    Tensor<double> audio;  // [C x audio_dim]
    Tensor<double> video;  // [C x video_dim]
    Tensor<double> flow;   // [C x flow_dim]
};

// The exact direction sets a given spec generates with; exposed so decoders
// can be built against generated data.
inline SynthDirections synth_directions(const SynthSpec& spec) {
    Rng master(spec.seed);
    return {orthonormal_directions<double>(spec.classes, spec.audio_dim, master.derive(1)),
            orthonormal_directions<double>(spec.classes, spec.video_dim, master.derive(2)),
            orthonormal_directions<double>(spec.classes, spec.flow_dim, master.derive(3))};
}

namespace detail {

// Distinct injection rows: a seeded partial shuffle of [0, len).
inline std::vector<std::size_t> pick_rows(std::size_t len, std::size_t count, Rng& rng) {
    std::vector<std::size_t> all(len);
    for (std::size_t i = 0; i < len; ++i) all[i] = i;
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(len - i));
        std::swap(all[i], all[j]);
    }
    all.resize(count);
    return all;
}

inline Tensor<double> noise_matrix(std::size_t rows, std::size_t cols, double scale, Rng& rng) {
    Tensor<double> t(Shape{rows, cols});
    for (auto& v : t.data()) v = scale * rng.normal();
    return t;
}

inline void inject(Tensor<double>& stream, const Tensor<double>& dirs, std::size_t cls, double amp,
                   const std::vector<std::size_t>& rows) {
    for (std::size_t r : rows)
        for (std::size_t j = 0; j < stream.dim(1); ++j) stream.at(r, j) += amp * dirs.at(cls, j);
}

// Fixed class anchors for continuous labels: distinct points on a line
// through the VAD cube, spread in [-0.8, 0.8].
inline std::array<double, 3> class_vad(std::size_t cls, std::size_t classes) {
    const double t = classes == 1 ? 0.0 : -0.8 + 1.6 * static_cast<double>(cls) / static_cast<double>(classes - 1);
    return {t, -t, 0.5 * t};
}

}  // namespace detail

// Deterministically materializes a synthetic dataset under `root`:
// manifest.json plus features/<id>.<modality>.def1 (32-bit payloads). Labels
// are balanced round-robin within each split. Returns the manifest.
inline Manifest synth_generate(const SynthSpec& spec, const std::string& root) {
    spec.validate();
    namespace fs = std::filesystem;
    const SynthDirections dirs = synth_directions(spec);
    Rng master(spec.seed);
    Rng rng = master.derive(4);

    fs::create_directories(fs::path(root) / "features");
    Manifest manifest;

    const std::array<std::pair<Split, std::size_t>, 3> plan{
        {{Split::Train, spec.train_count}, {Split::Val, spec.val_count}, {Split::Test, spec.test_count}}};
    for (const auto& [split, count] : plan) {
        // balanced labels, then a seeded shuffle of their order
        std::vector<std::size_t> labels(count);
        for (std::size_t i = 0; i < count; ++i) labels[i] = i % spec.classes;
        for (std::size_t i = count; i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(rng.below(i));
            std::swap(labels[i - 1], labels[j]);
        }
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t y = labels[i];
            char idbuf[32];
            std::snprintf(idbuf, sizeof idbuf, "%s%04zu", split_name(split), i);
            const std::string id = idbuf;

            // class cues: XOR-style split for joint-only, the label elsewhere
            std::size_t cue_a = y, cue_v = y;
            if (spec.mode == SynthMode::JointOnly) {
                cue_a = static_cast<std::size_t>(rng.below(spec.classes));
                cue_v = (y + spec.classes - cue_a) % spec.classes;  // y = (cue_a + cue_v) mod C
            }

            Tensor<double> audio = detail::noise_matrix(spec.audio_len, spec.audio_dim, spec.noise, rng);
            Tensor<double> video = detail::noise_matrix(spec.video_len, spec.video_dim, spec.noise, rng);
            Tensor<double> flow = detail::noise_matrix(spec.video_len, spec.flow_dim, spec.noise, rng);
            for (std::size_t j = 0; j < spec.flow_dim; ++j) flow.at(0, j) = 0.0;  // front zero pad

            const bool audio_on = spec.mode == SynthMode::All || spec.mode == SynthMode::Audio ||
                                  spec.mode == SynthMode::JointOnly;
            const bool video_on = spec.mode == SynthMode::All || spec.mode == SynthMode::Video ||
                                  spec.mode == SynthMode::JointOnly;
            const bool flow_on = spec.mode == SynthMode::All || spec.mode == SynthMode::FlowOnly;

            if (audio_on)
                detail::inject(audio, dirs.audio, cue_a, spec.signal,
                               detail::pick_rows(spec.audio_len, (spec.audio_len + 1) / 2, rng));
            if (video_on)
                detail::inject(video, dirs.video, cue_v, spec.signal,
                               detail::pick_rows(spec.video_len, (spec.video_len + 1) / 2, rng));
            if (flow_on && spec.video_len > 1) {
                // flow rows 1..n-1 exist (row 0 is the pad); inject into that range
                auto rows = detail::pick_rows(spec.video_len - 1,
                                              std::max<std::size_t>(1, spec.video_len / 2), rng);
                for (auto& r : rows) r += 1;
                detail::inject(flow, dirs.flow, y, spec.signal, rows);
            }

            SampleEntry s;
            s.id = id;
            s.split = split;
            s.audio_path = "features/" + id + ".audio.def1";
            s.video_path = "features/" + id + ".video.def1";
            s.flow_path = "features/" + id + ".flow.def1";
            if (spec.continuous_labels) {
                s.discrete = false;
                s.label_vad = detail::class_vad(y, spec.classes);
                for (auto& v : s.label_vad) v += 0.05 * spec.noise * rng.normal();
            } else {
                s.discrete = true;
                s.label_class = y;
            }
            write_feature_file((fs::path(root) / s.audio_path).string(), audio.template cast<float>());
            write_feature_file((fs::path(root) / s.video_path).string(), video.template cast<float>());
            write_feature_file((fs::path(root) / s.flow_path).string(), flow.template cast<float>());
            manifest.samples.push_back(std::move(s));
        }
    }
    manifest.save((fs::path(root) / "manifest.json").string());
    return manifest;
}

// ---- loaded datasets -------------------------------------------------------------

template <std::floating_point T>
struct LoadedSample {
    Tensor<T> audio;
    Tensor<T> video;
    std::optional<Tensor<T>> flow;  // already magnitude-normalized
    bool discrete = true;
    std::size_t label_class = 0;
    std::array<double, 3> label_vad{};
    Split split = Split::Train;
};

template <std::floating_point T>
struct Dataset {
    std::vector<LoadedSample<T>> samples;

    std::vector<std::size_t> split_indices(Split s) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < samples.size(); ++i)
            if (samples[i].split == s) out.push_back(i);
        return out;
    }
};

// Reads every referenced feature file (paths resolve relative to the manifest
// location) and applies flow normalization.
template <std::floating_point T>
Dataset<T> load_dataset(const std::string& manifest_path) {
    namespace fs = std::filesystem;
    const Manifest manifest = Manifest::load(manifest_path);
    const fs::path base = fs::path(manifest_path).parent_path();
    Dataset<T> ds;
    ds.samples.reserve(manifest.samples.size());
    for (const auto& entry : manifest.samples) {
        LoadedSample<T> s;
        s.audio = read_feature_file<T>((base / entry.audio_path).string());
        s.video = read_feature_file<T>((base / entry.video_path).string());
        if (entry.has_flow())
            s.flow = normalize_flow(read_feature_file<T>((base / entry.flow_path).string()));
        s.discrete = entry.discrete;
        s.label_class = entry.label_class;
        s.label_vad = entry.label_vad;
        s.split = entry.split;
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

}  // namespace deiii
