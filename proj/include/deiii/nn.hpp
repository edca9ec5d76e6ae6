// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "deiii/autodiff.hpp"
#include "deiii/rng.hpp"

// Reusable sequence-model blocks. All blocks preserve [T x D] shape and are
// built purely from autodiff primitives, so they are differentiable end to
// end without per-block backward rules.

namespace deiii {

template <std::floating_point T>
struct NamedParam {
    std::string name;
    Var<T> param;
};

template <std::floating_point T>
using ParamList = std::vector<NamedParam<T>>;

// Attention weights captured during a forward pass. `weights` rows sum to 1;
// `similarities` holds the pre-softmax scores when the attention is cosine
// based (empty otherwise).
template <std::floating_point T>
struct AttentionRecord {
    Tensor<T> weights;
    Tensor<T> similarities;
    std::string query_modality;
    std::string key_modality;
};

namespace init {

// Uniform in [-a, a] with a = sqrt(6 / (fan_in + fan_out)), biases zero.
template <std::floating_point T>
Tensor<T> glorot_uniform(Rng& rng, const Shape& shape, std::size_t fan_in, std::size_t fan_out) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor<T> t(shape);
    for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-a, a));
    return t;
}

}  // namespace init

// Inverted dropout: keeps each element with probability 1-p and rescales by
// 1/(1-p). The mask is a constant leaf drawn from `rng`, so a fixed seed gives
// a deterministic graph. p = 0 returns the input untouched.
template <std::floating_point T>
Var<T> dropout(const Var<T>& x, double p, Rng& rng) {
    if (p == 0.0) return x;
    if (p < 0.0 || p >= 1.0)
        throw std::invalid_argument("dropout: probability must be in [0, 1), got " + std::to_string(p));
    Tensor<T> mask(x.value().shape());
    const T scale = static_cast<T>(1.0 / (1.0 - p));
    for (auto& m : mask.data()) m = rng.next_double() < p ? T(0) : scale;
    return mul(x, Var<T>::leaf(std::move(mask)));
}

// Classic fixed sinusoidal position table: pe[t, 2i] = sin(t / 10000^(2i/D)),
// pe[t, 2i+1] = cos(same).
template <std::floating_point T>
Tensor<T> sinusoidal_table(std::size_t t_len, std::size_t dim) {
    Tensor<T> pe(Shape{t_len, dim});
    for (std::size_t t = 0; t < t_len; ++t)
        for (std::size_t i = 0; i < dim; ++i) {
            const double angle =
                static_cast<double>(t) / std::pow(10000.0, static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
            pe.at(t, i) = static_cast<T>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
        }
    return pe;
}

template <std::floating_point T>
struct Linear {
    Var<T> weight;  // [D_in x D_out]
    Var<T> bias;    // [D_out]; undefined when constructed without bias

    static Linear make(std::size_t d_in, std::size_t d_out, Rng& rng, bool with_bias = true) {
        Linear l;
        l.weight = Var<T>::leaf(init::glorot_uniform<T>(rng, {d_in, d_out}, d_in, d_out), true);
        if (with_bias) l.bias = Var<T>::leaf(Tensor<T>(Shape{d_out}), true);
        return l;
    }

    std::size_t in_dim() const { return weight.value().dim(0); }
    std::size_t out_dim() const { return weight.value().dim(1); }

    Var<T> forward(const Var<T>& x) const {
        if (x.value().rank() != 2 || x.value().dim(1) != in_dim())
            throw std::invalid_argument("linear: input " + shape_str(x.value().shape()) +
                                        " does not match weight " + shape_str(weight.value().shape()));
        Var<T> y = matmul(x, weight);
        if (bias.defined()) y = add(y, broadcast_to(bias, y.value().shape()));
        return y;
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        out.push_back({prefix + ".weight", weight});
        if (bias.defined()) out.push_back({prefix + ".bias", bias});
    }
};

template <std::floating_point T>
struct LayerNormParams {
    Var<T> gamma;
    Var<T> beta;

    static LayerNormParams make(std::size_t dim) {
        LayerNormParams ln;
        ln.gamma = Var<T>::leaf(Tensor<T>(Shape{dim}, T(1)), true);
        ln.beta = Var<T>::leaf(Tensor<T>(Shape{dim}), true);
        return ln;
    }

    Var<T> forward(const Var<T>& x) const { return layer_norm(x, gamma, beta); }

    void collect(const std::string& prefix, ParamList<T>& out) {
        out.push_back({prefix + ".gamma", gamma});
        out.push_back({prefix + ".beta", beta});
    }
};

// Scaled dot-product multi-head self-attention with output projection.
template <std::floating_point T>
struct MultiHeadSelfAttention {
    std::size_t heads = 1;
    Linear<T> q, k, v, out;

    static MultiHeadSelfAttention make(std::size_t dim, std::size_t heads, Rng& rng) {
        if (heads == 0 || dim % heads != 0)
            throw std::invalid_argument("mhsa: model dim " + std::to_string(dim) +
                                        " not divisible by " + std::to_string(heads) + " heads");
        MultiHeadSelfAttention m;
        m.heads = heads;
        m.q = Linear<T>::make(dim, dim, rng);
        m.k = Linear<T>::make(dim, dim, rng);
        m.v = Linear<T>::make(dim, dim, rng);
        m.out = Linear<T>::make(dim, dim, rng);
        return m;
    }

    std::pair<Var<T>, std::vector<AttentionRecord<T>>> forward(const Var<T>& x) const {
        const std::size_t dim = q.in_dim();
        const std::size_t dh = dim / heads;
        Var<T> qs = q.forward(x), ks = k.forward(x), vs = v.forward(x);
        std::vector<AttentionRecord<T>> records;
        records.reserve(heads);
        Var<T> merged;
        for (std::size_t h = 0; h < heads; ++h) {
            Var<T> qh = slice(qs, 1, h * dh, dh);
            Var<T> kh = slice(ks, 1, h * dh, dh);
            Var<T> vh = slice(vs, 1, h * dh, dh);
            Var<T> scores = scalar_mul(matmul(qh, transpose(kh)), T(1) / std::sqrt(T(dh)));
            Var<T> attn = softmax(scores);
            records.push_back({attn.value(), {}, "self:h" + std::to_string(h), "self"});
            Var<T> ctx = matmul(attn, vh);
            merged = h == 0 ? ctx : concat(merged, ctx, 1);
        }
        return {out.forward(merged), std::move(records)};
    }

    void collect(const std::string& prefix, ParamList<T>& out_list) {
        q.collect(prefix + ".q", out_list);
        k.collect(prefix + ".k", out_list);
        v.collect(prefix + ".v", out_list);
        out.collect(prefix + ".out", out_list);
    }
};

// Convenience entry point matching the rest of the block API.
template <std::floating_point T>
std::pair<Var<T>, std::vector<AttentionRecord<T>>> mhsa_forward(const MultiHeadSelfAttention<T>& m,
                                                                const Var<T>& x) {
    return m.forward(x);
}

// Pre-norm position-wise feed-forward, expansion factor 4.
template <std::floating_point T>
struct FeedForward {
    LayerNormParams<T> ln;
    Linear<T> w1, w2;

    static FeedForward make(std::size_t dim, Rng& rng, std::size_t expansion = 4) {
        FeedForward f;
        f.ln = LayerNormParams<T>::make(dim);
        f.w1 = Linear<T>::make(dim, dim * expansion, rng);
        f.w2 = Linear<T>::make(dim * expansion, dim, rng);
        return f;
    }

    Var<T> forward(const Var<T>& x) const { return w2.forward(silu(w1.forward(ln.forward(x)))); }

    void collect(const std::string& prefix, ParamList<T>& out) {
        ln.collect(prefix + ".ln", out);
        w1.collect(prefix + ".w1", out);
        w2.collect(prefix + ".w2", out);
    }
};

// Conformer convolution sublayer:
// LN -> pointwise (D -> 2D) -> GLU -> depthwise (kernel K, same padding) -> LN -> silu -> pointwise.
template <std::floating_point T>
struct ConvModule {
    LayerNormParams<T> ln;
    Linear<T> pw1;    // D -> 2D
    Var<T> dw;        // [K x D] depthwise taps
    Var<T> dw_bias;   // [D]
    LayerNormParams<T> norm;
    Linear<T> pw2;    // D -> D
    std::size_t kernel = 3;

    static ConvModule make(std::size_t dim, std::size_t kernel, Rng& rng) {
        if (kernel % 2 == 0) throw std::invalid_argument("conv: kernel must be odd, got " + std::to_string(kernel));
        ConvModule c;
        c.kernel = kernel;
        c.ln = LayerNormParams<T>::make(dim);
        c.pw1 = Linear<T>::make(dim, 2 * dim, rng);
        c.dw = Var<T>::leaf(init::glorot_uniform<T>(rng, {kernel, dim}, kernel, kernel), true);
        c.dw_bias = Var<T>::leaf(Tensor<T>(Shape{dim}), true);
        c.norm = LayerNormParams<T>::make(dim);
        c.pw2 = Linear<T>::make(dim, dim, rng);
        return c;
    }

    Var<T> forward(const Var<T>& x) const {
        const std::size_t t_len = x.value().dim(0);
        const std::size_t dim = x.value().dim(1);
        Var<T> h = pw1.forward(ln.forward(x));
        Var<T> gate_in = slice(h, 1, dim, dim);
        Var<T> a = slice(h, 1, 0, dim);
        Var<T> glu = mul(a, sigmoid(gate_in));
        Var<T> conv = depthwise(glu, t_len, dim);
        return pw2.forward(silu(norm.forward(conv)));
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        ln.collect(prefix + ".ln", out);
        pw1.collect(prefix + ".pw1", out);
        out.push_back({prefix + ".dw", dw});
        out.push_back({prefix + ".dw_bias", dw_bias});
        norm.collect(prefix + ".norm", out);
        pw2.collect(prefix + ".pw2", out);
    }

private:
    // Same-padded depthwise conv along time, composed from shifts:
    // out[t] = bias + sum_j dw[j] .* x[t + j - (K-1)/2]
    Var<T> depthwise(const Var<T>& x, std::size_t t_len, std::size_t dim) const {
        const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(kernel / 2);
        Var<T> acc;
        for (std::ptrdiff_t j = -pad; j <= pad; ++j) {
            if (static_cast<std::size_t>(std::abs(j)) >= t_len) continue;  // fully padded tap
            Var<T> shifted = shift_rows(x, j, t_len, dim);
            Var<T> tap = slice(dw, 0, static_cast<std::size_t>(j + pad), 1);
            Var<T> term = mul(shifted, broadcast_to(tap, x.value().shape()));
            acc = acc.defined() ? add(acc, term) : term;
        }
        if (!acc.defined()) acc = Var<T>::leaf(Tensor<T>(x.value().shape()));
        return add(acc, broadcast_to(dw_bias, x.value().shape()));
    }

    // shifted[t] = x[t + d], zero outside [0, T)
    static Var<T> shift_rows(const Var<T>& x, std::ptrdiff_t d, std::size_t t_len, std::size_t dim) {
        if (d == 0) return x;
        const std::size_t n = static_cast<std::size_t>(std::abs(d));
        Var<T> zeros = Var<T>::leaf(Tensor<T>(Shape{n, dim}));
        if (d > 0) return concat(slice(x, 0, n, t_len - n), zeros, 0);
        return concat(zeros, slice(x, 0, 0, t_len - n), 0);
    }
};

// Conformer block: half-step FFN sandwich around self-attention and the
// convolution module, with a final layer norm.
template <std::floating_point T>
struct ConformerBlock {
    FeedForward<T> ffn1;
    LayerNormParams<T> mhsa_ln;
    MultiHeadSelfAttention<T> mhsa;
    ConvModule<T> conv;
    FeedForward<T> ffn2;
    LayerNormParams<T> final_ln;

    static ConformerBlock make(std::size_t dim, std::size_t heads, std::size_t kernel, Rng& rng) {
        ConformerBlock b;
        b.ffn1 = FeedForward<T>::make(dim, rng);
        b.mhsa_ln = LayerNormParams<T>::make(dim);
        b.mhsa = MultiHeadSelfAttention<T>::make(dim, heads, rng);
        b.conv = ConvModule<T>::make(dim, kernel, rng);
        b.ffn2 = FeedForward<T>::make(dim, rng);
        b.final_ln = LayerNormParams<T>::make(dim);
        return b;
    }

    Var<T> forward(const Var<T>& x) const {
        Var<T> x1 = add(x, scalar_mul(ffn1.forward(x), T(0.5)));
        Var<T> x2 = add(x1, mhsa.forward(mhsa_ln.forward(x1)).first);
        Var<T> x3 = add(x2, conv.forward(x2));
        return final_ln.forward(add(x3, scalar_mul(ffn2.forward(x3), T(0.5))));
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        ffn1.collect(prefix + ".ffn1", out);
        mhsa_ln.collect(prefix + ".mhsa_ln", out);
        mhsa.collect(prefix + ".mhsa", out);
        conv.collect(prefix + ".conv", out);
        ffn2.collect(prefix + ".ffn2", out);
        final_ln.collect(prefix + ".final_ln", out);
    }
};

// Vanilla pre-norm transformer block; with zero weights it is an exact identity.
template <std::floating_point T>
struct TransformerBlock {
    LayerNormParams<T> ln1;
    MultiHeadSelfAttention<T> mhsa;
    LayerNormParams<T> ln2;
    Linear<T> w1, w2;

    static TransformerBlock make(std::size_t dim, std::size_t heads, Rng& rng) {
        TransformerBlock b;
        b.ln1 = LayerNormParams<T>::make(dim);
        b.mhsa = MultiHeadSelfAttention<T>::make(dim, heads, rng);
        b.ln2 = LayerNormParams<T>::make(dim);
        b.w1 = Linear<T>::make(dim, dim * 4, rng);
        b.w2 = Linear<T>::make(dim * 4, dim, rng);
        return b;
    }

    Var<T> forward(const Var<T>& x) const {
        Var<T> x1 = add(x, mhsa.forward(ln1.forward(x)).first);
        return add(x1, w2.forward(silu(w1.forward(ln2.forward(x1)))));
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        ln1.collect(prefix + ".ln1", out);
        mhsa.collect(prefix + ".mhsa", out);
        ln2.collect(prefix + ".ln2", out);
        w1.collect(prefix + ".w1", out);
        w2.collect(prefix + ".w2", out);
    }
};

// Two-layer MLP prediction head: logits for discrete tasks, raw values for
// continuous ones.
template <std::floating_point T>
struct MlpHead {
    Linear<T> w1, w2;

    static MlpHead make(std::size_t in_dim, std::size_t hidden, std::size_t out_dim, Rng& rng) {
        MlpHead h;
        h.w1 = Linear<T>::make(in_dim, hidden, rng);
        h.w2 = Linear<T>::make(hidden, out_dim, rng);
        return h;
    }

    // [in_dim] -> [out_dim], or batched [B x in_dim] -> [B x out_dim]
    Var<T> forward(const Var<T>& x) const {
        if (x.value().rank() == 1) {
            Var<T> row = reshape(x, Shape{1, x.value().dim(0)});
            Var<T> y = w2.forward(silu(w1.forward(row)));
            return reshape(y, Shape{y.value().dim(1)});
        }
        return w2.forward(silu(w1.forward(x)));
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        w1.collect(prefix + ".w1", out);
        w2.collect(prefix + ".w2", out);
    }
};

// Input projection plus a stack of Conformer (or transformer) blocks sharing
// one model dim. Positional encoding is off by default; the conv module
// supplies locality.
template <std::floating_point T>
struct EncoderStack {
    Linear<T> proj;
    std::vector<ConformerBlock<T>> conformers;
    std::vector<TransformerBlock<T>> transformers;
    bool positional = false;

    static EncoderStack make(std::size_t in_dim, std::size_t dim, std::size_t blocks,
                             std::size_t heads, std::size_t kernel, Rng& rng,
                             bool use_transformer = false, bool positional = false) {
        EncoderStack s;
        s.positional = positional;
        s.proj = Linear<T>::make(in_dim, dim, rng);
        for (std::size_t i = 0; i < blocks; ++i) {
            if (use_transformer)
                s.transformers.push_back(TransformerBlock<T>::make(dim, heads, rng));
            else
                s.conformers.push_back(ConformerBlock<T>::make(dim, heads, kernel, rng));
        }
        return s;
    }

    bool uses_transformer() const { return !transformers.empty(); }
    std::size_t block_count() const { return conformers.size() + transformers.size(); }

    Var<T> forward(const Var<T>& x) const {
        Var<T> h = proj.forward(x);
        if (positional)
            h = add(h, Var<T>::leaf(sinusoidal_table<T>(h.value().dim(0), h.value().dim(1))));
        for (const auto& b : conformers) h = b.forward(h);
        for (const auto& b : transformers) h = b.forward(h);
        return h;
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        proj.collect(prefix + ".proj", out);
        for (std::size_t i = 0; i < conformers.size(); ++i)
            conformers[i].collect(prefix + ".block" + std::to_string(i), out);
        for (std::size_t i = 0; i < transformers.size(); ++i)
            transformers[i].collect(prefix + ".block" + std::to_string(i), out);
    }
};

}  // namespace deiii
