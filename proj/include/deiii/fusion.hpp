// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <utility>

#include "deiii/nn.hpp"

// Cross-modal machinery: pairwise optical-flow/frame fusion, cosine-attention
// inter-modal feature enhancement, and temporal max pooling.

namespace deiii {

inline constexpr double kZeroNormEps = 1e-12;

// Pairwise flow/frame fusion. A two-way softmax over FC([o : v]) weights the
// projected flow and frame features of each timestep.
template <std::floating_point T>
struct OvFusionParams {
    Linear<T> fc;   // [2D -> 2]
    Linear<T> w_o;  // [D -> D]
    Linear<T> w_v;  // [D -> D]

    static OvFusionParams make(std::size_t dim, Rng& rng) {
        OvFusionParams p;
        p.fc = Linear<T>::make(2 * dim, 2, rng);
        p.w_o = Linear<T>::make(dim, dim, rng);
        p.w_v = Linear<T>::make(dim, dim, rng);
        return p;
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        fc.collect(prefix + ".fc", out);
        w_o.collect(prefix + ".w_o", out);
        w_v.collect(prefix + ".w_v", out);
    }
};

// Inter-modal feature enhancement: cosine attention from queries of one
// modality onto keys of the other, with a residual and a feed-forward block.
// The optional temperature scales the cosine scores before the softmax and is
// learnable when enabled (off by default: softmax over raw s in [-1, 1]).
template <std::floating_point T>
struct IfeParams {
    Linear<T> w_q;    // [D -> D]
    Linear<T> w_k;    // [D -> D]
    Linear<T> w_val;  // [D -> D]
    Linear<T> ffb1;   // [D -> 4D]
    Linear<T> ffb2;   // [4D -> D]
    Var<T> temperature;  // scalar; undefined unless enabled

    static IfeParams make(std::size_t dim, Rng& rng, bool learnable_temperature = false) {
        IfeParams p;
        p.w_q = Linear<T>::make(dim, dim, rng);
        p.w_k = Linear<T>::make(dim, dim, rng);
        p.w_val = Linear<T>::make(dim, dim, rng);
        p.ffb1 = Linear<T>::make(dim, 4 * dim, rng);
        p.ffb2 = Linear<T>::make(4 * dim, dim, rng);
        if (learnable_temperature) p.temperature = Var<T>::leaf(Tensor<T>(Shape{1}, T(1)), true);
        return p;
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        w_q.collect(prefix + ".w_q", out);
        w_k.collect(prefix + ".w_k", out);
        w_val.collect(prefix + ".w_val", out);
        ffb1.collect(prefix + ".ffb1", out);
        ffb2.collect(prefix + ".ffb2", out);
        if (temperature.defined()) out.push_back({prefix + ".temperature", temperature});
    }
};

namespace detail {

// Row-wise L2 normalization, composed from primitives so it differentiates.
// Rejects rows whose norm is below kZeroNormEps: the cosine is undefined there.
template <std::floating_point T>
Var<T> l2_normalize_rows(const Var<T>& x, const char* who) {
    Var<T> norm2 = sum_axis(mul(x, x), 1);  // [n x 1]
    const Tensor<T>& n2 = norm2.value();
    for (std::size_t i = 0; i < n2.size(); ++i)
        if (std::sqrt(static_cast<double>(n2.data()[i])) < kZeroNormEps)
            throw NumericError(std::string(who) + ": projected row " + std::to_string(i) +
                               " has near-zero norm; cosine similarity is undefined");
    return div(x, broadcast_to(sqrt(norm2), x.value().shape()));
}

}  // namespace detail

// out_i = beta_o * W_o(o_i) + beta_v * W_v(v_i), (beta_o, beta_v) = softmax(FC([o_i : v_i])).
// The record's weight rows are (beta_o, beta_v) per timestep.
template <std::floating_point T>
std::pair<Var<T>, AttentionRecord<T>> ov_fuse(const OvFusionParams<T>& params, const Var<T>& o_bar,
                                              const Var<T>& v_bar) {
    if (!(o_bar.value().shape() == v_bar.value().shape()))
        throw std::invalid_argument("ov_fuse: flow stream " + shape_str(o_bar.value().shape()) +
                                    " and frame stream " + shape_str(v_bar.value().shape()) +
                                    " must match");
    Var<T> beta = softmax(params.fc.forward(concat(o_bar, v_bar, 1)));  // [n x 2]
    const Shape full = o_bar.value().shape();
    Var<T> beta_o = broadcast_to(slice(beta, 1, 0, 1), full);
    Var<T> beta_v = broadcast_to(slice(beta, 1, 1, 1), full);
    Var<T> out = add(mul(beta_o, params.w_o.forward(o_bar)), mul(beta_v, params.w_v.forward(v_bar)));
    AttentionRecord<T> record{beta.value(), {}, "flow+video", "flow|video"};
    return {out, std::move(record)};
}

// Cosine attention of queries onto keys (single head):
//   s_ij = cos(W_q q_i, W_k k_j);  alpha_i = softmax_j(s_i);
//   r_i = sum_j alpha_ij W_val(k_j) + q_i;  out_i = r_i + FFB(r_i).
// The record carries alpha as weights and the raw cosine matrix as similarities.
template <std::floating_point T>
std::pair<Var<T>, AttentionRecord<T>> ife_attend(const IfeParams<T>& params, const Var<T>& queries,
                                                 const Var<T>& keys, std::string query_modality,
                                                 std::string key_modality) {
    Var<T> qn = detail::l2_normalize_rows(params.w_q.forward(queries), "ife_attend(query)");
    Var<T> kn = detail::l2_normalize_rows(params.w_k.forward(keys), "ife_attend(key)");
    Var<T> s = matmul(qn, transpose(kn));  // [n_q x n_k], entries in [-1, 1]
    Tensor<T> cosines = s.value();
    if (params.temperature.defined())
        s = mul(s, broadcast_to(params.temperature, s.value().shape()));
    Var<T> alpha = softmax(s);
    Var<T> r = add(matmul(alpha, params.w_val.forward(keys)), queries);
    Var<T> out = add(r, params.ffb2.forward(silu(params.ffb1.forward(r))));
    AttentionRecord<T> record{alpha.value(), std::move(cosines), std::move(query_modality),
                              std::move(key_modality)};
    return {out, std::move(record)};
}

// Column-wise max over time: [T x D] -> [D]. Gradient flows to the first
// maximal index of each column.
template <std::floating_point T>
Var<T> temporal_max_pool(const Var<T>& x) {
    if (x.value().rank() != 2)
        throw std::invalid_argument("temporal_max_pool: expected rank 2, got " +
                                    shape_str(x.value().shape()));
    Var<T> m = max_axis(x, 0);  // [1 x D]
    return reshape(m, Shape{x.value().dim(1)});
}

}  // namespace deiii
