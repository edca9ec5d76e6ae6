// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "deiii/autodiff.hpp"

// Training losses and evaluation metrics. Losses are autodiff graphs; metrics
// are plain scalar functions over predictions.

namespace deiii {

// Per-head losses; total is always their sum.
struct LossBundle {
    double l_v = 0, l_a = 0, l_f = 0, total = 0;

    static LossBundle of(double v, double a, double f) { return {v, a, f, v + a + f}; }
};

// Mean over the batch of -log softmax(logits)[label], computed in log space.
template <std::floating_point T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<std::size_t>& labels) {
    const Tensor<T>& L = logits.value();
    if (L.rank() != 2)
        throw std::invalid_argument("cross_entropy: expected [B x C] logits, got " + shape_str(L.shape()));
    const std::size_t b = L.dim(0), c = L.dim(1);
    if (labels.size() != b)
        throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) +
                                    " labels for batch of " + std::to_string(b));
    Tensor<T> onehot(L.shape());
    for (std::size_t i = 0; i < b; ++i) {
        if (labels[i] >= c)
            throw std::invalid_argument("cross_entropy: label " + std::to_string(labels[i]) +
                                        " out of range for " + std::to_string(c) + " classes");
        onehot.at(i, labels[i]) = T(1);
    }
    Var<T> shifted = sub(logits, broadcast_to(max_axis(logits, 1), L.shape()));
    Var<T> lse = log(sum_axis(exp(shifted), 1));  // [B x 1]
    Var<T> logp = sub(shifted, broadcast_to(lse, L.shape()));
    return scalar_mul(sum_all(mul(logp, Var<T>::leaf(std::move(onehot)))), T(-1) / T(b));
}

namespace detail {

// Concordance of two [B x 1] columns as a graph node. Uses the covariance
// form 2*cov / (var_x + var_y + (mu_x - mu_y)^2) with population moments; a
// zero denominator means both columns are constant and equal, where the
// coefficient is defined as 1.
template <std::floating_point T>
Var<T> ccc_column(const Var<T>& x, const Var<T>& y) {
    const std::size_t b = x.value().dim(0);
    const Shape col{b, 1};
    Var<T> mx = reshape(mean_axis(x, 0), Shape{1});
    Var<T> my = reshape(mean_axis(y, 0), Shape{1});
    Var<T> xc = sub(x, broadcast_to(mx, col));
    Var<T> yc = sub(y, broadcast_to(my, col));
    const T inv_b = T(1) / T(b);
    Var<T> cov = scalar_mul(sum_all(mul(xc, yc)), inv_b);
    Var<T> vx = scalar_mul(sum_all(mul(xc, xc)), inv_b);
    Var<T> vy = scalar_mul(sum_all(mul(yc, yc)), inv_b);
    Var<T> gap = sub(mx, my);
    Var<T> denom = add(add(vx, vy), mul(gap, gap));
    if (denom.value().at(0) == T(0)) return Var<T>::leaf(Tensor<T>(Shape{1}, T(1)));
    return div(scalar_mul(cov, T(2)), denom);
}

}  // namespace detail

// Mean over target dimensions of (1 - ccc), differentiable w.r.t. pred.
template <std::floating_point T>
Var<T> ccc_loss(const Var<T>& pred, const Tensor<T>& target) {
    const Tensor<T>& P = pred.value();
    if (P.rank() != 2 || !(P.shape() == target.shape()))
        throw std::invalid_argument("ccc_loss: prediction " + shape_str(P.shape()) +
                                    " and target " + shape_str(target.shape()) + " must be equal rank-2");
    if (P.dim(0) < 2)
        throw std::invalid_argument("ccc_loss: need at least 2 samples, got " + std::to_string(P.dim(0)));
    const std::size_t dims = P.dim(1);
    Var<T> tgt = Var<T>::leaf(target);
    Var<T> one = Var<T>::leaf(Tensor<T>(Shape{1}, T(1)));
    Var<T> acc;
    for (std::size_t d = 0; d < dims; ++d) {
        Var<T> term = sub(one, detail::ccc_column(slice(pred, 1, d, 1), slice(tgt, 1, d, 1)));
        acc = acc.defined() ? add(acc, term) : term;
    }
    return scalar_mul(acc, T(1) / T(dims));
}

// Scalar concordance correlation coefficient with population statistics.
inline double ccc(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size())
        throw std::invalid_argument("ccc: length mismatch, " + std::to_string(x.size()) + " vs " +
                                    std::to_string(y.size()));
    const std::size_t b = x.size();
    if (b < 2) throw std::invalid_argument("ccc: need at least 2 samples, got " + std::to_string(b));
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < b; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(b);
    my /= static_cast<double>(b);
    double cov = 0, vx = 0, vy = 0;
    for (std::size_t i = 0; i < b; ++i) {
        cov += (x[i] - mx) * (y[i] - my);
        vx += (x[i] - mx) * (x[i] - mx);
        vy += (y[i] - my) * (y[i] - my);
    }
    cov /= static_cast<double>(b);
    vx /= static_cast<double>(b);
    vy /= static_cast<double>(b);
    const double denom = vx + vy + (mx - my) * (mx - my);
    if (denom == 0) return 1.0;  // both constant and equal
    return 2.0 * cov / denom;
}

struct F1Result {
    double macro = 0;
    double micro = 0;
    std::vector<double> per_class;
};

// Per-class F1 (0 when precision + recall = 0), unweighted macro mean, and
// micro-F1 from pooled counts (equals accuracy for single-label outputs).
inline F1Result f1_scores(const std::vector<std::size_t>& preds, const std::vector<std::size_t>& labels,
                          std::size_t num_classes) {
    if (preds.size() != labels.size())
        throw std::invalid_argument("f1_scores: length mismatch, " + std::to_string(preds.size()) +
                                    " vs " + std::to_string(labels.size()));
    if (preds.empty()) throw std::invalid_argument("f1_scores: empty input");
    std::vector<std::size_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] >= num_classes || labels[i] >= num_classes)
            throw std::invalid_argument("f1_scores: id out of range for " +
                                        std::to_string(num_classes) + " classes at index " +
                                        std::to_string(i));
        if (preds[i] == labels[i]) {
            ++tp[labels[i]];
        } else {
            ++fp[preds[i]];
            ++fn[labels[i]];
        }
    }
    F1Result r;
    r.per_class.resize(num_classes, 0.0);
    std::size_t tp_all = 0, fp_all = 0, fn_all = 0;
    for (std::size_t k = 0; k < num_classes; ++k) {
        const double pr_den = static_cast<double>(tp[k] + fp[k]);
        const double rc_den = static_cast<double>(tp[k] + fn[k]);
        const double p = pr_den == 0 ? 0.0 : static_cast<double>(tp[k]) / pr_den;
        const double rc = rc_den == 0 ? 0.0 : static_cast<double>(tp[k]) / rc_den;
        r.per_class[k] = p + rc == 0 ? 0.0 : 2.0 * p * rc / (p + rc);
        r.macro += r.per_class[k];
        tp_all += tp[k];
        fp_all += fp[k];
        fn_all += fn[k];
    }
    r.macro /= static_cast<double>(num_classes);
    const double mp = static_cast<double>(tp_all) / static_cast<double>(tp_all + fp_all);
    const double mr = static_cast<double>(tp_all) / static_cast<double>(tp_all + fn_all);
    r.micro = mp + mr == 0 ? 0.0 : 2.0 * mp * mr / (mp + mr);
    return r;
}

inline double accuracy(const std::vector<std::size_t>& preds, const std::vector<std::size_t>& labels) {
    if (preds.size() != labels.size())
        throw std::invalid_argument("accuracy: length mismatch, " + std::to_string(preds.size()) +
                                    " vs " + std::to_string(labels.size()));
    if (preds.empty()) throw std::invalid_argument("accuracy: empty input");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == labels[i] ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(preds.size());
}

// Evaluation summary for one head. Discrete tasks fill the classification
// fields; continuous tasks fill the three concordance values.
struct MetricReport {
    bool discrete = true;
    double accuracy = 0;
    double f1_macro = 0;
    double f1_micro = 0;
    std::vector<double> f1_per_class;
    double ccc_valence = 0;
    double ccc_arousal = 0;
    double ccc_dominance = 0;
};

inline MetricReport report_discrete(const std::vector<std::size_t>& preds,
                                    const std::vector<std::size_t>& labels, std::size_t num_classes) {
    MetricReport r;
    r.discrete = true;
    r.accuracy = accuracy(preds, labels);
    F1Result f1 = f1_scores(preds, labels, num_classes);
    r.f1_macro = f1.macro;
    r.f1_micro = f1.micro;
    r.f1_per_class = std::move(f1.per_class);
    return r;
}

template <std::floating_point T>
MetricReport report_continuous(const Tensor<T>& pred, const Tensor<T>& target) {
    if (pred.rank() != 2 || pred.dim(1) != 3 || !(pred.shape() == target.shape()))
        throw std::invalid_argument("report_continuous: expected matching [B x 3] tensors, got " +
                                    shape_str(pred.shape()) + " and " + shape_str(target.shape()));
    auto column = [](const Tensor<T>& t, std::size_t d) {
        std::vector<double> col(t.dim(0));
        for (std::size_t i = 0; i < t.dim(0); ++i) col[i] = static_cast<double>(t.at(i, d));
        return col;
    };
    MetricReport r;
    r.discrete = false;
    r.ccc_valence = ccc(column(pred, 0), column(target, 0));
    r.ccc_arousal = ccc(column(pred, 1), column(target, 1));
    r.ccc_dominance = ccc(column(pred, 2), column(target, 2));
    return r;
}

}  // namespace deiii
