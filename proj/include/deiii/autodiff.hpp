// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "deiii/errors.hpp"
#include "deiii/tensor.hpp"

// Reverse-mode autodiff over dense tensors. Each primitive builds one graph
// node holding the forward value and a closure that scatters the node's grad
// into its parents. Graphs are acyclic, single-threaded, and rebuilt per
// forward pass; leaf nodes (parameters) persist across graphs.

namespace deiii {

template <std::floating_point T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // empty until the first accumulation
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;

    void accumulate(const Tensor<T>& contrib) {
        if (!requires_grad) return;
        if (grad.size() == 0) grad = Tensor<T>(value.shape());
        for (std::size_t i = 0; i < grad.size(); ++i) grad.at(i) += contrib.at(i);
    }
};

template <std::floating_point T>
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

    static Var leaf(Tensor<T> value, bool requires_grad = false) {
        ensure_finite(value, "leaf");
        auto n = std::make_shared<Node<T>>();
        n->value = std::move(value);
        n->requires_grad = requires_grad;
        return Var(std::move(n));
    }

    bool defined() const { return node_ != nullptr; }
    const Tensor<T>& value() const { return node_->value; }
    bool requires_grad() const { return node_->requires_grad; }

    // Gradient accumulated by the last backward(); zeros if never reached.
    Tensor<T> grad() const {
        if (node_->grad.size() == 0) return Tensor<T>(node_->value.shape());
        return node_->grad;
    }

    void zero_grad() { node_->grad = Tensor<T>(); }
    void set_value(Tensor<T> v) {
        ensure_finite(v, "set_value");
        if (!v.same_shape(node_->value))
            throw std::invalid_argument("set_value: shapes " + shape_str(v.shape()) + " vs " +
                                        shape_str(node_->value.shape()));
        node_->value = std::move(v);
    }

    const std::shared_ptr<Node<T>>& node() const { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

namespace detail {

template <std::floating_point T>
Var<T> make_node(const char* op, Tensor<T> value, std::vector<std::shared_ptr<Node<T>>> parents,
                 std::function<void(Node<T>&)> backprop) {
    if (!value.all_finite())
        throw NumericError(std::string(op) + ": produced non-finite values for shape " +
                           shape_str(value.shape()));
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->op = op;
    for (const auto& p : parents) n->requires_grad = n->requires_grad || p->requires_grad;
    n->parents = std::move(parents);
    if (n->requires_grad) n->backprop = std::move(backprop);
    return Var<T>(std::move(n));
}

template <std::floating_point T>
void check_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---- elementwise binary primitives ----------------------------------------

template <std::floating_point T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    detail::check_same_shape("add", a.value(), b.value());
    Tensor<T> out(a.value().shape());
    for (std::size_t i = 0; i < out.size(); ++i) out.at(i) = a.value().at(i) + b.value().at(i);
    auto pa = a.node(), pb = b.node();
    return detail::make_node<T>("add", std::move(out), {pa, pb}, [pa, pb](Node<T>& self) {
        pa->accumulate(self.grad);
        pb->accumulate(self.grad);
    });
}

template <std::floating_point T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    detail::check_same_shape("sub", a.value(), b.value());
    Tensor<T> out(a.value().shape());
    for (std::size_t i = 0; i < out.size(); ++i) out.at(i) = a.value().at(i) - b.value().at(i);
    auto pa = a.node(), pb = b.node();
    return detail::make_node<T>("sub", std::move(out), {pa, pb}, [pa, pb](Node<T>& self) {
        pa->accumulate(self.grad);
        Tensor<T> neg(self.grad.shape());
        for (std::size_t i = 0; i < neg.size(); ++i) neg.at(i) = -self.grad.at(i);
        pb->accumulate(neg);
    });
}

template <std::floating_point T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    detail::check_same_shape("mul", a.value(), b.value());
    Tensor<T> out(a.value().shape());
    for (std::size_t i = 0; i < out.size(); ++i) out.at(i) = a.value().at(i) * b.value().at(i);
    auto pa = a.node(), pb = b.node();
    return detail::make_node<T>("mul", std::move(out), {pa, pb}, [pa, pb](Node<T>& self) {
        Tensor<T> ga(self.grad.shape()), gb(self.grad.shape());
        for (std::size_t i = 0; i < ga.size(); ++i) {
            ga.at(i) = self.grad.at(i) * pb->value.at(i);
            gb.at(i) = self.grad.at(i) * pa->value.at(i);
        }
        pa->accumulate(ga);
        pb->accumulate(gb);
    });
}

template <std::floating_point T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
    detail::check_same_shape("div", a.value(), b.value());
    Tensor<T> out(a.value().shape());
    for (std::size_t i = 0; i < out.size(); ++i) out.at(i) = a.value().at(i) / b.value().at(i);
    auto pa = a.node(), pb = b.node();
    return detail::make_node<T>("div", std::move(out), {pa, pb}, [pa, pb](Node<T>& self) {
        Tensor<T> ga(self.grad.shape()), gb(self.grad.shape());
        for (std::size_t i = 0; i < ga.size(); ++i) {
            const T bv = pb->value.at(i);
            ga.at(i) = self.grad.at(i) / bv;
            gb.at(i) = -self.grad.at(i) * pa->value.at(i) / (bv * bv);
        }
        pa->accumulate(ga);
        pb->accumulate(gb);
    });
}

template <std::floating_point T>
Var<T> scalar_mul(const Var<T>& a, T c) {
    Tensor<T> out(a.value().shape());
    for (std::size_t i = 0; i < out.size(); ++i) out.at(i) = a.value().at(i) * c;
    auto pa = a.node();
    return detail::make_node<T>("scalar_mul", std::move(out), {pa}, [pa, c](Node<T>& self) {
        Tensor<T> g(self.grad.shape());
        for (std::size_t i = 0; i < g.size(); ++i) g.at(i) = self.grad.at(i) * c;
        pa->accumulate(g);
    });
}

// ---- elementwise unary primitives ------------------------------------------

namespace detail {

template <std::floating_point T, class Fwd, class Bwd>
Var<T> unary_op(const char* op, const Var<T>& a, Fwd fwd, Bwd dfdx_from_x_and_y) {
    Tensor<T> out(a.value().shape());
    for (std::size_t i = 0; i < out.size(); ++i) out.at(i) = fwd(a.value().at(i));
    auto pa = a.node();
    return detail::make_node<T>(op, std::move(out), {pa},
                                [pa, dfdx_from_x_and_y](Node<T>& self) {
                                    Tensor<T> g(self.grad.shape());
                                    for (std::size_t i = 0; i < g.size(); ++i)
                                        g.at(i) = self.grad.at(i) *
                                                  dfdx_from_x_and_y(pa->value.at(i), self.value.at(i));
                                    pa->accumulate(g);
                                });
}

}  // namespace detail

template <std::floating_point T>
Var<T> exp(const Var<T>& a) {
    return detail::unary_op<T>("exp", a, [](T x) { return std::exp(x); },
                               [](T, T y) { return y; });
}

template <std::floating_point T>
Var<T> log(const Var<T>& a) {
    return detail::unary_op<T>("log", a, [](T x) { return std::log(x); },
                               [](T x, T) { return T(1) / x; });
}

template <std::floating_point T>
Var<T> sqrt(const Var<T>& a) {
    return detail::unary_op<T>("sqrt", a, [](T x) { return std::sqrt(x); },
                               [](T, T y) { return T(1) / (T(2) * y); });
}

template <std::floating_point T>
Var<T> sigmoid(const Var<T>& a) {
    return detail::unary_op<T>(
        "sigmoid", a,
        [](T x) { return x >= 0 ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x)); },
        [](T, T y) { return y * (T(1) - y); });
}

template <std::floating_point T>
Var<T> tanh(const Var<T>& a) {
    return detail::unary_op<T>("tanh", a, [](T x) { return std::tanh(x); },
                               [](T, T y) { return T(1) - y * y; });
}

template <std::floating_point T>
Var<T> relu(const Var<T>& a) {
    return detail::unary_op<T>("relu", a, [](T x) { return x > 0 ? x : T(0); },
                               [](T x, T) { return x > 0 ? T(1) : T(0); });
}

// x * sigmoid(x), composed so the backward rule comes for free.
template <std::floating_point T>
Var<T> silu(const Var<T>& a) {
    return mul(a, sigmoid(a));
}

// ---- linear algebra ---------------------------------------------------------

template <std::floating_point T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    const Tensor<T>& A = a.value();
    const Tensor<T>& B = b.value();
    if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0))
        throw std::invalid_argument("matmul: shapes " + shape_str(A.shape()) + " and " +
                                    shape_str(B.shape()) + " are incompatible");
    const std::size_t n = A.dim(0), k = A.dim(1), m = B.dim(1);
    Tensor<T> out(Shape{n, m});
    // i-k-j order keeps the inner loop contiguous.
    for (std::size_t i = 0; i < n; ++i) {
        const T* arow = A.data().data() + i * k;
        T* orow = out.data().data() + i * m;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const T av = arow[kk];
            const T* brow = B.data().data() + kk * m;
            for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
        }
    }
    auto pa = a.node(), pb = b.node();
    return detail::make_node<T>("matmul", std::move(out), {pa, pb}, [pa, pb, n, k, m](Node<T>& self) {
        const Tensor<T>& G = self.grad;
        if (pa->requires_grad) {
            Tensor<T> ga(Shape{n, k});  // G * B^T
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) {
                    const T gv = G.at(i, j);
                    for (std::size_t kk = 0; kk < k; ++kk) ga.at(i, kk) += gv * pb->value.at(kk, j);
                }
            pa->accumulate(ga);
        }
        if (pb->requires_grad) {
            Tensor<T> gb(Shape{k, m});  // A^T * G
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t kk = 0; kk < k; ++kk) {
                    const T av = pa->value.at(i, kk);
                    for (std::size_t j = 0; j < m; ++j) gb.at(kk, j) += av * G.at(i, j);
                }
            pb->accumulate(gb);
        }
    });
}

template <std::floating_point T>
Var<T> transpose(const Var<T>& a) {
    const Tensor<T>& A = a.value();
    if (A.rank() != 2) throw std::invalid_argument("transpose: expected rank 2, got " + shape_str(A.shape()));
    const std::size_t n = A.dim(0), m = A.dim(1);
    Tensor<T> out(Shape{m, n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out.at(j, i) = A.at(i, j);
    auto pa = a.node();
    return detail::make_node<T>("transpose", std::move(out), {pa}, [pa, n, m](Node<T>& self) {
        Tensor<T> g(Shape{n, m});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) g.at(i, j) = self.grad.at(j, i);
        pa->accumulate(g);
    });
}

// ---- shape manipulation -----------------------------------------------------

template <std::floating_point T>
Var<T> reshape(const Var<T>& a, Shape shape) {
    if (shape_numel(shape) != a.value().size())
        throw std::invalid_argument("reshape: cannot view " + shape_str(a.value().shape()) + " as " +
                                    shape_str(shape));
    Tensor<T> out(shape, a.value().data());
    auto pa = a.node();
    return detail::make_node<T>("reshape", std::move(out), {pa}, [pa](Node<T>& self) {
        pa->accumulate(Tensor<T>(pa->value.shape(), self.grad.data()));
    });
}

template <std::floating_point T>
Var<T> concat(const Var<T>& a, const Var<T>& b, std::size_t axis) {
    const Tensor<T>& A = a.value();
    const Tensor<T>& B = b.value();
    if (A.rank() != B.rank() || axis >= A.rank())
        throw std::invalid_argument("concat: bad axis " + std::to_string(axis) + " for " +
                                    shape_str(A.shape()) + " and " + shape_str(B.shape()));
    for (std::size_t d = 0; d < A.rank(); ++d)
        if (d != axis && A.dim(d) != B.dim(d))
            throw std::invalid_argument("concat: shape mismatch " + shape_str(A.shape()) + " vs " +
                                        shape_str(B.shape()) + " on axis " + std::to_string(axis));
    Shape out_shape = A.shape();
    out_shape[axis] += B.dim(axis);
    Tensor<T> out(out_shape);
    if (A.rank() == 1 || axis == 0) {
        std::copy(A.data().begin(), A.data().end(), out.data().begin());
        std::copy(B.data().begin(), B.data().end(), out.data().begin() + A.size());
    } else {  // rank 2, axis 1
        for (std::size_t i = 0; i < A.dim(0); ++i) {
            for (std::size_t j = 0; j < A.dim(1); ++j) out.at(i, j) = A.at(i, j);
            for (std::size_t j = 0; j < B.dim(1); ++j) out.at(i, A.dim(1) + j) = B.at(i, j);
        }
    }
    auto pa = a.node(), pb = b.node();
    const Shape sa = A.shape(), sb = B.shape();
    return detail::make_node<T>("concat", std::move(out), {pa, pb},
                                [pa, pb, sa, sb, axis](Node<T>& self) {
                                    Tensor<T> ga(sa), gb(sb);
                                    if (sa.size() == 1 || axis == 0) {
                                        const auto na = shape_numel(sa);
                                        for (std::size_t i = 0; i < na; ++i) ga.at(i) = self.grad.at(i);
                                        for (std::size_t i = 0; i < shape_numel(sb); ++i)
                                            gb.at(i) = self.grad.at(na + i);
                                    } else {
                                        for (std::size_t i = 0; i < sa[0]; ++i) {
                                            for (std::size_t j = 0; j < sa[1]; ++j) ga.at(i, j) = self.grad.at(i, j);
                                            for (std::size_t j = 0; j < sb[1]; ++j)
                                                gb.at(i, j) = self.grad.at(i, sa[1] + j);
                                        }
                                    }
                                    pa->accumulate(ga);
                                    pb->accumulate(gb);
                                });
}

template <std::floating_point T>
Var<T> slice(const Var<T>& a, std::size_t axis, std::size_t start, std::size_t len) {
    const Tensor<T>& A = a.value();
    if (axis >= A.rank() || start + len > A.dim(axis) || len == 0)
        throw std::invalid_argument("slice: range [" + std::to_string(start) + ", " +
                                    std::to_string(start + len) + ") on axis " + std::to_string(axis) +
                                    " out of bounds for " + shape_str(A.shape()));
    Shape out_shape = A.shape();
    out_shape[axis] = len;
    Tensor<T> out(out_shape);
    if (A.rank() == 1) {
        for (std::size_t i = 0; i < len; ++i) out.at(i) = A.at(start + i);
    } else if (axis == 0) {
        for (std::size_t i = 0; i < len; ++i)
            for (std::size_t j = 0; j < A.dim(1); ++j) out.at(i, j) = A.at(start + i, j);
    } else {
        for (std::size_t i = 0; i < A.dim(0); ++i)
            for (std::size_t j = 0; j < len; ++j) out.at(i, j) = A.at(i, start + j);
    }
    auto pa = a.node();
    const Shape sa = A.shape();
    return detail::make_node<T>("slice", std::move(out), {pa},
                                [pa, sa, axis, start, len](Node<T>& self) {
                                    Tensor<T> g(sa);
                                    if (sa.size() == 1) {
                                        for (std::size_t i = 0; i < len; ++i) g.at(start + i) = self.grad.at(i);
                                    } else if (axis == 0) {
                                        for (std::size_t i = 0; i < len; ++i)
                                            for (std::size_t j = 0; j < sa[1]; ++j)
                                                g.at(start + i, j) = self.grad.at(i, j);
                                    } else {
                                        for (std::size_t i = 0; i < sa[0]; ++i)
                                            for (std::size_t j = 0; j < len; ++j)
                                                g.at(i, start + j) = self.grad.at(i, j);
                                    }
                                    pa->accumulate(g);
                                });
}

// Broadcast a scalar, row [1 x D] (or [D]), or column [T x 1] to `shape`.
template <std::floating_point T>
Var<T> broadcast_to(const Var<T>& a, const Shape& shape) {
    const Tensor<T>& A = a.value();
    if (A.shape() == shape) return a;
    enum class Mode { Scalar, Row, Col } mode;
    if (A.size() == 1)
        mode = Mode::Scalar;
    else if (shape.size() == 2 && ((A.rank() == 1 && A.dim(0) == shape[1]) ||
                                   (A.rank() == 2 && A.dim(0) == 1 && A.dim(1) == shape[1])))
        mode = Mode::Row;
    else if (shape.size() == 2 && A.rank() == 2 && A.dim(1) == 1 && A.dim(0) == shape[0])
        mode = Mode::Col;
    else
        throw std::invalid_argument("broadcast: cannot expand " + shape_str(A.shape()) + " to " +
                                    shape_str(shape));
    Tensor<T> out(shape);
    const std::size_t rows = shape[0], cols = shape.size() == 2 ? shape[1] : 1;
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j)
            out.data()[i * cols + j] = mode == Mode::Scalar ? A.at(0)
                                       : mode == Mode::Row  ? A.at(j)
                                                            : A.at(i);
    auto pa = a.node();
    const Shape sa = A.shape();
    return detail::make_node<T>("broadcast", std::move(out), {pa},
                                [pa, sa, mode, rows, cols](Node<T>& self) {
                                    Tensor<T> g(sa);
                                    for (std::size_t i = 0; i < rows; ++i)
                                        for (std::size_t j = 0; j < cols; ++j) {
                                            const T gv = self.grad.data()[i * cols + j];
                                            if (mode == Mode::Scalar)
                                                g.at(0) += gv;
                                            else if (mode == Mode::Row)
                                                g.at(j) += gv;
                                            else
                                                g.at(i) += gv;
                                        }
                                    pa->accumulate(g);
                                });
}

// ---- reductions ---------------------------------------------------------------

template <std::floating_point T>
Var<T> sum_all(const Var<T>& a) {
    T s = 0;
    for (T v : a.value().data()) s += v;
    auto pa = a.node();
    return detail::make_node<T>("sum", Tensor<T>::scalar(s), {pa}, [pa](Node<T>& self) {
        Tensor<T> g(pa->value.shape());
        g.fill(self.grad.at(0));
        pa->accumulate(g);
    });
}

namespace detail {

template <std::floating_point T>
Var<T> reduce_axis(const char* op, const Var<T>& a, std::size_t axis, bool mean) {
    const Tensor<T>& A = a.value();
    if (A.rank() != 2 || axis > 1)
        throw std::invalid_argument(std::string(op) + ": expected rank 2 and axis 0/1, got " +
                                    shape_str(A.shape()) + " axis " + std::to_string(axis));
    const std::size_t n = A.dim(0), m = A.dim(1);
    const Shape out_shape = axis == 0 ? Shape{1, m} : Shape{n, 1};
    Tensor<T> out(out_shape);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            if (axis == 0)
                out.at(0, j) += A.at(i, j);
            else
                out.at(i, 0) += A.at(i, j);
        }
    const T denom = mean ? T(axis == 0 ? n : m) : T(1);
    if (mean)
        for (auto& v : out.data()) v /= denom;
    auto pa = a.node();
    return detail::make_node<T>(op, std::move(out), {pa}, [pa, axis, n, m, denom](Node<T>& self) {
        Tensor<T> g(Shape{n, m});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j)
                g.at(i, j) = (axis == 0 ? self.grad.at(0, j) : self.grad.at(i, 0)) / denom;
        pa->accumulate(g);
    });
}

}  // namespace detail

template <std::floating_point T>
Var<T> sum_axis(const Var<T>& a, std::size_t axis) {
    return detail::reduce_axis<T>("sum_axis", a, axis, false);
}

template <std::floating_point T>
Var<T> mean_axis(const Var<T>& a, std::size_t axis) {
    return detail::reduce_axis<T>("mean_axis", a, axis, true);
}

// Max along an axis; the gradient is routed to the first maximal index.
template <std::floating_point T>
Var<T> max_axis(const Var<T>& a, std::size_t axis) {
    const Tensor<T>& A = a.value();
    if (A.rank() != 2 || axis > 1)
        throw std::invalid_argument("max_axis: expected rank 2 and axis 0/1, got " +
                                    shape_str(A.shape()) + " axis " + std::to_string(axis));
    const std::size_t n = A.dim(0), m = A.dim(1);
    const std::size_t out_len = axis == 0 ? m : n;
    Tensor<T> out(axis == 0 ? Shape{1, m} : Shape{n, 1});
    std::vector<std::size_t> argmax(out_len);
    for (std::size_t o = 0; o < out_len; ++o) {
        T best = axis == 0 ? A.at(0, o) : A.at(o, 0);
        std::size_t best_i = 0;
        const std::size_t span = axis == 0 ? n : m;
        for (std::size_t i = 1; i < span; ++i) {
            const T v = axis == 0 ? A.at(i, o) : A.at(o, i);
            if (v > best) {
                best = v;
                best_i = i;
            }
        }
        out.at(o) = best;
        argmax[o] = best_i;
    }
    auto pa = a.node();
    return detail::make_node<T>("max_axis", std::move(out), {pa},
                                [pa, axis, n, m, argmax](Node<T>& self) {
                                    Tensor<T> g(Shape{n, m});
                                    for (std::size_t o = 0; o < argmax.size(); ++o) {
                                        if (axis == 0)
                                            g.at(argmax[o], o) = self.grad.at(o);
                                        else
                                            g.at(o, argmax[o]) = self.grad.at(o);
                                    }
                                    pa->accumulate(g);
                                });
}

// ---- normalizations ------------------------------------------------------------

// Row-wise softmax (rank 1 is treated as a single row). Stable via max shift.
template <std::floating_point T>
Var<T> softmax(const Var<T>& a) {
    const Tensor<T>& A = a.value();
    if (A.rank() > 2) throw std::invalid_argument("softmax: expected rank 1 or 2, got " + shape_str(A.shape()));
    const std::size_t n = A.rank() == 1 ? 1 : A.dim(0);
    const std::size_t m = A.rank() == 1 ? A.dim(0) : A.dim(1);
    Tensor<T> out(A.shape());
    for (std::size_t i = 0; i < n; ++i) {
        const T* row = A.data().data() + i * m;
        T* orow = out.data().data() + i * m;
        T mx = row[0];
        for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
        T z = 0;
        for (std::size_t j = 0; j < m; ++j) {
            orow[j] = std::exp(row[j] - mx);
            z += orow[j];
        }
        for (std::size_t j = 0; j < m; ++j) orow[j] /= z;
    }
    auto pa = a.node();
    return detail::make_node<T>("softmax", std::move(out), {pa}, [pa, n, m](Node<T>& self) {
        // dx = y * (g - sum_j g_j y_j) per row
        Tensor<T> g(self.value.shape());
        for (std::size_t i = 0; i < n; ++i) {
            const T* y = self.value.data().data() + i * m;
            const T* gy = self.grad.data().data() + i * m;
            T dot = 0;
            for (std::size_t j = 0; j < m; ++j) dot += gy[j] * y[j];
            for (std::size_t j = 0; j < m; ++j) g.data()[i * m + j] = y[j] * (gy[j] - dot);
        }
        pa->accumulate(g);
    });
}

inline constexpr double kLayerNormEps = 1e-5;

// Row-wise layer norm with affine parameters, composed from primitives so the
// backward rule needs no hand derivation.
template <std::floating_point T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(kLayerNormEps)) {
    const Tensor<T>& X = x.value();
    if (X.rank() != 2) throw std::invalid_argument("layer_norm: expected rank 2, got " + shape_str(X.shape()));
    if (gamma.value().size() != X.dim(1) || beta.value().size() != X.dim(1))
        throw std::invalid_argument("layer_norm: affine params " + shape_str(gamma.value().shape()) +
                                    " do not match feature dim of " + shape_str(X.shape()));
    const Shape full = X.shape();
    Var<T> mu = mean_axis(x, 1);
    Var<T> xc = sub(x, broadcast_to(mu, full));
    Var<T> var = mean_axis(mul(xc, xc), 1);
    Var<T> eps_c = Var<T>::leaf(Tensor<T>(var.value().shape(), eps));
    Var<T> normed = div(xc, broadcast_to(sqrt(add(var, eps_c)), full));
    return add(mul(normed, broadcast_to(gamma, full)), broadcast_to(beta, full));
}

// ---- operator sugar -------------------------------------------------------------

template <std::floating_point T>
Var<T> operator+(const Var<T>& a, const Var<T>& b) {
    return add(a, b);
}
template <std::floating_point T>
Var<T> operator-(const Var<T>& a, const Var<T>& b) {
    return sub(a, b);
}
template <std::floating_point T>
Var<T> operator*(const Var<T>& a, const Var<T>& b) {
    return mul(a, b);
}
template <std::floating_point T>
Var<T> operator*(T c, const Var<T>& a) {
    return scalar_mul(a, c);
}

// ---- backward pass ----------------------------------------------------------------

template <std::floating_point T>
void backward(const Var<T>& root) {
    if (root.value().size() != 1)
        throw std::invalid_argument("backward: root must be scalar, got " +
                                    shape_str(root.value().shape()));
    if (!root.requires_grad()) return;  // constant graph: nothing reachable

    // Iterative post-order DFS over the requires_grad subgraph.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node().get(), 0}};
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        bool descended = false;
        while (next < node->parents.size()) {
            Node<T>* p = node->parents[next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
                descended = true;
                break;
            }
        }
        if (!descended && (stack.back().second >= stack.back().first->parents.size())) {
            order.push_back(stack.back().first);
            stack.pop_back();
        }
    }

    root.node()->accumulate(Tensor<T>::scalar(T(1)));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backprop && n->grad.size() != 0) n->backprop(*n);
    }
}

// ---- finite-difference gradient checker ------------------------------------------

// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
// f must build a fresh scalar graph from its argument on every call.
template <std::floating_point T>
T grad_check(const std::function<Var<T>(const Var<T>&)>& f, const Tensor<T>& x, T h = T(1e-4)) {
    if (h <= 0) throw std::invalid_argument("grad_check: step must be positive");
    Var<T> leaf = Var<T>::leaf(x, /*requires_grad=*/true);
    Var<T> y = f(leaf);
    if (y.value().size() != 1)
        throw std::invalid_argument("grad_check: f must be scalar-valued, got " +
                                    shape_str(y.value().shape()));
    backward(y);
    const Tensor<T> analytic = leaf.grad();

    auto value_at = [&](const Tensor<T>& xt) {
        Var<T> v = f(Var<T>::leaf(xt, false));
        return v.value().at(0);
    };
    T max_rel = 0;
    Tensor<T> probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const T orig = probe.at(i);
        probe.at(i) = orig + h;
        const T fp = value_at(probe);
        probe.at(i) = orig - h;
        const T fm = value_at(probe);
        probe.at(i) = orig;
        const T fd = (fp - fm) / (2 * h);
        if (!std::isfinite(fd))
            throw NumericError("grad_check: non-finite finite-difference value at coordinate " +
                               std::to_string(i));
        const T rel = std::abs(analytic.at(i) - fd) / std::max(T(1), std::abs(analytic.at(i)));
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

}  // namespace deiii
