// Copyright (C) 2026 the openmixer authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "openmixer/tensor.hpp"

namespace openmixer {

// Reverse-mode autodiff over whole tensors. Every operation appends a node to
// an implicit tape (creation order == topological order, tracked by `seq`), so
// backward() is a single pass over nodes sorted by descending seq.
struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::uint64_t seq = 0;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;

    void ensure_grad() {
        // numel, not shape: a default Tensor and a rank-0 scalar share the
        // empty shape vector but differ in storage
        if (grad.numel() != value.numel()) grad = Tensor(value.shape());
    }
};

using Var = std::shared_ptr<Node>;

namespace detail {
inline std::uint64_t next_seq() {
    static std::uint64_t counter = 0;
    return ++counter;
}
}  // namespace detail

inline Var constant(Tensor v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->seq = detail::next_seq();
    return n;
}

inline Var parameter(Tensor v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = true;
    n->seq = detail::next_seq();
    return n;
}

inline Var make_op(Tensor v, std::vector<Var> parents, std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->parents = std::move(parents);
    for (const auto& p : n->parents) {
        if (p->requires_grad) {
            n->requires_grad = true;
            break;
        }
    }
    if (n->requires_grad) n->backprop = std::move(backprop);
    n->seq = detail::next_seq();
    return n;
}

// Cuts the tape: downstream ops see a constant with the same value.
inline Var detach(const Var& x) { return constant(x->value); }

inline void backward(const Var& root) {
    if (root->value.numel() != 1) throw ValidationError("backward: root must be scalar");
    // Iterative DFS; graphs from multi-stage forwards are deep enough that
    // recursion would be fragile.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{root.get()};
    seen.insert(root.get());
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (const auto& p : n->parents) {
            if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }
    std::sort(order.begin(), order.end(),
              [](const Node* a, const Node* b) { return a->seq > b->seq; });
    root->ensure_grad();
    root->grad.raw()[0] = 1.0;
    for (Node* n : order) {
        if (n->backprop && n->requires_grad) {
            n->ensure_grad();
            n->backprop(*n);
        }
    }
}

namespace detail {

inline void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a->value.same_shape(b->value))
        throw ValidationError(std::string(op) + ": shape mismatch " + a->value.shape_str() +
                              " vs " + b->value.shape_str());
}

// Accumulates `g` into parent i's grad if it participates in the tape.
inline Tensor* grad_of(Node& self, std::size_t i) {
    Node& p = *self.parents[i];
    if (!p.requires_grad) return nullptr;
    p.ensure_grad();
    return &p.grad;
}

}  // namespace detail

// ---- elementwise binary ----

inline Var add(const Var& a, const Var& b) {
    detail::check_same_shape(a, b, "add");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b->value[i];
    return make_op(std::move(out), {a, b}, [](Node& self) {
        if (Tensor* ga = detail::grad_of(self, 0))
            for (std::size_t i = 0; i < self.grad.numel(); ++i) (*ga)[i] += self.grad[i];
        if (Tensor* gb = detail::grad_of(self, 1))
            for (std::size_t i = 0; i < self.grad.numel(); ++i) (*gb)[i] += self.grad[i];
    });
}

inline Var sub(const Var& a, const Var& b) {
    detail::check_same_shape(a, b, "sub");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b->value[i];
    return make_op(std::move(out), {a, b}, [](Node& self) {
        if (Tensor* ga = detail::grad_of(self, 0))
            for (std::size_t i = 0; i < self.grad.numel(); ++i) (*ga)[i] += self.grad[i];
        if (Tensor* gb = detail::grad_of(self, 1))
            for (std::size_t i = 0; i < self.grad.numel(); ++i) (*gb)[i] -= self.grad[i];
    });
}

inline Var mul(const Var& a, const Var& b) {
    detail::check_same_shape(a, b, "mul");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
    return make_op(std::move(out), {a, b}, [](Node& self) {
        const Tensor& av = self.parents[0]->value;
        const Tensor& bv = self.parents[1]->value;
        if (Tensor* ga = detail::grad_of(self, 0))
            for (std::size_t i = 0; i < self.grad.numel(); ++i) (*ga)[i] += self.grad[i] * bv[i];
        if (Tensor* gb = detail::grad_of(self, 1))
            for (std::size_t i = 0; i < self.grad.numel(); ++i) (*gb)[i] += self.grad[i] * av[i];
    });
}

inline Var vdiv(const Var& a, const Var& b) {
    detail::check_same_shape(a, b, "vdiv");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] /= b->value[i];
    return make_op(std::move(out), {a, b}, [](Node& self) {
        const Tensor& av = self.parents[0]->value;
        const Tensor& bv = self.parents[1]->value;
        if (Tensor* ga = detail::grad_of(self, 0))
            for (std::size_t i = 0; i < self.grad.numel(); ++i) (*ga)[i] += self.grad[i] / bv[i];
        if (Tensor* gb = detail::grad_of(self, 1))
            for (std::size_t i = 0; i < self.grad.numel(); ++i)
                (*gb)[i] -= self.grad[i] * av[i] / (bv[i] * bv[i]);
    });
}

// Elementwise min/max. Ties route the gradient to the first argument.
inline Var vmin(const Var& a, const Var& b) {
    detail::check_same_shape(a, b, "vmin");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::min(out[i], b->value[i]);
    return make_op(std::move(out), {a, b}, [](Node& self) {
        const Tensor& av = self.parents[0]->value;
        const Tensor& bv = self.parents[1]->value;
        Tensor* ga = detail::grad_of(self, 0);
        Tensor* gb = detail::grad_of(self, 1);
        for (std::size_t i = 0; i < self.grad.numel(); ++i) {
            if (av[i] <= bv[i]) {
                if (ga) (*ga)[i] += self.grad[i];
            } else if (gb) {
                (*gb)[i] += self.grad[i];
            }
        }
    });
}

inline Var vmax(const Var& a, const Var& b) {
    detail::check_same_shape(a, b, "vmax");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::max(out[i], b->value[i]);
    return make_op(std::move(out), {a, b}, [](Node& self) {
        const Tensor& av = self.parents[0]->value;
        const Tensor& bv = self.parents[1]->value;
        Tensor* ga = detail::grad_of(self, 0);
        Tensor* gb = detail::grad_of(self, 1);
        for (std::size_t i = 0; i < self.grad.numel(); ++i) {
            if (av[i] >= bv[i]) {
                if (ga) (*ga)[i] += self.grad[i];
            } else if (gb) {
                (*gb)[i] += self.grad[i];
            }
        }
    });
}

// ---- elementwise unary ----

namespace detail {
template <typename F, typename DF>
Var unary(const Var& a, F f, DF df) {
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = f(out[i]);
    // df receives (input, output) so ops like sigmoid can reuse the output.
    return make_op(std::move(out), {a}, [df](Node& self) {
        if (Tensor* ga = detail::grad_of(self, 0)) {
            const Tensor& av = self.parents[0]->value;
            for (std::size_t i = 0; i < self.grad.numel(); ++i)
                (*ga)[i] += self.grad[i] * df(av[i], self.value[i]);
        }
    });
}
}  // namespace detail

inline Var neg(const Var& a) {
    return detail::unary(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

inline Var relu(const Var& a) {
    return detail::unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                         [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var sigmoid(const Var& a) {
    return detail::unary(a,
                         [](double x) {
                             return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                             : std::exp(x) / (1.0 + std::exp(x));
                         },
                         [](double, double y) { return y * (1.0 - y); });
}

inline Var vexp(const Var& a) {
    return detail::unary(a, [](double x) { return std::exp(x); },
                         [](double, double y) { return y; });
}

inline Var vlog(const Var& a) {
    return detail::unary(a, [](double x) { return std::log(x); },
                         [](double x, double) { return 1.0 / x; });
}

inline Var vsqrt(const Var& a) {
    return detail::unary(a, [](double x) { return std::sqrt(x); },
                         [](double, double y) { return 0.5 / y; });
}

inline Var vabs(const Var& a) {
    return detail::unary(a, [](double x) { return std::fabs(x); },
                         [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

// Numerically stable log(1 + e^x).
inline Var softplus(const Var& a) {
    return detail::unary(a,
                         [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x))); },
                         [](double x, double) {
                             return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                             : std::exp(x) / (1.0 + std::exp(x));
                         });
}

// Gradient is zero outside the open interval (lo, hi), including at the edges.
// Gradient passes on the closed interval: a value sitting exactly on a bound
// keeps its one-sided derivative, so quantities initialized at a bound (box
// sizes start at the 1.0 ceiling) are not frozen there.
inline Var clamp(const Var& a, double lo, double hi) {
    return detail::unary(a, [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
                         [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

inline Var scale(const Var& a, double c) {
    return detail::unary(a, [c](double x) { return c * x; },
                         [c](double, double) { return c; });
}

inline Var add_scalar(const Var& a, double c) {
    return detail::unary(a, [c](double x) { return x + c; },
                         [](double, double) { return 1.0; });
}

// y = a*x + b elementwise, where a and b are single-element tensors.
inline Var affine_scalar(const Var& x, const Var& a, const Var& b) {
    if (a->value.numel() != 1 || b->value.numel() != 1)
        throw ValidationError("affine_scalar: a and b must be scalars");
    Tensor out = x->value;
    const double av = a->value[0], bv = b->value[0];
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av * out[i] + bv;
    return make_op(std::move(out), {x, a, b}, [](Node& self) {
        const Tensor& xv = self.parents[0]->value;
        const double av = self.parents[1]->value[0];
        if (Tensor* gx = detail::grad_of(self, 0))
            for (std::size_t i = 0; i < self.grad.numel(); ++i) (*gx)[i] += self.grad[i] * av;
        if (Tensor* ga = detail::grad_of(self, 1))
            for (std::size_t i = 0; i < self.grad.numel(); ++i) (*ga)[0] += self.grad[i] * xv[i];
        if (Tensor* gb = detail::grad_of(self, 2))
            for (std::size_t i = 0; i < self.grad.numel(); ++i) (*gb)[0] += self.grad[i];
    });
}

// ---- reductions ----

inline Var sum_all(const Var& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a->value.numel(); ++i) s += a->value[i];
    return make_op(Tensor::scalar(s), {a}, [](Node& self) {
        if (Tensor* ga = detail::grad_of(self, 0)) {
            const double g = self.grad[0];
            for (std::size_t i = 0; i < ga->numel(); ++i) (*ga)[i] += g;
        }
    });
}

inline Var mean_all(const Var& a) {
    if (a->value.numel() == 0) throw ValidationError("mean_all: empty tensor");
    double s = 0.0;
    for (std::size_t i = 0; i < a->value.numel(); ++i) s += a->value[i];
    const double inv = 1.0 / static_cast<double>(a->value.numel());
    return make_op(Tensor::scalar(s * inv), {a}, [inv](Node& self) {
        if (Tensor* ga = detail::grad_of(self, 0)) {
            const double g = self.grad[0] * inv;
            for (std::size_t i = 0; i < ga->numel(); ++i) (*ga)[i] += g;
        }
    });
}

// Column means of a 2D tensor: [R,C] -> [C].
inline Var mean_rows(const Var& a) {
    if (a->value.ndim() != 2) throw ValidationError("mean_rows: expected 2D");
    const int r = a->value.dim(0), c = a->value.dim(1);
    if (r == 0) throw ValidationError("mean_rows: empty");
    Tensor out({c});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out.at(j) += a->value.at(i, j);
    const double inv = 1.0 / r;
    for (int j = 0; j < c; ++j) out.at(j) *= inv;
    return make_op(std::move(out), {a}, [r, c, inv](Node& self) {
        if (Tensor* ga = detail::grad_of(self, 0))
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) ga->at(i, j) += self.grad.at(j) * inv;
    });
}

// ---- shape ops ----

inline Var reshape(const Var& a, std::vector<int> shape) {
    Tensor out(shape);
    if (out.numel() != a->value.numel()) throw ValidationError("reshape: numel mismatch");
    out.raw() = a->value.raw();
    return make_op(std::move(out), {a}, [](Node& self) {
        if (Tensor* ga = detail::grad_of(self, 0))
            for (std::size_t i = 0; i < self.grad.numel(); ++i) (*ga)[i] += self.grad[i];
    });
}

inline Var slice_rows(const Var& a, int r0, int r1) {
    if (a->value.ndim() != 2) throw ValidationError("slice_rows: expected 2D");
    const int c = a->value.dim(1);
    if (r0 < 0 || r1 < r0 || r1 > a->value.dim(0)) throw ValidationError("slice_rows: bad range");
    Tensor out({r1 - r0, c});
    for (int i = r0; i < r1; ++i)
        for (int j = 0; j < c; ++j) out.at(i - r0, j) = a->value.at(i, j);
    return make_op(std::move(out), {a}, [r0, r1, c](Node& self) {
        if (Tensor* ga = detail::grad_of(self, 0))
            for (int i = r0; i < r1; ++i)
                for (int j = 0; j < c; ++j) ga->at(i, j) += self.grad.at(i - r0, j);
    });
}

inline Var gather_rows(const Var& a, std::vector<int> idx) {
    if (a->value.ndim() != 2) throw ValidationError("gather_rows: expected 2D");
    const int c = a->value.dim(1);
    Tensor out({static_cast<int>(idx.size()), c});
    for (std::size_t k = 0; k < idx.size(); ++k) {
        if (idx[k] < 0 || idx[k] >= a->value.dim(0))
            throw ValidationError("gather_rows: index out of range");
        for (int j = 0; j < c; ++j) out.at(static_cast<int>(k), j) = a->value.at(idx[k], j);
    }
    return make_op(std::move(out), {a}, [idx, c](Node& self) {
        if (Tensor* ga = detail::grad_of(self, 0))
            for (std::size_t k = 0; k < idx.size(); ++k)
                for (int j = 0; j < c; ++j)
                    ga->at(idx[k], j) += self.grad.at(static_cast<int>(k), j);
    });
}

inline Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ValidationError("concat_rows: empty input");
    const int c = parts[0]->value.dim(1);
    int rows = 0;
    for (const auto& p : parts) {
        if (p->value.ndim() != 2 || p->value.dim(1) != c)
            throw ValidationError("concat_rows: column mismatch");
        rows += p->value.dim(0);
    }
    Tensor out({rows, c});
    int r = 0;
    for (const auto& p : parts) {
        for (int i = 0; i < p->value.dim(0); ++i, ++r)
            for (int j = 0; j < c; ++j) out.at(r, j) = p->value.at(i, j);
    }
    return make_op(std::move(out), parts, [c](Node& self) {
        int r = 0;
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
            const int pr = self.parents[k]->value.dim(0);
            if (Tensor* gp = detail::grad_of(self, k)) {
                for (int i = 0; i < pr; ++i)
                    for (int j = 0; j < c; ++j) gp->at(i, j) += self.grad.at(r + i, j);
            }
            r += pr;
        }
    });
}

inline Var transpose2(const Var& a) {
    if (a->value.ndim() != 2) throw ValidationError("transpose2: expected 2D");
    const int r = a->value.dim(0), c = a->value.dim(1);
    Tensor out({c, r});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out.at(j, i) = a->value.at(i, j);
    return make_op(std::move(out), {a}, [r, c](Node& self) {
        if (Tensor* ga = detail::grad_of(self, 0))
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) ga->at(i, j) += self.grad.at(j, i);
    });
}

// [A,B,C] -> [B,A,C]
inline Var permute102(const Var& a) {
    if (a->value.ndim() != 3) throw ValidationError("permute102: expected 3D");
    const int d0 = a->value.dim(0), d1 = a->value.dim(1), d2 = a->value.dim(2);
    Tensor out({d1, d0, d2});
    for (int i = 0; i < d0; ++i)
        for (int j = 0; j < d1; ++j)
            for (int k = 0; k < d2; ++k) out.at(j, i, k) = a->value.at(i, j, k);
    return make_op(std::move(out), {a}, [d0, d1, d2](Node& self) {
        if (Tensor* ga = detail::grad_of(self, 0))
            for (int i = 0; i < d0; ++i)
                for (int j = 0; j < d1; ++j)
                    for (int k = 0; k < d2; ++k) ga->at(i, j, k) += self.grad.at(j, i, k);
    });
}

inline Var column(const Var& a, int j) {
    if (a->value.ndim() != 2) throw ValidationError("column: expected 2D");
    if (j < 0 || j >= a->value.dim(1)) throw ValidationError("column: index out of range");
    const int r = a->value.dim(0);
    Tensor out({r});
    for (int i = 0; i < r; ++i) out.at(i) = a->value.at(i, j);
    return make_op(std::move(out), {a}, [r, j](Node& self) {
        if (Tensor* ga = detail::grad_of(self, 0))
            for (int i = 0; i < r; ++i) ga->at(i, j) += self.grad.at(i);
    });
}

// Stacks equal-length vectors as columns of a [R, K] matrix.
inline Var stack_cols(const std::vector<Var>& cols) {
    if (cols.empty()) throw ValidationError("stack_cols: empty input");
    const int r = cols[0]->value.dim(0);
    for (const auto& c : cols)
        if (c->value.ndim() != 1 || c->value.dim(0) != r)
            throw ValidationError("stack_cols: length mismatch");
    const int k = static_cast<int>(cols.size());
    Tensor out({r, k});
    for (int j = 0; j < k; ++j)
        for (int i = 0; i < r; ++i) out.at(i, j) = cols[static_cast<std::size_t>(j)]->value.at(i);
    return make_op(std::move(out), cols, [r, k](Node& self) {
        for (int j = 0; j < k; ++j)
            if (Tensor* gc = detail::grad_of(self, static_cast<std::size_t>(j)))
                for (int i = 0; i < r; ++i) gc->at(i) += self.grad.at(i, j);
    });
}

// ---- broadcast ----

inline Var add_rowvec(const Var& a, const Var& v) {
    if (a->value.ndim() != 2 || v->value.ndim() != 1 || a->value.dim(1) != v->value.dim(0))
        throw ValidationError("add_rowvec: shape mismatch");
    const int r = a->value.dim(0), c = a->value.dim(1);
    Tensor out = a->value;
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out.at(i, j) += v->value.at(j);
    return make_op(std::move(out), {a, v}, [r, c](Node& self) {
        if (Tensor* ga = detail::grad_of(self, 0))
            for (std::size_t i = 0; i < self.grad.numel(); ++i) (*ga)[i] += self.grad[i];
        if (Tensor* gv = detail::grad_of(self, 1))
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) gv->at(j) += self.grad.at(i, j);
    });
}

inline Var mul_rowvec(const Var& a, const Var& v) {
    if (a->value.ndim() != 2 || v->value.ndim() != 1 || a->value.dim(1) != v->value.dim(0))
        throw ValidationError("mul_rowvec: shape mismatch");
    const int r = a->value.dim(0), c = a->value.dim(1);
    Tensor out = a->value;
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out.at(i, j) *= v->value.at(j);
    return make_op(std::move(out), {a, v}, [r, c](Node& self) {
        const Tensor& av = self.parents[0]->value;
        const Tensor& vv = self.parents[1]->value;
        if (Tensor* ga = detail::grad_of(self, 0))
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) ga->at(i, j) += self.grad.at(i, j) * vv.at(j);
        if (Tensor* gv = detail::grad_of(self, 1))
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) gv->at(j) += self.grad.at(i, j) * av.at(i, j);
    });
}

// Scales row i of `a` by s[i].
inline Var scale_rows(const Var& a, const Var& s) {
    if (a->value.ndim() != 2 || s->value.ndim() != 1 || a->value.dim(0) != s->value.dim(0))
        throw ValidationError("scale_rows: shape mismatch");
    const int r = a->value.dim(0), c = a->value.dim(1);
    Tensor out = a->value;
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out.at(i, j) *= s->value.at(i);
    return make_op(std::move(out), {a, s}, [r, c](Node& self) {
        const Tensor& av = self.parents[0]->value;
        const Tensor& sv = self.parents[1]->value;
        if (Tensor* ga = detail::grad_of(self, 0))
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) ga->at(i, j) += self.grad.at(i, j) * sv.at(i);
        if (Tensor* gs = detail::grad_of(self, 1))
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) gs->at(i) += self.grad.at(i, j) * av.at(i, j);
    });
}

// ---- linear algebra ----

inline Var matmul(const Var& a, const Var& b) {
    if (a->value.ndim() != 2 || b->value.ndim() != 2 || a->value.dim(1) != b->value.dim(0))
        throw ValidationError("matmul: shape mismatch");
    const int m = a->value.dim(0), k = a->value.dim(1), n = b->value.dim(1);
    Tensor out({m, n});
    for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
            const double av = a->value.at(i, p);
            for (int j = 0; j < n; ++j) out.at(i, j) += av * b->value.at(p, j);
        }
    return make_op(std::move(out), {a, b}, [m, k, n](Node& self) {
        const Tensor& av = self.parents[0]->value;
        const Tensor& bv = self.parents[1]->value;
        if (Tensor* ga = detail::grad_of(self, 0))
            for (int i = 0; i < m; ++i)
                for (int p = 0; p < k; ++p) {
                    double s = 0.0;
                    for (int j = 0; j < n; ++j) s += self.grad.at(i, j) * bv.at(p, j);
                    ga->at(i, p) += s;
                }
        if (Tensor* gb = detail::grad_of(self, 1))
            for (int p = 0; p < k; ++p)
                for (int j = 0; j < n; ++j) {
                    double s = 0.0;
                    for (int i = 0; i < m; ++i) s += av.at(i, p) * self.grad.at(i, j);
                    gb->at(p, j) += s;
                }
    });
}

// a [M,K] times b^T where b is [N,K]; the natural layout for row-major weights.
inline Var matmul_nt(const Var& a, const Var& b) {
    if (a->value.ndim() != 2 || b->value.ndim() != 2 || a->value.dim(1) != b->value.dim(1))
        throw ValidationError("matmul_nt: shape mismatch");
    const int m = a->value.dim(0), k = a->value.dim(1), n = b->value.dim(0);
    Tensor out({m, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int p = 0; p < k; ++p) s += a->value.at(i, p) * b->value.at(j, p);
            out.at(i, j) = s;
        }
    return make_op(std::move(out), {a, b}, [m, k, n](Node& self) {
        const Tensor& av = self.parents[0]->value;
        const Tensor& bv = self.parents[1]->value;
        if (Tensor* ga = detail::grad_of(self, 0))
            for (int i = 0; i < m; ++i)
                for (int p = 0; p < k; ++p) {
                    double s = 0.0;
                    for (int j = 0; j < n; ++j) s += self.grad.at(i, j) * bv.at(j, p);
                    ga->at(i, p) += s;
                }
        if (Tensor* gb = detail::grad_of(self, 1))
            for (int j = 0; j < n; ++j)
                for (int p = 0; p < k; ++p) {
                    double s = 0.0;
                    for (int i = 0; i < m; ++i) s += self.grad.at(i, j) * av.at(i, p);
                    gb->at(j, p) += s;
                }
    });
}

// Batched matmul: [B,M,K] x [B,K,N] -> [B,M,N].
inline Var bmm(const Var& a, const Var& b) {
    if (a->value.ndim() != 3 || b->value.ndim() != 3 || a->value.dim(0) != b->value.dim(0) ||
        a->value.dim(2) != b->value.dim(1))
        throw ValidationError("bmm: shape mismatch");
    const int bs = a->value.dim(0), m = a->value.dim(1), k = a->value.dim(2), n = b->value.dim(2);
    Tensor out({bs, m, n});
    for (int q = 0; q < bs; ++q)
        for (int i = 0; i < m; ++i)
            for (int p = 0; p < k; ++p) {
                const double av = a->value.at(q, i, p);
                for (int j = 0; j < n; ++j) out.at(q, i, j) += av * b->value.at(q, p, j);
            }
    return make_op(std::move(out), {a, b}, [bs, m, k, n](Node& self) {
        const Tensor& av = self.parents[0]->value;
        const Tensor& bv = self.parents[1]->value;
        if (Tensor* ga = detail::grad_of(self, 0))
            for (int q = 0; q < bs; ++q)
                for (int i = 0; i < m; ++i)
                    for (int p = 0; p < k; ++p) {
                        double s = 0.0;
                        for (int j = 0; j < n; ++j) s += self.grad.at(q, i, j) * bv.at(q, p, j);
                        ga->at(q, i, p) += s;
                    }
        if (Tensor* gb = detail::grad_of(self, 1))
            for (int q = 0; q < bs; ++q)
                for (int p = 0; p < k; ++p)
                    for (int j = 0; j < n; ++j) {
                        double s = 0.0;
                        for (int i = 0; i < m; ++i) s += av.at(q, i, p) * self.grad.at(q, i, j);
                        gb->at(q, p, j) += s;
                    }
    });
}

// ---- normalization / softmax ----

// Softmax over the last dimension of a 2D or 3D tensor.
inline Var softmax_last(const Var& a) {
    const int nd = a->value.ndim();
    if (nd != 2 && nd != 3) throw ValidationError("softmax_last: expected 2D or 3D");
    const int d = a->value.dim(nd - 1);
    const std::size_t rows = a->value.numel() / static_cast<std::size_t>(d);
    Tensor out = a->value;
    for (std::size_t r = 0; r < rows; ++r) {
        double* p = out.data() + r * static_cast<std::size_t>(d);
        double mx = p[0];
        for (int j = 1; j < d; ++j) mx = std::max(mx, p[j]);
        double denom = 0.0;
        for (int j = 0; j < d; ++j) {
            p[j] = std::exp(p[j] - mx);
            denom += p[j];
        }
        for (int j = 0; j < d; ++j) p[j] /= denom;
    }
    return make_op(std::move(out), {a}, [d, rows](Node& self) {
        if (Tensor* ga = detail::grad_of(self, 0)) {
            for (std::size_t r = 0; r < rows; ++r) {
                const double* y = self.value.data() + r * static_cast<std::size_t>(d);
                const double* g = self.grad.data() + r * static_cast<std::size_t>(d);
                double dot = 0.0;
                for (int j = 0; j < d; ++j) dot += y[j] * g[j];
                double* out = ga->data() + r * static_cast<std::size_t>(d);
                for (int j = 0; j < d; ++j) out[j] += y[j] * (g[j] - dot);
            }
        }
    });
}

// LayerNorm over the last dimension with affine parameters.
inline Var layer_norm_last(const Var& a, const Var& gamma, const Var& beta, double eps = 1e-5) {
    const int nd = a->value.ndim();
    const int d = a->value.dim(nd - 1);
    if (gamma->value.ndim() != 1 || gamma->value.dim(0) != d || !gamma->value.same_shape(beta->value))
        throw ValidationError("layer_norm_last: parameter shape mismatch");
    const std::size_t rows = a->value.numel() / static_cast<std::size_t>(d);
    Tensor out(a->value.shape());
    Tensor xhat(a->value.shape());
    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = a->value.data() + r * static_cast<std::size_t>(d);
        double mu = 0.0;
        for (int j = 0; j < d; ++j) mu += x[j];
        mu /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) var += (x[j] - mu) * (x[j] - mu);
        var /= d;
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        double* xh = xhat.data() + r * static_cast<std::size_t>(d);
        double* o = out.data() + r * static_cast<std::size_t>(d);
        for (int j = 0; j < d; ++j) {
            xh[j] = (x[j] - mu) * is;
            o[j] = gamma->value.at(j) * xh[j] + beta->value.at(j);
        }
    }
    return make_op(std::move(out), {a, gamma, beta},
                   [d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                       const Tensor& gv = self.parents[1]->value;
                       Tensor* ga = detail::grad_of(self, 0);
                       Tensor* gg = detail::grad_of(self, 1);
                       Tensor* gb = detail::grad_of(self, 2);
                       for (std::size_t r = 0; r < rows; ++r) {
                           const double* g = self.grad.data() + r * static_cast<std::size_t>(d);
                           const double* xh = xhat.data() + r * static_cast<std::size_t>(d);
                           if (gg)
                               for (int j = 0; j < d; ++j) gg->at(j) += g[j] * xh[j];
                           if (gb)
                               for (int j = 0; j < d; ++j) gb->at(j) += g[j];
                           if (ga) {
                               double m1 = 0.0, m2 = 0.0;
                               for (int j = 0; j < d; ++j) {
                                   const double dxh = g[j] * gv.at(j);
                                   m1 += dxh;
                                   m2 += dxh * xh[j];
                               }
                               m1 /= d;
                               m2 /= d;
                               double* o = ga->data() + r * static_cast<std::size_t>(d);
                               for (int j = 0; j < d; ++j) {
                                   const double dxh = g[j] * gv.at(j);
                                   o[j] += inv_std[r] * (dxh - m1 - xh[j] * m2);
                               }
                           }
                       }
                   });
}

// L2-normalizes each row (last dim) of a 1D or 2D tensor.
inline Var normalize_rows(const Var& a) {
    const int nd = a->value.ndim();
    if (nd != 1 && nd != 2) throw ValidationError("normalize_rows: expected 1D or 2D");
    const int d = nd == 1 ? a->value.dim(0) : a->value.dim(1);
    const std::size_t rows = a->value.numel() / static_cast<std::size_t>(d);
    Tensor out = a->value;
    std::vector<double> norms(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double* x = out.data() + r * static_cast<std::size_t>(d);
        double s = 0.0;
        for (int j = 0; j < d; ++j) s += x[j] * x[j];
        double nrm = std::sqrt(s);
        if (nrm < 1e-12) nrm = 1e-12;  // degenerate rows stay near zero, no grad blowup
        norms[r] = nrm;
        for (int j = 0; j < d; ++j) x[j] /= nrm;
    }
    return make_op(std::move(out), {a}, [d, rows, norms = std::move(norms)](Node& self) {
        if (Tensor* ga = detail::grad_of(self, 0)) {
            for (std::size_t r = 0; r < rows; ++r) {
                const double* y = self.value.data() + r * static_cast<std::size_t>(d);
                const double* g = self.grad.data() + r * static_cast<std::size_t>(d);
                double dot = 0.0;
                for (int j = 0; j < d; ++j) dot += y[j] * g[j];
                double* o = ga->data() + r * static_cast<std::size_t>(d);
                for (int j = 0; j < d; ++j) o[j] += (g[j] - y[j] * dot) / norms[r];
            }
        }
    });
}

// ---- task-level ops ----

// Mean cross-entropy of rows of `logits` against integer targets.
inline Var cross_entropy_rows(const Var& logits, const std::vector<int>& targets) {
    if (logits->value.ndim() != 2 || logits->value.dim(0) != static_cast<int>(targets.size()))
        throw ValidationError("cross_entropy_rows: shape mismatch");
    const int k = logits->value.dim(0), c = logits->value.dim(1);
    if (k == 0) throw ValidationError("cross_entropy_rows: no rows");
    for (int t : targets)
        if (t < 0 || t >= c) throw ValidationError("cross_entropy_rows: target out of range");
    double loss = 0.0;
    for (int i = 0; i < k; ++i) {
        const double* row = logits->value.data() + static_cast<std::size_t>(i) * c;
        double mx = row[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (int j = 0; j < c; ++j) denom += std::exp(row[j] - mx);
        loss += std::log(denom) + mx - row[targets[static_cast<std::size_t>(i)]];
    }
    loss /= k;
    return make_op(Tensor::scalar(loss), {logits}, [targets, k, c](Node& self) {
        if (Tensor* gl = detail::grad_of(self, 0)) {
            const double g = self.grad[0] / k;
            const Tensor& lv = self.parents[0]->value;
            for (int i = 0; i < k; ++i) {
                const double* row = lv.data() + static_cast<std::size_t>(i) * c;
                double mx = row[0];
                for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
                double denom = 0.0;
                for (int j = 0; j < c; ++j) denom += std::exp(row[j] - mx);
                for (int j = 0; j < c; ++j) {
                    double p = std::exp(row[j] - mx) / denom;
                    gl->at(i, j) += g * (p - (j == targets[static_cast<std::size_t>(i)] ? 1.0 : 0.0));
                }
            }
        }
    });
}

// Scaled dot-product attention for [H,N,dh] tensors with an additive [H,N,N]
// logit bias. The forward pass accumulates the softmax denominator and the
// value-weighted sums in a canonical order, so permuting the key/value rows
// (and the bias columns) permutes nothing in the output: the result for each
// query is bit-identical. This is what makes whole-forward query-permutation
// equivariance exact instead of approximate.
inline Var attention_core(const Var& q, const Var& k, const Var& v, const Var& bias) {
    if (q->value.ndim() != 3 || !q->value.same_shape(k->value) || !q->value.same_shape(v->value))
        throw ValidationError("attention_core: q/k/v must share [H,N,dh]");
    const int h = q->value.dim(0), n = q->value.dim(1), dh = q->value.dim(2);
    if (bias->value.ndim() != 3 || bias->value.dim(0) != h || bias->value.dim(1) != n ||
        bias->value.dim(2) != n)
        throw ValidationError("attention_core: bias must be [H,N,N]");
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Tensor out({h, n, dh});
    Tensor attn({h, n, n});
    std::vector<double> terms;
    for (int a = 0; a < h; ++a) {
        for (int i = 0; i < n; ++i) {
            double mx = -1e300;
            for (int j = 0; j < n; ++j) {
                double s = 0.0;
                for (int d = 0; d < dh; ++d) s += q->value.at(a, i, d) * k->value.at(a, j, d);
                const double logit = s * inv_scale + bias->value.at(a, i, j);
                attn.at(a, i, j) = logit;
                mx = std::max(mx, logit);
            }
            terms.resize(static_cast<std::size_t>(n));
            for (int j = 0; j < n; ++j) terms[static_cast<std::size_t>(j)] = std::exp(attn.at(a, i, j) - mx);
            std::vector<double> expv = terms;
            const double denom = ordered_sum(terms);
            for (int j = 0; j < n; ++j) attn.at(a, i, j) = expv[static_cast<std::size_t>(j)] / denom;
            for (int d = 0; d < dh; ++d) {
                std::vector<double> prods(static_cast<std::size_t>(n));
                for (int j = 0; j < n; ++j)
                    prods[static_cast<std::size_t>(j)] = attn.at(a, i, j) * v->value.at(a, j, d);
                out.at(a, i, d) = ordered_sum(prods);
            }
        }
    }
    return make_op(std::move(out), {q, k, v, bias},
                   [h, n, dh, inv_scale, attn = std::move(attn)](Node& self) {
                       const Tensor& qv = self.parents[0]->value;
                       const Tensor& kv = self.parents[1]->value;
                       const Tensor& vv = self.parents[2]->value;
                       Tensor* gq = detail::grad_of(self, 0);
                       Tensor* gk = detail::grad_of(self, 1);
                       Tensor* gv = detail::grad_of(self, 2);
                       Tensor* gb = detail::grad_of(self, 3);
                       for (int a = 0; a < h; ++a)
                           for (int i = 0; i < n; ++i) {
                               std::vector<double> ds(static_cast<std::size_t>(n));
                               double dot = 0.0;
                               for (int j = 0; j < n; ++j) {
                                   double da = 0.0;
                                   for (int d = 0; d < dh; ++d)
                                       da += self.grad.at(a, i, d) * vv.at(a, j, d);
                                   ds[static_cast<std::size_t>(j)] = da;
                                   dot += da * attn.at(a, i, j);
                               }
                               for (int j = 0; j < n; ++j) {
                                   const double aij = attn.at(a, i, j);
                                   const double dl = aij * (ds[static_cast<std::size_t>(j)] - dot);
                                   if (gb) gb->at(a, i, j) += dl;
                                   if (gq)
                                       for (int d = 0; d < dh; ++d)
                                           gq->at(a, i, d) += dl * kv.at(a, j, d) * inv_scale;
                                   if (gk)
                                       for (int d = 0; d < dh; ++d)
                                           gk->at(a, j, d) += dl * qv.at(a, i, d) * inv_scale;
                                   if (gv)
                                       for (int d = 0; d < dh; ++d)
                                           gv->at(a, j, d) += aij * self.grad.at(a, i, d);
                               }
                           }
                   });
}

// Bilinear resize of a [T,H,W,D] tensor to [T,H2,W2,D] with half-pixel
// centers. Equal sizes are an exact copy.
inline Var resize_bilinear(const Var& a, int h2, int w2) {
    if (a->value.ndim() != 4) throw ValidationError("resize_bilinear: expected [T,H,W,D]");
    const int t = a->value.dim(0), h = a->value.dim(1), w = a->value.dim(2), d = a->value.dim(3);
    if (h2 <= 0 || w2 <= 0) throw ValidationError("resize_bilinear: bad target size");
    if (h2 == h && w2 == w) {
        Tensor out = a->value;
        return make_op(std::move(out), {a}, [](Node& self) {
            if (Tensor* ga = detail::grad_of(self, 0))
                for (std::size_t i = 0; i < self.grad.numel(); ++i) (*ga)[i] += self.grad[i];
        });
    }
    struct Tap {
        int i0, i1;
        double f;  // weight of i1
    };
    auto taps = [](int src, int dst) {
        std::vector<Tap> v(static_cast<std::size_t>(dst));
        const double scale = static_cast<double>(src) / dst;
        for (int o = 0; o < dst; ++o) {
            double p = (o + 0.5) * scale - 0.5;
            p = std::min(std::max(p, 0.0), static_cast<double>(src - 1));
            const int i0 = static_cast<int>(std::floor(p));
            const int i1 = std::min(i0 + 1, src - 1);
            v[static_cast<std::size_t>(o)] = {i0, i1, p - i0};
        }
        return v;
    };
    const auto ty = taps(h, h2);
    const auto tx = taps(w, w2);
    Tensor out({t, h2, w2, d});
    for (int f = 0; f < t; ++f)
        for (int y = 0; y < h2; ++y)
            for (int x = 0; x < w2; ++x) {
                const Tap& ay = ty[static_cast<std::size_t>(y)];
                const Tap& ax = tx[static_cast<std::size_t>(x)];
                for (int c = 0; c < d; ++c) {
                    const double v00 = a->value.at(f, ay.i0, ax.i0, c);
                    const double v01 = a->value.at(f, ay.i0, ax.i1, c);
                    const double v10 = a->value.at(f, ay.i1, ax.i0, c);
                    const double v11 = a->value.at(f, ay.i1, ax.i1, c);
                    out.at(f, y, x, c) = (1 - ay.f) * ((1 - ax.f) * v00 + ax.f * v01) +
                                         ay.f * ((1 - ax.f) * v10 + ax.f * v11);
                }
            }
    return make_op(std::move(out), {a}, [t, h2, w2, d, ty, tx](Node& self) {
        if (Tensor* ga = detail::grad_of(self, 0)) {
            for (int f = 0; f < t; ++f)
                for (int y = 0; y < h2; ++y)
                    for (int x = 0; x < w2; ++x) {
                        const Tap& ay = ty[static_cast<std::size_t>(y)];
                        const Tap& ax = tx[static_cast<std::size_t>(x)];
                        for (int c = 0; c < d; ++c) {
                            const double g = self.grad.at(f, y, x, c);
                            ga->at(f, ay.i0, ax.i0, c) += (1 - ay.f) * (1 - ax.f) * g;
                            ga->at(f, ay.i0, ax.i1, c) += (1 - ay.f) * ax.f * g;
                            ga->at(f, ay.i1, ax.i0, c) += ay.f * (1 - ax.f) * g;
                            ga->at(f, ay.i1, ax.i1, c) += ay.f * ax.f * g;
                        }
                    }
        }
    });
}

// Samples a multi-scale [T,H_l,W_l,D] feature pyramid at P points per query.
//   x, y      [N,P] normalized coordinates in [0,1]
//   t         [N,P] time in frame units [0, T-1]
//   weights   [N,P,L] per-point soft mixture over the L levels
// Output is [N,P,D]. Sampling is trilinear; coordinates clamped to the valid
// range stop receiving gradient, matching the clamp op's convention.
inline Var pyramid_sample(const std::vector<Var>& levels, const Var& x, const Var& y,
                          const Var& t, const Var& weights) {
    if (levels.empty()) throw ValidationError("pyramid_sample: no levels");
    const int L = static_cast<int>(levels.size());
    const int T = levels[0]->value.dim(0);
    const int D = levels[0]->value.dim(3);
    for (const auto& lv : levels)
        if (lv->value.ndim() != 4 || lv->value.dim(0) != T || lv->value.dim(3) != D)
            throw ValidationError("pyramid_sample: levels must share T and D");
    if (x->value.ndim() != 2 || !x->value.same_shape(y->value) || !x->value.same_shape(t->value))
        throw ValidationError("pyramid_sample: x/y/t must share [N,P]");
    const int N = x->value.dim(0), P = x->value.dim(1);
    if (weights->value.ndim() != 3 || weights->value.dim(0) != N || weights->value.dim(1) != P ||
        weights->value.dim(2) != L)
        throw ValidationError("pyramid_sample: weights must be [N,P,L]");

    auto locate = [](double raw, int size) {
        double p = raw;
        bool live = true;
        if (p < 0.0) {
            p = 0.0;
            live = false;
        } else if (p > size - 1) {
            p = size - 1;
            live = false;
        }
        const int i0 = static_cast<int>(std::floor(p));
        const int i1 = std::min(i0 + 1, size - 1);
        return std::tuple<int, int, double, bool>{i0, i1, p - i0, live};
    };

    // Corner geometry is cheap to recompute, so backward re-derives it from
    // the parent values instead of caching it on the node.
    Tensor out({N, P, D});
    for (int n = 0; n < N; ++n)
        for (int p = 0; p < P; ++p)
            for (int l = 0; l < L; ++l) {
                const Tensor& lv = levels[static_cast<std::size_t>(l)]->value;
                const int hl = lv.dim(1), wl = lv.dim(2);
                auto [x0, x1, fx, lx] = locate(x->value.at(n, p) * (wl - 1), wl);
                auto [y0, y1, fy, ly] = locate(y->value.at(n, p) * (hl - 1), hl);
                auto [t0, t1, ft, lt] = locate(t->value.at(n, p), T);
                (void)lx;
                (void)ly;
                (void)lt;
                const double wgt = weights->value.at(n, p, l);
                const double cw[8] = {(1 - ft) * (1 - fy) * (1 - fx), (1 - ft) * (1 - fy) * fx,
                                      (1 - ft) * fy * (1 - fx),       (1 - ft) * fy * fx,
                                      ft * (1 - fy) * (1 - fx),       ft * (1 - fy) * fx,
                                      ft * fy * (1 - fx),             ft * fy * fx};
                const int ci[8][3] = {{t0, y0, x0}, {t0, y0, x1}, {t0, y1, x0}, {t0, y1, x1},
                                      {t1, y0, x0}, {t1, y0, x1}, {t1, y1, x0}, {t1, y1, x1}};
                for (int d = 0; d < D; ++d) {
                    double s = 0.0;
                    for (int c = 0; c < 8; ++c) s += cw[c] * lv.at(ci[c][0], ci[c][1], ci[c][2], d);
                    out.at(n, p, d) += wgt * s;
                }
            }

    std::vector<Var> parents = levels;
    parents.push_back(x);
    parents.push_back(y);
    parents.push_back(t);
    parents.push_back(weights);
    return make_op(std::move(out), std::move(parents),
                   [L, T, D, N, P, locate](Node& self) {
                       // Mirrors the forward loops; reads coordinates back out
                       // of the parent values.
                       const Tensor& xs = self.parents[static_cast<std::size_t>(L)]->value;
                       const Tensor& ys = self.parents[static_cast<std::size_t>(L) + 1]->value;
                       const Tensor& ts = self.parents[static_cast<std::size_t>(L) + 2]->value;
                       const Tensor& ws = self.parents[static_cast<std::size_t>(L) + 3]->value;
                       Tensor* gx = detail::grad_of(self, static_cast<std::size_t>(L));
                       Tensor* gy = detail::grad_of(self, static_cast<std::size_t>(L) + 1);
                       Tensor* gt = detail::grad_of(self, static_cast<std::size_t>(L) + 2);
                       Tensor* gw = detail::grad_of(self, static_cast<std::size_t>(L) + 3);
                       for (int n = 0; n < N; ++n)
                           for (int p = 0; p < P; ++p)
                               for (int l = 0; l < L; ++l) {
                                   const Tensor& lv = self.parents[static_cast<std::size_t>(l)]->value;
                                   const int hl = lv.dim(1), wl = lv.dim(2);
                                   auto [x0, x1, fx, lx] = locate(xs.at(n, p) * (wl - 1), wl);
                                   auto [y0, y1, fy, ly] = locate(ys.at(n, p) * (hl - 1), hl);
                                   auto [t0, t1, ft, lt] = locate(ts.at(n, p), T);
                                   const double wgt = ws.at(n, p, l);
                                   const double cw[8] = {
                                       (1 - ft) * (1 - fy) * (1 - fx), (1 - ft) * (1 - fy) * fx,
                                       (1 - ft) * fy * (1 - fx),       (1 - ft) * fy * fx,
                                       ft * (1 - fy) * (1 - fx),       ft * (1 - fy) * fx,
                                       ft * fy * (1 - fx),             ft * fy * fx};
                                   const double dcw_dfx[8] = {-(1 - ft) * (1 - fy), (1 - ft) * (1 - fy),
                                                              -(1 - ft) * fy,       (1 - ft) * fy,
                                                              -ft * (1 - fy),       ft * (1 - fy),
                                                              -ft * fy,             ft * fy};
                                   const double dcw_dfy[8] = {-(1 - ft) * (1 - fx), -(1 - ft) * fx,
                                                              (1 - ft) * (1 - fx),  (1 - ft) * fx,
                                                              -ft * (1 - fx),       -ft * fx,
                                                              ft * (1 - fx),        ft * fx};
                                   const double dcw_dft[8] = {-(1 - fy) * (1 - fx), -(1 - fy) * fx,
                                                              -fy * (1 - fx),       -fy * fx,
                                                              (1 - fy) * (1 - fx),  (1 - fy) * fx,
                                                              fy * (1 - fx),        fy * fx};
                                   const int ci[8][3] = {{t0, y0, x0}, {t0, y0, x1}, {t0, y1, x0},
                                                         {t0, y1, x1}, {t1, y0, x0}, {t1, y0, x1},
                                                         {t1, y1, x0}, {t1, y1, x1}};
                                   Tensor* gl = detail::grad_of(self, static_cast<std::size_t>(l));
                                   double dfx = 0.0, dfy = 0.0, dft = 0.0, dwgt = 0.0;
                                   for (int d = 0; d < D; ++d) {
                                       const double g = self.grad.at(n, p, d);
                                       if (g == 0.0) continue;
                                       for (int c = 0; c < 8; ++c) {
                                           const double val = lv.at(ci[c][0], ci[c][1], ci[c][2], d);
                                           if (gl) gl->at(ci[c][0], ci[c][1], ci[c][2], d) += g * wgt * cw[c];
                                           dwgt += g * cw[c] * val;
                                           dfx += g * wgt * dcw_dfx[c] * val;
                                           dfy += g * wgt * dcw_dfy[c] * val;
                                           dft += g * wgt * dcw_dft[c] * val;
                                       }
                                   }
                                   if (gw) gw->at(n, p, l) += dwgt;
                                   if (gx && lx) gx->at(n, p) += dfx * (wl - 1);
                                   if (gy && ly) gy->at(n, p) += dfy * (hl - 1);
                                   if (gt && lt) gt->at(n, p) += dft;
                               }
                   });
}

}  // namespace openmixer
