#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "mvgt/rng.hpp"
#include "mvgt/tensor.hpp"

// Differentiable op library. Every op computes its value eagerly and, when
// the inputs are tracked by a recording tape, pushes an adjoint closure that
// accumulates (+=) into the input grad buffers.

namespace mvgt::numkit {

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " +
                             shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

inline bool recorded(const Tensor& out) {
    return out.requires_grad() && out.tape() != nullptr;
}

// grad buffer of `out` may be absent when `out` feeds nothing downstream
inline const std::vector<double>* out_grad(const std::shared_ptr<TensorNode>& n) {
    if (n->grad.size() != n->value.size()) return nullptr;
    return &n->grad;
}

// last-dim view: treat tensor as [rows x cols] with cols = shape.back()
inline std::size_t last_dim(const Tensor& t) {
    if (t.ndim() == 0) throw DimensionError("op requires at least 1-d tensor");
    return t.shape().back();
}

} // namespace detail

// ---------------------------------------------------------------------------
// elementwise binary / unary
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<double> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] + b.data()[i];
    Tensor out = make_op_result(a.shape(), std::move(v), {a, b});
    if (detail::recorded(out)) {
        auto an = a.node(), bn = b.node(), on = out.node();
        out.tape()->record([an, bn, on] {
            const auto* g = detail::out_grad(on);
            if (!g) return;
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < g->size(); ++i) an->grad[i] += (*g)[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < g->size(); ++i) bn->grad[i] += (*g)[i];
            }
        });
    }
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "sub");
    std::vector<double> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] - b.data()[i];
    Tensor out = make_op_result(a.shape(), std::move(v), {a, b});
    if (detail::recorded(out)) {
        auto an = a.node(), bn = b.node(), on = out.node();
        out.tape()->record([an, bn, on] {
            const auto* g = detail::out_grad(on);
            if (!g) return;
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < g->size(); ++i) an->grad[i] += (*g)[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < g->size(); ++i) bn->grad[i] -= (*g)[i];
            }
        });
    }
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<double> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * b.data()[i];
    Tensor out = make_op_result(a.shape(), std::move(v), {a, b});
    if (detail::recorded(out)) {
        auto an = a.node(), bn = b.node(), on = out.node();
        out.tape()->record([an, bn, on] {
            const auto* g = detail::out_grad(on);
            if (!g) return;
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < g->size(); ++i)
                    an->grad[i] += (*g)[i] * bn->value[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < g->size(); ++i)
                    bn->grad[i] += (*g)[i] * an->value[i];
            }
        });
    }
    return out;
}

// y = x * c with constant c
inline Tensor scale(const Tensor& x, double c) {
    std::vector<double> v(x.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = x.data()[i] * c;
    Tensor out = make_op_result(x.shape(), std::move(v), {x});
    if (detail::recorded(out)) {
        auto xn = x.node(), on = out.node();
        out.tape()->record([xn, on, c] {
            const auto* g = detail::out_grad(on);
            if (!g || !xn->requires_grad) return;
            xn->ensure_grad();
            for (std::size_t i = 0; i < g->size(); ++i) xn->grad[i] += (*g)[i] * c;
        });
    }
    return out;
}

inline Tensor neg(const Tensor& x) { return scale(x, -1.0); }

inline Tensor add_scalar(const Tensor& x, double c) {
    std::vector<double> v(x.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = x.data()[i] + c;
    Tensor out = make_op_result(x.shape(), std::move(v), {x});
    if (detail::recorded(out)) {
        auto xn = x.node(), on = out.node();
        out.tape()->record([xn, on] {
            const auto* g = detail::out_grad(on);
            if (!g || !xn->requires_grad) return;
            xn->ensure_grad();
            for (std::size_t i = 0; i < g->size(); ++i) xn->grad[i] += (*g)[i];
        });
    }
    return out;
}

// broadcast a scalar tensor s (shape [1]) over every element of x
inline Tensor add_scalar_t(const Tensor& x, const Tensor& s) {
    if (s.numel() != 1)
        throw DimensionError("add_scalar_t: scalar operand has shape " +
                             shape_str(s.shape()));
    std::vector<double> v(x.numel());
    const double sv = s.data()[0];
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = x.data()[i] + sv;
    Tensor out = make_op_result(x.shape(), std::move(v), {x, s});
    if (detail::recorded(out)) {
        auto xn = x.node(), sn = s.node(), on = out.node();
        out.tape()->record([xn, sn, on] {
            const auto* g = detail::out_grad(on);
            if (!g) return;
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (std::size_t i = 0; i < g->size(); ++i) xn->grad[i] += (*g)[i];
            }
            if (sn->requires_grad) {
                sn->ensure_grad();
                double acc = 0.0;
                for (double gi : *g) acc += gi;
                sn->grad[0] += acc;
            }
        });
    }
    return out;
}

inline Tensor mul_scalar_t(const Tensor& x, const Tensor& s) {
    if (s.numel() != 1)
        throw DimensionError("mul_scalar_t: scalar operand has shape " +
                             shape_str(s.shape()));
    std::vector<double> v(x.numel());
    const double sv = s.data()[0];
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = x.data()[i] * sv;
    Tensor out = make_op_result(x.shape(), std::move(v), {x, s});
    if (detail::recorded(out)) {
        auto xn = x.node(), sn = s.node(), on = out.node();
        out.tape()->record([xn, sn, on, sv] {
            const auto* g = detail::out_grad(on);
            if (!g) return;
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (std::size_t i = 0; i < g->size(); ++i)
                    xn->grad[i] += (*g)[i] * sv;
            }
            if (sn->requires_grad) {
                sn->ensure_grad();
                double acc = 0.0;
                for (std::size_t i = 0; i < g->size(); ++i)
                    acc += (*g)[i] * xn->value[i];
                sn->grad[0] += acc;
            }
        });
    }
    return out;
}

// broadcast vector v (shape [d]) across the last dimension of x
inline Tensor add_rowvec(const Tensor& x, const Tensor& v) {
    const std::size_t d = detail::last_dim(x);
    if (v.ndim() != 1 || v.numel() != d)
        throw DimensionError("add_rowvec: vector " + shape_str(v.shape()) +
                             " does not match last dim of " + shape_str(x.shape()));
    std::vector<double> out_v(x.numel());
    const std::size_t rows = x.numel() / d;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j)
            out_v[r * d + j] = x.data()[r * d + j] + v.data()[j];
    Tensor out = make_op_result(x.shape(), std::move(out_v), {x, v});
    if (detail::recorded(out)) {
        auto xn = x.node(), vn = v.node(), on = out.node();
        out.tape()->record([xn, vn, on, rows, d] {
            const auto* g = detail::out_grad(on);
            if (!g) return;
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (std::size_t i = 0; i < g->size(); ++i) xn->grad[i] += (*g)[i];
            }
            if (vn->requires_grad) {
                vn->ensure_grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < d; ++j)
                        vn->grad[j] += (*g)[r * d + j];
            }
        });
    }
    return out;
}

inline Tensor mul_rowvec(const Tensor& x, const Tensor& v) {
    const std::size_t d = detail::last_dim(x);
    if (v.ndim() != 1 || v.numel() != d)
        throw DimensionError("mul_rowvec: vector " + shape_str(v.shape()) +
                             " does not match last dim of " + shape_str(x.shape()));
    std::vector<double> out_v(x.numel());
    const std::size_t rows = x.numel() / d;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j)
            out_v[r * d + j] = x.data()[r * d + j] * v.data()[j];
    Tensor out = make_op_result(x.shape(), std::move(out_v), {x, v});
    if (detail::recorded(out)) {
        auto xn = x.node(), vn = v.node(), on = out.node();
        out.tape()->record([xn, vn, on, rows, d] {
            const auto* g = detail::out_grad(on);
            if (!g) return;
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < d; ++j)
                        xn->grad[r * d + j] += (*g)[r * d + j] * vn->value[j];
            }
            if (vn->requires_grad) {
                vn->ensure_grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < d; ++j)
                        vn->grad[j] += (*g)[r * d + j] * xn->value[r * d + j];
            }
        });
    }
    return out;
}

inline Tensor square(const Tensor& x) { return mul(x, x); }

inline Tensor sqrt_op(const Tensor& x) {
    std::vector<double> v(x.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::sqrt(x.data()[i]);
    Tensor out = make_op_result(x.shape(), std::move(v), {x});
    if (detail::recorded(out)) {
        auto xn = x.node(), on = out.node();
        out.tape()->record([xn, on] {
            const auto* g = detail::out_grad(on);
            if (!g || !xn->requires_grad) return;
            xn->ensure_grad();
            for (std::size_t i = 0; i < g->size(); ++i)
                xn->grad[i] += (*g)[i] * 0.5 / on->value[i];
        });
    }
    return out;
}

inline Tensor reciprocal(const Tensor& x) {
    std::vector<double> v(x.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 1.0 / x.data()[i];
    Tensor out = make_op_result(x.shape(), std::move(v), {x});
    if (detail::recorded(out)) {
        auto xn = x.node(), on = out.node();
        out.tape()->record([xn, on] {
            const auto* g = detail::out_grad(on);
            if (!g || !xn->requires_grad) return;
            xn->ensure_grad();
            for (std::size_t i = 0; i < g->size(); ++i)
                xn->grad[i] -= (*g)[i] * on->value[i] * on->value[i];
        });
    }
    return out;
}

inline Tensor exp_op(const Tensor& x) {
    std::vector<double> v(x.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::exp(x.data()[i]);
    Tensor out = make_op_result(x.shape(), std::move(v), {x});
    if (detail::recorded(out)) {
        auto xn = x.node(), on = out.node();
        out.tape()->record([xn, on] {
            const auto* g = detail::out_grad(on);
            if (!g || !xn->requires_grad) return;
            xn->ensure_grad();
            for (std::size_t i = 0; i < g->size(); ++i)
                xn->grad[i] += (*g)[i] * on->value[i];
        });
    }
    return out;
}

// y = max(x, c); gradient passes only through unclamped entries
inline Tensor clamp_min(const Tensor& x, double c) {
    std::vector<double> v(x.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::max(x.data()[i], c);
    Tensor out = make_op_result(x.shape(), std::move(v), {x});
    if (detail::recorded(out)) {
        auto xn = x.node(), on = out.node();
        out.tape()->record([xn, on, c] {
            const auto* g = detail::out_grad(on);
            if (!g || !xn->requires_grad) return;
            xn->ensure_grad();
            for (std::size_t i = 0; i < g->size(); ++i)
                if (xn->value[i] > c) xn->grad[i] += (*g)[i];
        });
    }
    return out;
}

inline Tensor relu(const Tensor& x) {
    std::vector<double> v(x.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::max(x.data()[i], 0.0);
    Tensor out = make_op_result(x.shape(), std::move(v), {x});
    if (detail::recorded(out)) {
        auto xn = x.node(), on = out.node();
        out.tape()->record([xn, on] {
            const auto* g = detail::out_grad(on);
            if (!g || !xn->requires_grad) return;
            xn->ensure_grad();
            for (std::size_t i = 0; i < g->size(); ++i)
                if (xn->value[i] > 0.0) xn->grad[i] += (*g)[i];
        });
    }
    return out;
}

// exact GELU: x * Phi(x), with Phi the standard normal CDF
inline Tensor gelu(const Tensor& x) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    std::vector<double> v(x.numel());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double xi = x.data()[i];
        v[i] = 0.5 * xi * (1.0 + std::erf(xi * inv_sqrt2));
    }
    Tensor out = make_op_result(x.shape(), std::move(v), {x});
    if (detail::recorded(out)) {
        auto xn = x.node(), on = out.node();
        out.tape()->record([xn, on] {
            const auto* g = detail::out_grad(on);
            if (!g || !xn->requires_grad) return;
            xn->ensure_grad();
            const double inv_sqrt2pi = 0.39894228040143267794;
            for (std::size_t i = 0; i < g->size(); ++i) {
                const double xi = xn->value[i];
                const double cdf = 0.5 * (1.0 + std::erf(xi * inv_sqrt2));
                const double pdf = inv_sqrt2pi * std::exp(-0.5 * xi * xi);
                xn->grad[i] += (*g)[i] * (cdf + xi * pdf);
            }
        });
    }
    return out;
}

// Inverted dropout: surviving entries scaled by 1/(1-p) during training,
// identity in eval mode.
inline Tensor dropout(const Tensor& x, double p, bool training, Rng& rng) {
    if (p < 0.0 || p >= 1.0)
        throw ConfigError("dropout: p must be in [0,1), got " + std::to_string(p));
    if (!training || p == 0.0) return x;
    std::vector<double> mask(x.numel());
    const double scale_v = 1.0 / (1.0 - p);
    for (std::size_t i = 0; i < mask.size(); ++i)
        mask[i] = rng.bernoulli(p) ? 0.0 : scale_v;
    std::vector<double> v(x.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = x.data()[i] * mask[i];
    Tensor out = make_op_result(x.shape(), std::move(v), {x});
    if (detail::recorded(out)) {
        auto xn = x.node(), on = out.node();
        out.tape()->record([xn, on, mask = std::move(mask)] {
            const auto* g = detail::out_grad(on);
            if (!g || !xn->requires_grad) return;
            xn->ensure_grad();
            for (std::size_t i = 0; i < g->size(); ++i)
                xn->grad[i] += (*g)[i] * mask[i];
        });
    }
    return out;
}

// value copy with no gradient link (recycling detach option)
inline Tensor detach(const Tensor& x) {
    return Tensor::constant(x.shape(), x.data());
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel())
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) +
                             " as " + shape_str(shape));
    Tensor out = make_op_result(std::move(shape), x.data(), {x});
    if (detail::recorded(out)) {
        auto xn = x.node(), on = out.node();
        out.tape()->record([xn, on] {
            const auto* g = detail::out_grad(on);
            if (!g || !xn->requires_grad) return;
            xn->ensure_grad();
            for (std::size_t i = 0; i < g->size(); ++i) xn->grad[i] += (*g)[i];
        });
    }
    return out;
}

inline Tensor transpose(const Tensor& x) {
    if (x.ndim() != 2)
        throw DimensionError("transpose: expected 2-d tensor, got " +
                             shape_str(x.shape()));
    const std::size_t m = x.dim(0), n = x.dim(1);
    std::vector<double> v(x.numel());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) v[j * m + i] = x.data()[i * n + j];
    Tensor out = make_op_result({n, m}, std::move(v), {x});
    if (detail::recorded(out)) {
        auto xn = x.node(), on = out.node();
        out.tape()->record([xn, on, m, n] {
            const auto* g = detail::out_grad(on);
            if (!g || !xn->requires_grad) return;
            xn->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    xn->grad[i * n + j] += (*g)[j * m + i];
        });
    }
    return out;
}

inline Tensor slice_lastdim(const Tensor& x, std::size_t start, std::size_t len) {
    const std::size_t d = detail::last_dim(x);
    if (start + len > d)
        throw DimensionError("slice_lastdim: [" + std::to_string(start) + "," +
                             std::to_string(start + len) + ") out of range for " +
                             shape_str(x.shape()));
    Shape out_shape = x.shape();
    out_shape.back() = len;
    const std::size_t rows = x.numel() / d;
    std::vector<double> v(rows * len);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < len; ++j)
            v[r * len + j] = x.data()[r * d + start + j];
    Tensor out = make_op_result(std::move(out_shape), std::move(v), {x});
    if (detail::recorded(out)) {
        auto xn = x.node(), on = out.node();
        out.tape()->record([xn, on, rows, d, start, len] {
            const auto* g = detail::out_grad(on);
            if (!g || !xn->requires_grad) return;
            xn->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < len; ++j)
                    xn->grad[r * d + start + j] += (*g)[r * len + j];
        });
    }
    return out;
}

inline Tensor concat_lastdim(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_lastdim: no inputs");
    Shape lead = parts[0].shape();
    lead.pop_back();
    std::size_t total = 0;
    for (const Tensor& p : parts) {
        Shape pl = p.shape();
        if (pl.empty()) throw DimensionError("concat_lastdim: 0-d input");
        pl.pop_back();
        if (pl != lead)
            throw DimensionError("concat_lastdim: leading dims differ: " +
                                 shape_str(parts[0].shape()) + " vs " +
                                 shape_str(p.shape()));
        total += p.shape().back();
    }
    Shape out_shape = parts[0].shape();
    out_shape.back() = total;
    const std::size_t rows = shape_numel(lead);
    std::vector<double> v(rows * total);
    std::size_t off = 0;
    for (const Tensor& p : parts) {
        const std::size_t d = p.shape().back();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j)
                v[r * total + off + j] = p.data()[r * d + j];
        off += d;
    }
    Tensor out = Tensor::constant(std::move(out_shape), std::move(v));
    Tape* tape = nullptr;
    bool needs = false;
    for (const Tensor& p : parts) {
        if (p.tape()) tape = p.tape();
        needs = needs || p.requires_grad();
    }
    if (tape && tape->recording() && needs) {
        out.node()->requires_grad = true;
        out.node()->tape = tape;
        std::vector<std::shared_ptr<TensorNode>> in_nodes;
        in_nodes.reserve(parts.size());
        for (const Tensor& p : parts) in_nodes.push_back(p.node());
        auto on = out.node();
        tape->record([in_nodes, on, rows, total] {
            const auto* g = detail::out_grad(on);
            if (!g) return;
            std::size_t off2 = 0;
            for (auto& pn : in_nodes) {
                const std::size_t d = pn->shape.back();
                if (pn->requires_grad) {
                    pn->ensure_grad();
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t j = 0; j < d; ++j)
                            pn->grad[r * d + j] += (*g)[r * total + off2 + j];
                }
                off2 += d;
            }
        });
    }
    return out;
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no inputs");
    Shape trail = parts[0].shape();
    trail.erase(trail.begin());
    std::size_t total_rows = 0;
    for (const Tensor& p : parts) {
        Shape pt = p.shape();
        if (pt.empty()) throw DimensionError("concat_rows: 0-d input");
        pt.erase(pt.begin());
        if (pt != trail)
            throw DimensionError("concat_rows: trailing dims differ: " +
                                 shape_str(parts[0].shape()) + " vs " +
                                 shape_str(p.shape()));
        total_rows += p.dim(0);
    }
    Shape out_shape = parts[0].shape();
    out_shape[0] = total_rows;
    std::vector<double> v;
    v.reserve(shape_numel(out_shape));
    for (const Tensor& p : parts) v.insert(v.end(), p.data().begin(), p.data().end());
    Tensor out = Tensor::constant(std::move(out_shape), std::move(v));
    Tape* tape = nullptr;
    bool needs = false;
    for (const Tensor& p : parts) {
        if (p.tape()) tape = p.tape();
        needs = needs || p.requires_grad();
    }
    if (tape && tape->recording() && needs) {
        out.node()->requires_grad = true;
        out.node()->tape = tape;
        std::vector<std::shared_ptr<TensorNode>> in_nodes;
        for (const Tensor& p : parts) in_nodes.push_back(p.node());
        auto on = out.node();
        tape->record([in_nodes, on] {
            const auto* g = detail::out_grad(on);
            if (!g) return;
            std::size_t off = 0;
            for (auto& pn : in_nodes) {
                const std::size_t cnt = pn->value.size();
                if (pn->requires_grad) {
                    pn->ensure_grad();
                    for (std::size_t i = 0; i < cnt; ++i)
                        pn->grad[i] += (*g)[off + i];
                }
                off += cnt;
            }
        });
    }
    return out;
}

// gather rows of a table by integer index; adjoints scatter-add back
inline Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& idx) {
    if (table.ndim() != 2)
        throw DimensionError("gather_rows: table must be 2-d, got " +
                             shape_str(table.shape()));
    const std::size_t rows = table.dim(0), d = table.dim(1);
    for (std::size_t i : idx)
        if (i >= rows)
            throw DimensionError("gather_rows: index " + std::to_string(i) +
                                 " out of range for " + shape_str(table.shape()));
    std::vector<double> v(idx.size() * d);
    for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t j = 0; j < d; ++j)
            v[r * d + j] = table.data()[idx[r] * d + j];
    Tensor out = make_op_result({idx.size(), d}, std::move(v), {table});
    if (detail::recorded(out)) {
        auto tn = table.node(), on = out.node();
        out.tape()->record([tn, on, idx, d] {
            const auto* g = detail::out_grad(on);
            if (!g || !tn->requires_grad) return;
            tn->ensure_grad();
            for (std::size_t r = 0; r < idx.size(); ++r)
                for (std::size_t j = 0; j < d; ++j)
                    tn->grad[idx[r] * d + j] += (*g)[r * d + j];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

namespace detail {
struct AxisSplit {
    std::size_t outer, len, inner;
};
inline AxisSplit split_axis(const Tensor& x, std::size_t axis) {
    if (axis >= x.ndim())
        throw DimensionError("axis " + std::to_string(axis) +
                             " out of range for " + shape_str(x.shape()));
    AxisSplit s{1, x.dim(axis), 1};
    for (std::size_t i = 0; i < axis; ++i) s.outer *= x.dim(i);
    for (std::size_t i = axis + 1; i < x.ndim(); ++i) s.inner *= x.dim(i);
    return s;
}
} // namespace detail

inline Tensor sum_axis(const Tensor& x, std::size_t axis) {
    const auto sp = detail::split_axis(x, axis);
    Shape out_shape;
    for (std::size_t i = 0; i < x.ndim(); ++i)
        if (i != axis) out_shape.push_back(x.dim(i));
    if (out_shape.empty()) out_shape.push_back(1);
    std::vector<double> v(sp.outer * sp.inner, 0.0);
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t k = 0; k < sp.len; ++k)
            for (std::size_t in = 0; in < sp.inner; ++in)
                v[o * sp.inner + in] +=
                    x.data()[(o * sp.len + k) * sp.inner + in];
    Tensor out = make_op_result(std::move(out_shape), std::move(v), {x});
    if (detail::recorded(out)) {
        auto xn = x.node(), on = out.node();
        out.tape()->record([xn, on, sp] {
            const auto* g = detail::out_grad(on);
            if (!g || !xn->requires_grad) return;
            xn->ensure_grad();
            for (std::size_t o = 0; o < sp.outer; ++o)
                for (std::size_t k = 0; k < sp.len; ++k)
                    for (std::size_t in = 0; in < sp.inner; ++in)
                        xn->grad[(o * sp.len + k) * sp.inner + in] +=
                            (*g)[o * sp.inner + in];
        });
    }
    return out;
}

inline Tensor mean_axis(const Tensor& x, std::size_t axis) {
    const double inv = 1.0 / static_cast<double>(x.dim(axis));
    return scale(sum_axis(x, axis), inv);
}

inline Tensor sum_all(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    Tensor out = make_op_result({1}, {acc}, {x});
    if (detail::recorded(out)) {
        auto xn = x.node(), on = out.node();
        out.tape()->record([xn, on] {
            const auto* g = detail::out_grad(on);
            if (!g || !xn->requires_grad) return;
            xn->ensure_grad();
            for (std::size_t i = 0; i < xn->grad.size(); ++i)
                xn->grad[i] += (*g)[0];
        });
    }
    return out;
}

inline Tensor mean_all(const Tensor& x) {
    return scale(sum_all(x), 1.0 / static_cast<double>(x.numel()));
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

namespace detail {
// c += a[m x k] * b[k x n], ikj order for cache friendliness
inline void gemm_acc(const double* a, const double* b, double* c, std::size_t m,
                     std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}
// c += a^T[k x m]^T... i.e. c[m x n] += a[k x m]^T * b[k x n]
inline void gemm_at_b_acc(const double* a, const double* b, double* c,
                          std::size_t k, std::size_t m, std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* arow = a + p * m;
        const double* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}
// c[m x k] += g[m x n] * b[k x n]^T
inline void gemm_g_bt_acc(const double* g, const double* b, double* c,
                          std::size_t m, std::size_t n, std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g + i * n;
        double* crow = c + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double* brow = b + p * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            crow[p] += acc;
        }
    }
}
} // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
        throw DimensionError("matmul: incompatible shapes " +
                             shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> v(m * n, 0.0);
    detail::gemm_acc(a.data().data(), b.data().data(), v.data(), m, k, n);
    Tensor out = make_op_result({m, n}, std::move(v), {a, b});
    if (detail::recorded(out)) {
        auto an = a.node(), bn = b.node(), on = out.node();
        out.tape()->record([an, bn, on, m, k, n] {
            const auto* g = detail::out_grad(on);
            if (!g) return;
            if (an->requires_grad) {
                an->ensure_grad();
                // dA = G * B^T
                detail::gemm_g_bt_acc(g->data(), bn->value.data(),
                                      an->grad.data(), m, n, k);
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                // dB = A^T * G
                detail::gemm_at_b_acc(an->value.data(), g->data(),
                                      bn->grad.data(), m, k, n);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// normalizations / softmax family
// ---------------------------------------------------------------------------

inline Tensor softmax_lastdim(const Tensor& x) {
    const std::size_t d = detail::last_dim(x);
    const std::size_t rows = x.numel() / d;
    std::vector<double> v(x.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = x.data().data() + r * d;
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < d; ++j) m = std::max(m, row[j]);
        if (!std::isfinite(m))
            throw NumericError("softmax_lastdim: row " + std::to_string(r) +
                               " has no finite entries");
        double denom = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            v[r * d + j] = std::exp(row[j] - m);
            denom += v[r * d + j];
        }
        for (std::size_t j = 0; j < d; ++j) v[r * d + j] /= denom;
    }
    Tensor out = make_op_result(x.shape(), std::move(v), {x});
    if (detail::recorded(out)) {
        auto xn = x.node(), on = out.node();
        out.tape()->record([xn, on, rows, d] {
            const auto* g = detail::out_grad(on);
            if (!g || !xn->requires_grad) return;
            xn->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                const double* y = on->value.data() + r * d;
                const double* gr = g->data() + r * d;
                double dot = 0.0;
                for (std::size_t j = 0; j < d; ++j) dot += gr[j] * y[j];
                for (std::size_t j = 0; j < d; ++j)
                    xn->grad[r * d + j] += y[j] * (gr[j] - dot);
            }
        });
    }
    return out;
}

inline Tensor log_softmax_lastdim(const Tensor& x) {
    const std::size_t d = detail::last_dim(x);
    const std::size_t rows = x.numel() / d;
    std::vector<double> v(x.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = x.data().data() + r * d;
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < d; ++j) m = std::max(m, row[j]);
        if (!std::isfinite(m))
            throw NumericError("log_softmax_lastdim: row " + std::to_string(r) +
                               " has no finite entries");
        double denom = 0.0;
        for (std::size_t j = 0; j < d; ++j) denom += std::exp(row[j] - m);
        const double lse = m + std::log(denom);
        for (std::size_t j = 0; j < d; ++j) v[r * d + j] = row[j] - lse;
    }
    Tensor out = make_op_result(x.shape(), std::move(v), {x});
    if (detail::recorded(out)) {
        auto xn = x.node(), on = out.node();
        out.tape()->record([xn, on, rows, d] {
            const auto* g = detail::out_grad(on);
            if (!g || !xn->requires_grad) return;
            xn->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                const double* ls = on->value.data() + r * d;
                const double* gr = g->data() + r * d;
                double gsum = 0.0;
                for (std::size_t j = 0; j < d; ++j) gsum += gr[j];
                for (std::size_t j = 0; j < d; ++j)
                    xn->grad[r * d + j] += gr[j] - std::exp(ls[j]) * gsum;
            }
        });
    }
    return out;
}

// mean negative log-likelihood of the true class, given log-probabilities
inline Tensor nll_pick_mean(const Tensor& logprobs,
                            const std::vector<std::size_t>& labels) {
    if (logprobs.ndim() != 2)
        throw DimensionError("nll_pick_mean: expected [batch x classes], got " +
                             shape_str(logprobs.shape()));
    const std::size_t bsz = logprobs.dim(0), c = logprobs.dim(1);
    if (labels.size() != bsz)
        throw DimensionError("nll_pick_mean: " + std::to_string(labels.size()) +
                             " labels for batch of " + std::to_string(bsz));
    for (std::size_t i = 0; i < bsz; ++i)
        if (labels[i] >= c)
            throw DataError("nll_pick_mean: label " + std::to_string(labels[i]) +
                            " at index " + std::to_string(i) +
                            " out of range [0," + std::to_string(c) + ")");
    double acc = 0.0;
    for (std::size_t i = 0; i < bsz; ++i) acc -= logprobs.at(i, labels[i]);
    acc /= static_cast<double>(bsz);
    Tensor out = make_op_result({1}, {acc}, {logprobs});
    if (detail::recorded(out)) {
        auto ln = logprobs.node(), on = out.node();
        out.tape()->record([ln, on, labels, c, bsz] {
            const auto* g = detail::out_grad(on);
            if (!g || !ln->requires_grad) return;
            ln->ensure_grad();
            const double gv = (*g)[0] / static_cast<double>(bsz);
            for (std::size_t i = 0; i < bsz; ++i)
                ln->grad[i * c + labels[i]] -= gv;
        });
    }
    return out;
}

// Per-slice normalization along the last dimension followed by a learnable
// elementwise affine. Variance is the biased estimator; eps sits inside the
// square root.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
    const std::size_t d = detail::last_dim(x);
    if (gain.ndim() != 1 || gain.numel() != d || bias.ndim() != 1 ||
        bias.numel() != d)
        throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) +
                             "/" + shape_str(bias.shape()) +
                             " do not match last dim of " + shape_str(x.shape()));
    if (eps <= 0.0) throw ConfigError("layer_norm: eps must be > 0");
    const std::size_t rows = x.numel() / d;
    std::vector<double> v(x.numel());
    std::vector<double> xhat(x.numel());
    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = x.data().data() + r * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = row[j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::size_t j = 0; j < d; ++j) {
            const double h = (row[j] - mean) * is;
            xhat[r * d + j] = h;
            v[r * d + j] = h * gain.data()[j] + bias.data()[j];
        }
    }
    Tensor out = make_op_result(x.shape(), std::move(v), {x, gain, bias});
    if (detail::recorded(out)) {
        auto xn = x.node(), gn = gain.node(), bn = bias.node(), on = out.node();
        out.tape()->record([xn, gn, bn, on, rows, d, xhat = std::move(xhat),
                            inv_std = std::move(inv_std)] {
            const auto* g = detail::out_grad(on);
            if (!g) return;
            if (gn->requires_grad) {
                gn->ensure_grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < d; ++j)
                        gn->grad[j] += (*g)[r * d + j] * xhat[r * d + j];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < d; ++j)
                        bn->grad[j] += (*g)[r * d + j];
            }
            if (xn->requires_grad) {
                xn->ensure_grad();
                const double invd = 1.0 / static_cast<double>(d);
                for (std::size_t r = 0; r < rows; ++r) {
                    double mean_gh = 0.0, mean_ghx = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double gh = (*g)[r * d + j] * gn->value[j];
                        mean_gh += gh;
                        mean_ghx += gh * xhat[r * d + j];
                    }
                    mean_gh *= invd;
                    mean_ghx *= invd;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double gh = (*g)[r * d + j] * gn->value[j];
                        xn->grad[r * d + j] +=
                            inv_std[r] *
                            (gh - mean_gh - xhat[r * d + j] * mean_ghx);
                    }
                }
            }
        });
    }
    return out;
}

// Min-max normalization along axis 0 per feature column: (x - min)/(max - min
// + eps). Subgradients route through the argmin/argmax entries.
inline Tensor minmax_norm_axis0(const Tensor& x, double eps = 1e-5) {
    if (x.ndim() != 2)
        throw DimensionError("minmax_norm_axis0: expected 2-d tensor, got " +
                             shape_str(x.shape()));
    const std::size_t n = x.dim(0), f = x.dim(1);
    std::vector<double> v(x.numel());
    std::vector<std::size_t> arg_min(f), arg_max(f);
    std::vector<double> inv_range(f);
    for (std::size_t j = 0; j < f; ++j) {
        std::size_t imin = 0, imax = 0;
        for (std::size_t i = 1; i < n; ++i) {
            if (x.at(i, j) < x.at(imin, j)) imin = i;
            if (x.at(i, j) > x.at(imax, j)) imax = i;
        }
        arg_min[j] = imin;
        arg_max[j] = imax;
        const double lo = x.at(imin, j), hi = x.at(imax, j);
        const double ir = 1.0 / (hi - lo + eps);
        inv_range[j] = ir;
        for (std::size_t i = 0; i < n; ++i) v[i * f + j] = (x.at(i, j) - lo) * ir;
    }
    Tensor out = make_op_result(x.shape(), std::move(v), {x});
    if (detail::recorded(out)) {
        auto xn = x.node(), on = out.node();
        out.tape()->record([xn, on, n, f, arg_min = std::move(arg_min),
                            arg_max = std::move(arg_max),
                            inv_range = std::move(inv_range)] {
            const auto* g = detail::out_grad(on);
            if (!g || !xn->requires_grad) return;
            xn->ensure_grad();
            for (std::size_t j = 0; j < f; ++j) {
                const double ir = inv_range[j];
                double gsum = 0.0, gysum = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    const double gi = (*g)[i * f + j];
                    gsum += gi;
                    gysum += gi * on->value[i * f + j];
                }
                for (std::size_t i = 0; i < n; ++i)
                    xn->grad[i * f + j] += (*g)[i * f + j] * ir;
                // d/d(min): -ir per element + y*ir through the range term
                xn->grad[arg_min[j] * f + j] += ir * (gysum - gsum);
                // d/d(max): -y*ir through the range term
                xn->grad[arg_max[j] * f + j] -= ir * gysum;
            }
        });
    }
    return out;
}

// max over the last dim, returning argmax indices (no gradient; metrics only)
inline std::vector<std::size_t> argmax_lastdim(const Tensor& x) {
    const std::size_t d = detail::last_dim(x);
    const std::size_t rows = x.numel() / d;
    std::vector<std::size_t> idx(rows, 0);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = x.data().data() + r * d;
        std::size_t best = 0;
        for (std::size_t j = 1; j < d; ++j)
            if (row[j] > row[best]) best = j; // ties keep the lowest index
        idx[r] = best;
    }
    return idx;
}

} // namespace mvgt::numkit
