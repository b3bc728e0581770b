#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <limits>

#include "seqlab/tape.hpp"

namespace seqlab {

template <class T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class T>
using CMatMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <class T>
inline T neg_inf() { return -std::numeric_limits<T>::infinity(); }

namespace detail {
template <class T>
inline T sigmoid_val(T x) {
    if (x >= T(0)) {
        T e = std::exp(-x);
        return T(1) / (T(1) + e);
    }
    T e = std::exp(x);
    return e / (T(1) + e);
}
}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <class T>
Var<T> add(Tape<T>& tp, Var<T> a, Var<T> b) {
    const auto& av = tp.val(a);
    const auto& bv = tp.val(b);
    require(av.same_shape(bv), "add: shape mismatch");
    Tensor<T> out = av;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
    return tp.record(std::move(out), {a.id, b.id}, "add", [a, b](Var<T> o) {
        return [a, b, o](Tape<T>& t) {
            const auto& g = t.grad(o);
            for (Var<T> v : {a, b}) {
                if (!t.needs_grad(v)) continue;
                auto& gv = t.grad(v);
                for (std::int64_t i = 0; i < g.numel(); ++i) gv[i] += g[i];
            }
        };
    });
}

template <class T>
Var<T> sub(Tape<T>& tp, Var<T> a, Var<T> b) {
    const auto& av = tp.val(a);
    const auto& bv = tp.val(b);
    require(av.same_shape(bv), "sub: shape mismatch");
    Tensor<T> out = av;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
    return tp.record(std::move(out), {a.id, b.id}, "sub", [a, b](Var<T> o) {
        return [a, b, o](Tape<T>& t) {
            const auto& g = t.grad(o);
            if (t.needs_grad(a)) {
                auto& ga = t.grad(a);
                for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
            }
            if (t.needs_grad(b)) {
                auto& gb = t.grad(b);
                for (std::int64_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
            }
        };
    });
}

template <class T>
Var<T> mul(Tape<T>& tp, Var<T> a, Var<T> b) {
    const auto& av = tp.val(a);
    const auto& bv = tp.val(b);
    require(av.same_shape(bv), "mul: shape mismatch");
    Tensor<T> out = av;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
    return tp.record(std::move(out), {a.id, b.id}, "mul", [a, b](Var<T> o) {
        return [a, b, o](Tape<T>& t) {
            const auto& g = t.grad(o);
            const auto& av = t.val(a);
            const auto& bv = t.val(b);
            if (t.needs_grad(a)) {
                auto& ga = t.grad(a);
                for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * bv[i];
            }
            if (t.needs_grad(b)) {
                auto& gb = t.grad(b);
                for (std::int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * av[i];
            }
        };
    });
}

template <class T>
Var<T> scale(Tape<T>& tp, Var<T> a, double s) {
    Tensor<T> out = tp.val(a);
    for (auto& v : out.data) v = static_cast<T>(v * s);
    return tp.record(std::move(out), {a.id}, "scale", [a, s](Var<T> o) {
        return [a, s, o](Tape<T>& t) {
            if (!t.needs_grad(a)) return;
            const auto& g = t.grad(o);
            auto& ga = t.grad(a);
            for (std::int64_t i = 0; i < g.numel(); ++i)
                ga[i] += static_cast<T>(g[i] * s);
        };
    });
}

/// out = (1 - a), elementwise; convenience for gates.
template <class T>
Var<T> one_minus(Tape<T>& tp, Var<T> a) {
    Tensor<T> out = tp.val(a);
    for (auto& v : out.data) v = T(1) - v;
    return tp.record(std::move(out), {a.id}, "one_minus", [a](Var<T> o) {
        return [a, o](Tape<T>& t) {
            if (!t.needs_grad(a)) return;
            const auto& g = t.grad(o);
            auto& ga = t.grad(a);
            for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] -= g[i];
        };
    });
}

template <class T>
Var<T> sigmoid(Tape<T>& tp, Var<T> a) {
    Tensor<T> out = tp.val(a);
    for (auto& v : out.data) v = detail::sigmoid_val(v);
    return tp.record(std::move(out), {a.id}, "sigmoid", [a](Var<T> o) {
        return [a, o](Tape<T>& t) {
            if (!t.needs_grad(a)) return;
            const auto& g = t.grad(o);
            const auto& y = t.val(o);
            auto& ga = t.grad(a);
            for (std::int64_t i = 0; i < g.numel(); ++i)
                ga[i] += g[i] * y[i] * (T(1) - y[i]);
        };
    });
}

template <class T>
Var<T> silu(Tape<T>& tp, Var<T> a) {
    const auto& av = tp.val(a);
    Tensor<T> out(av.shape);
    for (std::int64_t i = 0; i < av.numel(); ++i)
        out[i] = av[i] * detail::sigmoid_val(av[i]);
    return tp.record(std::move(out), {a.id}, "silu", [a](Var<T> o) {
        return [a, o](Tape<T>& t) {
            if (!t.needs_grad(a)) return;
            const auto& g = t.grad(o);
            const auto& x = t.val(a);
            auto& ga = t.grad(a);
            for (std::int64_t i = 0; i < g.numel(); ++i) {
                T s = detail::sigmoid_val(x[i]);
                ga[i] += g[i] * (s + x[i] * s * (T(1) - s));
            }
        };
    });
}

// ---------------------------------------------------------------------------
// last-axis broadcasts: x[..., E] with vector v[E]
// ---------------------------------------------------------------------------

template <class T>
Var<T> add_rowvec(Tape<T>& tp, Var<T> x, Var<T> v) {
    const auto& xv = tp.val(x);
    const auto& vv = tp.val(v);
    require(vv.ndim() == 1 && xv.ndim() >= 1 && xv.shape.back() == vv.dim(0),
            "add_rowvec: last axis mismatch");
    const std::int64_t e = vv.dim(0);
    Tensor<T> out = xv;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += vv[i % e];
    return tp.record(std::move(out), {x.id, v.id}, "add_rowvec", [x, v, e](Var<T> o) {
        return [x, v, e, o](Tape<T>& t) {
            const auto& g = t.grad(o);
            if (t.needs_grad(x)) {
                auto& gx = t.grad(x);
                for (std::int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
            }
            if (t.needs_grad(v)) {
                auto& gv = t.grad(v);
                for (std::int64_t i = 0; i < g.numel(); ++i) gv[i % e] += g[i];
            }
        };
    });
}

template <class T>
Var<T> mul_rowvec(Tape<T>& tp, Var<T> x, Var<T> v) {
    const auto& xv = tp.val(x);
    const auto& vv = tp.val(v);
    require(vv.ndim() == 1 && xv.ndim() >= 1 && xv.shape.back() == vv.dim(0),
            "mul_rowvec: last axis mismatch");
    const std::int64_t e = vv.dim(0);
    Tensor<T> out = xv;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= vv[i % e];
    return tp.record(std::move(out), {x.id, v.id}, "mul_rowvec", [x, v, e](Var<T> o) {
        return [x, v, e, o](Tape<T>& t) {
            const auto& g = t.grad(o);
            const auto& xv = t.val(x);
            const auto& vv = t.val(v);
            if (t.needs_grad(x)) {
                auto& gx = t.grad(x);
                for (std::int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * vv[i % e];
            }
            if (t.needs_grad(v)) {
                auto& gv = t.grad(v);
                for (std::int64_t i = 0; i < g.numel(); ++i) gv[i % e] += g[i] * xv[i];
            }
        };
    });
}

// ---------------------------------------------------------------------------
// linear map over the last axis: x[..., M] x W[M, N] -> [..., N]
// ---------------------------------------------------------------------------

template <class T>
Var<T> linear_lastdim(Tape<T>& tp, Var<T> x, Var<T> w) {
    const auto& xv = tp.val(x);
    const auto& wv = tp.val(w);
    require(wv.ndim() == 2 && xv.ndim() >= 1 && xv.shape.back() == wv.dim(0),
            "linear_lastdim: inner dim mismatch");
    const std::int64_t m = wv.dim(0), n = wv.dim(1);
    const std::int64_t rows = xv.numel() / m;
    Shape oshape = xv.shape;
    oshape.back() = n;
    Tensor<T> out(oshape);
    CMatMap<T> X(xv.data.data(), rows, m);
    CMatMap<T> W(wv.data.data(), m, n);
    MatMap<T> Y(out.data.data(), rows, n);
    Y.noalias() = X * W;
    return tp.record(std::move(out), {x.id, w.id}, "linear", [x, w, rows, m, n](Var<T> o) {
        return [x, w, rows, m, n, o](Tape<T>& t) {
            CMatMap<T> G(t.grad(o).data.data(), rows, n);
            CMatMap<T> X(t.val(x).data.data(), rows, m);
            CMatMap<T> W(t.val(w).data.data(), m, n);
            if (t.needs_grad(x)) {
                MatMap<T> GX(t.grad(x).data.data(), rows, m);
                GX.noalias() += G * W.transpose();
            }
            if (t.needs_grad(w)) {
                MatMap<T> GW(t.grad(w).data.data(), m, n);
                GW.noalias() += X.transpose() * G;
            }
        };
    });
}

// ---------------------------------------------------------------------------
// softmax over the last axis, -inf entries act as masked positions
// ---------------------------------------------------------------------------

template <class T>
Var<T> softmax_rows(Tape<T>& tp, Var<T> x) {
    const auto& xv = tp.val(x);
    require(xv.ndim() >= 1, "softmax_rows: needs at least 1 dim");
    const std::int64_t n = xv.shape.back();
    require(n >= 1, "softmax_rows: empty rows");
    const std::int64_t rows = xv.numel() / n;
    Tensor<T> out(xv.shape);
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* xr = xv.data.data() + r * n;
        T* yr = out.data.data() + r * n;
        T mx = neg_inf<T>();
        for (std::int64_t j = 0; j < n; ++j) mx = std::max(mx, xr[j]);
        if (mx == neg_inf<T>()) {
            // fully masked row: defined as all zeros
            std::fill(yr, yr + n, T(0));
            continue;
        }
        T sum = T(0);
        for (std::int64_t j = 0; j < n; ++j) {
            yr[j] = (xr[j] == neg_inf<T>()) ? T(0) : std::exp(xr[j] - mx);
            sum += yr[j];
        }
        for (std::int64_t j = 0; j < n; ++j) yr[j] /= sum;
    }
    return tp.record(std::move(out), {x.id}, "softmax_rows", [x, rows, n](Var<T> o) {
        return [x, rows, n, o](Tape<T>& t) {
            if (!t.needs_grad(x)) return;
            const auto& g = t.grad(o);
            const auto& p = t.val(o);
            auto& gx = t.grad(x);
            for (std::int64_t r = 0; r < rows; ++r) {
                const T* gr = g.data.data() + r * n;
                const T* pr = p.data.data() + r * n;
                T* gxr = gx.data.data() + r * n;
                T dot = T(0);
                for (std::int64_t j = 0; j < n; ++j) dot += gr[j] * pr[j];
                for (std::int64_t j = 0; j < n; ++j) gxr[j] += pr[j] * (gr[j] - dot);
            }
        };
    });
}

// ---------------------------------------------------------------------------
// layer normalization over the last (feature) axis
// ---------------------------------------------------------------------------

template <class T>
Var<T> layer_norm(Tape<T>& tp, Var<T> x, Var<T> gamma, Var<T> beta, double eps = 1e-5) {
    const auto& xv = tp.val(x);
    const auto& gv = tp.val(gamma);
    const auto& bv = tp.val(beta);
    const std::int64_t e = xv.shape.back();
    require(gv.ndim() == 1 && gv.dim(0) == e && bv.ndim() == 1 && bv.dim(0) == e,
            "layer_norm: param shape mismatch");
    const std::int64_t rows = xv.numel() / e;
    Tensor<T> out(xv.shape);
    Tensor<T> xhat(xv.shape);
    std::vector<T> inv_std(static_cast<std::size_t>(rows));
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* xr = xv.data.data() + r * e;
        T mean = T(0);
        for (std::int64_t j = 0; j < e; ++j) mean += xr[j];
        mean /= static_cast<T>(e);
        T var = T(0);
        for (std::int64_t j = 0; j < e; ++j) var += (xr[j] - mean) * (xr[j] - mean);
        var /= static_cast<T>(e);
        T is = T(1) / std::sqrt(var + static_cast<T>(eps));
        inv_std[static_cast<std::size_t>(r)] = is;
        for (std::int64_t j = 0; j < e; ++j) {
            T xh = (xr[j] - mean) * is;
            xhat[r * e + j] = xh;
            out[r * e + j] = gv[j] * xh + bv[j];
        }
    }
    return tp.record(std::move(out), {x.id, gamma.id, beta.id}, "layer_norm",
                     [x, gamma, beta, rows, e, xhat = std::move(xhat),
                      inv_std = std::move(inv_std)](Var<T> o) {
        return [x, gamma, beta, rows, e, xhat, inv_std, o](Tape<T>& t) {
            const auto& g = t.grad(o);
            const auto& gv = t.val(gamma);
            if (t.needs_grad(gamma)) {
                auto& gg = t.grad(gamma);
                for (std::int64_t r = 0; r < rows; ++r)
                    for (std::int64_t j = 0; j < e; ++j)
                        gg[j] += g[r * e + j] * xhat[r * e + j];
            }
            if (t.needs_grad(beta)) {
                auto& gb = t.grad(beta);
                for (std::int64_t r = 0; r < rows; ++r)
                    for (std::int64_t j = 0; j < e; ++j) gb[j] += g[r * e + j];
            }
            if (t.needs_grad(x)) {
                auto& gx = t.grad(x);
                for (std::int64_t r = 0; r < rows; ++r) {
                    T m1 = T(0), m2 = T(0);
                    for (std::int64_t j = 0; j < e; ++j) {
                        T gj = g[r * e + j] * gv[j];
                        m1 += gj;
                        m2 += gj * xhat[r * e + j];
                    }
                    m1 /= static_cast<T>(e);
                    m2 /= static_cast<T>(e);
                    T is = inv_std[static_cast<std::size_t>(r)];
                    for (std::int64_t j = 0; j < e; ++j) {
                        T gj = g[r * e + j] * gv[j];
                        gx[r * e + j] += is * (gj - m1 - xhat[r * e + j] * m2);
                    }
                }
            }
        };
    });
}

// ---------------------------------------------------------------------------
// dropout with inverted scaling at train time; eval path is identity
// ---------------------------------------------------------------------------

template <class T>
Var<T> dropout(Tape<T>& tp, Var<T> x, double p, bool train, Rng& rng) {
    require(p >= 0.0 && p < 1.0, "dropout: p must be in [0,1)");
    if (!train || p == 0.0) return x;
    const auto& xv = tp.val(x);
    Tensor<T> out(xv.shape);
    std::vector<std::uint8_t> keep(static_cast<std::size_t>(xv.numel()));
    const T inv_keep = static_cast<T>(1.0 / (1.0 - p));
    for (std::int64_t i = 0; i < xv.numel(); ++i) {
        bool k = rng.uniform() >= p;
        keep[static_cast<std::size_t>(i)] = k;
        out[i] = k ? xv[i] * inv_keep : T(0);
    }
    return tp.record(std::move(out), {x.id}, "dropout",
                     [x, keep = std::move(keep), inv_keep](Var<T> o) {
        return [x, keep, inv_keep, o](Tape<T>& t) {
            if (!t.needs_grad(x)) return;
            const auto& g = t.grad(o);
            auto& gx = t.grad(x);
            for (std::int64_t i = 0; i < g.numel(); ++i)
                if (keep[static_cast<std::size_t>(i)]) gx[i] += g[i] * inv_keep;
        };
    });
}

// ---------------------------------------------------------------------------
// embedding lookup: W[V, E], tokens[B*L] -> [B, L, E]
// ---------------------------------------------------------------------------

template <class T>
Var<T> embedding(Tape<T>& tp, Var<T> w, const std::vector<std::int64_t>& tokens,
                 std::int64_t batch, std::int64_t len) {
    const auto& wv = tp.val(w);
    require(wv.ndim() == 2, "embedding: weight must be [vocab, E]");
    require(static_cast<std::int64_t>(tokens.size()) == batch * len,
            "embedding: token count mismatch");
    const std::int64_t vocab = wv.dim(0), e = wv.dim(1);
    for (auto id : tokens)
        require(id >= 0 && id < vocab, "embedding: token id out of range");
    Tensor<T> out({batch, len, e});
    for (std::int64_t i = 0; i < batch * len; ++i)
        std::copy_n(wv.data.data() + tokens[static_cast<std::size_t>(i)] * e, e,
                    out.data.data() + i * e);
    return tp.record(std::move(out), {w.id}, "embedding", [w, tokens, e](Var<T> o) {
        return [w, tokens, e, o](Tape<T>& t) {
            if (!t.needs_grad(w)) return;
            const auto& g = t.grad(o);
            auto& gw = t.grad(w);
            for (std::size_t i = 0; i < tokens.size(); ++i) {
                const T* gr = g.data.data() + static_cast<std::int64_t>(i) * e;
                T* wr = gw.data.data() + tokens[i] * e;
                for (std::int64_t j = 0; j < e; ++j) wr[j] += gr[j];
            }
        };
    });
}

// ---------------------------------------------------------------------------
// mean cross-entropy at the final sequence position
// logits[B, L, V], targets[B] -> scalar
// ---------------------------------------------------------------------------

template <class T>
Var<T> cross_entropy_last(Tape<T>& tp, Var<T> logits,
                          const std::vector<std::int64_t>& targets) {
    const auto& lv = tp.val(logits);
    require(lv.ndim() == 3, "cross_entropy_last: logits must be [B, L, V]");
    const std::int64_t b = lv.dim(0), l = lv.dim(1), v = lv.dim(2);
    require(static_cast<std::int64_t>(targets.size()) == b,
            "cross_entropy_last: target count mismatch");
    Tensor<T> probs({b, v});
    double loss = 0.0;
    for (std::int64_t i = 0; i < b; ++i) {
        require(targets[static_cast<std::size_t>(i)] >= 0 &&
                targets[static_cast<std::size_t>(i)] < v,
                "cross_entropy_last: target out of range");
        const T* row = lv.data.data() + (i * l + (l - 1)) * v;
        T mx = row[0];
        for (std::int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::int64_t j = 0; j < v; ++j) sum += std::exp(static_cast<double>(row[j] - mx));
        double lse = std::log(sum) + static_cast<double>(mx);
        for (std::int64_t j = 0; j < v; ++j)
            probs[i * v + j] = static_cast<T>(std::exp(static_cast<double>(row[j]) - lse));
        loss -= static_cast<double>(row[targets[static_cast<std::size_t>(i)]]) - lse;
    }
    Tensor<T> out({1});
    out[0] = static_cast<T>(loss / static_cast<double>(b));
    return tp.record(std::move(out), {logits.id}, "cross_entropy_last",
                     [logits, targets, b, l, v, probs = std::move(probs)](Var<T> o) {
        return [logits, targets, b, l, v, probs, o](Tape<T>& t) {
            if (!t.needs_grad(logits)) return;
            const T g0 = t.grad(o)[0];
            auto& gl = t.grad(logits);
            const T inv_b = T(1) / static_cast<T>(b);
            for (std::int64_t i = 0; i < b; ++i) {
                T* row = gl.data.data() + (i * l + (l - 1)) * v;
                for (std::int64_t j = 0; j < v; ++j)
                    row[j] += g0 * inv_b * probs[i * v + j];
                row[targets[static_cast<std::size_t>(i)]] -= g0 * inv_b;
            }
        };
    });
}

// ---------------------------------------------------------------------------
// reductions / indexing / reshapes
// ---------------------------------------------------------------------------

template <class T>
Var<T> sum_all(Tape<T>& tp, Var<T> x) {
    const auto& xv = tp.val(x);
    double s = 0.0;
    for (T v : xv.data) s += static_cast<double>(v);
    Tensor<T> out({1});
    out[0] = static_cast<T>(s);
    return tp.record(std::move(out), {x.id}, "sum_all", [x](Var<T> o) {
        return [x, o](Tape<T>& t) {
            if (!t.needs_grad(x)) return;
            const T g = t.grad(o)[0];
            auto& gx = t.grad(x);
            for (auto& v : gx.data) v += g;
        };
    });
}

/// Scalar view of a single flat element; lets tests differentiate one output.
template <class T>
Var<T> pick(Tape<T>& tp, Var<T> x, std::int64_t flat_index) {
    const auto& xv = tp.val(x);
    require(flat_index >= 0 && flat_index < xv.numel(), "pick: index out of range");
    Tensor<T> out({1});
    out[0] = xv[flat_index];
    return tp.record(std::move(out), {x.id}, "pick", [x, flat_index](Var<T> o) {
        return [x, flat_index, o](Tape<T>& t) {
            if (t.needs_grad(x)) t.grad(x)[flat_index] += t.grad(o)[0];
        };
    });
}

/// [B, X, Y] -> [B, Y, X]; backward is the inverse transpose.
template <class T>
Var<T> transpose_12(Tape<T>& tp, Var<T> x) {
    const auto& xv = tp.val(x);
    require(xv.ndim() == 3, "transpose_12: needs 3 dims");
    const std::int64_t b = xv.dim(0), m = xv.dim(1), n = xv.dim(2);
    Tensor<T> out({b, n, m});
    for (std::int64_t i = 0; i < b; ++i)
        for (std::int64_t r = 0; r < m; ++r)
            for (std::int64_t c = 0; c < n; ++c)
                out[(i * n + c) * m + r] = xv[(i * m + r) * n + c];
    return tp.record(std::move(out), {x.id}, "transpose_12", [x, b, m, n](Var<T> o) {
        return [x, b, m, n, o](Tape<T>& t) {
            if (!t.needs_grad(x)) return;
            const auto& g = t.grad(o);
            auto& gx = t.grad(x);
            for (std::int64_t i = 0; i < b; ++i)
                for (std::int64_t r = 0; r < m; ++r)
                    for (std::int64_t c = 0; c < n; ++c)
                        gx[(i * m + r) * n + c] += g[(i * n + c) * m + r];
        };
    });
}

/// Truncate the trailing axis to the first `len` entries.
template <class T>
Var<T> slice_lastdim(Tape<T>& tp, Var<T> x, std::int64_t len) {
    const auto& xv = tp.val(x);
    const std::int64_t full = xv.shape.back();
    require(len >= 1 && len <= full, "slice_lastdim: length out of range");
    if (len == full) return x;
    const std::int64_t rows = xv.numel() / full;
    Shape oshape = xv.shape;
    oshape.back() = len;
    Tensor<T> out(oshape);
    for (std::int64_t r = 0; r < rows; ++r)
        std::copy_n(xv.data.data() + r * full, len, out.data.data() + r * len);
    return tp.record(std::move(out), {x.id}, "slice_lastdim", [x, rows, full, len](Var<T> o) {
        return [x, rows, full, len, o](Tape<T>& t) {
            if (!t.needs_grad(x)) return;
            const auto& g = t.grad(o);
            auto& gx = t.grad(x);
            for (std::int64_t r = 0; r < rows; ++r)
                for (std::int64_t j = 0; j < len; ++j)
                    gx[r * full + j] += g[r * len + j];
        };
    });
}

}  // namespace seqlab
