#pragma once

#include "seqlab/ops.hpp"

namespace seqlab {

/// Block-diagonal attention pattern: positions interact only inside fixed-size
/// non-overlapping windows, optionally restricted to the causal half.
struct ChunkSpec {
    std::int64_t chunk = 1;
    bool causal = true;

    void validate() const { require(chunk >= 1, "ChunkSpec: chunk must be positive"); }
};

/// Diagonal (per-dimension) query/key generation from a shared input.
template <class T>
struct QkGen {
    Tensor<T> q_scale, q_bias, k_scale, k_bias;  // [E] each

    static QkGen init(std::int64_t e, Rng& rng) {
        QkGen q;
        q.q_scale = randn<T>({e}, rng, 0.02);
        q.k_scale = randn<T>({e}, rng, 0.02);
        for (std::int64_t i = 0; i < e; ++i) {
            q.q_scale[i] += T(1);
            q.k_scale[i] += T(1);
        }
        q.q_bias = zeros<T>({e});
        q.k_bias = zeros<T>({e});
        return q;
    }

    template <class F>
    void visit(F&& f) {
        f("q_scale", q_scale);
        f("q_bias", q_bias);
        f("k_scale", k_scale);
        f("k_bias", k_bias);
    }
};

template <class T>
struct QkGenVars {
    Var<T> q_scale, q_bias, k_scale, k_bias;

    static QkGenVars put(Tape<T>& tp, const QkGen<T>& p, bool requires_grad) {
        return QkGenVars{tp.input(p.q_scale, requires_grad), tp.input(p.q_bias, requires_grad),
                         tp.input(p.k_scale, requires_grad), tp.input(p.k_bias, requires_grad)};
    }
};

// ---------------------------------------------------------------------------
// chunk partition (plain tensor form; the attention core fuses its own)
// ---------------------------------------------------------------------------

/// Reshapes [B, L, E] into [B*ceil(L/c), c, E], right-padding the last chunk
/// with zeros. mask_out marks valid rows of the result.
template <class T>
Tensor<T> chunk_partition(const Tensor<T>& x, std::int64_t c,
                          std::vector<std::uint8_t>* mask_out = nullptr) {
    require(c >= 1, "chunk_partition: chunk must be positive");
    require(x.ndim() == 3, "chunk_partition: x must be [B, L, E]");
    const std::int64_t b = x.dim(0), l = x.dim(1), e = x.dim(2);
    const std::int64_t nc = (l + c - 1) / c;
    Tensor<T> out({b * nc, c, e});
    if (mask_out) mask_out->assign(static_cast<std::size_t>(b * nc * c), 0);
    for (std::int64_t bi = 0; bi < b; ++bi) {
        for (std::int64_t t = 0; t < l; ++t) {
            const std::int64_t row = bi * nc + t / c;
            std::copy_n(x.data.data() + (bi * l + t) * e, e,
                        out.data.data() + (row * c + t % c) * e);
            if (mask_out) (*mask_out)[static_cast<std::size_t>(row * c + t % c)] = 1;
        }
    }
    return out;
}

/// Exact inverse of chunk_partition for the valid region.
template <class T>
Tensor<T> chunk_unpartition(const Tensor<T>& chunks, std::int64_t batch, std::int64_t l) {
    require(chunks.ndim() == 3, "chunk_unpartition: input must be [B*nc, c, E]");
    const std::int64_t c = chunks.dim(1), e = chunks.dim(2);
    const std::int64_t nc = (l + c - 1) / c;
    require(chunks.dim(0) == batch * nc, "chunk_unpartition: row count mismatch");
    Tensor<T> out({batch, l, e});
    for (std::int64_t bi = 0; bi < batch; ++bi)
        for (std::int64_t t = 0; t < l; ++t)
            std::copy_n(chunks.data.data() + ((bi * nc + t / c) * c + t % c) * e, e,
                        out.data.data() + (bi * l + t) * e);
    return out;
}

/// Exact FLOP count model for one chunked-attention call; linear in L at
/// fixed chunk size.
inline std::int64_t chunked_attention_flops(std::int64_t l, std::int64_t c, std::int64_t e) {
    const std::int64_t nc = (l + c - 1) / c;
    // per chunk: QK^T and AV are 2*c*c*e MACs each; softmax ~ 3*c*c
    return nc * (2 * c * c * e * 2 + 3 * c * c);
}

// ---------------------------------------------------------------------------
// fused block-diagonal attention core
// ---------------------------------------------------------------------------

/// softmax(Q K^T / sqrt(E) + mask) V within each chunk. Q, K, V are [B, L, E];
/// padded slots of a partial trailing chunk are masked out and produce zeros.
template <class T>
Var<T> chunked_attention_core(Tape<T>& tp, Var<T> q, Var<T> k, Var<T> v,
                              const ChunkSpec& spec) {
    spec.validate();
    const auto& qv = tp.val(q);
    const auto& kv = tp.val(k);
    const auto& vv = tp.val(v);
    require(qv.ndim() == 3 && qv.same_shape(kv) && qv.same_shape(vv),
            "chunked_attention: Q, K, V must share shape [B, L, E]");
    const std::int64_t b = qv.dim(0), l = qv.dim(1), e = qv.dim(2);
    const std::int64_t c = std::min(spec.chunk, l);
    const std::int64_t nc = (l + c - 1) / c;
    const T inv_sqrt_e = static_cast<T>(1.0 / std::sqrt(static_cast<double>(e)));
    const bool save = tp.any_requires_grad({q, k, v});

    Tensor<T> out({b, l, e});
    Tensor<T> probs;  // [b, nc, c, c], rows of padded slots are all zero
    if (save) probs = Tensor<T>({b, nc, c, c});
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Mat s(c, c);
    for (std::int64_t bi = 0; bi < b; ++bi) {
        for (std::int64_t ch = 0; ch < nc; ++ch) {
            const std::int64_t t0 = ch * c;
            const std::int64_t valid = std::min(c, l - t0);
            CMatMap<T> Q(qv.data.data() + (bi * l + t0) * e, valid, e);
            CMatMap<T> K(kv.data.data() + (bi * l + t0) * e, valid, e);
            CMatMap<T> V(vv.data.data() + (bi * l + t0) * e, valid, e);
            s.topLeftCorner(valid, valid).noalias() = Q * K.transpose() * inv_sqrt_e;
            // softmax rows over the valid (and, if causal, past) entries
            for (std::int64_t i = 0; i < valid; ++i) {
                const std::int64_t jmax = spec.causal ? i : valid - 1;
                T mx = neg_inf<T>();
                for (std::int64_t j = 0; j <= jmax; ++j) mx = std::max(mx, s(i, j));
                T sum = T(0);
                for (std::int64_t j = 0; j <= jmax; ++j) {
                    s(i, j) = std::exp(s(i, j) - mx);
                    sum += s(i, j);
                }
                for (std::int64_t j = 0; j <= jmax; ++j) s(i, j) /= sum;
                for (std::int64_t j = jmax + 1; j < c; ++j) s(i, j) = T(0);
            }
            MatMap<T> O(out.data.data() + (bi * l + t0) * e, valid, e);
            O.noalias() = s.topLeftCorner(valid, valid) * V;
            if (save) {
                T* pr = probs.data.data() + ((bi * nc + ch) * c) * c;
                for (std::int64_t i = 0; i < valid; ++i)
                    for (std::int64_t j = 0; j < c; ++j) pr[i * c + j] = s(i, j);
                for (std::int64_t i = valid; i < c; ++i)
                    std::fill_n(pr + i * c, c, T(0));
            }
        }
    }
    return tp.record(std::move(out), {q.id, k.id, v.id}, "chunked_attention",
                     [q, k, v, b, l, e, c, nc, inv_sqrt_e, probs = std::move(probs)](Var<T> o) {
        return [q, k, v, b, l, e, c, nc, inv_sqrt_e, probs, o](Tape<T>& t) {
            const auto& g = t.grad(o);
            const auto& qv = t.val(q);
            const auto& kv = t.val(k);
            const auto& vv = t.val(v);
            using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
            for (std::int64_t bi = 0; bi < b; ++bi) {
                for (std::int64_t ch = 0; ch < nc; ++ch) {
                    const std::int64_t t0 = ch * c;
                    const std::int64_t valid = std::min(c, l - t0);
                    CMatMap<T> G(g.data.data() + (bi * l + t0) * e, valid, e);
                    CMatMap<T> Q(qv.data.data() + (bi * l + t0) * e, valid, e);
                    CMatMap<T> K(kv.data.data() + (bi * l + t0) * e, valid, e);
                    CMatMap<T> V(vv.data.data() + (bi * l + t0) * e, valid, e);
                    CMatMap<T> A(probs.data.data() + ((bi * nc + ch) * c) * c, valid, c);
                    auto Av = A.leftCols(valid);
                    if (t.needs_grad(v)) {
                        MatMap<T> GV(t.grad(v).data.data() + (bi * l + t0) * e, valid, e);
                        GV.noalias() += Av.transpose() * G;
                    }
                    if (t.needs_grad(q) || t.needs_grad(k)) {
                        Mat dA = G * V.transpose();           // valid x valid
                        Mat dS(valid, valid);
                        for (std::int64_t i = 0; i < valid; ++i) {
                            T dot = T(0);
                            for (std::int64_t j = 0; j < valid; ++j)
                                dot += dA(i, j) * Av(i, j);
                            for (std::int64_t j = 0; j < valid; ++j)
                                dS(i, j) = Av(i, j) * (dA(i, j) - dot);
                        }
                        if (t.needs_grad(q)) {
                            MatMap<T> GQ(t.grad(q).data.data() + (bi * l + t0) * e, valid, e);
                            GQ.noalias() += dS * K * inv_sqrt_e;
                        }
                        if (t.needs_grad(k)) {
                            MatMap<T> GK(t.grad(k).data.data() + (bi * l + t0) * e, valid, e);
                            GK.noalias() += dS.transpose() * Q * inv_sqrt_e;
                        }
                    }
                }
            }
        };
    });
}

/// Q/K from the diagonal generator, then the block-diagonal core.
template <class T>
Var<T> chunked_attention(Tape<T>& tp, Var<T> z, Var<T> v, const QkGenVars<T>& qk,
                         const ChunkSpec& spec) {
    Var<T> q = add_rowvec(tp, mul_rowvec(tp, z, qk.q_scale), qk.q_bias);
    Var<T> k = add_rowvec(tp, mul_rowvec(tp, z, qk.k_scale), qk.k_bias);
    return chunked_attention_core(tp, q, k, v, spec);
}

// ---------------------------------------------------------------------------
// highway-style gated residual
// ---------------------------------------------------------------------------

template <class T>
struct GatedResidual {
    Tensor<T> w;  // [E, E]
    Tensor<T> b;  // [E]

    static GatedResidual init(std::int64_t e, Rng& rng) {
        return GatedResidual{randn<T>({e, e}, rng, 0.02), zeros<T>({e})};
    }

    template <class F>
    void visit(F&& f) {
        f("gate_w", w);
        f("gate_b", b);
    }
};

template <class T>
struct GatedResidualVars {
    Var<T> w, b;

    static GatedResidualVars put(Tape<T>& tp, const GatedResidual<T>& p, bool requires_grad) {
        return GatedResidualVars{tp.input(p.w, requires_grad), tp.input(p.b, requires_grad)};
    }
};

/// g = sigmoid(W z + b); out = g (.) candidate + (1 - g) (.) carry.
template <class T>
Var<T> gated_residual(Tape<T>& tp, Var<T> candidate, Var<T> carry,
                      const GatedResidualVars<T>& gr, Var<T> z) {
    require(tp.val(candidate).same_shape(tp.val(carry)), "gated_residual: shape mismatch");
    Var<T> g = sigmoid(tp, add_rowvec(tp, linear_lastdim(tp, z, gr.w), gr.b));
    Var<T> kept = mul(tp, g, candidate);
    Var<T> passed = mul(tp, one_minus(tp, g), carry);
    return add(tp, kept, passed);
}

}  // namespace seqlab
