#pragma once

#include "seqlab/conv.hpp"

namespace seqlab {

/// TCN construction hyperparameters: kernel size K, dilation factor f, depth D
/// (residual blocks), and B dilated convs of equal dilation per block.
struct TcnConfig {
    std::int64_t kernel_size = 3;
    std::int64_t dilation_factor = 3;
    std::int64_t depth = 2;
    std::int64_t block_convs = 1;

    void validate() const {
        require(kernel_size >= 1 && dilation_factor >= 1 && depth >= 1 && block_convs >= 1,
                "TcnConfig: all hyperparameters must be >= 1");
    }
};

/// Closed-form receptive field: 1 + B*(K-1)*(f^D - 1)/(f - 1), with the f=1
/// limit 1 + B*(K-1)*D.
inline std::int64_t receptive_field(const TcnConfig& cfg) {
    cfg.validate();
    if (cfg.dilation_factor == 1)
        return 1 + cfg.block_convs * (cfg.kernel_size - 1) * cfg.depth;
    std::int64_t geom = 0;  // (f^D - 1)/(f - 1) = 1 + f + ... + f^{D-1}
    std::int64_t p = 1;
    for (std::int64_t i = 0; i < cfg.depth; ++i) {
        geom += p;
        p *= cfg.dilation_factor;
    }
    return 1 + cfg.block_convs * (cfg.kernel_size - 1) * geom;
}

/// Smallest dilation factor whose receptive field covers `target` positions.
inline std::int64_t min_dilation_factor(std::int64_t kernel_size, std::int64_t depth,
                                        std::int64_t block_convs, std::int64_t target) {
    for (std::int64_t f = 1;; ++f) {
        TcnConfig cfg{kernel_size, f, depth, block_convs};
        if (receptive_field(cfg) >= target) return f;
    }
}

// ---------------------------------------------------------------------------
// feature-axis ops on [B, C, L] layout
// ---------------------------------------------------------------------------

/// Layer normalization over the channel axis at each time step.
template <class T>
Var<T> layer_norm_channels(Tape<T>& tp, Var<T> x, Var<T> gamma, Var<T> beta,
                           double eps = 1e-5) {
    Var<T> xt = transpose_12(tp, x);  // [B, L, C]
    Var<T> yn = layer_norm(tp, xt, gamma, beta, eps);
    return transpose_12(tp, yn);
}

/// Pointwise channel mix: y[b,:,t] = W x[b,:,t] + bias.
template <class T>
Var<T> channel_mix(Tape<T>& tp, Var<T> x, Var<T> w, Var<T> bias) {
    const auto& xv = tp.val(x);
    const auto& wv = tp.val(w);
    const auto& bv = tp.val(bias);
    require(xv.ndim() == 3, "channel_mix: x must be [B, E, L]");
    const std::int64_t b = xv.dim(0), e = xv.dim(1), l = xv.dim(2);
    require(wv.ndim() == 2 && wv.dim(0) == e && wv.dim(1) == e, "channel_mix: W must be [E, E]");
    require(bv.ndim() == 1 && bv.dim(0) == e, "channel_mix: bias must be [E]");
    Tensor<T> out({b, e, l});
    CMatMap<T> W(wv.data.data(), e, e);
    for (std::int64_t bi = 0; bi < b; ++bi) {
        CMatMap<T> X(xv.data.data() + bi * e * l, e, l);
        MatMap<T> Y(out.data.data() + bi * e * l, e, l);
        Y.noalias() = W * X;
        for (std::int64_t r = 0; r < e; ++r) Y.row(r).array() += bv[r];
    }
    return tp.record(std::move(out), {x.id, w.id, bias.id}, "channel_mix",
                     [x, w, bias, b, e, l](Var<T> o) {
        return [x, w, bias, b, e, l, o](Tape<T>& t) {
            const auto& g = t.grad(o);
            CMatMap<T> W(t.val(w).data.data(), e, e);
            for (std::int64_t bi = 0; bi < b; ++bi) {
                CMatMap<T> G(g.data.data() + bi * e * l, e, l);
                CMatMap<T> X(t.val(x).data.data() + bi * e * l, e, l);
                if (t.needs_grad(x)) {
                    MatMap<T> GX(t.grad(x).data.data() + bi * e * l, e, l);
                    GX.noalias() += W.transpose() * G;
                }
                if (t.needs_grad(w)) {
                    MatMap<T> GW(t.grad(w).data.data(), e, e);
                    GW.noalias() += G * X.transpose();
                }
                if (t.needs_grad(bias)) {
                    auto& gb = t.grad(bias);
                    for (std::int64_t r = 0; r < e; ++r) gb[r] += G.row(r).sum();
                }
            }
        };
    });
}

// ---------------------------------------------------------------------------
// residual blocks and the full stack
// ---------------------------------------------------------------------------

template <class T>
struct TcnBlockParams {
    std::vector<Tensor<T>> kernels;  // block_convs kernels of shape [E, K]
    Tensor<T> mix_w, mix_b;          // [E, E], [E]; absent when channel_mix off
    Tensor<T> norm_gamma, norm_beta; // [E]
};

/// One independent kernel set per embedding dimension, D*B kernels in total.
template <class T>
struct TcnStack {
    TcnConfig cfg;
    std::int64_t channels = 0;
    bool channel_mix_enabled = true;
    bool norm_enabled = true;

    std::vector<TcnBlockParams<T>> blocks;

    static TcnStack init(const TcnConfig& cfg, std::int64_t channels, Rng& rng,
                         bool channel_mix_enabled = true, bool norm_enabled = true) {
        cfg.validate();
        TcnStack s;
        s.cfg = cfg;
        s.channels = channels;
        s.channel_mix_enabled = channel_mix_enabled;
        s.norm_enabled = norm_enabled;
        const double kstd = 1.0 / std::sqrt(static_cast<double>(cfg.kernel_size));
        for (std::int64_t d = 0; d < cfg.depth; ++d) {
            TcnBlockParams<T> blk;
            for (std::int64_t bc = 0; bc < cfg.block_convs; ++bc)
                blk.kernels.push_back(randn<T>({channels, cfg.kernel_size}, rng, kstd));
            if (channel_mix_enabled) {
                blk.mix_w = randn<T>({channels, channels}, rng, 0.02);
                for (std::int64_t i = 0; i < channels; ++i)
                    blk.mix_w[i * channels + i] += T(1);  // identity + noise
                blk.mix_b = zeros<T>({channels});
            }
            blk.norm_gamma = full<T>({channels}, T(1));
            blk.norm_beta = zeros<T>({channels});
            s.blocks.push_back(std::move(blk));
        }
        return s;
    }

    std::int64_t count_params() const {
        std::int64_t n = 0;
        for (const auto& blk : blocks) {
            for (const auto& k : blk.kernels) n += k.numel();
            n += blk.mix_w.numel() + blk.mix_b.numel();
            if (norm_enabled) n += blk.norm_gamma.numel() + blk.norm_beta.numel();
        }
        return n;
    }

    template <class F>
    void visit(F&& f) {
        for (std::size_t d = 0; d < blocks.size(); ++d) {
            auto& blk = blocks[d];
            const std::string p = "block" + std::to_string(d) + ".";
            for (std::size_t bc = 0; bc < blk.kernels.size(); ++bc)
                f(p + "kernel" + std::to_string(bc), blk.kernels[bc]);
            if (channel_mix_enabled) {
                f(p + "mix_w", blk.mix_w);
                f(p + "mix_b", blk.mix_b);
            }
            if (norm_enabled) {
                f(p + "norm_gamma", blk.norm_gamma);
                f(p + "norm_beta", blk.norm_beta);
            }
        }
    }
};

template <class T>
struct TcnBlockVars {
    std::vector<Var<T>> kernels;
    Var<T> mix_w, mix_b, norm_gamma, norm_beta;
};

template <class T>
struct TcnStackVars {
    TcnConfig cfg;
    bool channel_mix_enabled = true;
    bool norm_enabled = true;
    std::vector<TcnBlockVars<T>> blocks;

    static TcnStackVars put(Tape<T>& tp, TcnStack<T>& s, bool requires_grad) {
        TcnStackVars v;
        v.cfg = s.cfg;
        v.channel_mix_enabled = s.channel_mix_enabled;
        v.norm_enabled = s.norm_enabled;
        for (auto& blk : s.blocks) {
            TcnBlockVars<T> bv;
            for (auto& k : blk.kernels) bv.kernels.push_back(tp.input(k, requires_grad));
            if (s.channel_mix_enabled) {
                bv.mix_w = tp.input(blk.mix_w, requires_grad);
                bv.mix_b = tp.input(blk.mix_b, requires_grad);
            }
            if (s.norm_enabled) {
                bv.norm_gamma = tp.input(blk.norm_gamma, requires_grad);
                bv.norm_beta = tp.input(blk.norm_beta, requires_grad);
            }
            v.blocks.push_back(std::move(bv));
        }
        return v;
    }
};

/// y = x + SiLU(mix(conv_B(...conv_1(norm(x))))), all convs at one dilation.
template <class T>
Var<T> tcn_block(Tape<T>& tp, Var<T> x, const TcnBlockVars<T>& blk, std::int64_t dilation,
                 bool channel_mix_enabled, bool norm_enabled = true) {
    Var<T> z = norm_enabled ? layer_norm_channels(tp, x, blk.norm_gamma, blk.norm_beta) : x;
    for (const auto& k : blk.kernels) z = conv1d_dilated(tp, z, k, dilation, true);
    if (channel_mix_enabled) z = channel_mix(tp, z, blk.mix_w, blk.mix_b);
    z = silu(tp, z);
    return add(tp, x, z);
}

/// Composition of D residual blocks with dilations f^0 ... f^{D-1}.
template <class T>
Var<T> tcn_forward(Tape<T>& tp, Var<T> x, const TcnStackVars<T>& stack) {
    std::int64_t dilation = 1;
    for (const auto& blk : stack.blocks) {
        x = tcn_block(tp, x, blk, dilation, stack.channel_mix_enabled, stack.norm_enabled);
        dilation *= stack.cfg.dilation_factor;
    }
    return x;
}

}  // namespace seqlab
