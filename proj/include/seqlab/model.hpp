#pragma once

#include "seqlab/attention.hpp"
#include "seqlab/tcn.hpp"

namespace seqlab {

enum class ModelVariant { tcnca_simple, tcn_mlp };

inline const char* variant_name(ModelVariant v) {
    return v == ModelVariant::tcnca_simple ? "tcnca_simple" : "tcn_mlp";
}

struct ModelConfig {
    std::int64_t vocab_size = 10;
    std::int64_t embed_dim = 32;
    std::int64_t layers = 2;
    TcnConfig tcn{3, 3, 4, 1};
    ChunkSpec chunk{32, true};
    std::int64_t mlp_expand = 2;
    double dropout = 0.0;
    ModelVariant variant = ModelVariant::tcnca_simple;

    void validate() const {
        require(vocab_size >= 2 && embed_dim >= 1 && layers >= 0 && mlp_expand >= 1,
                "ModelConfig: invalid dimensions");
        tcn.validate();
        chunk.validate();
    }
};

template <class T>
struct LayerParams {
    TcnStack<T> tcn;
    QkGen<T> qk;
    Tensor<T> v_w, v_b;                // value projection of the TCN output
    Tensor<T> attn_out_w, attn_out_b;
    GatedResidual<T> gate;
    Tensor<T> mlp_norm_gamma, mlp_norm_beta;
    Tensor<T> mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

template <class T>
struct ModelParams {
    ModelConfig cfg;
    Tensor<T> embed;  // [vocab, E]
    std::vector<LayerParams<T>> layers;
    Tensor<T> final_norm_gamma, final_norm_beta;
    Tensor<T> head_w, head_b;  // [E, vocab], [vocab]

    static ModelParams init(const ModelConfig& cfg, Rng& rng) {
        cfg.validate();
        ModelParams p;
        p.cfg = cfg;
        const std::int64_t e = cfg.embed_dim, v = cfg.vocab_size;
        const std::int64_t me = e * cfg.mlp_expand;
        p.embed = randn<T>({v, e}, rng, 0.02);
        for (std::int64_t i = 0; i < cfg.layers; ++i) {
            LayerParams<T> lp;
            lp.tcn = TcnStack<T>::init(cfg.tcn, e, rng);
            if (cfg.variant == ModelVariant::tcnca_simple) {
                lp.qk = QkGen<T>::init(e, rng);
                lp.v_w = randn<T>({e, e}, rng, 0.02);
                lp.v_b = zeros<T>({e});
                lp.attn_out_w = randn<T>({e, e}, rng, 0.02);
                lp.attn_out_b = zeros<T>({e});
                lp.gate = GatedResidual<T>::init(e, rng);
            }
            lp.mlp_norm_gamma = full<T>({e}, T(1));
            lp.mlp_norm_beta = zeros<T>({e});
            lp.mlp_w1 = randn<T>({e, me}, rng, 0.02);
            lp.mlp_b1 = zeros<T>({me});
            lp.mlp_w2 = randn<T>({me, e}, rng, 0.02);
            lp.mlp_b2 = zeros<T>({e});
            p.layers.push_back(std::move(lp));
        }
        p.final_norm_gamma = full<T>({e}, T(1));
        p.final_norm_beta = zeros<T>({e});
        p.head_w = randn<T>({e, v}, rng, 0.02);
        p.head_b = zeros<T>({v});
        return p;
    }

    template <class F>
    void visit(F&& f) {
        f("embed", embed);
        for (std::size_t i = 0; i < layers.size(); ++i) {
            auto& lp = layers[i];
            const std::string pre = "layer" + std::to_string(i) + ".";
            lp.tcn.visit([&](const std::string& n, Tensor<T>& t) { f(pre + "tcn." + n, t); });
            if (cfg.variant == ModelVariant::tcnca_simple) {
                lp.qk.visit([&](const std::string& n, Tensor<T>& t) { f(pre + "qk." + n, t); });
                f(pre + "v_w", lp.v_w);
                f(pre + "v_b", lp.v_b);
                f(pre + "attn_out_w", lp.attn_out_w);
                f(pre + "attn_out_b", lp.attn_out_b);
                lp.gate.visit([&](const std::string& n, Tensor<T>& t) { f(pre + n, t); });
            }
            f(pre + "mlp_norm_gamma", lp.mlp_norm_gamma);
            f(pre + "mlp_norm_beta", lp.mlp_norm_beta);
            f(pre + "mlp_w1", lp.mlp_w1);
            f(pre + "mlp_b1", lp.mlp_b1);
            f(pre + "mlp_w2", lp.mlp_w2);
            f(pre + "mlp_b2", lp.mlp_b2);
        }
        f("final_norm_gamma", final_norm_gamma);
        f("final_norm_beta", final_norm_beta);
        f("head_w", head_w);
        f("head_b", head_b);
    }

    std::int64_t count_params() {
        std::int64_t n = 0;
        visit([&](const std::string&, Tensor<T>& t) { n += t.numel(); });
        return n;
    }
};

template <class T>
struct LayerVars {
    TcnStackVars<T> tcn;
    QkGenVars<T> qk;
    Var<T> v_w, v_b, attn_out_w, attn_out_b;
    GatedResidualVars<T> gate;
    Var<T> mlp_norm_gamma, mlp_norm_beta, mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

template <class T>
struct ModelVars {
    ModelConfig cfg;
    Var<T> embed;
    std::vector<LayerVars<T>> layers;
    Var<T> final_norm_gamma, final_norm_beta, head_w, head_b;

    static ModelVars put(Tape<T>& tp, ModelParams<T>& p, bool requires_grad) {
        ModelVars v;
        v.cfg = p.cfg;
        v.embed = tp.input(p.embed, requires_grad);
        for (auto& lp : p.layers) {
            LayerVars<T> lv;
            lv.tcn = TcnStackVars<T>::put(tp, lp.tcn, requires_grad);
            if (p.cfg.variant == ModelVariant::tcnca_simple) {
                lv.qk = QkGenVars<T>::put(tp, lp.qk, requires_grad);
                lv.v_w = tp.input(lp.v_w, requires_grad);
                lv.v_b = tp.input(lp.v_b, requires_grad);
                lv.attn_out_w = tp.input(lp.attn_out_w, requires_grad);
                lv.attn_out_b = tp.input(lp.attn_out_b, requires_grad);
                lv.gate = GatedResidualVars<T>::put(tp, lp.gate, requires_grad);
            }
            lv.mlp_norm_gamma = tp.input(lp.mlp_norm_gamma, requires_grad);
            lv.mlp_norm_beta = tp.input(lp.mlp_norm_beta, requires_grad);
            lv.mlp_w1 = tp.input(lp.mlp_w1, requires_grad);
            lv.mlp_b1 = tp.input(lp.mlp_b1, requires_grad);
            lv.mlp_w2 = tp.input(lp.mlp_w2, requires_grad);
            lv.mlp_b2 = tp.input(lp.mlp_b2, requires_grad);
            v.layers.push_back(std::move(lv));
        }
        v.final_norm_gamma = tp.input(p.final_norm_gamma, requires_grad);
        v.final_norm_beta = tp.input(p.final_norm_beta, requires_grad);
        v.head_w = tp.input(p.head_w, requires_grad);
        v.head_b = tp.input(p.head_b, requires_grad);
        return v;
    }

    /// Enumerates every Var slot in the same order ModelParams::visit walks
    /// the tensors.
    template <class F>
    void visit_vars(F&& f) {
        f(embed);
        for (auto& lv : layers) {
            for (auto& blk : lv.tcn.blocks) {
                for (auto& k : blk.kernels) f(k);
                if (lv.tcn.channel_mix_enabled) {
                    f(blk.mix_w);
                    f(blk.mix_b);
                }
                if (lv.tcn.norm_enabled) {
                    f(blk.norm_gamma);
                    f(blk.norm_beta);
                }
            }
            if (cfg.variant == ModelVariant::tcnca_simple) {
                f(lv.qk.q_scale);
                f(lv.qk.q_bias);
                f(lv.qk.k_scale);
                f(lv.qk.k_bias);
                f(lv.v_w);
                f(lv.v_b);
                f(lv.attn_out_w);
                f(lv.attn_out_b);
                f(lv.gate.w);
                f(lv.gate.b);
            }
            f(lv.mlp_norm_gamma);
            f(lv.mlp_norm_beta);
            f(lv.mlp_w1);
            f(lv.mlp_b1);
            f(lv.mlp_w2);
            f(lv.mlp_b2);
        }
        f(final_norm_gamma);
        f(final_norm_beta);
        f(head_w);
        f(head_b);
    }

    /// Rebuilds the structure around a flat Var list in visit order; the
    /// params instance supplies only the shape of the structure.
    static ModelVars from_list(const ModelParams<T>& p, const std::vector<Var<T>>& vars) {
        ModelVars v;
        v.cfg = p.cfg;
        for (const auto& lp : p.layers) {
            LayerVars<T> lv;
            lv.tcn.cfg = lp.tcn.cfg;
            lv.tcn.channel_mix_enabled = lp.tcn.channel_mix_enabled;
            lv.tcn.norm_enabled = lp.tcn.norm_enabled;
            for (const auto& blk : lp.tcn.blocks) {
                TcnBlockVars<T> bv;
                bv.kernels.resize(blk.kernels.size());
                lv.tcn.blocks.push_back(std::move(bv));
            }
            v.layers.push_back(std::move(lv));
        }
        std::size_t i = 0;
        v.visit_vars([&](Var<T>& slot) {
            require(i < vars.size(), "ModelVars::from_list: too few vars");
            slot = vars[i++];
        });
        require(i == vars.size(), "ModelVars::from_list: var count mismatch");
        return v;
    }
};

/// Embed -> N x [TCN -> chunked attention -> gated residual -> MLP] -> norm ->
/// head. The tcn_mlp variant replaces the attention sub-block with a plain
/// residual add of the TCN output.
template <class T>
Var<T> model_forward(Tape<T>& tp, const ModelVars<T>& m,
                     const std::vector<std::int64_t>& tokens, std::int64_t batch,
                     std::int64_t len, bool train, Rng& rng) {
    const ModelConfig& cfg = m.cfg;
    Var<T> x = embedding(tp, m.embed, tokens, batch, len);  // [B, L, E]
    for (const auto& lv : m.layers) {
        Var<T> xt = transpose_12(tp, x);  // [B, E, L]
        Var<T> zt = tcn_forward(tp, xt, lv.tcn);
        Var<T> z = transpose_12(tp, zt);  // [B, L, E]
        if (cfg.variant == ModelVariant::tcnca_simple) {
            Var<T> vproj = add_rowvec(tp, linear_lastdim(tp, z, lv.v_w), lv.v_b);
            Var<T> attn = chunked_attention(tp, z, vproj, lv.qk, cfg.chunk);
            attn = add_rowvec(tp, linear_lastdim(tp, attn, lv.attn_out_w), lv.attn_out_b);
            attn = dropout(tp, attn, cfg.dropout, train, rng);
            x = gated_residual(tp, attn, x, lv.gate, z);
        } else {
            x = add(tp, x, z);
        }
        Var<T> h = layer_norm(tp, x, lv.mlp_norm_gamma, lv.mlp_norm_beta);
        h = add_rowvec(tp, linear_lastdim(tp, h, lv.mlp_w1), lv.mlp_b1);
        h = silu(tp, h);
        h = add_rowvec(tp, linear_lastdim(tp, h, lv.mlp_w2), lv.mlp_b2);
        h = dropout(tp, h, cfg.dropout, train, rng);
        x = add(tp, x, h);
    }
    x = layer_norm(tp, x, m.final_norm_gamma, m.final_norm_beta);
    return add_rowvec(tp, linear_lastdim(tp, x, m.head_w), m.head_b);
}

}  // namespace seqlab
