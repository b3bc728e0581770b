#pragma once

#include "seqlab/tensor.hpp"

namespace seqlab {

/// Adaptive moment estimation over a flat list of parameter tensors.
template <class T>
class Adam {
public:
    Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(std::vector<Tensor<T>*>& params, const std::vector<const Tensor<T>*>& grads,
              double lr_scale = 1.0) {
        require(params.size() == grads.size(), "adam: param/grad count mismatch");
        if (m_.empty()) {
            for (auto* p : params) {
                m_.push_back(Tensor<double>(p->shape));
                v_.push_back(Tensor<double>(p->shape));
            }
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        const double lr = lr_ * lr_scale;
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor<T>& p = *params[i];
            const Tensor<T>& g = *grads[i];
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::int64_t j = 0; j < p.numel(); ++j) {
                const double gj = static_cast<double>(g[j]);
                m[j] = beta1_ * m[j] + (1.0 - beta1_) * gj;
                v[j] = beta2_ * v[j] + (1.0 - beta2_) * gj * gj;
                p[j] -= static_cast<T>(lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_));
            }
        }
    }

private:
    double lr_, beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
    std::vector<Tensor<double>> m_, v_;
};

/// Linear warmup over the first fraction of total steps, then constant.
inline double warmup_scale(std::int64_t step, std::int64_t total_steps, double frac = 0.1) {
    const auto warm = static_cast<std::int64_t>(frac * static_cast<double>(total_steps));
    if (warm <= 0 || step >= warm) return 1.0;
    return static_cast<double>(step + 1) / static_cast<double>(warm);
}

/// Linear warmup, then cosine decay from the peak down to floor * peak.
inline double warmup_cosine_scale(std::int64_t step, std::int64_t total_steps,
                                  double warmup_frac = 0.1, double floor = 0.05) {
    const auto warm = static_cast<std::int64_t>(warmup_frac * static_cast<double>(total_steps));
    if (warm > 0 && step < warm) return static_cast<double>(step + 1) / static_cast<double>(warm);
    if (total_steps <= warm) return 1.0;
    const double prog = std::min(
        1.0, static_cast<double>(step - warm) / static_cast<double>(total_steps - warm));
    constexpr double pi = 3.14159265358979323846;
    return floor + (1.0 - floor) * 0.5 * (1.0 + std::cos(pi * prog));
}

}  // namespace seqlab
