#pragma once

#include "seqlab/tape.hpp"

namespace seqlab {

/// Central-difference gradient check of a scalar-valued function of one
/// parameter tensor. f is called as f(tape, theta_var) -> scalar Var and must
/// be deterministic. Returns the max over coordinates of
/// |analytic - numeric| / max(1, |analytic|, |numeric|).
template <class F>
double gradcheck(F&& f, const Tensor<double>& theta, double eps = 1e-5) {
    Tensor<double> analytic;
    {
        Tape<double> tp;
        tp.check_finite = true;
        Var<double> th = tp.input(theta, true);
        Var<double> loss = f(tp, th);
        tp.backward(loss);
        analytic = tp.grad(th);
    }
    double worst = 0.0;
    Tensor<double> probe = theta;
    for (std::int64_t i = 0; i < theta.numel(); ++i) {
        probe[i] = theta[i] + eps;
        double fp, fm;
        {
            Tape<double> tp;
            fp = tp.val(f(tp, tp.input(probe, false)))[0];
        }
        probe[i] = theta[i] - eps;
        {
            Tape<double> tp;
            fm = tp.val(f(tp, tp.input(probe, false)))[0];
        }
        probe[i] = theta[i];
        const double numeric = (fp - fm) / (2.0 * eps);
        const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    return worst;
}

/// Multi-tensor variant: params are perturbed in place, f rebuilds the loss
/// from fresh Vars each call. For large parameter sets a random subset of
/// coordinates per tensor can be checked (0 = all).
template <class F>
double gradcheck_multi(F&& f, std::vector<Tensor<double>*> params, double eps = 1e-5,
                       std::int64_t max_coords_per_tensor = 0, std::uint64_t seed = 0) {
    std::vector<Tensor<double>> analytic;
    {
        Tape<double> tp;
        tp.check_finite = true;
        std::vector<Var<double>> vars;
        vars.reserve(params.size());
        for (auto* p : params) vars.push_back(tp.input(*p, true));
        Var<double> loss = f(tp, vars);
        tp.backward(loss);
        for (auto v : vars) analytic.push_back(tp.grad(v));
    }
    auto eval = [&]() {
        Tape<double> tp;
        std::vector<Var<double>> vars;
        vars.reserve(params.size());
        for (auto* p : params) vars.push_back(tp.input(*p, false));
        return tp.val(f(tp, vars))[0];
    };
    Rng rng(seed);
    double worst = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor<double>& th = *params[pi];
        std::vector<std::int64_t> coords;
        if (max_coords_per_tensor <= 0 || th.numel() <= max_coords_per_tensor) {
            coords.resize(static_cast<std::size_t>(th.numel()));
            for (std::int64_t i = 0; i < th.numel(); ++i) coords[static_cast<std::size_t>(i)] = i;
        } else {
            for (std::int64_t i = 0; i < max_coords_per_tensor; ++i)
                coords.push_back(rng.uniform_int(0, th.numel() - 1));
        }
        for (std::int64_t i : coords) {
            const double orig = th[i];
            th[i] = orig + eps;
            const double fp = eval();
            th[i] = orig - eps;
            const double fm = eval();
            th[i] = orig;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double a = analytic[pi][i];
            const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
            worst = std::max(worst, std::abs(a - numeric) / denom);
        }
    }
    return worst;
}

}  // namespace seqlab
