#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "seqlab/ema.hpp"
#include "seqlab/gradcheck.hpp"

using namespace seqlab;

namespace {

constexpr double kRawOne = 1e3;  // sigmoid(1e3) == 1.0 exactly in double

// scalar EMA with explicit alpha/delta and beta = eta = 1
EmaParams<double> scalar_params(double raw_alpha, double raw_delta) {
    EmaParams<double> p;
    p.h = 1;
    p.n = 1;
    p.raw_alpha = full<double>({1, 1}, raw_alpha);
    p.raw_delta = full<double>({1, 1}, raw_delta);
    p.beta = full<double>({1, 1}, 1.0);
    p.eta = full<double>({1, 1}, 1.0);
    return p;
}

EmaParams<double> random_params(std::int64_t h, std::int64_t n, Rng& rng) {
    EmaParams<double> p;
    p.h = h;
    p.n = n;
    p.raw_alpha = rand_uniform<double>({h, n}, rng, -3.0, 3.0);
    p.raw_delta = rand_uniform<double>({h, n}, rng, -3.0, 3.0);
    p.beta = randn<double>({h, n}, rng, 1.0);
    p.eta = randn<double>({h, n}, rng, 1.0);
    return p;
}

}  // namespace

TEST_CASE("scalar recurrence limits") {
    Tape<double> tp;
    auto x = tp.input(from_values<double>({1, 1, 3}, {1, 1, 1}));
    // alpha = delta = 1: no carry-over, y_t = x_t
    {
        auto p = scalar_params(kRawOne, kRawOne);  // alpha=1, delta=1
        auto pv = EmaVars<double>::put(tp, p, false);
        auto y = ema_recurrent(tp, x, pv);
        for (double v : tp.val(y).data) CHECK(v == doctest::Approx(1.0));
    }
    // alpha = 0: y identically zero from zero initial state
    {
        auto p = scalar_params(-kRawOne, 0.0);
        auto pv = EmaVars<double>::put(tp, p, false);
        auto y = ema_recurrent(tp, x, pv);
        for (double v : tp.val(y).data) CHECK(v == 0.0);
    }
    // alpha = 0.5, delta = 1, x = [1,1,1] -> [0.5, 0.75, 0.875]
    {
        auto p = scalar_params(0.0, kRawOne);
        auto pv = EmaVars<double>::put(tp, p, false);
        auto y = ema_recurrent(tp, x, pv);
        CHECK(tp.val(y)[0] == doctest::Approx(0.5));
        CHECK(tp.val(y)[1] == doctest::Approx(0.75));
        CHECK(tp.val(y)[2] == doctest::Approx(0.875));
    }
}

TEST_CASE("kernel closed form") {
    Tape<double> tp;
    // alpha=delta=1 -> geometric ratio 0 -> delta kernel
    {
        auto p = scalar_params(kRawOne, kRawOne);
        auto pv = EmaVars<double>::put(tp, p, false);
        auto k = ema_kernel(tp, pv, 5);
        CHECK(tp.val(k)[0] == doctest::Approx(1.0));
        for (std::int64_t t = 1; t < 5; ++t) CHECK(tp.val(k)[t] == doctest::Approx(0.0));
    }
    // alpha=0.5, delta=1 -> k = [0.5, 0.25, 0.125, ...]
    {
        auto p = scalar_params(0.0, kRawOne);
        auto pv = EmaVars<double>::put(tp, p, false);
        auto k = ema_kernel(tp, pv, 6);
        for (std::int64_t t = 0; t < 6; ++t)
            CHECK(tp.val(k)[t] == doctest::Approx(0.5 * std::pow(0.5, t)).epsilon(1e-12));
    }
}

TEST_CASE("kernel magnitude is monotone non-increasing for n=1") {
    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        auto p = random_params(1, 1, rng);
        Tape<double> tp;
        auto pv = EmaVars<double>::put(tp, p, false);
        auto k = ema_kernel(tp, pv, 128);
        for (std::int64_t t = 1; t < 128; ++t)
            CHECK(std::abs(tp.val(k)[t]) <= std::abs(tp.val(k)[t - 1]) + 1e-15);
    }
}

TEST_CASE("three-way equivalence on random draws") {
    Rng rng(101);
    for (std::int64_t l : {1, 16, 256}) {
        for (int trial = 0; trial < 10; ++trial) {
            auto p = random_params(2, 4, rng);
            auto x = randn<double>({2, 4, l}, rng);
            Tape<double> tp;
            auto pv = EmaVars<double>::put(tp, p, false);
            auto xv = tp.input(x);
            auto yr = ema_recurrent(tp, xv, pv);
            auto yf = ema_fft(tp, xv, pv);
            auto kmax = ema_kernel(tp, pv, 2 * l);
            auto yp = ema_fft_pregen(tp, xv, kmax);
            CHECK(max_abs_diff(tp.val(yr), tp.val(yf)) < 1e-10);
            CHECK(max_abs_diff(tp.val(yf), tp.val(yp)) < 1e-12);
        }
    }
}

TEST_CASE("pregen with Lmax == L is bitwise identical to ema_fft") {
    Rng rng(55);
    auto p = random_params(2, 3, rng);
    auto x = randn<double>({1, 2, 64}, rng);
    Tape<double> tp;
    auto pv = EmaVars<double>::put(tp, p, false);
    auto xv = tp.input(x);
    auto yf = ema_fft(tp, xv, pv);
    auto stored = ema_kernel(tp, pv, 64);
    auto yp = ema_fft_pregen(tp, xv, stored);
    CHECK(tp.val(yf).data == tp.val(yp).data);
}

TEST_CASE("pregen rejects L > Lmax") {
    Rng rng(56);
    auto p = random_params(1, 2, rng);
    auto x = randn<double>({1, 1, 32}, rng);
    Tape<double> tp;
    auto pv = EmaVars<double>::put(tp, p, false);
    auto xv = tp.input(x);
    auto stored = ema_kernel(tp, pv, 16);
    CHECK_THROWS_AS(ema_fft_pregen(tp, xv, stored), std::invalid_argument);
}

TEST_CASE("single-step and impulse identities") {
    Rng rng(57);
    auto p = random_params(1, 3, rng);
    Tape<double> tp;
    auto pv = EmaVars<double>::put(tp, p, false);
    // L=1: y_0 = sum_i eta * alpha * beta * x_0
    {
        auto x = randn<double>({1, 1, 1}, rng);
        auto xv = tp.input(x);
        auto yr = ema_recurrent(tp, xv, pv);
        auto yf = ema_fft(tp, xv, pv);
        double expect = 0.0;
        for (std::int64_t i = 0; i < 3; ++i)
            expect += p.eta[i] * sigmoid_val(p.raw_alpha[i]) * p.beta[i] * x[0];
        CHECK(tp.val(yr)[0] == doctest::Approx(expect).epsilon(1e-12));
        CHECK(tp.val(yf)[0] == doctest::Approx(expect).epsilon(1e-10));
    }
    // impulse input reproduces the kernel
    {
        Tensor<double> x({1, 1, 32});
        x[0] = 1.0;
        auto y = ema_fft(tp, tp.input(x), pv);
        auto k = ema_kernel(tp, pv, 32);
        CHECK(max_abs_diff(tp.val(y), Tensor<double>({1, 1, 32}, tp.val(k).data)) < 1e-12);
    }
}

TEST_CASE("all three modes are causal") {
    Rng rng(58);
    auto p = random_params(1, 2, rng);
    auto x0 = randn<double>({1, 1, 24}, rng);
    const std::int64_t t_perturb = 15;
    Tensor<double> x1 = x0;
    x1[t_perturb] += 5.0;
    Tape<double> tp;
    auto pv = EmaVars<double>::put(tp, p, false);
    auto stored = ema_kernel(tp, pv, 24);
    auto run = [&](const Tensor<double>& x, int mode) {
        auto xv = tp.input(x);
        if (mode == 0) return ema_recurrent(tp, xv, pv);
        if (mode == 1) return ema_fft(tp, xv, pv);
        return ema_fft_pregen(tp, xv, stored);
    };
    for (int mode = 0; mode < 3; ++mode) {
        auto a = run(x0, mode);
        auto b = run(x1, mode);
        for (std::int64_t t = 0; t < t_perturb; ++t)
            CHECK(std::abs(tp.val(a)[t] - tp.val(b)[t]) < 1e-12);
        CHECK(std::abs(tp.val(a)[t_perturb] - tp.val(b)[t_perturb]) > 1e-3);
    }
}

TEST_CASE("gradcheck through both computation paths, and the paths agree") {
    Rng rng(59);
    auto p = random_params(2, 2, rng);
    auto x = randn<double>({1, 2, 12}, rng);

    std::vector<Tensor<double>*> params{&p.raw_alpha, &p.raw_delta, &p.beta, &p.eta};
    auto loss_rec = [&](Tape<double>& tp, const std::vector<Var<double>>& vs) {
        EmaVars<double> pv{vs[0], vs[1], vs[2], vs[3]};
        auto y = ema_recurrent(tp, tp.input(x), pv);
        return sum_all(tp, mul(tp, y, y));
    };
    auto loss_fft = [&](Tape<double>& tp, const std::vector<Var<double>>& vs) {
        EmaVars<double> pv{vs[0], vs[1], vs[2], vs[3]};
        auto y = ema_fft(tp, tp.input(x), pv);
        return sum_all(tp, mul(tp, y, y));
    };
    CHECK(gradcheck_multi(loss_rec, params) < 1e-5);
    CHECK(gradcheck_multi(loss_fft, params) < 1e-5);

    // x gradient through the recurrence
    CHECK(gradcheck([&](Tape<double>& tp, Var<double> th) {
              auto pv = EmaVars<double>::put(tp, p, false);
              auto y = ema_recurrent(tp, th, pv);
              return sum_all(tp, mul(tp, y, y));
          }, x) < 1e-5);

    // analytic gradients of the two paths agree within 1e-8
    auto grads_of = [&](bool use_fft) {
        Tape<double> tp;
        auto pv = EmaVars<double>::put(tp, p, true);
        auto xv = tp.input(x, true);
        auto y = use_fft ? ema_fft(tp, xv, pv) : ema_recurrent(tp, xv, pv);
        tp.backward(sum_all(tp, mul(tp, y, y)));
        std::vector<Tensor<double>> g{tp.grad(pv.raw_alpha), tp.grad(pv.raw_delta),
                                      tp.grad(pv.beta), tp.grad(pv.eta), tp.grad(xv)};
        return g;
    };
    auto ga = grads_of(false);
    auto gb = grads_of(true);
    for (std::size_t i = 0; i < ga.size(); ++i)
        CHECK(max_abs_diff(ga[i], gb[i]) < 1e-8);
}

TEST_CASE("ema_recurrent with gradcheck on L=32 stays under 1e-5") {
    Rng rng(60);
    auto p = random_params(1, 2, rng);
    auto x = randn<double>({1, 1, 32}, rng);
    CHECK(gradcheck([&](Tape<double>& tp, Var<double> th) {
              auto pv = EmaVars<double>::put(tp, p, false);
              auto y = ema_recurrent(tp, th, pv);
              return sum_all(tp, y);
          }, x) < 1e-5);
}
