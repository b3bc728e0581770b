#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "seqlab/gradcheck.hpp"
#include "seqlab/tcn.hpp"

using namespace seqlab;

namespace {

// empirical receptive field: span from the oldest input position whose
// perturbation reaches the last output position, measured through the
// gradient (the window can have interior holes when dilation exceeds the
// kernel size, so the span is the right quantity)
std::int64_t empirical_rf(const TcnConfig& cfg, std::int64_t l, Rng& rng) {
    TcnStack<double> stack =
        TcnStack<double>::init(cfg, 1, rng, /*channel_mix=*/false, /*norm=*/false);
    auto x = randn<double>({1, 1, l}, rng);
    Tape<double> tp;
    auto xv = tp.input(x, true);
    auto sv = TcnStackVars<double>::put(tp, stack, false);
    auto y = tcn_forward(tp, xv, sv);
    tp.backward(pick(tp, y, l - 1));
    const auto& g = tp.grad(xv);
    for (std::int64_t t = 0; t < l; ++t)
        if (g[t] != 0.0) return l - t;
    return 0;
}

}  // namespace

TEST_CASE("receptive field closed form on known configurations") {
    CHECK(receptive_field({3, 3, 2, 1}) == 9);
    CHECK(receptive_field({17, 8, 4, 1}) == 9361);
    CHECK(receptive_field({2, 1, 3, 2}) == 7);
    CHECK(receptive_field({1, 5, 3, 2}) == 1);   // K=1 sees only the current step
    CHECK(receptive_field({3, 1, 4, 1}) == 9);   // f=1 limit: 1 + B(K-1)D
}

TEST_CASE("minimal dilation factor brackets the target") {
    for (std::int64_t target : {64, 2048, 9361, 131072}) {
        const std::int64_t f = min_dilation_factor(17, 4, 1, target);
        CHECK(receptive_field({17, f, 4, 1}) >= target);
        if (f > 1) CHECK(receptive_field({17, f - 1, 4, 1}) < target);
    }
    CHECK(min_dilation_factor(17, 4, 1, 1) == 1);
}

TEST_CASE("empirical receptive field matches the formula") {
    Rng rng(21);
    for (std::int64_t k : {2, 3, 5}) {
        for (std::int64_t f : {1, 2, 4}) {
            for (std::int64_t d : {1, 2, 3}) {
                for (std::int64_t b : {1, 2}) {
                    const TcnConfig cfg{k, f, d, b};
                    const std::int64_t rf = receptive_field(cfg);
                    const std::int64_t l = rf + 5;
                    CHECK_MESSAGE(empirical_rf(cfg, l, rng) == rf,
                                  "K=" << k << " f=" << f << " D=" << d << " B=" << b);
                }
            }
        }
    }
}

TEST_CASE("receptive field is monotone in every hyperparameter") {
    const TcnConfig base{3, 2, 2, 1};
    CHECK(receptive_field({4, 2, 2, 1}) > receptive_field(base));
    CHECK(receptive_field({3, 3, 2, 1}) > receptive_field(base));
    CHECK(receptive_field({3, 2, 3, 1}) > receptive_field(base));
    CHECK(receptive_field({3, 2, 2, 2}) > receptive_field(base));
}

TEST_CASE("zero kernels make every block an identity") {
    Rng rng(22);
    TcnStack<double> stack = TcnStack<double>::init({3, 2, 3, 2}, 4, rng);
    for (auto& blk : stack.blocks)
        for (auto& k : blk.kernels) std::fill(k.data.begin(), k.data.end(), 0.0);
    auto x = randn<double>({2, 4, 10}, rng);
    Tape<double> tp;
    auto sv = TcnStackVars<double>::put(tp, stack, false);
    auto y = tcn_forward(tp, tp.input(x), sv);
    CHECK(tp.val(y).data == x.data);
}

TEST_CASE("single channel, K=1 identity kernel, bare block: y = x + SiLU(x)") {
    Rng rng(23);
    TcnStack<double> stack =
        TcnStack<double>::init({1, 1, 1, 1}, 1, rng, /*channel_mix=*/false, /*norm=*/false);
    stack.blocks[0].kernels[0] = from_values<double>({1, 1}, {1.0});
    auto x = randn<double>({1, 1, 7}, rng);
    Tape<double> tp;
    auto sv = TcnStackVars<double>::put(tp, stack, false);
    auto y = tcn_forward(tp, tp.input(x), sv);
    for (std::int64_t t = 0; t < 7; ++t) {
        const double xi = x[t];
        const double want = xi + xi / (1.0 + std::exp(-xi));
        CHECK(tp.val(y)[t] == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("the stack is causal") {
    Rng rng(24);
    TcnStack<double> stack = TcnStack<double>::init({3, 2, 2, 1}, 3, rng);
    auto x0 = randn<double>({1, 3, 20}, rng);
    Tensor<double> x1 = x0;
    const std::int64_t tp_idx = 11;
    for (std::int64_t c = 0; c < 3; ++c) x1[c * 20 + tp_idx] += 3.0;
    Tape<double> tp;
    auto sv = TcnStackVars<double>::put(tp, stack, false);
    auto ya = tcn_forward(tp, tp.input(x0), sv);
    auto yb = tcn_forward(tp, tp.input(x1), sv);
    for (std::int64_t c = 0; c < 3; ++c)
        for (std::int64_t t = 0; t < tp_idx; ++t)
            CHECK(tp.val(ya)[c * 20 + t] == doctest::Approx(tp.val(yb)[c * 20 + t]).epsilon(1e-13));
}

TEST_CASE("gradient support of one output position: K=3, f=3, D=2 covers [t-8, t]") {
    Rng rng(25);
    const TcnConfig cfg{3, 3, 2, 1};
    CHECK(receptive_field(cfg) == 9);
    TcnStack<double> stack =
        TcnStack<double>::init(cfg, 1, rng, /*channel_mix=*/false, /*norm=*/false);
    auto x = randn<double>({1, 1, 32}, rng);
    Tape<double> tp;
    auto xv = tp.input(x, true);
    auto sv = TcnStackVars<double>::put(tp, stack, false);
    auto y = tcn_forward(tp, xv, sv);
    tp.backward(pick(tp, y, 20));
    const auto& g = tp.grad(xv);
    for (std::int64_t t = 0; t < 32; ++t) {
        if (t >= 12 && t <= 20)
            CHECK_MESSAGE(g[t] != 0.0, "expected support at t=" << t);
        else
            CHECK_MESSAGE(g[t] == 0.0, "unexpected support at t=" << t);
    }
}

TEST_CASE("full stack gradcheck with norm and channel mix") {
    Rng rng(26);
    TcnStack<double> stack = TcnStack<double>::init({2, 2, 2, 2}, 3, rng);
    auto x = randn<double>({2, 3, 6}, rng);

    std::vector<Tensor<double>*> params;
    stack.visit([&](const std::string&, Tensor<double>& t) { params.push_back(&t); });
    auto loss = [&](Tape<double>& tp, const std::vector<Var<double>>& vs) {
        TcnStackVars<double> sv;
        sv.cfg = stack.cfg;
        sv.channel_mix_enabled = stack.channel_mix_enabled;
        sv.norm_enabled = stack.norm_enabled;
        std::size_t i = 0;
        for (auto& blk : stack.blocks) {
            TcnBlockVars<double> bv;
            for (std::size_t b = 0; b < blk.kernels.size(); ++b) bv.kernels.push_back(vs[i++]);
            bv.mix_w = vs[i++];
            bv.mix_b = vs[i++];
            bv.norm_gamma = vs[i++];
            bv.norm_beta = vs[i++];
            sv.blocks.push_back(std::move(bv));
        }
        auto y = tcn_forward(tp, tp.input(x), sv);
        return sum_all(tp, mul(tp, y, y));
    };
    CHECK(gradcheck_multi(loss, params, 1e-5) < 1e-4);

    CHECK(gradcheck([&](Tape<double>& tp, Var<double> th) {
              auto sv = TcnStackVars<double>::put(tp, stack, false);
              auto y = tcn_forward(tp, th, sv);
              return sum_all(tp, mul(tp, y, y));
          }, x) < 1e-4);
}

TEST_CASE("parameter count bookkeeping") {
    Rng rng(27);
    // bare conv stack: D*B kernels of [C, K]
    TcnStack<double> bare = TcnStack<double>::init({17, 8, 4, 1}, 1, rng, false, false);
    CHECK(bare.count_params() == 4 * 17);
    // full stack: kernels + mix + norm
    TcnStack<double> full_stack = TcnStack<double>::init({3, 3, 2, 2}, 5, rng);
    CHECK(full_stack.count_params() == 2 * (2 * 5 * 3 + 5 * 5 + 5 + 5 + 5));
}
