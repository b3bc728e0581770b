#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>

#include "seqlab/checkpoint.hpp"
#include "seqlab/gradcheck.hpp"
#include "seqlab/model.hpp"
#include "seqlab/recall.hpp"

using namespace seqlab;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.vocab_size = 4;
    cfg.embed_dim = 2;
    cfg.layers = 1;
    cfg.tcn = TcnConfig{2, 2, 1, 1};
    cfg.chunk = ChunkSpec{2, true};
    cfg.mlp_expand = 2;
    cfg.dropout = 0.0;
    return cfg;
}

template <class T>
Tensor<T> run_forward(ModelParams<T>& p, const std::vector<std::int64_t>& tokens,
                      std::int64_t batch, std::int64_t len) {
    Tape<T> tp;
    Rng rng(0);
    auto mv = ModelVars<T>::put(tp, p, false);
    return tp.val(model_forward(tp, mv, tokens, batch, len, false, rng));
}

}  // namespace

TEST_CASE("parameter count matches a by-hand tally") {
    Rng rng(71);
    ModelConfig cfg = tiny_config();
    auto p = ModelParams<double>::init(cfg, rng);
    // embed 8; tcn block 4+4+2+2+2=14; qk 8; v 6; attn_out 6; gate 6;
    // mlp 4+8+4+8+2=26; final norm 4; head 12 -> 90
    CHECK(p.count_params() == 90);

    cfg.variant = ModelVariant::tcn_mlp;
    auto q = ModelParams<double>::init(cfg, rng);
    CHECK(q.count_params() == 90 - 26);  // drops qk, v, attn_out, gate
    CHECK(q.count_params() < p.count_params());
}

TEST_CASE("initialization and forward are deterministic under a fixed seed") {
    ModelConfig cfg = tiny_config();
    std::vector<std::int64_t> tokens{0, 1, 2, 3, 1, 0};
    Rng ra(7), rb(7);
    auto pa = ModelParams<float>::init(cfg, ra);
    auto pb = ModelParams<float>::init(cfg, rb);
    bool same_params = true;
    std::vector<Tensor<float>*> ta, tb;
    pa.visit([&](const std::string&, Tensor<float>& t) { ta.push_back(&t); });
    pb.visit([&](const std::string&, Tensor<float>& t) { tb.push_back(&t); });
    REQUIRE(ta.size() == tb.size());
    for (std::size_t i = 0; i < ta.size(); ++i) same_params &= (ta[i]->data == tb[i]->data);
    CHECK(same_params);
    CHECK(run_forward(pa, tokens, 1, 6).data == run_forward(pb, tokens, 1, 6).data);
}

TEST_CASE("the full model is causal") {
    Rng rng(72);
    ModelConfig cfg = tiny_config();
    cfg.layers = 2;
    auto p = ModelParams<double>::init(cfg, rng);
    std::vector<std::int64_t> a{0, 1, 2, 3, 0, 1, 2, 3};
    std::vector<std::int64_t> b = a;
    const std::int64_t t_change = 4;
    b[t_change] = 3;
    auto ya = run_forward(p, a, 1, 8);
    auto yb = run_forward(p, b, 1, 8);
    const std::int64_t v = cfg.vocab_size;
    for (std::int64_t t = 0; t < t_change; ++t)
        for (std::int64_t j = 0; j < v; ++j)
            CHECK(ya[t * v + j] == doctest::Approx(yb[t * v + j]).epsilon(1e-13));
    double diff = 0.0;
    for (std::int64_t j = 0; j < v; ++j)
        diff += std::abs(ya[t_change * v + j] - yb[t_change * v + j]);
    CHECK(diff > 1e-6);
}

TEST_CASE("a zero-layer model is a pointwise function of each token") {
    Rng rng(73);
    ModelConfig cfg = tiny_config();
    cfg.layers = 0;
    auto p = ModelParams<double>::init(cfg, rng);
    std::vector<std::int64_t> a{0, 1, 2, 3};
    std::vector<std::int64_t> b{2, 1, 0, 3};  // shares tokens at positions 1 and 3
    auto ya = run_forward(p, a, 1, 4);
    auto yb = run_forward(p, b, 1, 4);
    const std::int64_t v = cfg.vocab_size;
    // position plays no role, so shared tokens give the same logits (up to
    // summation-order noise from vectorized reductions)
    for (std::int64_t t : {1, 3})
        for (std::int64_t j = 0; j < v; ++j)
            CHECK(ya[t * v + j] == doctest::Approx(yb[t * v + j]).epsilon(1e-12));
}

TEST_CASE("both variants produce finite logits of the right shape") {
    Rng rng(74);
    for (auto variant : {ModelVariant::tcnca_simple, ModelVariant::tcn_mlp}) {
        ModelConfig cfg = tiny_config();
        cfg.variant = variant;
        cfg.layers = 2;
        auto p = ModelParams<double>::init(cfg, rng);
        std::vector<std::int64_t> tokens{0, 1, 2, 3, 1, 0, 2, 1, 3, 0};
        Tape<double> tp;
        Rng fr(0);
        auto mv = ModelVars<double>::put(tp, p, false);
        auto y = model_forward(tp, mv, tokens, 2, 5, false, fr);
        CHECK(tp.val(y).shape == Shape{2, 5, 4});
        CHECK(tp.val(y).all_finite());
    }
}

TEST_CASE("end-to-end gradcheck of the tiny model") {
    Rng rng(75);
    for (auto variant : {ModelVariant::tcnca_simple, ModelVariant::tcn_mlp}) {
        ModelConfig cfg = tiny_config();
        cfg.variant = variant;
        auto p = ModelParams<double>::init(cfg, rng);
        std::vector<std::int64_t> tokens{0, 1, 2, 3};
        std::vector<std::int64_t> targets{2};

        std::vector<Tensor<double>*> params;
        p.visit([&](const std::string&, Tensor<double>& t) { params.push_back(&t); });
        auto loss = [&](Tape<double>& tp, const std::vector<Var<double>>& vs) {
            auto mv = ModelVars<double>::from_list(p, vs);
            Rng fr(0);
            auto logits = model_forward(tp, mv, tokens, 1, 4, false, fr);
            return cross_entropy_last(tp, logits, targets);
        };
        CHECK(gradcheck_multi(loss, params, 1e-5, /*max_coords_per_tensor=*/4, 99) < 1e-4);
    }
}

TEST_CASE("training overfits 32 samples to near-zero loss") {
    Rng rng(76);
    ModelConfig cfg;
    cfg.vocab_size = 8;
    cfg.embed_dim = 16;
    cfg.layers = 2;
    cfg.tcn = TcnConfig{3, 3, 2, 1};
    cfg.chunk = ChunkSpec{16, true};
    auto data = generate_recall_dataset(9, cfg.vocab_size, 32, 8, 5);
    auto p = ModelParams<float>::init(cfg, rng);
    Adam<float> opt(3e-3);
    double last_loss = 1e9;
    for (int step = 0; step < 500 && last_loss >= 0.01; ++step) {
        std::vector<std::int64_t> tokens;
        std::vector<std::int64_t> targets;
        for (const auto& s : data.train) {
            tokens.insert(tokens.end(), s.tokens.begin(), s.tokens.end());
            targets.push_back(s.target);
        }
        Tape<float> tp;
        auto mv = ModelVars<float>::put(tp, p, true);
        Rng fr(0);
        auto logits = model_forward(tp, mv, tokens, 32, 9, true, fr);
        auto loss = cross_entropy_last(tp, logits, targets);
        last_loss = static_cast<double>(tp.val(loss)[0]);
        tp.backward(loss);
        std::vector<Tensor<float>*> ps;
        std::vector<const Tensor<float>*> gs;
        collect_param_grads(tp, mv, p, ps, gs);
        opt.step(ps, gs);
    }
    CHECK(last_loss < 0.01);
}

TEST_CASE("checkpoint round-trips every tensor bit-exactly") {
    Rng rng(77);
    ModelConfig cfg = tiny_config();
    cfg.layers = 2;
    auto p = ModelParams<float>::init(cfg, rng);
    std::vector<std::pair<std::string, const Tensor<float>*>> named;
    p.visit([&](const std::string& n, Tensor<float>& t) { named.emplace_back(n, &t); });

    const std::string path = "model_test_ckpt.bin";
    checkpoint::save<float>(path, "tiny-config-echo", named);
    std::vector<std::pair<std::string, Tensor<float>>> loaded;
    const std::string echo = checkpoint::load<float>(path, loaded);
    CHECK(echo == "tiny-config-echo");
    REQUIRE(loaded.size() == named.size());
    for (std::size_t i = 0; i < named.size(); ++i) {
        CHECK(loaded[i].first == named[i].first);
        CHECK(loaded[i].second.shape == named[i].second->shape);
        CHECK(loaded[i].second.data == named[i].second->data);
    }
    // dtype mismatch is refused
    std::vector<std::pair<std::string, Tensor<double>>> wrong;
    CHECK_THROWS_AS(checkpoint::load<double>(path, wrong), std::invalid_argument);
    std::remove(path.c_str());
}
