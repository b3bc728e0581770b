// seqlab-cli: single entry point for the sequence-operator laboratory.
// Subcommands: check-ema, rf, gradcheck, bench, train-recall.
// Exit codes: 0 success, 1 check failure, 2 usage error.

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#ifdef __GLIBC__
#include <malloc.h>
#endif
#include <json.hpp>

#include "seqlab/bench.hpp"
#include "seqlab/checkpoint.hpp"
#include "seqlab/gradcheck.hpp"
#include "seqlab/recall.hpp"

using namespace seqlab;
using nlohmann::json;

namespace {

int env_threads(int fallback) {
    if (const char* s = std::getenv("SEQOP_THREADS")) {
        const int v = std::atoi(s);
        if (v >= 1) return v;
    }
    return fallback;
}

void write_manifest(const std::string& out_dir, const std::string& subcommand,
                    const json& resolved) {
    if (out_dir.empty()) return;
    std::filesystem::create_directories(out_dir);
    json m;
    m["subcommand"] = subcommand;
    m["config"] = resolved;
    m["build"] = {{"git_sha", SEQLAB_GIT_SHA},
#if defined(__clang__)
                  {"compiler", "clang " __clang_version__}
#elif defined(__GNUC__)
                  {"compiler", "gcc " __VERSION__}
#else
                  {"compiler", "unknown"}
#endif
    };
    std::ofstream os(out_dir + "/run.json");
    os << m.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// check-ema
// ---------------------------------------------------------------------------

template <class T>
double ema_three_way_worst(std::int64_t len, std::int64_t dims, std::int64_t trials,
                           std::uint64_t seed) {
    Rng rng(seed);
    double worst = 0.0;
    for (std::int64_t trial = 0; trial < trials; ++trial) {
        EmaParams<T> p;
        p.h = 2;
        p.n = dims;
        p.raw_alpha = rand_uniform<T>({p.h, p.n}, rng, -3.0, 3.0);
        p.raw_delta = rand_uniform<T>({p.h, p.n}, rng, -3.0, 3.0);
        p.beta = randn<T>({p.h, p.n}, rng, 1.0);
        p.eta = randn<T>({p.h, p.n}, rng, 1.0);
        auto x = randn<T>({1, 4, len}, rng);
        Tape<T> tp;
        auto pv = EmaVars<T>::put(tp, p, false);
        auto xv = tp.input(x);
        auto yr = ema_recurrent(tp, xv, pv);
        auto yf = ema_fft(tp, xv, pv);
        auto stored = ema_kernel(tp, pv, len);
        auto yp = ema_fft_pregen(tp, xv, stored);
        worst = std::max(worst, max_abs_diff(tp.val(yr), tp.val(yf)));
        worst = std::max(worst, max_abs_diff(tp.val(yf), tp.val(yp)));
    }
    return worst;
}

// ---------------------------------------------------------------------------
// gradcheck fixtures
// ---------------------------------------------------------------------------

double gradcheck_ema(std::uint64_t seed) {
    Rng rng(seed);
    EmaParams<double> p = EmaParams<double>::init(2, 2, rng);
    auto x = randn<double>({1, 2, 10}, rng);
    std::vector<Tensor<double>*> params{&p.raw_alpha, &p.raw_delta, &p.beta, &p.eta, &x};
    double worst = 0.0;
    for (bool fft : {false, true}) {
        auto loss = [&](Tape<double>& tp, const std::vector<Var<double>>& vs) {
            EmaVars<double> pv{vs[0], vs[1], vs[2], vs[3]};
            auto y = fft ? ema_fft(tp, vs[4], pv) : ema_recurrent(tp, vs[4], pv);
            return sum_all(tp, mul(tp, y, y));
        };
        worst = std::max(worst, gradcheck_multi(loss, params));
    }
    return worst;
}

double gradcheck_tcn(std::uint64_t seed) {
    Rng rng(seed);
    TcnStack<double> stack = TcnStack<double>::init({2, 2, 2, 1}, 3, rng);
    auto x = randn<double>({1, 3, 6}, rng);
    std::vector<Tensor<double>*> params{&x};
    stack.visit([&](const std::string&, Tensor<double>& t) { params.push_back(&t); });
    auto loss = [&](Tape<double>& tp, const std::vector<Var<double>>& vs) {
        TcnStackVars<double> sv;
        sv.cfg = stack.cfg;
        std::size_t i = 1;
        for (std::size_t d = 0; d < stack.blocks.size(); ++d) {
            TcnBlockVars<double> bv;
            bv.kernels.push_back(vs[i++]);
            bv.mix_w = vs[i++];
            bv.mix_b = vs[i++];
            bv.norm_gamma = vs[i++];
            bv.norm_beta = vs[i++];
            sv.blocks.push_back(std::move(bv));
        }
        auto y = tcn_forward(tp, vs[0], sv);
        return sum_all(tp, mul(tp, y, y));
    };
    return gradcheck_multi(loss, params);
}

double gradcheck_attn(std::uint64_t seed) {
    Rng rng(seed);
    QkGen<double> qk = QkGen<double>::init(3, rng);
    auto z = randn<double>({1, 5, 3}, rng);
    auto v = randn<double>({1, 5, 3}, rng);
    std::vector<Tensor<double>*> params{&qk.q_scale, &qk.q_bias, &qk.k_scale,
                                        &qk.k_bias,  &z,         &v};
    auto loss = [&](Tape<double>& tp, const std::vector<Var<double>>& vs) {
        QkGenVars<double> qv{vs[0], vs[1], vs[2], vs[3]};
        auto y = chunked_attention(tp, vs[4], vs[5], qv, ChunkSpec{2, true});
        return sum_all(tp, mul(tp, y, y));
    };
    return gradcheck_multi(loss, params);
}

double gradcheck_model(std::uint64_t seed) {
    Rng rng(seed);
    ModelConfig cfg;
    cfg.vocab_size = 4;
    cfg.embed_dim = 2;
    cfg.layers = 1;
    cfg.tcn = TcnConfig{2, 2, 1, 1};
    cfg.chunk = ChunkSpec{2, true};
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
    return gradcheck_multi(loss, params, 1e-5, 4, seed);
}

}  // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
    // keep large tensor blocks on the heap for reuse; repeated mmap/zero-fill
    // of multi-MB buffers otherwise distorts long-sequence timings
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
    CLI::App app{"sequence-operator laboratory"};
    app.require_subcommand(1);
    app.set_config("--config", "", "flat key=value config file; flags override it");

    std::uint64_t seed = 1234;
    std::string out_dir;
    app.add_option("--seed", seed, "global RNG seed")->capture_default_str();
    app.add_option("--out-dir", out_dir, "directory for the run manifest and artifacts");

    // ---- check-ema ----
    auto* check = app.add_subcommand("check-ema", "three-way EMA equivalence check");
    std::int64_t ce_len = 4096, ce_dims = 8, ce_trials = 10;
    std::string ce_dtype = "f64";
    double ce_tol = 1e-10;
    check->add_option("--len", ce_len, "sequence length")->capture_default_str();
    check->add_option("--dims", ce_dims, "hidden expansion per group")->capture_default_str();
    check->add_option("--dtype", ce_dtype, "f32 or f64")
        ->check(CLI::IsMember({"f32", "f64"}))
        ->capture_default_str();
    check->add_option("--trials", ce_trials, "random parameter draws")->capture_default_str();
    check->add_option("--tol", ce_tol, "max allowed deviation")->capture_default_str();

    // ---- rf ----
    auto* rf = app.add_subcommand("rf", "receptive field of a TCN configuration");
    std::int64_t rf_k = 3, rf_f = 3, rf_d = 2, rf_b = 1;
    rf->add_option("--k", rf_k, "kernel size")->capture_default_str();
    rf->add_option("--f", rf_f, "dilation factor")->capture_default_str();
    rf->add_option("--d", rf_d, "depth (residual blocks)")->capture_default_str();
    rf->add_option("--b", rf_b, "convs per block")->capture_default_str();

    // ---- gradcheck ----
    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
    std::string gc_module = "all";
    double gc_tol = 1e-4;
    gc->add_option("--module", gc_module, "ema, tcn, attn, model, or all")
        ->check(CLI::IsMember({"ema", "tcn", "attn", "model", "all"}))
        ->capture_default_str();
    gc->add_option("--tol", gc_tol, "max allowed relative error")->capture_default_str();

    // ---- bench ----
    auto* bench = app.add_subcommand("bench", "parameter-matched operator benchmark");
    BenchConfig bcfg;
    std::string bench_out = "bench.csv";
    bench->add_option("--ops", bcfg.ops, "operators to time")->delimiter(',');
    bench->add_option("--passes", bcfg.passes, "forward and/or backward")->delimiter(',');
    bench->add_option("--lens", bcfg.seq_lens, "sequence lengths")->delimiter(',');
    bench->add_option("--dims", bcfg.channels, "channel count")->capture_default_str();
    bench->add_option("--batch", bcfg.batch, "batch size")->capture_default_str();
    bench->add_option("--warmup", bcfg.warmup, "discarded warmup runs")->capture_default_str();
    bench->add_option("--reps", bcfg.reps, "timed repetitions")->capture_default_str();
    bench->add_option("--dtype", bcfg.dtype, "f32 or f64")
        ->check(CLI::IsMember({"f32", "f64"}))
        ->capture_default_str();
    bench->add_option("--out", bench_out, "CSV output path")->capture_default_str();

    // ---- train-recall ----
    auto* train = app.add_subcommand("train-recall", "associative recall training sweep");
    std::int64_t tr_seq = 64, tr_vocab = 10, tr_embed = 32, tr_chunk = 32, tr_layers = 2;
    std::int64_t tr_depth = 4, tr_kernel = 3, tr_dilation = 3;
    std::int64_t tr_ntrain = 10000, tr_neval = 500, tr_epochs = 200, tr_batch = 64;
    std::string tr_variant = "tcnca_simple";
    std::string tr_ckpt;
    std::vector<double> tr_lrs{1e-5, 1e-4, 1e-3, 1e-2, 1e-1};
    std::vector<double> tr_dropouts{0.0, 0.1};
    int tr_workers = 4;
    train->add_option("--seq-len", tr_seq)->capture_default_str();
    train->add_option("--vocab", tr_vocab)->capture_default_str();
    train->add_option("--embed", tr_embed)->capture_default_str();
    train->add_option("--chunk", tr_chunk)->capture_default_str();
    train->add_option("--layers", tr_layers)->capture_default_str();
    train->add_option("--tcn-depth", tr_depth)->capture_default_str();
    train->add_option("--tcn-kernel", tr_kernel)->capture_default_str();
    train->add_option("--tcn-dilation", tr_dilation, "0 = smallest factor covering seq-len")
        ->capture_default_str();
    train->add_option("--n-train", tr_ntrain)->capture_default_str();
    train->add_option("--n-eval", tr_neval)->capture_default_str();
    train->add_option("--epochs", tr_epochs)->capture_default_str();
    train->add_option("--batch-size", tr_batch)->capture_default_str();
    train->add_option("--lrs", tr_lrs, "learning-rate grid")->delimiter(',');
    train->add_option("--dropouts", tr_dropouts, "dropout grid")->delimiter(',');
    train->add_option("--variant", tr_variant)
        ->check(CLI::IsMember({"tcnca_simple", "tcn_mlp"}))
        ->capture_default_str();
    train->add_option("--workers", tr_workers, "parallel grid workers")->capture_default_str();
    std::string tr_schedule = "constant";
    train->add_option("--lr-schedule", tr_schedule, "lr schedule after warmup")
        ->check(CLI::IsMember({"cosine", "constant"}));
    train->add_option("--checkpoint", tr_ckpt, "path for the best model checkpoint");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*check) {
            const double worst =
                ce_dtype == "f64"
                    ? ema_three_way_worst<double>(ce_len, ce_dims, ce_trials, seed)
                    : ema_three_way_worst<float>(ce_len, ce_dims, ce_trials, seed);
            std::cout << "check-ema: worst deviation " << worst << " over " << ce_trials
                      << " trials at L=" << ce_len << " (" << ce_dtype << ")\n";
            write_manifest(out_dir, "check-ema",
                           {{"len", ce_len}, {"dims", ce_dims}, {"dtype", ce_dtype},
                            {"trials", ce_trials}, {"tol", ce_tol}, {"seed", seed}});
            if (!(worst < ce_tol)) {
                std::cout << "check-ema: FAIL (tol " << ce_tol << ")\n";
                return 1;
            }
            std::cout << "check-ema: OK\n";
            return 0;
        }

        if (*rf) {
            const TcnConfig cfg{rf_k, rf_f, rf_d, rf_b};
            std::cout << receptive_field(cfg) << "\n";
            write_manifest(out_dir, "rf",
                           {{"k", rf_k}, {"f", rf_f}, {"d", rf_d}, {"b", rf_b}});
            return 0;
        }

        if (*gc) {
            std::vector<std::pair<std::string, double>> results;
            if (gc_module == "ema" || gc_module == "all")
                results.emplace_back("ema", gradcheck_ema(seed));
            if (gc_module == "tcn" || gc_module == "all")
                results.emplace_back("tcn", gradcheck_tcn(seed));
            if (gc_module == "attn" || gc_module == "all")
                results.emplace_back("attn", gradcheck_attn(seed));
            if (gc_module == "model" || gc_module == "all")
                results.emplace_back("model", gradcheck_model(seed));
            bool ok = true;
            for (const auto& [name, err] : results) {
                const bool pass = err < gc_tol;
                ok = ok && pass;
                std::cout << "gradcheck " << name << ": rel err " << err << " -> "
                          << (pass ? "OK" : "FAIL") << "\n";
            }
            write_manifest(out_dir, "gradcheck",
                           {{"module", gc_module}, {"tol", gc_tol}, {"seed", seed}});
            return ok ? 0 : 1;
        }

        if (*bench) {
            bcfg.seed = seed;
            bcfg.threads = 1;  // single-threaded timing for comparability
            auto records = bcfg.dtype == "f64" ? run_bench<double>(bcfg, &std::cout)
                                               : run_bench<float>(bcfg, &std::cout);
            const std::string csv = emit_csv(records);
            {
                std::ofstream os(bench_out);
                require(static_cast<bool>(os),
                        "bench: cannot open '" + bench_out + "' for writing");
                os << csv;
                require(static_cast<bool>(os), "bench: write failed");
            }
            std::cout << "\n" << speedup_summary(records);
            std::cout << "wrote " << records.size() << " records to " << bench_out << "\n";
            write_manifest(out_dir, "bench",
                           {{"ops", bcfg.ops}, {"passes", bcfg.passes},
                            {"lens", bcfg.seq_lens}, {"dims", bcfg.channels},
                            {"batch", bcfg.batch}, {"warmup", bcfg.warmup},
                            {"reps", bcfg.reps}, {"dtype", bcfg.dtype},
                            {"threads", bcfg.threads}, {"seed", seed},
                            {"out", bench_out},
                            {"backward_protocol",
                             "forward+backward on a fresh tape minus the forward median"}});
            return 0;
        }

        if (*train) {
            ModelConfig cfg;
            cfg.vocab_size = tr_vocab;
            cfg.embed_dim = tr_embed;
            cfg.layers = tr_layers;
            const std::int64_t f =
                tr_dilation > 0 ? tr_dilation : min_dilation_factor(tr_kernel, tr_depth, 1, tr_seq);
            cfg.tcn = TcnConfig{tr_kernel, f, tr_depth, 1};
            cfg.chunk = ChunkSpec{tr_chunk, true};
            cfg.variant = tr_variant == "tcn_mlp" ? ModelVariant::tcn_mlp
                                                  : ModelVariant::tcnca_simple;
            auto data = generate_recall_dataset(tr_seq, tr_vocab, tr_ntrain, tr_neval, seed);
            SweepSpec sweep;
            sweep.learning_rates = tr_lrs;
            sweep.dropouts = tr_dropouts;
            TrainBudget budget;
            budget.max_epochs = tr_epochs;
            budget.batch_size = tr_batch;
            budget.cosine_decay = tr_schedule == "cosine";
            const int workers = env_threads(tr_workers);
            ModelParams<float> best;
            auto report = train_recall<float>(cfg, data, sweep, budget, seed, workers,
                                              tr_ckpt.empty() ? nullptr : &best, &std::cout);
            std::cout << sweep_report_text(report);
            if (!out_dir.empty()) {
                std::filesystem::create_directories(out_dir);
                std::ofstream os(out_dir + "/recall_sweep.csv");
                os << sweep_report_csv(report);
            }
            if (!tr_ckpt.empty() && report.best_row && best.cfg.vocab_size > 0) {
                std::vector<std::pair<std::string, const Tensor<float>*>> named;
                best.visit(
                    [&](const std::string& n, Tensor<float>& t) { named.emplace_back(n, &t); });
                json echo = {{"seq_len", tr_seq}, {"vocab", tr_vocab}, {"embed", tr_embed},
                             {"chunk", tr_chunk}, {"layers", tr_layers},
                             {"tcn_depth", tr_depth}, {"tcn_kernel", tr_kernel},
                             {"tcn_dilation", f}, {"variant", tr_variant}};
                checkpoint::save<float>(tr_ckpt, echo.dump(), named);
                std::cout << "checkpoint written to " << tr_ckpt << "\n";
            }
            write_manifest(out_dir, "train-recall",
                           {{"seq_len", tr_seq}, {"vocab", tr_vocab}, {"embed", tr_embed},
                            {"chunk", tr_chunk}, {"layers", tr_layers},
                            {"tcn_depth", tr_depth}, {"tcn_kernel", tr_kernel},
                            {"tcn_dilation", f}, {"n_train", tr_ntrain},
                            {"n_eval", tr_neval}, {"epochs", tr_epochs},
                            {"batch_size", tr_batch}, {"lrs", tr_lrs},
                            {"dropouts", tr_dropouts}, {"variant", tr_variant},
                            {"workers", workers}, {"seed", seed},
                            {"best_eval_acc", report.best_eval_acc}});
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
