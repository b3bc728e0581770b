#pragma once

#include <algorithm>
#include <atomic>
#include <optional>
#include <sstream>
#include <thread>
#include <unordered_set>

#include "seqlab/adam.hpp"
#include "seqlab/model.hpp"

namespace seqlab {

/// One associative recall instance: interleaved key/value pairs, then a query
/// key; the target is the value paired with the query.
struct RecallSample {
    std::vector<std::int64_t> tokens;
    std::int64_t target = -1;
};

struct RecallData {
    std::vector<RecallSample> train;
    std::vector<RecallSample> eval;
    std::int64_t seq_len = 0;
    std::int64_t vocab_size = 0;
};

/// Brute-force lookup: the token following the last body occurrence of the
/// query key. This is the label-recovery oracle.
inline std::int64_t recall_oracle(const std::vector<std::int64_t>& tokens) {
    require(tokens.size() >= 3, "recall_oracle: sequence too short");
    const std::int64_t q = tokens.back();
    std::int64_t ans = -1;
    for (std::size_t p = 0; p + 2 < tokens.size(); ++p)
        if (tokens[p] == q) ans = tokens[p + 1];
    return ans;
}

/// Keys occupy the lower vocabulary half, values the upper half. Sequences of
/// even length carry one leading filler value token so the pair structure
/// stays intact. Eval sequences are disjoint from train sequences.
inline RecallData generate_recall_dataset(std::int64_t seq_len, std::int64_t vocab_size,
                                          std::int64_t n_train, std::int64_t n_eval,
                                          std::uint64_t seed,
                                          std::int64_t n_distinct_keys = 0) {
    require(seq_len >= 3, "generate_recall_dataset: seq_len must be >= 3");
    require(vocab_size >= 2 && vocab_size % 2 == 0,
            "generate_recall_dataset: vocab_size must be even and >= 2");
    const std::int64_t n_keys_avail = vocab_size / 2;
    if (n_distinct_keys <= 0) n_distinct_keys = n_keys_avail;
    require(n_distinct_keys <= n_keys_avail,
            "generate_recall_dataset: more distinct keys requested than the vocabulary "
            "half permits");
    const std::int64_t body_len = seq_len - 1;
    const std::int64_t pad = body_len % 2;
    const std::int64_t n_pairs = (body_len - pad) / 2;
    require(n_pairs >= 1, "generate_recall_dataset: no room for key/value pairs");

    Rng rng(seed);
    std::unordered_set<std::string> seen;
    auto fingerprint = [](const std::vector<std::int64_t>& t) {
        std::string s;
        s.reserve(t.size() * 3);
        for (auto v : t) {
            s += std::to_string(v);
            s += ',';
        }
        return s;
    };

    auto draw = [&]() {
        RecallSample s;
        s.tokens.reserve(static_cast<std::size_t>(seq_len));
        // per-sample bijection from the active keys onto distinct values
        std::vector<std::int64_t> values(static_cast<std::size_t>(n_keys_avail));
        for (std::int64_t i = 0; i < n_keys_avail; ++i)
            values[static_cast<std::size_t>(i)] = n_keys_avail + i;
        std::shuffle(values.begin(), values.end(), rng.engine());
        if (pad) s.tokens.push_back(n_keys_avail + rng.uniform_int(0, n_keys_avail - 1));
        std::vector<std::int64_t> body_keys;
        for (std::int64_t i = 0; i < n_pairs; ++i) {
            const std::int64_t k = rng.uniform_int(0, n_distinct_keys - 1);
            body_keys.push_back(k);
            s.tokens.push_back(k);
            s.tokens.push_back(values[static_cast<std::size_t>(k)]);
        }
        const std::int64_t q =
            body_keys[static_cast<std::size_t>(rng.uniform_int(0, n_pairs - 1))];
        s.tokens.push_back(q);
        s.target = values[static_cast<std::size_t>(q)];
        return s;
    };

    RecallData data;
    data.seq_len = seq_len;
    data.vocab_size = vocab_size;
    auto fill = [&](std::vector<RecallSample>& out, std::int64_t count) {
        std::int64_t attempts = 0;
        while (static_cast<std::int64_t>(out.size()) < count) {
            RecallSample s = draw();
            if (++attempts > 100 * count + 1000) {
                // tiny task spaces cannot supply enough distinct sequences;
                // fall back to admitting duplicates within this split
                out.push_back(std::move(s));
                continue;
            }
            if (!seen.insert(fingerprint(s.tokens)).second) continue;
            out.push_back(std::move(s));
        }
    };
    fill(data.train, n_train);
    fill(data.eval, n_eval);
    return data;
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

/// The fixed lr x dropout grid searched for the recall task.
struct SweepSpec {
    std::vector<double> learning_rates{1e-5, 1e-4, 1e-3, 1e-2, 1e-1};
    std::vector<double> dropouts{0.0, 0.1};
};

struct TrainBudget {
    std::int64_t max_epochs = 200;
    std::int64_t batch_size = 64;
    double early_stop_acc = 1.0;
    bool cosine_decay = false;  // optionally cosine-anneal the lr after warmup
    // Two-phase budget: when screen_epochs > 0, every grid point first runs
    // for screen_epochs only and the best `finalists` points are retrained
    // from scratch with the full epoch budget.
    std::int64_t screen_epochs = 0;
    std::int64_t finalists = 2;
};

struct SweepRow {
    double lr = 0.0;
    double dropout = 0.0;
    std::uint64_t seed = 0;
    std::int64_t epochs = 0;
    double best_eval_acc = 0.0;
    bool diverged = false;
};

struct SweepReport {
    std::vector<SweepRow> rows;
    double best_eval_acc = 0.0;
    std::optional<std::size_t> best_row;
};

template <class T>
void collect_param_grads(Tape<T>& tp, ModelVars<T>& mv, ModelParams<T>& params,
                         std::vector<Tensor<T>*>& ps, std::vector<const Tensor<T>*>& gs);

template <class T>
double evaluate_accuracy(ModelParams<T>& params, const std::vector<RecallSample>& samples,
                         std::int64_t batch_size = 128) {
    if (samples.empty()) return 0.0;
    const std::int64_t l = static_cast<std::int64_t>(samples[0].tokens.size());
    const std::int64_t vocab = params.cfg.vocab_size;
    std::int64_t hits = 0;
    Rng rng(0);  // eval path never draws from it
    for (std::size_t start = 0; start < samples.size();
         start += static_cast<std::size_t>(batch_size)) {
        const std::int64_t b = std::min<std::int64_t>(
            batch_size, static_cast<std::int64_t>(samples.size() - start));
        std::vector<std::int64_t> tokens;
        tokens.reserve(static_cast<std::size_t>(b * l));
        for (std::int64_t i = 0; i < b; ++i)
            tokens.insert(tokens.end(), samples[start + static_cast<std::size_t>(i)].tokens.begin(),
                          samples[start + static_cast<std::size_t>(i)].tokens.end());
        Tape<T> tp;
        auto mv = ModelVars<T>::put(tp, params, false);
        auto logits = model_forward(tp, mv, tokens, b, l, false, rng);
        const auto& lv = tp.val(logits);
        for (std::int64_t i = 0; i < b; ++i) {
            const T* row = lv.data.data() + (i * l + (l - 1)) * vocab;
            std::int64_t arg = 0;
            for (std::int64_t j = 1; j < vocab; ++j)
                if (row[j] > row[arg]) arg = j;
            if (arg == samples[start + static_cast<std::size_t>(i)].target) ++hits;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(samples.size());
}

/// Trains one grid point. Returns the row; a non-finite loss marks the point
/// diverged with accuracy 0 instead of raising.
template <class T>
SweepRow train_one(ModelConfig cfg, const RecallData& data, double lr, double dropout,
                   std::uint64_t seed, const TrainBudget& budget,
                   ModelParams<T>* best_params_out = nullptr,
                   std::ostream* log = nullptr) {
    cfg.dropout = dropout;
    SweepRow row;
    row.lr = lr;
    row.dropout = dropout;
    row.seed = seed;

    Rng rng(seed);
    ModelParams<T> params = ModelParams<T>::init(cfg, rng);
    Adam<T> opt(lr);
    const std::int64_t l = data.seq_len;
    const std::int64_t bs = budget.batch_size;
    const std::int64_t n = static_cast<std::int64_t>(data.train.size());
    const std::int64_t steps_per_epoch = (n + bs - 1) / bs;
    const std::int64_t total_steps = steps_per_epoch * budget.max_epochs;

    std::vector<std::size_t> order(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    // pre-training accuracy: an untrained model scores at chance level
    row.best_eval_acc = evaluate_accuracy(params, data.eval);
    if (best_params_out) *best_params_out = params;

    std::int64_t step = 0;
    for (std::int64_t epoch = 0; epoch < budget.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng.engine());
        for (std::int64_t s0 = 0; s0 < n; s0 += bs) {
            const std::int64_t b = std::min(bs, n - s0);
            std::vector<std::int64_t> tokens;
            std::vector<std::int64_t> targets;
            tokens.reserve(static_cast<std::size_t>(b * l));
            for (std::int64_t i = 0; i < b; ++i) {
                const auto& smp = data.train[order[static_cast<std::size_t>(s0 + i)]];
                tokens.insert(tokens.end(), smp.tokens.begin(), smp.tokens.end());
                targets.push_back(smp.target);
            }
            Tape<T> tp;
            auto mv = ModelVars<T>::put(tp, params, true);
            auto logits = model_forward(tp, mv, tokens, b, l, true, rng);
            auto loss = cross_entropy_last(tp, logits, targets);
            const double loss_val = static_cast<double>(tp.val(loss)[0]);
            if (!std::isfinite(loss_val)) {
                row.diverged = true;
                row.best_eval_acc = 0.0;
                row.epochs = epoch;
                return row;
            }
            tp.backward(loss);

            std::vector<Tensor<T>*> ps;
            std::vector<const Tensor<T>*> gs;
            collect_param_grads(tp, mv, params, ps, gs);
            opt.step(ps, gs,
                     budget.cosine_decay ? warmup_cosine_scale(step, total_steps)
                                         : warmup_scale(step, total_steps));
            ++step;
        }
        const double acc = evaluate_accuracy(params, data.eval);
        if (acc > row.best_eval_acc) {
            row.best_eval_acc = acc;
            if (best_params_out) *best_params_out = params;
        }
        row.epochs = epoch + 1;
        if (log) {
            // train-slice accuracy is diagnostic only, so pay for it only
            // when a log sink is attached
            const std::size_t slice = std::min<std::size_t>(data.train.size(), 500);
            const std::vector<RecallSample> head(data.train.begin(),
                                                 data.train.begin() + slice);
            (*log) << "lr=" << lr << " dropout=" << dropout << " epoch=" << epoch + 1
                   << " eval_acc=" << acc
                   << " train_acc=" << evaluate_accuracy(params, head) << "\n";
        }
        if (acc >= budget.early_stop_acc) break;
    }
    return row;
}

/// Pairs each parameter tensor with its gradient from the tape, in visit
/// order.
template <class T>
void collect_param_grads(Tape<T>& tp, ModelVars<T>& mv, ModelParams<T>& params,
                         std::vector<Tensor<T>*>& ps, std::vector<const Tensor<T>*>& gs) {
    std::vector<Var<T>> vars;
    mv.visit_vars([&](Var<T>& v) { vars.push_back(v); });

    std::vector<Tensor<T>*> tensors;
    params.visit([&](const std::string&, Tensor<T>& t) { tensors.push_back(&t); });
    require(tensors.size() == vars.size(), "collect_param_grads: registration order mismatch");
    for (std::size_t i = 0; i < vars.size(); ++i) {
        ps.push_back(tensors[i]);
        gs.push_back(&tp.grad(vars[i]));
    }
}

/// Runs the full lr x dropout grid; grid points are independent and may run on
/// parallel worker threads.
template <class T>
SweepReport train_recall(const ModelConfig& cfg, const RecallData& data,
                         const SweepSpec& sweep, const TrainBudget& budget,
                         std::uint64_t seed, int workers = 1,
                         ModelParams<T>* best_params_out = nullptr,
                         std::ostream* log = nullptr) {
    struct Job {
        double lr, dropout;
    };
    std::vector<Job> jobs;
    for (double lr : sweep.learning_rates)
        for (double p : sweep.dropouts) jobs.push_back({lr, p});

    SweepReport report;
    report.rows.resize(jobs.size());
    std::vector<ModelParams<T>> best_per_job(best_params_out ? jobs.size() : 0);

    auto run_jobs = [&](const std::vector<std::size_t>& idx, const TrainBudget& b) {
        std::atomic<std::size_t> next{0};
        auto worker = [&]() {
            for (;;) {
                const std::size_t n = next.fetch_add(1);
                if (n >= idx.size()) return;
                const std::size_t i = idx[n];
                report.rows[i] = train_one<T>(cfg, data, jobs[i].lr, jobs[i].dropout, seed,
                                              b,
                                              best_params_out ? &best_per_job[i] : nullptr,
                                              log);
            }
        };
        const int w = std::max(1, std::min<int>(workers, static_cast<int>(idx.size())));
        if (w == 1) {
            worker();
        } else {
            std::vector<std::thread> pool;
            for (int i = 0; i < w; ++i) pool.emplace_back(worker);
            for (auto& t : pool) t.join();
        }
    };

    std::vector<std::size_t> all(jobs.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;

    const bool two_phase = budget.screen_epochs > 0 && budget.screen_epochs < budget.max_epochs;
    if (!two_phase) {
        run_jobs(all, budget);
    } else {
        TrainBudget screen = budget;
        screen.max_epochs = budget.screen_epochs;
        run_jobs(all, screen);
        // promote the most promising points to the full budget
        std::vector<std::size_t> order = all;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return report.rows[a].best_eval_acc > report.rows[b].best_eval_acc;
        });
        const std::size_t keep =
            std::min<std::size_t>(order.size(),
                                  static_cast<std::size_t>(std::max<std::int64_t>(
                                      1, budget.finalists)));
        order.resize(keep);
        run_jobs(order, budget);
    }

    for (std::size_t i = 0; i < report.rows.size(); ++i) {
        if (!report.best_row || report.rows[i].best_eval_acc > report.best_eval_acc) {
            report.best_eval_acc = report.rows[i].best_eval_acc;
            report.best_row = i;
        }
    }
    if (best_params_out && report.best_row && !best_per_job.empty() &&
        best_per_job[*report.best_row].cfg.vocab_size > 0)
        *best_params_out = best_per_job[*report.best_row];
    return report;
}

inline std::string sweep_report_csv(const SweepReport& r) {
    std::ostringstream os;
    os << "lr,dropout,seed,epochs,best_eval_acc\n";
    for (const auto& row : r.rows)
        os << row.lr << "," << row.dropout << "," << row.seed << "," << row.epochs << ","
           << row.best_eval_acc << "\n";
    return os.str();
}

inline std::string sweep_report_text(const SweepReport& r) {
    std::ostringstream os;
    os << "lr        dropout  epochs  best_eval_acc\n";
    for (const auto& row : r.rows) {
        os << row.lr;
        os << std::string(row.lr < 1e-4 ? 5 : 6, ' ') << row.dropout << "      " << row.epochs
           << "       " << row.best_eval_acc << (row.diverged ? "  (diverged)" : "") << "\n";
    }
    os << "best: " << r.best_eval_acc << "\n";
    return os.str();
}

}  // namespace seqlab
