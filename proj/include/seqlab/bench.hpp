#pragma once

#include <chrono>
#include <fstream>
#include <map>
#include <sstream>

#include "seqlab/ema.hpp"
#include "seqlab/tcn.hpp"

namespace seqlab {

/// One timed cell of the operator benchmark grid.
struct BenchRecord {
    std::string op;
    std::string pass;  // "forward" | "backward"
    std::int64_t seq_len = 0;
    std::string dtype;
    std::int64_t param_count = 0;
    double time_median_ns = 0.0;
    double time_p10_ns = 0.0;
    double time_p90_ns = 0.0;
    std::int64_t reps = 0;
    std::string cpu;
    std::int64_t threads = 1;
};

struct BenchConfig {
    std::vector<std::string> ops{"ema_recurrent", "ema_fft", "ema_fft_pregen", "dilated_conv"};
    std::vector<std::string> passes{"forward", "backward"};
    std::vector<std::int64_t> seq_lens{8192, 16384, 32768, 65536, 131072};
    std::int64_t batch = 1;
    std::int64_t channels = 64;
    std::int64_t warmup = 5;
    std::int64_t reps = 21;
    std::string dtype = "f32";
    std::int64_t threads = 1;
    std::uint64_t seed = 1234;
    // benchmark EMA instance: 4 groups of h*n parameters, 64 in total
    std::int64_t ema_h = 2;
    std::int64_t ema_n = 8;
    // benchmark TCN instance: depth 4, K=17, one shared kernel row per conv
    std::int64_t tcn_depth = 4;
    std::int64_t tcn_kernel = 17;
};

/// First "model name" line of /proc/cpuinfo, or "unknown".
inline std::string cpu_fingerprint() {
    std::ifstream is("/proc/cpuinfo");
    std::string line;
    while (std::getline(is, line)) {
        if (line.rfind("model name", 0) == 0) {
            const auto pos = line.find(':');
            std::string v = pos == std::string::npos ? line : line.substr(pos + 1);
            const auto b = v.find_first_not_of(" \t");
            return b == std::string::npos ? "unknown" : v.substr(b);
        }
    }
    return "unknown";
}

namespace detail {

inline double percentile(std::vector<double> v, double p) {
    std::sort(v.begin(), v.end());
    if (v.size() == 1) return v[0];
    const double idx = p * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(idx);
    const auto hi = std::min(lo + 1, v.size() - 1);
    const double frac = idx - static_cast<double>(lo);
    return v[lo] * (1.0 - frac) + v[hi] * frac;
}

struct TimingSummary {
    double median_ns, p10_ns, p90_ns;
};

template <class F>
TimingSummary time_callable(F&& f, std::int64_t warmup, std::int64_t reps) {
    using clock = std::chrono::steady_clock;
    for (std::int64_t i = 0; i < warmup; ++i) f();
    std::vector<double> ns;
    ns.reserve(static_cast<std::size_t>(reps));
    for (std::int64_t i = 0; i < reps; ++i) {
        const auto t0 = clock::now();
        f();
        const auto t1 = clock::now();
        ns.push_back(static_cast<double>(
            std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count()));
    }
    return {percentile(ns, 0.5), percentile(ns, 0.1), percentile(ns, 0.9)};
}

}  // namespace detail

/// Parameter-matched operator instances. The EMA instance carries 4*h*n = 64
/// parameters shared over the channel axis; the TCN instance is a bare stack
/// of depth shared-kernel dilated convolutions (68 parameters for K=17).
template <class T>
struct BenchOperators {
    BenchConfig cfg;
    EmaParams<T> ema;
    Tensor<T> tcn_kernels;  // [depth, K], one shared row per conv layer

    static BenchOperators make(const BenchConfig& cfg, Rng& rng) {
        BenchOperators ops;
        ops.cfg = cfg;
        ops.ema = EmaParams<T>::init(cfg.ema_h, cfg.ema_n, rng);
        ops.tcn_kernels = randn<T>({cfg.tcn_depth, cfg.tcn_kernel}, rng,
                                   1.0 / std::sqrt(static_cast<double>(cfg.tcn_kernel)));
        return ops;
    }

    std::int64_t param_count(const std::string& op) const {
        if (op == "dilated_conv") return tcn_kernels.numel();
        return ema.count_params();
    }

    /// Smallest dilation factor whose depth-layer receptive field covers l.
    std::int64_t conv_dilation_factor(std::int64_t l) const {
        return min_dilation_factor(cfg.tcn_kernel, cfg.tcn_depth, 1, l);
    }
};

namespace detail {

/// Builds the op under test on a fresh tape. `grads` marks inputs and
/// parameters as differentiable; returns the output Var.
template <class T>
Var<T> bench_forward(Tape<T>& tp, const std::string& op, const BenchOperators<T>& b,
                     const Tensor<T>& x, const Tensor<T>* stored_kernel, bool grads) {
    Var<T> xv = tp.input(x, grads);
    if (op == "dilated_conv") {
        const std::int64_t f = b.conv_dilation_factor(x.shape.back());
        Var<T> y = xv;
        std::int64_t dil = 1;
        for (std::int64_t d = 0; d < b.cfg.tcn_depth; ++d) {
            Tensor<T> row({1, b.cfg.tcn_kernel});
            std::copy_n(b.tcn_kernels.data.data() + d * b.cfg.tcn_kernel, b.cfg.tcn_kernel,
                        row.data.data());
            Var<T> w = tp.input(std::move(row), grads);
            y = conv1d_dilated(tp, y, w, dil, true);
            dil *= f;
        }
        return y;
    }
    auto pv = EmaVars<T>::put(tp, b.ema, grads);
    if (op == "ema_recurrent") return ema_recurrent(tp, xv, pv);
    if (op == "ema_fft") return ema_fft(tp, xv, pv);
    if (op == "ema_fft_pregen") {
        require(stored_kernel != nullptr, "bench: pregen needs a stored kernel");
        Var<T> k = tp.input(*stored_kernel, grads);
        return ema_fft_pregen(tp, xv, k);
    }
    throw std::invalid_argument("bench: unknown op '" + op + "'");
}

}  // namespace detail

/// Correctness gate run before any timing: every mode must reproduce the
/// recurrence, and the conv stack must match a direct per-position evaluation.
template <class T>
void bench_verify(const BenchOperators<T>& b, const Tensor<T>& x,
                  const Tensor<T>& stored_kernel) {
    const double tol = sizeof(T) == 8 ? 1e-8 : 1e-1;
    Tape<T> tp;
    auto yr = detail::bench_forward<T>(tp, "ema_recurrent", b, x, nullptr, false);
    auto yf = detail::bench_forward<T>(tp, "ema_fft", b, x, nullptr, false);
    auto yp = detail::bench_forward<T>(tp, "ema_fft_pregen", b, x, &stored_kernel, false);
    require(max_abs_diff(tp.val(yr), tp.val(yf)) < tol, "bench: ema_fft failed verification");
    require(max_abs_diff(tp.val(yr), tp.val(yp)) < tol,
            "bench: ema_fft_pregen failed verification");

    auto yc = detail::bench_forward<T>(tp, "dilated_conv", b, x, nullptr, false);
    // spot-check a handful of output positions against a direct nested-loop
    // evaluation of the conv stack
    const std::int64_t l = x.dim(2);
    const std::int64_t f = b.conv_dilation_factor(l);
    const std::int64_t k = b.cfg.tcn_kernel;
    std::vector<std::int64_t> probes{0, l / 3, l - 1};
    for (std::int64_t ci : {std::int64_t(0), x.dim(1) - 1}) {
        std::vector<T> cur(x.data.begin() + ci * l, x.data.begin() + (ci + 1) * l);
        std::vector<T> nxt(static_cast<std::size_t>(l));
        std::int64_t dil = 1;
        for (std::int64_t d = 0; d < b.cfg.tcn_depth; ++d) {
            const T* w = b.tcn_kernels.data.data() + d * k;
            for (std::int64_t t = 0; t < l; ++t) {
                double acc = 0.0;
                for (std::int64_t ki = 0; ki < k && ki * dil <= t; ++ki)
                    acc += static_cast<double>(w[ki]) *
                           static_cast<double>(cur[static_cast<std::size_t>(t - ki * dil)]);
                nxt[static_cast<std::size_t>(t)] = static_cast<T>(acc);
            }
            cur.swap(nxt);
            dil *= f;
        }
        for (std::int64_t t : probes) {
            const double got = static_cast<double>(tp.val(yc)[ci * l + t]);
            const double want = static_cast<double>(cur[static_cast<std::size_t>(t)]);
            require(std::abs(got - want) <= tol * std::max(1.0, std::abs(want)),
                    "bench: dilated_conv failed verification");
        }
    }
}

/// Runs the full grid. Backward cost is reported as (forward + backward)
/// median minus the forward median of the same cell.
template <class T>
std::vector<BenchRecord> run_bench(const BenchConfig& cfg, std::ostream* log = nullptr) {
    Rng rng(cfg.seed);
    auto ops = BenchOperators<T>::make(cfg, rng);
    const std::string cpu = cpu_fingerprint();
    const std::int64_t lmax = *std::max_element(cfg.seq_lens.begin(), cfg.seq_lens.end());

    std::vector<BenchRecord> records;
    for (std::int64_t l : cfg.seq_lens) {
        Tensor<T> x = randn<T>({cfg.batch, cfg.channels, l}, rng);
        // the stored kernel spans the longest benchmarked length; generated
        // once, outside every timed region
        Tensor<T> stored;
        {
            Tape<T> tp;
            auto pv = EmaVars<T>::put(tp, ops.ema, false);
            stored = tp.val(ema_kernel(tp, pv, lmax));
        }
        bench_verify(ops, x, stored);

        for (const std::string& op : cfg.ops) {
            auto fwd = [&]() {
                Tape<T> tp;
                detail::bench_forward(tp, op, ops, x, &stored, false);
            };
            auto fwd_bwd = [&]() {
                Tape<T> tp;
                auto y = detail::bench_forward(tp, op, ops, x, &stored, true);
                tp.backward(sum_all(tp, y));
            };
            const auto tf = detail::time_callable(fwd, cfg.warmup, cfg.reps);
            for (const std::string& pass : cfg.passes) {
                BenchRecord rec;
                rec.op = op;
                rec.pass = pass;
                rec.seq_len = l;
                rec.dtype = cfg.dtype;
                rec.param_count = ops.param_count(op);
                rec.reps = cfg.reps;
                rec.cpu = cpu;
                rec.threads = cfg.threads;
                if (pass == "forward") {
                    rec.time_median_ns = tf.median_ns;
                    rec.time_p10_ns = tf.p10_ns;
                    rec.time_p90_ns = tf.p90_ns;
                } else {
                    const auto tb = detail::time_callable(fwd_bwd, cfg.warmup, cfg.reps);
                    // backward alone = combined minus the forward median
                    rec.time_median_ns = std::max(0.0, tb.median_ns - tf.median_ns);
                    rec.time_p10_ns = std::max(0.0, tb.p10_ns - tf.median_ns);
                    rec.time_p90_ns = std::max(0.0, tb.p90_ns - tf.median_ns);
                }
                records.push_back(rec);
                if (log)
                    (*log) << rec.op << " " << rec.pass << " L=" << rec.seq_len << " median="
                           << rec.time_median_ns / 1e6 << " ms\n";
            }
        }
    }
    return records;
}

/// Drift-resistant kernel-generation ablation. Per rep both ops run on one
/// shared tape (inputs placed once, outside the timed region) in the
/// palindromic slot order fft, pregen, pregen, fft after one untimed warm
/// call of each op; every timed slot holds two calls so single-call
/// allocator/cache events average out. The palindrome cancels local clock
/// drift and gives each op one slot preceded by itself and one preceded by
/// the other op, so warm-context advantages balance too. Returns the median
/// per-rep (fft time / pregen time).
template <class T>
std::vector<std::pair<std::int64_t, double>> pregen_speedup_paired(const BenchConfig& cfg) {
    using clock = std::chrono::steady_clock;
    Rng rng(cfg.seed);
    auto ops = BenchOperators<T>::make(cfg, rng);
    const std::int64_t lmax = *std::max_element(cfg.seq_lens.begin(), cfg.seq_lens.end());
    Tensor<T> stored;
    {
        Tape<T> tp;
        auto pv = EmaVars<T>::put(tp, ops.ema, false);
        stored = tp.val(ema_kernel(tp, pv, lmax));
    }
    std::vector<Tensor<T>> xs;
    for (std::int64_t l : cfg.seq_lens) {
        xs.push_back(randn<T>({cfg.batch, cfg.channels, l}, rng));
        bench_verify(ops, xs.back(), stored);
    }
    // rep-outer over lengths: a transient slow period on the host spreads
    // over every length's sample set instead of poisoning one cell
    std::vector<std::vector<double>> ratios(cfg.seq_lens.size());
    const std::int64_t reps = cfg.warmup + cfg.reps;
    for (std::int64_t i = 0; i < reps; ++i) {
        for (std::size_t li = 0; li < cfg.seq_lens.size(); ++li) {
            const Tensor<T>& x = xs[li];
            Tape<T> tp;
            Var<T> xv = tp.input(x, false);
            Var<T> kv = tp.input(stored, false);
            auto pv = EmaVars<T>::put(tp, ops.ema, false);
            auto fft2 = [&]() {
                (void)ema_fft(tp, xv, pv);
                (void)ema_fft(tp, xv, pv);
            };
            auto pre2 = [&]() {
                (void)ema_fft_pregen(tp, xv, kv);
                (void)ema_fft_pregen(tp, xv, kv);
            };
            (void)ema_fft(tp, xv, pv);  // untimed warm calls
            (void)ema_fft_pregen(tp, xv, kv);
            const auto t0 = clock::now();
            fft2();
            const auto t1 = clock::now();
            pre2();
            const auto t2 = clock::now();
            pre2();
            const auto t3 = clock::now();
            fft2();
            const auto t4 = clock::now();
            if (i < cfg.warmup) continue;
            const auto ns = [](clock::time_point a, clock::time_point b) {
                return static_cast<double>(
                    std::chrono::duration_cast<std::chrono::nanoseconds>(b - a).count());
            };
            const double fft_ns = ns(t0, t1) + ns(t3, t4);
            const double pre_ns = ns(t1, t2) + ns(t2, t3);
            if (pre_ns > 0.0) ratios[li].push_back(fft_ns / pre_ns);
        }
    }
    std::vector<std::pair<std::int64_t, double>> out;
    for (std::size_t li = 0; li < cfg.seq_lens.size(); ++li)
        out.emplace_back(cfg.seq_lens[li],
                         ratios[li].empty() ? 0.0 : detail::percentile(ratios[li], 0.5));
    return out;
}

/// Rep-outer forward-only grid: every (op, length) cell is visited once per
/// rep, so slow machine-state drift spreads evenly across all cells instead
/// of accumulating in whichever cells happen to run last. Intended for
/// cross-cell comparisons (operator ordering, log-log slopes).
template <class T>
std::vector<BenchRecord> bench_forward_interleaved(const BenchConfig& cfg) {
    using clock = std::chrono::steady_clock;
    Rng rng(cfg.seed);
    auto ops = BenchOperators<T>::make(cfg, rng);
    const std::string cpu = cpu_fingerprint();
    const std::int64_t lmax = *std::max_element(cfg.seq_lens.begin(), cfg.seq_lens.end());
    Tensor<T> stored;
    {
        Tape<T> tp;
        auto pv = EmaVars<T>::put(tp, ops.ema, false);
        stored = tp.val(ema_kernel(tp, pv, lmax));
    }
    std::vector<Tensor<T>> xs;
    for (std::int64_t l : cfg.seq_lens) {
        xs.push_back(randn<T>({cfg.batch, cfg.channels, l}, rng));
        bench_verify(ops, xs.back(), stored);
    }
    const std::size_t n_ops = cfg.ops.size(), n_lens = cfg.seq_lens.size();
    std::vector<std::vector<double>> samples(n_ops * n_lens);
    for (std::int64_t rep = 0; rep < cfg.warmup + cfg.reps; ++rep) {
        for (std::size_t li = 0; li < n_lens; ++li) {
            for (std::size_t oi = 0; oi < n_ops; ++oi) {
                const auto t0 = clock::now();
                {
                    Tape<T> tp;
                    detail::bench_forward<T>(tp, cfg.ops[oi], ops, xs[li], &stored, false);
                }
                const auto t1 = clock::now();
                if (rep >= cfg.warmup)
                    samples[oi * n_lens + li].push_back(static_cast<double>(
                        std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count()));
            }
        }
    }
    std::vector<BenchRecord> records;
    for (std::size_t li = 0; li < n_lens; ++li) {
        for (std::size_t oi = 0; oi < n_ops; ++oi) {
            const auto& s = samples[oi * n_lens + li];
            BenchRecord rec;
            rec.op = cfg.ops[oi];
            rec.pass = "forward";
            rec.seq_len = cfg.seq_lens[li];
            rec.dtype = cfg.dtype;
            rec.param_count = ops.param_count(rec.op);
            rec.reps = cfg.reps;
            rec.cpu = cpu;
            rec.threads = cfg.threads;
            rec.time_median_ns = detail::percentile(s, 0.5);
            rec.time_p10_ns = detail::percentile(s, 0.1);
            rec.time_p90_ns = detail::percentile(s, 0.9);
            records.push_back(rec);
        }
    }
    return records;
}

// ---------------------------------------------------------------------------
// CSV emission / parsing
// ---------------------------------------------------------------------------

inline const char* bench_csv_header() {
    return "op,pass,seq_len,dtype,param_count,time_median_ns,time_p10_ns,time_p90_ns,reps,"
           "cpu,threads";
}

inline std::string emit_csv(std::vector<BenchRecord> records) {
    // deterministic row order regardless of execution order
    std::stable_sort(records.begin(), records.end(),
                     [](const BenchRecord& a, const BenchRecord& b) {
                         if (a.op != b.op) return a.op < b.op;
                         if (a.pass != b.pass) return a.pass < b.pass;
                         return a.seq_len < b.seq_len;
                     });
    std::ostringstream os;
    os << bench_csv_header() << "\n";
    for (const auto& r : records) {
        std::string cpu = r.cpu;
        for (char& ch : cpu)
            if (ch == ',') ch = ';';
        os << r.op << "," << r.pass << "," << r.seq_len << "," << r.dtype << ","
           << r.param_count << "," << r.time_median_ns << "," << r.time_p10_ns << ","
           << r.time_p90_ns << "," << r.reps << "," << cpu << "," << r.threads << "\n";
    }
    return os.str();
}

inline std::vector<BenchRecord> parse_csv(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    require(static_cast<bool>(std::getline(is, line)), "bench csv: empty input");
    require(line == bench_csv_header(), "bench csv: unexpected header");
    std::vector<BenchRecord> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) f.push_back(cell);
        require(f.size() == 11, "bench csv: wrong column count");
        BenchRecord r;
        r.op = f[0];
        r.pass = f[1];
        r.seq_len = std::stoll(f[2]);
        r.dtype = f[3];
        r.param_count = std::stoll(f[4]);
        r.time_median_ns = std::stod(f[5]);
        r.time_p10_ns = std::stod(f[6]);
        r.time_p90_ns = std::stod(f[7]);
        r.reps = std::stoll(f[8]);
        r.cpu = f[9];
        r.threads = std::stoll(f[10]);
        out.push_back(r);
    }
    return out;
}

// ---------------------------------------------------------------------------
// derived summaries
// ---------------------------------------------------------------------------

inline double bench_median(const std::vector<BenchRecord>& rs, const std::string& op,
                           const std::string& pass, std::int64_t l) {
    for (const auto& r : rs)
        if (r.op == op && r.pass == pass && r.seq_len == l) return r.time_median_ns;
    throw std::invalid_argument("bench: missing record " + op + "/" + pass);
}

/// Speedup of the stored-kernel path over on-the-fly kernel generation, per
/// sequence length.
inline std::string speedup_summary(const std::vector<BenchRecord>& rs) {
    std::map<std::int64_t, double> fft, pre;
    for (const auto& r : rs) {
        if (r.pass != "forward") continue;
        if (r.op == "ema_fft") fft[r.seq_len] = r.time_median_ns;
        if (r.op == "ema_fft_pregen") pre[r.seq_len] = r.time_median_ns;
    }
    std::ostringstream os;
    os << "seq_len  fft_ms    pregen_ms  speedup\n";
    for (const auto& [l, t] : fft) {
        auto it = pre.find(l);
        if (it == pre.end()) continue;
        os << l << "  " << t / 1e6 << "  " << it->second / 1e6 << "  " << t / it->second
           << "\n";
    }
    return os.str();
}

/// Least-squares slope of log(time) vs log(L) over forward medians.
inline double loglog_slope(const std::vector<BenchRecord>& rs, const std::string& op,
                           const std::string& pass = "forward") {
    std::vector<double> xs, ys;
    for (const auto& r : rs)
        if (r.op == op && r.pass == pass && r.time_median_ns > 0) {
            xs.push_back(std::log(static_cast<double>(r.seq_len)));
            ys.push_back(std::log(r.time_median_ns));
        }
    require(xs.size() >= 2, "bench: need at least two lengths for a slope");
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= static_cast<double>(xs.size());
    my /= static_cast<double>(xs.size());
    double num = 0, den = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        num += (xs[i] - mx) * (ys[i] - my);
        den += (xs[i] - mx) * (xs[i] - mx);
    }
    return num / den;
}

}  // namespace seqlab
