#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>
#include <tuple>

#include "seqlab/bench.hpp"

using namespace seqlab;

namespace {

BenchConfig small_config() {
    BenchConfig cfg;
    cfg.seq_lens = {64, 128};
    cfg.warmup = 1;
    cfg.reps = 3;
    return cfg;
}

}  // namespace

TEST_CASE("percentiles behave on degenerate and known inputs") {
    CHECK(detail::percentile({42.0}, 0.5) == 42.0);
    CHECK(detail::percentile({42.0}, 0.9) == 42.0);
    CHECK(detail::percentile({1.0, 2.0, 3.0}, 0.5) == 2.0);
    CHECK(detail::percentile({3.0, 1.0, 2.0}, 0.0) == 1.0);
    CHECK(detail::percentile({3.0, 1.0, 2.0}, 1.0) == 3.0);
    CHECK(detail::percentile({0.0, 10.0}, 0.5) == doctest::Approx(5.0));
}

TEST_CASE("a single-rep timing run is legal") {
    int calls = 0;
    auto t = detail::time_callable([&] { ++calls; }, 0, 1);
    CHECK(calls == 1);
    CHECK(t.median_ns >= 0.0);
    CHECK(t.median_ns == t.p10_ns);
    CHECK(t.median_ns == t.p90_ns);
}

TEST_CASE("the benchmark instances carry the documented parameter counts") {
    Rng rng(1);
    auto ops = BenchOperators<float>::make(BenchConfig{}, rng);
    CHECK(ops.param_count("ema_recurrent") == 64);
    CHECK(ops.param_count("ema_fft") == 64);
    CHECK(ops.param_count("ema_fft_pregen") == 64);
    CHECK(ops.param_count("dilated_conv") == 68);
}

TEST_CASE("the conv dilation factor adapts the receptive field to the length") {
    Rng rng(1);
    auto ops = BenchOperators<float>::make(BenchConfig{}, rng);
    for (std::int64_t l : {64, 2048, 131072}) {
        const std::int64_t f = ops.conv_dilation_factor(l);
        CHECK(receptive_field({17, f, 4, 1}) >= l);
        if (f > 1) CHECK(receptive_field({17, f - 1, 4, 1}) < l);
    }
}

TEST_CASE("verification rejects a corrupted stored kernel") {
    Rng rng(2);
    BenchConfig cfg = small_config();
    auto ops = BenchOperators<double>::make(cfg, rng);
    auto x = randn<double>({1, cfg.channels, 64}, rng);
    Tensor<double> stored;
    {
        Tape<double> tp;
        auto pv = EmaVars<double>::put(tp, ops.ema, false);
        stored = tp.val(ema_kernel(tp, pv, 64));
    }
    CHECK_NOTHROW(bench_verify(ops, x, stored));
    stored[5] += 1.0;
    CHECK_THROWS_AS(bench_verify(ops, x, stored), std::invalid_argument);
}

TEST_CASE("a small grid produces one record per (op, pass, length) cell") {
    BenchConfig cfg = small_config();
    auto records = run_bench<float>(cfg);
    CHECK(records.size() == cfg.ops.size() * cfg.passes.size() * cfg.seq_lens.size());
    for (const auto& r : records) {
        CHECK((r.pass == "forward" || r.pass == "backward"));
        CHECK(r.time_median_ns >= 0.0);
        CHECK(r.reps == cfg.reps);
        CHECK(r.dtype == "f32");
        CHECK(r.threads == 1);
        CHECK_FALSE(r.cpu.empty());
        if (r.op == "dilated_conv")
            CHECK(r.param_count == 68);
        else
            CHECK(r.param_count == 64);
    }
    // every expected cell is present exactly once
    std::set<std::string> cells;
    for (const auto& r : records)
        cells.insert(r.op + "/" + r.pass + "/" + std::to_string(r.seq_len));
    CHECK(cells.size() == records.size());
}

TEST_CASE("the paired ablation reports one positive ratio per length") {
    BenchConfig cfg = small_config();
    auto pairs = pregen_speedup_paired<float>(cfg);
    REQUIRE(pairs.size() == cfg.seq_lens.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        CHECK(pairs[i].first == cfg.seq_lens[i]);
        CHECK(pairs[i].second > 0.0);
    }
}

TEST_CASE("the interleaved grid produces one forward record per cell") {
    BenchConfig cfg = small_config();
    auto records = bench_forward_interleaved<float>(cfg);
    CHECK(records.size() == cfg.ops.size() * cfg.seq_lens.size());
    for (const auto& r : records) {
        CHECK(r.pass == "forward");
        CHECK(r.time_median_ns >= 0.0);
        CHECK(r.reps == cfg.reps);
    }
}

TEST_CASE("csv output round-trips and pins the header") {
    BenchConfig cfg = small_config();
    cfg.reps = 2;
    auto records = run_bench<float>(cfg);
    const std::string csv = emit_csv(records);
    CHECK(csv.rfind("op,pass,seq_len,dtype,param_count,time_median_ns,time_p10_ns,"
                    "time_p90_ns,reps,cpu,threads\n", 0) == 0);
    auto parsed = parse_csv(csv);
    REQUIRE(parsed.size() == records.size());
    // rows come back sorted by (op, pass, seq_len)
    for (std::size_t i = 1; i < parsed.size(); ++i) {
        const auto key = [](const BenchRecord& r) {
            return std::make_tuple(r.op, r.pass, r.seq_len);
        };
        CHECK(key(parsed[i - 1]) <= key(parsed[i]));
    }
    for (const auto& r : parsed) {
        CHECK(bench_median(parsed, r.op, r.pass, r.seq_len) == r.time_median_ns);
        CHECK(r.cpu.find(',') == std::string::npos);
    }
    CHECK_THROWS_AS(parse_csv(""), std::invalid_argument);
    CHECK_THROWS_AS(parse_csv("not,the,header\n"), std::invalid_argument);
    CHECK(parse_csv(std::string(bench_csv_header()) + "\n").empty());
}

TEST_CASE("log-log slope recovers the exponent of synthetic timings") {
    std::vector<BenchRecord> rs;
    for (std::int64_t l : {1024, 2048, 4096, 8192}) {
        BenchRecord r;
        r.op = "linear_op";
        r.pass = "forward";
        r.seq_len = l;
        r.time_median_ns = 3.0 * static_cast<double>(l);
        rs.push_back(r);
        r.op = "quadratic_op";
        r.time_median_ns = 0.01 * static_cast<double>(l) * static_cast<double>(l);
        rs.push_back(r);
    }
    CHECK(loglog_slope(rs, "linear_op") == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(loglog_slope(rs, "quadratic_op") == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("the speedup summary reports one line per length") {
    std::vector<BenchRecord> rs;
    for (std::int64_t l : {256, 512}) {
        BenchRecord a;
        a.op = "ema_fft";
        a.pass = "forward";
        a.seq_len = l;
        a.time_median_ns = 2.0e6;
        rs.push_back(a);
        a.op = "ema_fft_pregen";
        a.time_median_ns = 1.0e6;
        rs.push_back(a);
    }
    const std::string s = speedup_summary(rs);
    CHECK(s.find("256") != std::string::npos);
    CHECK(s.find("512") != std::string::npos);
    CHECK(s.find("2") != std::string::npos);  // 2x speedup appears
}
