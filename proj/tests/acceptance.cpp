// Acceptance runner. Usage: acceptance [criterion ...] (default: all).
// Prints one "criterion N PASS|FAIL: ..." line per criterion and exits
// non-zero if any of the requested criteria fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "rangecap/capacity.hpp"
#include "rangecap/experiments.hpp"
#include "rangecap/green.hpp"
#include "rangecap/range_stats.hpp"

using namespace rangecap;

namespace {

using Clock = std::chrono::steady_clock;

int g_workers = 1;
bool g_failed = false;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

void verdict(int n, bool pass, const std::string& detail) {
    std::printf("criterion %d %s: %s\n", n, pass ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
    if (!pass) g_failed = true;
}

void note(const std::string& s) {
    std::printf("  %s\n", s.c_str());
    std::fflush(stdout);
}

void print_assertions(const ExperimentReport& r) {
    for (const auto& a : r.assertions) note(fmt("%s %s: %s", a.passed ? "ok  " : "FAIL", a.name.c_str(), a.detail.c_str()));
}

bool assertion_passed(const ExperimentReport& r, const std::string& name) {
    const Assertion* a = r.find(name);
    return a != nullptr && a->passed;
}

std::vector<Site> random_set(RngStream& rng, int size, int spread) {
    std::set<Site> s;
    while (static_cast<int>(s.size()) < size) {
        Site x;
        for (int j = 0; j < 3; ++j) {
            x[j] = static_cast<std::int64_t>(rng.next_u64() % static_cast<std::uint64_t>(2 * spread + 1)) - spread;
        }
        s.insert(x);
    }
    return {s.begin(), s.end()};
}

const WalkModel& alpha08() {
    static const WalkModel m = subordinate_walk(3, 0.8);
    return m;
}

const GreenTable& table08() {
    static const GreenTable t = build_green_table(alpha08(), default_table_radius(3));
    return t;
}

// ---------------------------------------------------------------------------

void criterion1() {
    const auto t0 = Clock::now();
    const GreenTable t = build_green_table(simple_walk(3), default_table_radius(3));
    const double elapsed = seconds_since(t0);
    GreenMethodSpec series;
    series.method = GreenMethod::renewal_series;
    const GreenTable oracle = build_green_table(simple_walk(3), 2, series);
    const double g0 = t.origin();
    const bool ok = std::abs(g0 - 1.51639) <= 1e-3 && std::abs(g0 - oracle.origin()) <= 1e-3 && elapsed < 60.0;
    verdict(1, ok,
            fmt("G(0) = %.8f (target 1.51639, renewal series %.8f +- %.1e, tol 1e-3), radius %d built in %.2f s (< 60 s)",
                g0, oracle.origin(), oracle.error_estimate(), t.radius(), elapsed));
}

void criterion2() {
    const auto t0 = Clock::now();
    const auto& t = table08();
    RngStream rng(2024, StreamTag::test, 2);
    EscapeOptions opt;
    opt.workers = g_workers;
    int outside = 0;
    double worst = 0.0;
    for (int i = 0; i < 50; ++i) {
        const auto a = random_set(rng, 1 + static_cast<int>(rng.next_u64() % 8), 3);
        const double exact = capacity_value(a, t);
        const auto mc = capacity_mc(a, alpha08(), opt, 100000, 7000 + static_cast<std::uint64_t>(i));
        const double sigma = std::hypot(mc.std_error, t.error_estimate() * static_cast<double>(a.size()));
        const double z = (mc.value - exact) / sigma;
        worst = std::max(worst, std::abs(z));
        if (std::abs(z) > 3.0) {
            ++outside;
            note(fmt("set %d (|A| = %zu): exact %.6f, mc %.6f +- %.6f, z = %.2f", i, a.size(), exact, mc.value,
                     mc.std_error, z));
        }
    }
    const double elapsed = seconds_since(t0);
    verdict(2, outside == 0 && elapsed < 600.0,
            fmt("%d of 50 sets outside 3 sigma, max |z| = %.2f, M = 1e5 per site, %.0f s on %d worker(s) (< 600 s)",
                outside, worst, elapsed, g_workers));
}

void criterion3() {
    const auto& t = table08();
    RngStream rng(2025, StreamTag::test, 3);
    double worst_pair = INFINITY;
    for (int i = 0; i < 100; ++i) {
        const auto a = random_set(rng, 1 + static_cast<int>(rng.next_u64() % 30), 4);
        const auto b = random_set(rng, 1 + static_cast<int>(rng.next_u64() % 30), 4);
        const auto r = check_decomposition(a, b, t);
        worst_pair = std::min({worst_pair, r.lower_slack, r.upper_slack});
    }
    double worst_dyadic = INFINITY;
    for (std::uint64_t i = 0; i < 100; ++i) {
        RngStream prng(2025, StreamTag::path, i);
        const auto path = sample_path(alpha08(), 512, prng);
        for (int L = 1; L <= 4; ++L) {
            const auto r = dyadic_check(path, 512, L, t);
            worst_dyadic = std::min({worst_dyadic, r.lower_slack, r.upper_slack});
        }
    }
    verdict(3, worst_pair >= -1e-8 && worst_dyadic >= -1e-7,
            fmt("min slack over 100 set pairs %.3e (>= -1e-8); min dyadic slack over 100 paths, n = 512, L = 1..4: %.3e "
                "(>= -1e-7)",
                worst_pair, worst_dyadic));
}

void criterion4() {
    const auto& t = table08();
    RngStream rng(2026, StreamTag::test, 4);
    double worst_gap = INFINITY, worst_eq = 0.0;
    for (int i = 0; i < 100; ++i) {
        const auto a = random_set(rng, 1 + static_cast<int>(rng.next_u64() % 30), 4);
        const auto [est, eq] = capacity_exact(a, t);
        const double inv = 1.0 / est.value;
        std::vector<double> nu(a.size());
        for (int k = 0; k < 100; ++k) {
            double mass = 0.0;
            for (auto& v : nu) {
                v = rng.uniform_open();
                mass += v;
            }
            for (auto& v : nu) v /= mass;
            worst_gap = std::min(worst_gap, green_energy(t, a, nu) - inv);
        }
        for (std::size_t k = 0; k < a.size(); ++k) nu[k] = eq.escape[k] / est.value;
        worst_eq = std::max(worst_eq, std::abs(green_energy(t, a, nu) - inv));
    }
    verdict(4, worst_gap >= -1e-8 && worst_eq <= 1e-8,
            fmt("min (nu' G nu - 1/Cap) over 100 sets x 100 probability vectors %.3e (>= -1e-8); equilibrium gap %.3e "
                "(<= 1e-8)",
                worst_gap, worst_eq));
}

void criterion5() {
    const auto t0 = Clock::now();
    ExperimentConfig c;
    c.model = alpha08();
    c.M = 100000;
    c.seed = 5;
    c.loop_marginal_horizons = {1, 2, 8};
    const auto r = run_loop_equivalence(c, g_workers);
    print_assertions(r);
    verdict(5, assertion_passed(r, "coupled_identity") && assertion_passed(r, "marginal_tests"),
            fmt("loop coupling, M = 1e5, marginals at n = 1, 2, 8 (%.0f s)", seconds_since(t0)));
}

void criteria678() {
    const auto t0 = Clock::now();
    ExperimentConfig c;
    c.model = alpha08();
    c.horizons = {256, 512, 1024, 2048};
    c.seed = 6;
    c.bootstrap = 5000;
    c.clt_horizon = 1024;

    ExperimentConfig lln = c;
    lln.M = 200;
    const auto r6 = run_lln(lln, g_workers);
    print_assertions(r6);
    verdict(6, r6.passed(), fmt("LLN with M = 200 base and 200 loop-free paths (%.0f s)", seconds_since(t0)));

    const auto t1 = Clock::now();
    c.M = 2000;
    const auto samples = simulate_capacities(c.model, table08(), c.horizons, c.M, c.seed, StreamTag::path, g_workers);
    note(fmt("simulated %llu paths to n = 2048 in %.0f s", static_cast<unsigned long long>(c.M), seconds_since(t1)));

    const auto r7 = variance_report(c, samples);
    print_assertions(r7);
    verdict(7, assertion_passed(r7, "variance_plateau") && assertion_passed(r7, "sigma2_positive"),
            "variance rate with M = 2000");

    const auto t2 = Clock::now();
    const auto r8 = clt_report(c, samples, g_workers);
    print_assertions(r8);
    const double elapsed = seconds_since(t1);
    verdict(8, r8.passed() && elapsed < 3600.0,
            fmt("CLT at n = 1024, M = 2000, bootstrap B = 5000 (bootstrap %.0f s; simulation plus tests %.0f s, budget 3600 s)",
                seconds_since(t2), elapsed));
}

void criterion9() {
    bool ok = true;
    std::string detail;
    for (double alpha : {0.8, 1.1}) {
        const auto t0 = Clock::now();
        ExperimentConfig c;
        c.model = subordinate_walk(3, alpha);
        c.horizons = {128, 256, 512, 1024, 2048};
        c.M = 1000;
        c.seed = 9;
        const auto r = run_error_scaling(c, g_workers);
        print_assertions(r);
        const bool pass = assertion_passed(r, "first_moment_slope") && assertion_passed(r, "second_moment_slope");
        ok = ok && pass;
        const auto j = r.to_json()["results"];
        detail += fmt("%s(alpha %.1f: slope %.4f +- %.4f vs %.4f, second %.4f; M = 1000, %.0f s)", detail.empty() ? "" : "; ",
                      alpha, j["slope_first_moment"]["value"].get<double>(), j["slope_first_moment"]["se"].get<double>(),
                      j["slope_prediction"]["value"].get<double>(), j["slope_second_moment"]["value"].get<double>(),
                      seconds_since(t0));
    }
    verdict(9, ok, detail);
}

void criterion10() {
    bool ok = true;
    std::string detail;
    for (auto [d, alpha] : {std::pair{3, 0.8}, std::pair{3, 1.0}, std::pair{3, 1.1}, std::pair{5, 1.6}}) {
        ExperimentConfig c;
        c.model = subordinate_walk(d, alpha);
        c.M = 1000;
        c.seed = 10;
        const auto r = run_transience_diag(c, g_workers);
        print_assertions(r);
        const auto j = r.to_json()["results"];
        const bool strong = j["strongly_transient"].get<bool>();
        const bool pass = assertion_passed(r, "pn_slope") && (!strong || assertion_passed(r, "partial_sums_saturate"));
        ok = ok && pass;
        detail += fmt("%s(%.1f, %d): pn slope %.4f vs %.4f, increment %.4f", detail.empty() ? "" : "; ", alpha, d,
                      j["pn_slope"]["value"].get<double>(), j["pn_slope_target"]["value"].get<double>(),
                      j["last_increment"]["value"].get<double>());
    }
    verdict(10, ok, detail);
}

void criterion11() {
    ExperimentConfig c;
    c.model = alpha08();
    c.horizons = {32, 64, 128};
    c.M = 500;
    c.seed = 11;
    c.bootstrap = 200;
    c.table_radius = 16;
    int identical = 0, total = 0;
    std::string bad;
    const int many = std::max(3, g_workers);
    for (const auto& name : experiment_names()) {
        const auto a = run_experiment(name, c, 1);
        const auto b = run_experiment(name, c, 1);
        const auto m = run_experiment(name, c, many);
        const std::string ta = report_json_text(a);
        bool same = ta == report_json_text(b) && ta == report_json_text(m);
        for (std::size_t k = 0; same && k < a.tables.size(); ++k) {
            same = a.tables[k].second.rows == b.tables[k].second.rows && a.tables[k].second.rows == m.tables[k].second.rows;
        }
        ++total;
        if (same) {
            ++identical;
        } else {
            bad += " " + name;
        }
    }
    verdict(11, identical == total,
            fmt("%d of %d experiments byte-identical across two reruns and 1 vs %d workers%s", identical, total, many,
                bad.empty() ? "" : (" (differ:" + bad + ")").c_str()));
}

}  // namespace

int main(int argc, char** argv) {
    const unsigned hw = std::thread::hardware_concurrency();
    g_workers = hw == 0 ? 1 : static_cast<int>(hw);
    if (const char* w = std::getenv("RANGECAP_WORKERS")) g_workers = std::max(1, std::atoi(w));

    std::set<int> want;
    for (int i = 1; i < argc; ++i) want.insert(std::atoi(argv[i]));
    if (want.empty()) {
        for (int i = 1; i <= 11; ++i) want.insert(i);
    }
    try {
        if (want.count(1)) criterion1();
        if (want.count(2)) criterion2();
        if (want.count(3)) criterion3();
        if (want.count(4)) criterion4();
        if (want.count(5)) criterion5();
        if (want.count(6) || want.count(7) || want.count(8)) criteria678();
        if (want.count(9)) criterion9();
        if (want.count(10)) criterion10();
        if (want.count(11)) criterion11();
    } catch (const std::exception& e) {
        std::printf("acceptance aborted: %s\n", e.what());
        return 2;
    }
    return g_failed ? 1 : 0;
}
