// rangecap command-line entry point.
//
// Exit codes: 0 success, 1 assertion failure, 2 usage error, 3 numeric or
// resource error.

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "rangecap/capacity.hpp"
#include "rangecap/experiments.hpp"
#include "rangecap/green.hpp"
#include "rangecap/green_io.hpp"
#include "rangecap/range_stats.hpp"
#include "rangecap/walk_models.hpp"

using namespace rangecap;
using nlohmann::json;

namespace {

constexpr int kOk = 0, kAssertion = 1, kUsage = 2, kNumeric = 3;

struct ModelOpts {
    std::string kind = "subordinate";
    int d = 3;
    double alpha = 0.8;
    double loop_prob = -1.0;
    std::string variant = "base";

    void attach(CLI::App* app) {
        app->add_option("--model", kind, "Walk family")->check(CLI::IsMember({"simple", "subordinate"}));
        app->add_option("--d", d, "Dimension")->check(CLI::Range(1, kMaxDim));
        app->add_option("--alpha", alpha, "Stability index in (0, 2] (subordinate walk)");
        app->add_option("--loop-prob", loop_prob, "One-step loop probability (default: computed)");
        app->add_option("--variant", variant, "base, loop_free or loop_inserted")
            ->check(CLI::IsMember({"base", "loop_free", "loop_inserted"}));
    }

    WalkModel build() const {
        WalkModel m = kind == "simple" ? simple_walk(d)
                      : loop_prob >= 0.0 ? subordinate_walk(d, alpha, loop_prob)
                                         : subordinate_walk(d, alpha);
        if (variant == "loop_free") return loop_free_model(m);
        if (variant == "loop_inserted") return loop_inserted_model(m);
        return m;
    }
};

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string fnv_hex(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

/// Writes <out>.manifest.json describing how `out` was produced.
void write_file_manifest(const std::string& out, const std::string& command, const json& config, std::uint64_t seed,
                         double seconds) {
    json m;
    m["tool"] = "rangecap";
    m["version"] = "1.0.0";
    m["command"] = command;
    m["config"] = config;
    m["config_hash"] = fnv_hex(config.dump());
    m["seed"] = seed;
    m["finished_utc"] = utc_now();
    m["wall_seconds"] = seconds;
    m["output"] = std::filesystem::path(out).filename().string();
    std::ofstream f(out + ".manifest.json");
    if (!f) throw ResourceError("cannot write manifest for " + out);
    f << m.dump(2) << "\n";
}

Site parse_site(const std::string& text, int d) {
    std::string t = text;
    for (auto& ch : t) {
        if (ch == ',' || ch == '(' || ch == ')' || ch == '\t') ch = ' ';
    }
    std::istringstream is(t);
    Site s;
    int k = 0;
    std::int64_t v;
    while (is >> v) {
        if (k >= kMaxDim) throw DomainError("too many coordinates in '" + text + "'");
        s[k++] = v;
    }
    if (!is.eof()) throw DomainError("bad coordinate in '" + text + "'");
    if (d > 0 && k != d) throw DomainError("expected " + std::to_string(d) + " coordinates in '" + text + "'");
    return s;
}

/// One site per line; blank lines and lines starting with '#' are skipped.
std::vector<Site> read_sites(const std::string& path, int d) {
    std::ifstream f(path);
    if (!f) throw DomainError("cannot open sites file " + path);
    std::vector<Site> out;
    std::string line;
    while (std::getline(f, line)) {
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        if (line.back() == '\r') line.pop_back();
        out.push_back(parse_site(line, d));
    }
    return out;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Capacity of random walk ranges: sampling, Green tables, capacities and experiments"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Show help for every subcommand");
    int rc = kOk;

    // walk
    auto* walk = app.add_subcommand("walk", "Sample one path and print it as CSV (k,x1..xd)");
    ModelOpts walk_model;
    walk_model.attach(walk);
    std::uint64_t walk_n = 100, walk_seed = 1, walk_index = 0;
    std::string walk_out;
    walk->add_option("--n", walk_n, "Number of steps")->check(CLI::Range(std::uint64_t{0}, kMaxHorizon));
    walk->add_option("--seed", walk_seed, "Master seed");
    walk->add_option("--index", walk_index, "Stream index");
    walk->add_option("--out", walk_out, "Output CSV (default: stdout)");
    walk->callback([&] {
        const auto t0 = std::chrono::steady_clock::now();
        const WalkModel m = walk_model.build();
        RngStream rng(walk_seed, StreamTag::path, walk_index);
        const LatticePath path = sample_path(m, walk_n, rng);
        std::ostringstream os;
        os << "k";
        for (int j = 0; j < m.d; ++j) os << ",x" << (j + 1);
        os << "\n";
        for (std::size_t k = 0; k < path.positions.size(); ++k) {
            os << k;
            for (int j = 0; j < m.d; ++j) os << "," << path[k][j];
            os << "\n";
        }
        if (walk_out.empty()) {
            std::cout << os.str();
        } else {
            std::ofstream f(walk_out);
            if (!f) throw ResourceError("cannot write " + walk_out);
            f << os.str();
            json cfg = model_to_json(m);
            cfg["n"] = walk_n;
            cfg["index"] = walk_index;
            cfg["variant"] = walk_model.variant;
            write_file_manifest(walk_out, "walk", cfg, walk_seed, seconds_since(t0));
        }
    });

    // green
    auto* green = app.add_subcommand("green", "Green tables");
    green->require_subcommand(1);
    auto* gbuild = green->add_subcommand("build", "Build a Green table and write it in GRNT format");
    ModelOpts gmodel;
    gmodel.attach(gbuild);
    int g_radius = 0;
    std::string g_method = "bessel_integral", g_out;
    GreenMethodSpec gspec;
    gbuild->add_option("--radius", g_radius, "Window radius (default depends on d)");
    gbuild->add_option("--method", g_method, "bessel_integral, fourier_grid, renewal_series or occupation_mc")
        ->check(CLI::IsMember({"bessel_integral", "fourier_grid", "renewal_series", "occupation_mc"}));
    gbuild->add_option("--grid-n", gspec.grid_n, "fourier_grid: grid size");
    gbuild->add_option("--series-k", gspec.series_k, "renewal_series: truncation");
    gbuild->add_option("--mc-paths", gspec.mc_paths, "occupation_mc: number of paths");
    gbuild->add_option("--mc-horizon", gspec.mc_horizon, "occupation_mc: path length");
    gbuild->add_option("--seed", gspec.mc_seed, "occupation_mc: seed");
    gbuild->add_option("--workers", gspec.workers, "Worker threads (0: all)");
    gbuild->add_option("--out", g_out, "Output file")->required();
    gbuild->callback([&] {
        const auto t0 = std::chrono::steady_clock::now();
        const WalkModel m = gmodel.build();
        gspec.method = green_method_from_string(g_method);
        const int radius = g_radius > 0 ? g_radius : default_table_radius(m.d);
        const GreenTable t = build_green_table(m, radius, gspec);
        save_green_table(t, g_out);
        json cfg = model_to_json(m);
        cfg["variant"] = gmodel.variant;
        cfg["radius"] = radius;
        cfg["method"] = g_method;
        write_file_manifest(g_out, "green build", cfg, gspec.mc_seed, seconds_since(t0));
        std::printf("G(0) = %.12g\nradius = %d\nerror_estimate = %.3g\nfar_constant = %.8g\nfar_mismatch = %.3g\n",
                    t.origin(), radius, t.error_estimate(), t.far_constant(), t.far_mismatch());
    });
    auto* gprobe = green->add_subcommand("probe", "Print G(x) for the given sites");
    std::string gp_table;
    std::vector<std::string> gp_sites;
    gprobe->add_option("--green", gp_table, "GRNT file")->required();
    gprobe->add_option("--site", gp_sites, "Site such as 1,0,0 (repeatable)")->required();
    gprobe->callback([&] {
        const GreenTable t = load_green_table(gp_table);
        for (const auto& s : gp_sites) {
            const Site x = parse_site(s, t.dim());
            std::printf("%s %.15g%s\n", to_string(x, t.dim()).c_str(), t.at(x), t.in_window(x) ? "" : " (far field)");
        }
    });

    // capacity
    auto* cap = app.add_subcommand("capacity", "Capacities of finite sets");
    cap->require_subcommand(1);
    auto* cexact = cap->add_subcommand("exact", "Solve the equilibrium system");
    std::string ce_sites, ce_table;
    bool ce_measure = false;
    cexact->add_option("--sites", ce_sites, "Sites file (one site per line)")->required();
    cexact->add_option("--green", ce_table, "GRNT file")->required();
    cexact->add_flag("--measure", ce_measure, "Also print the equilibrium measure");
    cexact->callback([&] {
        const GreenTable t = load_green_table(ce_table);
        const auto A = read_sites(ce_sites, t.dim());
        const auto [est, eq] = capacity_exact(A, t);
        std::printf("capacity = %.15g\nresidual = %.3g\n", est.value, est.residual);
        if (ce_measure) {
            for (std::size_t i = 0; i < eq.sites.size(); ++i) {
                std::printf("%s %.15g\n", to_string(eq.sites[i], t.dim()).c_str(), eq.escape[i]);
            }
        }
    });
    auto* cmc = cap->add_subcommand("mc", "Monte Carlo escape-probability estimate");
    ModelOpts cm_model;
    cm_model.attach(cmc);
    std::string cm_sites;
    std::uint64_t cm_M = 100000, cm_seed = 1;
    EscapeOptions cm_opt;
    cmc->add_option("--sites", cm_sites, "Sites file")->required();
    cmc->add_option("--M", cm_M, "Escape trials per site");
    cmc->add_option("--seed", cm_seed, "Master seed");
    cmc->add_option("--initial-horizon", cm_opt.initial_horizon, "First horizon of the doubling schedule");
    cmc->add_option("--max-horizon", cm_opt.max_horizon, "Horizon cap");
    cmc->add_option("--workers", cm_opt.workers, "Worker threads (0: all)");
    cmc->callback([&] {
        const WalkModel m = cm_model.build();
        const auto A = read_sites(cm_sites, m.d);
        const auto est = capacity_mc(A, m, cm_opt, cm_M, cm_seed);
        std::printf("capacity = %.10g\nstd_error = %.3g\nhorizon = %llu\nflagged = %s\n", est.value, est.std_error,
                    static_cast<unsigned long long>(est.horizon), est.flagged ? "true" : "false");
    });
    auto* cdec = cap->add_subcommand("check-decomp", "Check both decomposition inequalities for A and B");
    std::string cd_a, cd_b, cd_table;
    double cd_tol = 1e-8;
    cdec->add_option("--a", cd_a, "Sites file for A")->required();
    cdec->add_option("--b", cd_b, "Sites file for B")->required();
    cdec->add_option("--green", cd_table, "GRNT file")->required();
    cdec->add_option("--tol", cd_tol, "Allowed negative slack");
    cdec->callback([&] {
        const GreenTable t = load_green_table(cd_table);
        const auto r = check_decomposition(read_sites(cd_a, t.dim()), read_sites(cd_b, t.dim()), t);
        std::printf("cap_a = %.12g\ncap_b = %.12g\ncap_union = %.12g\ncap_intersection = %.12g\ncross = %.12g\n"
                    "lower_slack = %.6g\nupper_slack = %.6g\n",
                    r.cap_a, r.cap_b, r.cap_union, r.cap_intersection, r.cross, r.lower_slack, r.upper_slack);
        if (!r.ok(cd_tol)) rc = kAssertion;
    });

    // range
    auto* range = app.add_subcommand("range", "Capacities of simulated ranges");
    range->require_subcommand(1);
    ModelOpts rmodel;
    std::uint64_t r_n = 1024, r_seed = 1, r_index = 0;
    std::string r_table;
    auto* rcap = range->add_subcommand("cap", "C_n along one simulated path");
    rmodel.attach(rcap);
    std::vector<std::uint64_t> r_horizons;
    rcap->add_option("--n", r_n, "Horizon");
    rcap->add_option("--horizons", r_horizons, "Several horizons (overrides --n)");
    rcap->add_option("--seed", r_seed, "Master seed");
    rcap->add_option("--index", r_index, "Path index");
    rcap->add_option("--green", r_table, "GRNT file (default: build one)");
    auto load_or_build = [&](const WalkModel& m) {
        if (!r_table.empty()) return load_green_table(r_table);
        return build_green_table(m.base(), default_table_radius(m.d));
    };
    rcap->callback([&] {
        const WalkModel m = rmodel.build();
        const GreenTable t = load_or_build(m);
        if (r_horizons.empty()) r_horizons = {r_n};
        std::sort(r_horizons.begin(), r_horizons.end());
        RngStream rng(r_seed, StreamTag::path, r_index);
        const LatticePath path = sample_path(m, r_horizons.back(), rng);
        const auto prof = range_capacity_profile(path, r_horizons, t);
        std::printf("n,C_n,R_n\n");
        for (std::size_t i = 0; i < r_horizons.size(); ++i) {
            std::printf("%llu,%.12g,%llu\n", static_cast<unsigned long long>(r_horizons[i]), prof.capacity[i],
                        static_cast<unsigned long long>(prof.range_size[i]));
        }
    });
    auto* rdy = range->add_subcommand("dyadic-check", "Dyadic decomposition bounds along one simulated path");
    ModelOpts dmodel;
    dmodel.attach(rdy);
    int r_levels = 3;
    double r_tol = 1e-7;
    rdy->add_option("--n", r_n, "Horizon");
    rdy->add_option("--L", r_levels, "Levels (2^L <= n)");
    rdy->add_option("--seed", r_seed, "Master seed");
    rdy->add_option("--index", r_index, "Path index");
    rdy->add_option("--green", r_table, "GRNT file (default: build one)");
    rdy->add_option("--tol", r_tol, "Allowed negative slack");
    rdy->callback([&] {
        const WalkModel m = dmodel.build();
        const GreenTable t = load_or_build(m);
        RngStream rng(r_seed, StreamTag::path, r_index);
        const LatticePath path = sample_path(m, r_n, rng);
        const auto r = dyadic_check(path, r_n, r_levels, t);
        double leaf = 0.0;
        for (double c : r.segment_caps) leaf += c;
        std::printf("C_n = %.12g\nsum_segment_caps = %.12g\nlower_slack = %.6g\nupper_slack = %.6g\n", r.total, leaf,
                    r.lower_slack, r.upper_slack);
        if (r.lower_slack < -r_tol || r.upper_slack < -r_tol) rc = kAssertion;
    });

    // experiment
    auto* exp = app.add_subcommand("experiment", "Run a seeded experiment and write its report");
    std::string e_name, e_config, e_out = "out";
    std::uint64_t e_seed = 0;
    int e_workers = 1;
    exp->add_option("name", e_name, "Experiment")->required()->check(CLI::IsMember(experiment_names()));
    exp->add_option("--config", e_config, "JSON config (default: built-in defaults)");
    auto* seed_opt = exp->add_option("--seed", e_seed, "Override the config seed");
    exp->add_option("--workers", e_workers, "Worker threads (0: all); does not affect results");
    exp->add_option("--out", e_out, "Output directory");
    exp->callback([&] {
        const auto t0 = std::chrono::steady_clock::now();
        ExperimentConfig c;
        if (!e_config.empty()) {
            std::ifstream f(e_config);
            if (!f) throw DomainError("cannot open config " + e_config);
            json j;
            try {
                j = json::parse(f);
            } catch (const json::exception& e) {
                throw DomainError(std::string("config is not valid JSON: ") + e.what());
            }
            c = config_from_json(j);
        } else {
            c.model = subordinate_walk(3, 0.8);
        }
        if (seed_opt->count() > 0) c.seed = e_seed;
        const ExperimentReport r = run_experiment(e_name, c, e_workers);
        write_experiment_outputs(r, e_out, seconds_since(t0), e_workers);
        for (const auto& a : r.assertions) {
            std::printf("%s %s: %s\n", a.passed ? "PASS" : "FAIL", a.name.c_str(), a.detail.c_str());
        }
        std::printf("report: %s\n", (std::filesystem::path(e_out) / "report.json").string().c_str());
        if (!r.passed()) rc = kAssertion;
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    } catch (const DomainError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kUsage;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return kNumeric;
    } catch (const ResourceError& e) {
        std::fprintf(stderr, "resource error: %s\n", e.what());
        return kNumeric;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kNumeric;
    }
    return rc;
}
