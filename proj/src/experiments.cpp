#include "rangecap/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>

#include "rangecap/capacity.hpp"
#include "rangecap/green_io.hpp"
#include "rangecap/parallel.hpp"
#include "rangecap/range_stats.hpp"
#include "rangecap/stats.hpp"

namespace rangecap {

using nlohmann::json;

namespace {

constexpr const char* kVersion = "1.0.0";

json estimate(double value, double se) {
    json j;
    j["value"] = value;
    j["se"] = std::isfinite(se) ? json(se) : json(nullptr);
    return j;
}

json exact(double value) {
    json j;
    j["value"] = value;
    j["tolerance"] = "deterministic";
    return j;
}

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
    char buf[160];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw DomainError(where + ": expected a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }) == allowed.end()) {
            throw DomainError(where + ": unknown key '" + key + "'");
        }
    }
}

template <class T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

double mean_of(std::span<const double> x) { return x.empty() ? 0.0 : compensated_sum(x) / static_cast<double>(x.size()); }

/// Horizons must be strictly increasing so the largest one is last.
std::uint64_t top_horizon(std::span<const std::uint64_t> h) { return h.empty() ? 0 : h.back(); }

std::size_t clt_index(const ExperimentConfig& c) {
    if (c.clt_horizon == 0) return c.horizons.size() - 1;
    const auto it = std::find(c.horizons.begin(), c.horizons.end(), c.clt_horizon);
    if (it == c.horizons.end()) throw DomainError("clt_horizon must be one of the horizons");
    return static_cast<std::size_t>(it - c.horizons.begin());
}

void require_strong(const ExperimentConfig& c, const std::string& what) {
    const auto& m = c.model;
    if (!(m.d > 2.5 * m.alpha)) throw DomainError(what + " requires d > 5 alpha / 2");
}

CapacitySamples synthetic_samples(const ExperimentConfig& c) {
    CapacitySamples s;
    s.horizons = c.horizons;
    s.capacity.assign(c.M, std::vector<double>(c.horizons.size()));
    s.range_size.assign(c.M, std::vector<std::uint64_t>(c.horizons.size(), 0));
    for (std::uint64_t i = 0; i < c.M; ++i) {
        RngStream rng(c.seed, StreamTag::synthetic, i);
        for (std::size_t h = 0; h < c.horizons.size(); ++h) {
            const double scale = std::sqrt(static_cast<double>(c.horizons[h]));
            double v;
            if (c.synthetic == "gaussian") {
                v = rng.normal();
            } else if (c.synthetic == "exponential") {
                v = -std::log(rng.uniform_open());
            } else {
                throw DomainError("synthetic must be 'gaussian' or 'exponential'");
            }
            s.capacity[i][h] = scale * v;
        }
    }
    return s;
}

CsvTable samples_table(const CapacitySamples& s) {
    CsvTable t;
    t.header = {"path_id", "n", "C_n", "R_n"};
    for (std::size_t i = 0; i < s.paths(); ++i) {
        for (std::size_t h = 0; h < s.horizons.size(); ++h) {
            t.rows.push_back({std::to_string(i), std::to_string(s.horizons[h]), num(s.capacity[i][h]),
                              std::to_string(s.range_size[i][h])});
        }
    }
    return t;
}

ExperimentReport new_report(const std::string& name, const ExperimentConfig& c) {
    ExperimentReport r;
    r.experiment = name;
    r.config = c;
    return r;
}

void add(ExperimentReport& r, const std::string& name, bool ok, std::string detail) {
    r.assertions.push_back({name, ok, std::move(detail)});
}

/// Per-path least-squares slope of C_n against n.
std::vector<double> path_slopes(const CapacitySamples& s) {
    const std::size_t H = s.horizons.size();
    std::vector<double> w(H, 0.0);
    if (H == 1) {
        w[0] = 1.0 / static_cast<double>(s.horizons[0]);
    } else {
        double mean = 0.0;
        for (auto n : s.horizons) mean += static_cast<double>(n);
        mean /= static_cast<double>(H);
        double sxx = 0.0;
        for (auto n : s.horizons) sxx += (static_cast<double>(n) - mean) * (static_cast<double>(n) - mean);
        for (std::size_t h = 0; h < H; ++h) w[h] = (static_cast<double>(s.horizons[h]) - mean) / sxx;
    }
    std::vector<double> out(s.paths());
    for (std::size_t i = 0; i < s.paths(); ++i) {
        double v = 0.0;
        for (std::size_t h = 0; h < H; ++h) v += w[h] * s.capacity[i][h];
        out[i] = v;
    }
    return out;
}

/// Sites in first-visit order and #R_k for k = 0..horizon.
struct VisitOrder {
    std::vector<Site> sites;
    std::vector<std::uint64_t> size_at;
};

VisitOrder visit_order(const LatticePath& path) {
    VisitOrder v;
    SiteSet set;
    v.size_at.reserve(path.positions.size());
    for (const auto& s : path.positions) {
        set.insert(s);
        v.size_at.push_back(set.size());
    }
    v.sites.assign(set.sites().begin(), set.sites().end());
    return v;
}

double log_slope_prediction(const ExperimentConfig& c) {
    Asymptotics a{c.model.alpha, c.model.d};
    std::vector<double> x, y;
    for (auto n : c.horizons) {
        x.push_back(std::log(static_cast<double>(n)));
        y.push_back(std::log(h_d_eval(a, n)));
    }
    return x.size() < 2 ? 0.0 : ols(x, y).slope;
}

}  // namespace

// ---------------------------------------------------------------- config

void ExperimentConfig::validate() const {
    model.validate();
    if (horizons.empty()) throw DomainError("horizons must not be empty");
    for (std::size_t i = 0; i < horizons.size(); ++i) {
        if (horizons[i] < 1) throw DomainError("horizons must be >= 1");
        if (i > 0 && horizons[i] <= horizons[i - 1]) throw DomainError("horizons must be strictly increasing");
    }
    if (horizons.back() > kMaxHorizon) throw DomainError("horizon exceeds the supported maximum");
    if (M < 1) throw DomainError("M must be >= 1");
    if (bootstrap < 1) throw DomainError("bootstrap must be >= 1");
    if (hist_bins < 1) throw DomainError("hist_bins must be >= 1");
    if (!(tail_c_prime > 0.0)) throw DomainError("tail_c_prime must be positive");
    if (pn_min < 1 || pn_max <= pn_min) throw DomainError("need 1 <= pn_min < pn_max");
    if (!synthetic.empty() && synthetic != "gaussian" && synthetic != "exponential") {
        throw DomainError("synthetic must be 'gaussian' or 'exponential'");
    }
}

json model_to_json(const WalkModel& m) {
    json j;
    j["kind"] = m.kind == WalkKind::simple ? "simple" : "subordinate";
    j["d"] = m.d;
    j["alpha"] = m.alpha;
    j["loop_prob"] = m.base_loop_prob;
    return j;
}

WalkModel model_from_json(const json& j) {
    check_keys(j, {"kind", "d", "alpha", "loop_prob"}, "model");
    const std::string kind = j.value("kind", std::string("subordinate"));
    const int d = j.value("d", 3);
    if (kind == "simple") return simple_walk(d);
    if (kind != "subordinate") throw DomainError("model.kind must be 'simple' or 'subordinate'");
    const double alpha = j.value("alpha", 0.8);
    if (j.contains("loop_prob")) return subordinate_walk(d, alpha, j.at("loop_prob").get<double>());
    return subordinate_walk(d, alpha);
}

json to_json(const ExperimentConfig& c) {
    json j;
    j["model"] = model_to_json(c.model);
    j["horizons"] = c.horizons;
    j["M"] = c.M;
    j["seed"] = c.seed;
    j["green"] = {{"table", c.table_path},
                  {"method", to_string(c.green_method)},
                  {"radius", c.table_radius},
                  {"grid_n", c.grid_n}};
    j["bootstrap"] = c.bootstrap;
    j["hist_bins"] = c.hist_bins;
    j["clt_horizon"] = c.clt_horizon;
    j["synthetic"] = c.synthetic;
    j["tail_c"] = c.tail_c;
    j["tail_c_prime"] = c.tail_c_prime;
    j["loop_marginal_horizons"] = c.loop_marginal_horizons;
    j["loop_range_horizon"] = c.loop_range_horizon;
    j["pn_min"] = c.pn_min;
    j["pn_max"] = c.pn_max;
    j["partial_sum_caps"] = c.partial_sum_caps;
    j["allow_weak"] = c.allow_weak;
    const auto& t = c.thresholds;
    j["thresholds"] = {{"lln_z", t.lln_z},
                       {"lln_drift", t.lln_drift},
                       {"ratio_sigma", t.ratio_sigma},
                       {"variance_plateau", t.variance_plateau},
                       {"variance_z", t.variance_z},
                       {"clt_skew", t.clt_skew},
                       {"clt_kurtosis", t.clt_kurtosis},
                       {"clt_p", t.clt_p},
                       {"error_slope_tol", t.error_slope_tol},
                       {"second_moment_tol", t.second_moment_tol},
                       {"moment4_ratio", t.moment4_ratio},
                       {"loop_p", t.loop_p},
                       {"loop_min_pass", t.loop_min_pass},
                       {"pn_slope_rel", t.pn_slope_rel},
                       {"saturation", t.saturation},
                       {"median_slope_rel", t.median_slope_rel}};
    return j;
}

ExperimentConfig config_from_json(const json& j) {
    check_keys(j,
               {"model", "horizons", "M", "seed", "green", "bootstrap", "hist_bins", "clt_horizon", "synthetic", "tail_c",
                "tail_c_prime", "loop_marginal_horizons", "loop_range_horizon", "pn_min", "pn_max", "partial_sum_caps",
                "allow_weak", "thresholds"},
               "config");
    ExperimentConfig c;
    try {
        if (j.contains("model")) {
            c.model = model_from_json(j.at("model"));
        } else {
            c.model = subordinate_walk(3, 0.8);
        }
        read(j, "horizons", c.horizons);
        read(j, "M", c.M);
        read(j, "seed", c.seed);
        if (j.contains("green")) {
            const auto& g = j.at("green");
            check_keys(g, {"table", "method", "radius", "grid_n"}, "green");
            read(g, "table", c.table_path);
            if (g.contains("method")) c.green_method = green_method_from_string(g.at("method").get<std::string>());
            read(g, "radius", c.table_radius);
            read(g, "grid_n", c.grid_n);
        }
        read(j, "bootstrap", c.bootstrap);
        read(j, "hist_bins", c.hist_bins);
        read(j, "clt_horizon", c.clt_horizon);
        read(j, "synthetic", c.synthetic);
        read(j, "tail_c", c.tail_c);
        read(j, "tail_c_prime", c.tail_c_prime);
        read(j, "loop_marginal_horizons", c.loop_marginal_horizons);
        read(j, "loop_range_horizon", c.loop_range_horizon);
        read(j, "pn_min", c.pn_min);
        read(j, "pn_max", c.pn_max);
        read(j, "partial_sum_caps", c.partial_sum_caps);
        read(j, "allow_weak", c.allow_weak);
        if (j.contains("thresholds")) {
            const auto& t = j.at("thresholds");
            check_keys(t,
                       {"lln_z", "lln_drift", "ratio_sigma", "variance_plateau", "variance_z", "clt_skew", "clt_kurtosis",
                        "clt_p", "error_slope_tol", "second_moment_tol", "moment4_ratio", "loop_p", "loop_min_pass",
                        "pn_slope_rel", "saturation", "median_slope_rel"},
                       "thresholds");
            auto& th = c.thresholds;
            read(t, "lln_z", th.lln_z);
            read(t, "lln_drift", th.lln_drift);
            read(t, "ratio_sigma", th.ratio_sigma);
            read(t, "variance_plateau", th.variance_plateau);
            read(t, "variance_z", th.variance_z);
            read(t, "clt_skew", th.clt_skew);
            read(t, "clt_kurtosis", th.clt_kurtosis);
            read(t, "clt_p", th.clt_p);
            read(t, "error_slope_tol", th.error_slope_tol);
            read(t, "second_moment_tol", th.second_moment_tol);
            read(t, "moment4_ratio", th.moment4_ratio);
            read(t, "loop_p", th.loop_p);
            read(t, "loop_min_pass", th.loop_min_pass);
            read(t, "pn_slope_rel", th.pn_slope_rel);
            read(t, "saturation", th.saturation);
            read(t, "median_slope_rel", th.median_slope_rel);
        }
    } catch (const json::exception& e) {
        throw DomainError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

std::string config_hash(const ExperimentConfig& c) {
    const std::string text = to_json(c).dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---------------------------------------------------------------- report

bool ExperimentReport::passed() const {
    return std::all_of(assertions.begin(), assertions.end(), [](const Assertion& a) { return a.passed; });
}

const Assertion* ExperimentReport::find(const std::string& name) const {
    for (const auto& a : assertions) {
        if (a.name == name) return &a;
    }
    return nullptr;
}

json ExperimentReport::to_json() const {
    json j;
    j["experiment"] = experiment;
    j["config"] = rangecap::to_json(config);
    j["config_hash"] = config_hash(config);
    j["seed"] = config.seed;
    j["model"] = config.model.describe();
    j["results"] = results;
    json a = json::array();
    for (const auto& x : assertions) a.push_back({{"name", x.name}, {"passed", x.passed}, {"detail", x.detail}});
    j["assertions"] = a;
    j["passed"] = passed();
    return j;
}

std::string report_json_text(const ExperimentReport& r) { return r.to_json().dump(2) + "\n"; }

std::vector<double> CapacitySamples::column(std::size_t h) const {
    std::vector<double> out(capacity.size());
    for (std::size_t i = 0; i < capacity.size(); ++i) out[i] = capacity[i][h];
    return out;
}

// ---------------------------------------------------------------- simulation

CapacitySamples simulate_capacities(const WalkModel& walk, const GreenTable& table, std::span<const std::uint64_t> horizons,
                                    std::uint64_t M, std::uint64_t seed, StreamTag tag, int workers, bool occupation) {
    CapacitySamples s;
    s.horizons.assign(horizons.begin(), horizons.end());
    s.capacity.resize(M);
    s.range_size.resize(M);
    if (occupation) s.occupation_bound.resize(M);
    const StepSampler sampler(walk);
    const std::uint64_t top = top_horizon(horizons);
    parallel_for(M, workers, [&](std::size_t i) {
        RngStream rng(seed, tag, i);
        const LatticePath path = sample_path(sampler, top, rng);
        RangeProfile prof = range_capacity_profile(path, horizons, table);
        s.capacity[i] = std::move(prof.capacity);
        s.range_size[i] = std::move(prof.range_size);
        if (occupation) {
            for (auto n : horizons) s.occupation_bound[i].push_back(occupation_lower_bound(path, n, table).value);
        }
    });
    return s;
}

GreenTable experiment_table(const ExperimentConfig& c, int workers) {
    const WalkModel base = c.model.base();
    if (!c.table_path.empty()) {
        GreenTable t = load_green_table(c.table_path);
        const auto& m = t.model();
        if (m.kind != base.kind || m.d != base.d || std::abs(m.alpha - base.alpha) > 1e-12) {
            throw DomainError("Green table " + c.table_path + " is for " + m.describe() + ", not " + base.describe());
        }
        return t;
    }
    GreenMethodSpec spec;
    spec.method = c.green_method;
    spec.grid_n = c.grid_n;
    spec.workers = workers;
    spec.mc_seed = c.seed;
    const int radius = c.table_radius > 0 ? c.table_radius : default_table_radius(base.d);
    return build_green_table(base, radius, spec);
}

// ---------------------------------------------------------------- LLN

ExperimentReport lln_report(const ExperimentConfig& c, const CapacitySamples& base, const CapacitySamples& loop_free) {
    ExperimentReport r = new_report("lln", c);
    const auto& th = c.thresholds;
    const std::size_t H = base.horizons.size();
    json per = json::array();
    std::vector<double> mu(H), mu_se(H);
    for (std::size_t h = 0; h < H; ++h) {
        const double n = static_cast<double>(base.horizons[h]);
        const auto col = base.column(h);
        const Moments m = moments(col);
        mu[h] = m.mean / n;
        mu_se[h] = m.mean_se() / n;
        json row;
        row["n"] = base.horizons[h];
        row["mean_C_over_n"] = estimate(mu[h], mu_se[h]);
        std::vector<double> rs;
        for (const auto& v : base.range_size) rs.push_back(static_cast<double>(v[h]));
        const Moments mr = moments(rs);
        row["mean_range_size"] = estimate(mr.mean, mr.mean_se());
        if (loop_free.paths() > 0) {
            const Moments mf = moments(loop_free.column(h));
            row["loop_free_mean_C_over_n"] = estimate(mf.mean / n, mf.mean_se() / n);
        }
        if (!base.occupation_bound.empty()) {
            std::vector<double> J;
            for (const auto& v : base.occupation_bound) J.push_back(1.0 / v[h]);
            const Moments mj = moments(J);
            row["mean_J"] = estimate(mj.mean, mj.mean_se());
            row["occupation_bound"] = estimate(1.0 / mj.mean, mj.mean_se() / (mj.mean * mj.mean));
            add(r, "occupation_bound_mean_n" + std::to_string(base.horizons[h]), 1.0 / mj.mean <= m.mean + 1e-8,
                fmt("1/E[J]=%.6g <= E[C_n]=%.6g", 1.0 / mj.mean, m.mean));
        }
        per.push_back(row);
    }
    r.results["per_horizon"] = per;

    if (!base.occupation_bound.empty()) {
        std::size_t violations = 0;
        double worst = -INFINITY;
        for (std::size_t i = 0; i < base.paths(); ++i) {
            for (std::size_t h = 0; h < H; ++h) {
                const double gap = base.occupation_bound[i][h] - base.capacity[i][h];
                worst = std::max(worst, gap);
                if (gap > 1e-8) ++violations;
            }
        }
        r.results["occupation_pathwise_max_excess"] = exact(worst);
        add(r, "occupation_bound_pathwise", violations == 0,
            fmt("max(1/J - C_n) = %.3g over all paths and horizons", worst));
    }

    const double mu_hat = mu.back(), mu_hat_se = mu_se.back();
    r.results["mu_hat"] = estimate(mu_hat, mu_hat_se);
    const double z = mu_hat_se > 0.0 ? mu_hat / mu_hat_se : (mu_hat > 0.0 ? INFINITY : 0.0);
    add(r, "mu_positive", z > th.lln_z, fmt("mu_hat/se = %.4g (need > %.3g)", z, th.lln_z));
    if (H >= 2) {
        const double drift = std::abs(mu[H - 1] - mu[H - 2]) / std::abs(mu[H - 1]);
        r.results["relative_drift"] = exact(drift);
        add(r, "mu_drift", drift < th.lln_drift, fmt("relative drift %.4g (need < %.3g)", drift, th.lln_drift));
    }

    const auto base_slopes = path_slopes(base);
    const Moments sb = moments(base_slopes);
    r.results["base_slope"] = estimate(sb.mean, sb.mean_se());
    if (loop_free.paths() > 0) {
        const auto free_slopes = path_slopes(loop_free);
        const Moments sf = moments(free_slopes);
        const double p = c.model.base_loop_prob;
        const double ratio = sf.mean / sb.mean;
        const double ratio_se =
            std::abs(ratio) * std::hypot(sf.mean_se() / sf.mean, sb.mean_se() / sb.mean);
        const double target = 1.0 / (1.0 - p);
        r.results["loop_free_slope"] = estimate(sf.mean, sf.mean_se());
        r.results["slope_ratio"] = estimate(ratio, ratio_se);
        r.results["slope_ratio_target"] = exact(target);
        const double dev = std::abs(ratio - target);
        add(r, "loop_free_ratio", dev <= th.ratio_sigma * ratio_se,
            fmt("|ratio - 1/(1-p)| = %.4g, %.3g se allowed (se=%.4g)", dev, th.ratio_sigma, ratio_se));
        r.tables.push_back({"samples_loop_free.csv", samples_table(loop_free)});
    }
    r.tables.insert(r.tables.begin(), {"samples.csv", samples_table(base)});
    return r;
}

ExperimentReport run_lln(const ExperimentConfig& c, int workers) {
    c.validate();
    if (!c.model.transient()) throw DomainError("lln requires a transient model");
    if (c.M < 2) throw DomainError("lln requires M >= 2");
    const GreenTable table = experiment_table(c, workers);
    const auto base = simulate_capacities(c.model, table, c.horizons, c.M, c.seed, StreamTag::path, workers, true);
    // Loop-free ranges are measured with the Green function of the base walk.
    const auto free = simulate_capacities(loop_free_model(c.model.base()), table, c.horizons, c.M, c.seed,
                                          StreamTag::loop_free_path, workers, false);
    return lln_report(c, base, free);
}

// ---------------------------------------------------------------- variance

ExperimentReport variance_report(const ExperimentConfig& c, const CapacitySamples& s) {
    ExperimentReport r = new_report("variance", c);
    const auto& th = c.thresholds;
    const std::size_t H = s.horizons.size();
    std::vector<double> v(H), se(H);
    bool degenerate = false;
    json per = json::array();
    for (std::size_t h = 0; h < H; ++h) {
        const double n = static_cast<double>(s.horizons[h]);
        const auto col = s.column(h);
        if (col.size() >= 3) {
            const Estimate e = jackknife_variance(col);
            v[h] = e.value / n;
            se[h] = e.se / n;
        } else {
            v[h] = moments(col).variance / n;
            se[h] = NAN;
        }
        if (!(v[h] > 0.0)) degenerate = true;
        per.push_back({{"n", s.horizons[h]}, {"var_over_n", estimate(v[h], se[h])}});
    }
    r.results["per_horizon"] = per;
    r.results["degenerate"] = degenerate;
    r.results["sigma2_hat"] = estimate(v.back(), se.back());
    if (H >= 2) {
        const double change = std::abs(v[H - 1] - v[H - 2]) / std::abs(v[H - 1]);
        r.results["plateau_change"] = exact(change);
        add(r, "variance_plateau", std::isfinite(change) && change < th.variance_plateau,
            fmt("last-two relative change %.4g (need < %.3g)", change, th.variance_plateau));
    }
    const double z = se.back() > 0.0 ? v.back() / se.back() : 0.0;
    add(r, "sigma2_positive", !degenerate && std::isfinite(z) && z > th.variance_z,
        degenerate ? std::string("degenerate: zero variance") : fmt("sigma2/se = %.4g (need > %.3g)", z, th.variance_z));
    r.tables.push_back({"samples.csv", samples_table(s)});
    return r;
}

ExperimentReport run_variance(const ExperimentConfig& c, int workers) {
    c.validate();
    if (c.M < 2) throw DomainError("variance requires M >= 2");
    if (!c.allow_weak) {
        require_strong(c, "variance");
    } else if (!(c.model.d > 2.0 * c.model.alpha)) {
        throw DomainError("variance requires d > 2 alpha even with allow_weak");
    }
    const GreenTable table = experiment_table(c, workers);
    return variance_report(c, simulate_capacities(c.model, table, c.horizons, c.M, c.seed, StreamTag::path, workers));
}

// ---------------------------------------------------------------- CLT

ExperimentReport clt_report(const ExperimentConfig& c, const CapacitySamples& s, int workers) {
    ExperimentReport r = new_report("clt", c);
    const auto& th = c.thresholds;
    const std::size_t target = clt_index(c);
    const double M = static_cast<double>(s.paths());
    json per = json::array();
    for (std::size_t h = 0; h < s.horizons.size(); ++h) {
        const Moments m = moments(s.column(h));
        per.push_back({{"n", s.horizons[h]},
                       {"mean", estimate(m.mean, m.mean_se())},
                       {"sd", estimate(m.std_dev(), m.std_dev() / std::sqrt(2.0 * (M - 1.0)))},
                       {"skewness", estimate(m.skewness, std::sqrt(6.0 / M))},
                       {"excess_kurtosis", estimate(m.excess_kurtosis, std::sqrt(24.0 / M))}});
    }
    r.results["per_horizon"] = per;

    const auto x = s.column(target);
    const Moments m = moments(x);
    const BootstrapTest ad = anderson_darling_bootstrap(x, c.bootstrap, c.seed, workers);
    r.results["target_n"] = s.horizons[target];
    r.results["anderson_darling"] = {{"statistic", exact(ad.statistic)},
                                     {"p_value", estimate(ad.p_value, std::sqrt(ad.p_value * (1.0 - ad.p_value) /
                                                                               static_cast<double>(ad.replicates)))},
                                     {"replicates", ad.replicates}};
    add(r, "skewness", std::abs(m.skewness) < th.clt_skew, fmt("|skew| = %.4g (need < %.3g)", std::abs(m.skewness), th.clt_skew));
    add(r, "excess_kurtosis", std::abs(m.excess_kurtosis) < th.clt_kurtosis,
        fmt("|excess kurtosis| = %.4g (need < %.3g)", std::abs(m.excess_kurtosis), th.clt_kurtosis));
    add(r, "normality", ad.p_value > th.clt_p, fmt("bootstrap A^2 p = %.4g (need > %.3g)", ad.p_value, th.clt_p));

    CsvTable hist;
    hist.header = {"bin_lo", "bin_hi", "count"};
    const auto hg = histogram(x, c.hist_bins);
    for (std::size_t b = 0; b < hg.counts.size(); ++b) {
        hist.rows.push_back({num(hg.edges[b]), num(hg.edges[b + 1]), std::to_string(hg.counts[b])});
    }
    CsvTable qq;
    qq.header = {"theoretical", "sample"};
    for (const auto& q : normal_qq(x)) qq.rows.push_back({num(q.theoretical), num(q.sample)});
    r.tables.push_back({"samples.csv", samples_table(s)});
    r.tables.push_back({"hist.csv", std::move(hist)});
    r.tables.push_back({"qq.csv", std::move(qq)});
    return r;
}

ExperimentReport run_clt(const ExperimentConfig& c, int workers) {
    c.validate();
    if (c.M < 500) throw DomainError("clt requires M >= 500");
    clt_index(c);
    if (!c.synthetic.empty()) return clt_report(c, synthetic_samples(c), workers);
    require_strong(c, "clt");
    const GreenTable table = experiment_table(c, workers);
    return clt_report(c, simulate_capacities(c.model, table, c.horizons, c.M, c.seed, StreamTag::path, workers), workers);
}

// ---------------------------------------------------------------- fourth moment

ExperimentReport moment4_report(const ExperimentConfig& c, const CapacitySamples& s) {
    ExperimentReport r = new_report("moment4", c);
    std::vector<double> ratio;
    json per = json::array();
    for (std::size_t h = 0; h < s.horizons.size(); ++h) {
        const double n = static_cast<double>(s.horizons[h]);
        auto col = s.column(h);
        const double mean = mean_of(col);
        for (auto& v : col) v = std::pow(v - mean, 4) / (n * n);
        const Moments m = moments(col);
        ratio.push_back(m.mean);
        per.push_back({{"n", s.horizons[h]}, {"m4_over_n2", estimate(m.mean, m.mean_se())}});
    }
    r.results["per_horizon"] = per;
    std::vector<double> sorted = ratio;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t k = sorted.size();
    const double median = k % 2 ? sorted[k / 2] : 0.5 * (sorted[k / 2 - 1] + sorted[k / 2]);
    const double mx = sorted.back();
    r.results["max"] = exact(mx);
    r.results["median"] = exact(median);
    add(r, "bounded", mx <= c.thresholds.moment4_ratio * median,
        fmt("max %.4g <= %.3g x median %.4g", mx, c.thresholds.moment4_ratio, median));
    r.tables.push_back({"samples.csv", samples_table(s)});
    return r;
}

ExperimentReport run_moment4(const ExperimentConfig& c, int workers) {
    c.validate();
    if (c.M < 4) throw DomainError("moment4 requires M >= 4");
    if (!c.synthetic.empty()) return moment4_report(c, synthetic_samples(c));
    if (!c.model.transient()) throw DomainError("moment4 requires a transient model");
    const GreenTable table = experiment_table(c, workers);
    return moment4_report(c, simulate_capacities(c.model, table, c.horizons, c.M, c.seed, StreamTag::path, workers));
}

// ---------------------------------------------------------------- error terms

ExperimentReport run_error_scaling(const ExperimentConfig& c, int workers) {
    c.validate();
    const auto& m = c.model;
    if (!(m.d > 2.0 * m.alpha)) throw DomainError("error_scaling requires d > 2 alpha");
    if (c.M < 2) throw DomainError("error_scaling requires M >= 2");
    const GreenTable table = experiment_table(c, workers);
    const std::size_t H = c.horizons.size();
    const std::uint64_t top = top_horizon(c.horizons);
    const auto tail_end = [&](std::uint64_t n) {
        return static_cast<std::uint64_t>(std::floor(static_cast<double>(n) * (1.0 + c.tail_c_prime)));
    };
    const std::uint64_t tail_top = tail_end(top);
    const StepSampler base_sampler(m.base());
    const StepSampler free_sampler(loop_free_model(m.base()));

    struct PairTerms {
        std::vector<double> cross, self, tail;
    };
    std::vector<PairTerms> terms(c.M);
    parallel_for(c.M, workers, [&](std::size_t i) {
        RngStream r1(c.seed, StreamTag::path, i), r2(c.seed, StreamTag::partner_path, i),
            r3(c.seed, StreamTag::loop_free_path, i);
        const VisitOrder a = visit_order(sample_path(base_sampler, top, r1));
        const VisitOrder b = visit_order(sample_path(base_sampler, top, r2));
        PairTerms& t = terms[i];
        t.cross.assign(H, 0.0);
        t.self.assign(H, 0.0);
        std::vector<CompensatedSum> cross(H), self(H);
        std::vector<std::uint64_t> na(H), nb(H);
        for (std::size_t h = 0; h < H; ++h) {
            na[h] = a.size_at[c.horizons[h]];
            nb[h] = b.size_at[c.horizons[h]];
        }
        // G(R_n, R'_n) for all n from one pass over R_top x R'_top, row by row.
        for (std::size_t x = 0; x < na[H - 1]; ++x) {
            double row = 0.0;
            std::size_t h = 0;
            for (std::size_t y = 0; y <= nb[H - 1]; ++y) {
                while (h < H && y == nb[h]) {
                    if (x < na[h]) cross[h].add(row);
                    ++h;
                }
                if (y == nb[H - 1]) break;
                row += table.at(checked_sub(a.sites[x], b.sites[y]));
            }
            double srow = 0.0;
            for (std::size_t y = 0; y < x; ++y) srow += table.at(checked_sub(a.sites[x], a.sites[y]));
            for (std::size_t hh = 0; hh < H; ++hh) {
                if (x < na[hh]) self[hh].add(table.origin() + 2.0 * srow);
            }
        }
        for (std::size_t h = 0; h < H; ++h) {
            t.cross[h] = cross[h].value();
            t.self[h] = self[h].value();
        }
        if (!c.tail_c.empty()) {
            const VisitOrder f = visit_order(sample_path(free_sampler, tail_top, r3));
            t.tail.assign(H, 0.0);
            for (std::size_t h = 0; h < H; ++h) {
                const std::uint64_t n = c.horizons[h];
                const std::size_t a_end = f.size_at[n];
                const std::size_t b_begin = n == 0 ? 0 : f.size_at[n - 1];
                const std::size_t b_end = f.size_at[tail_end(n)];
                CompensatedSum s;
                for (std::size_t x = 0; x < a_end; ++x) {
                    double row = 0.0;
                    for (std::size_t y = b_begin; y < b_end; ++y) row += table.at(checked_sub(f.sites[x], f.sites[y]));
                    s.add(row);
                }
                t.tail[h] = s.value();
            }
        }
    });

    ExperimentReport r = new_report("error_scaling", c);
    const auto& th = c.thresholds;
    std::vector<double> lx, l1, l1se, l2, l2se;
    json per = json::array();
    CsvTable samples;
    samples.header = {"pair_id", "n", "G_cross", "G_self", "G_tail"};
    for (std::size_t h = 0; h < H; ++h) {
        const double n = static_cast<double>(c.horizons[h]);
        std::vector<double> g1, g2, gs;
        for (const auto& t : terms) {
            g1.push_back(t.cross[h]);
            g2.push_back(t.cross[h] * t.cross[h]);
            gs.push_back(t.self[h] / n);
        }
        const Moments m1 = moments(g1), m2 = moments(g2), ms = moments(gs);
        json row;
        row["n"] = c.horizons[h];
        row["mean_G_cross"] = estimate(m1.mean, m1.mean_se());
        row["mean_G_cross_sq"] = estimate(m2.mean, m2.mean_se());
        row["mean_G_self_over_n"] = estimate(ms.mean, ms.mean_se());
        if (!c.tail_c.empty()) {
            json tails = json::array();
            for (double cc : c.tail_c) {
                const double thr = cc * std::sqrt(n);
                double hits = 0.0;
                for (const auto& t : terms) hits += t.tail[h] >= thr ? 1.0 : 0.0;
                const double f = hits / static_cast<double>(terms.size());
                tails.push_back({{"c", cc}, {"frequency", estimate(f, std::sqrt(f * (1.0 - f) / static_cast<double>(terms.size())))}});
            }
            row["tail"] = tails;
            row["c_prime"] = c.tail_c_prime;
        }
        per.push_back(row);
        lx.push_back(std::log(n));
        l1.push_back(std::log(m1.mean));
        l1se.push_back(m1.mean_se() / m1.mean);
        l2.push_back(std::log(m2.mean));
        l2se.push_back(m2.mean_se() / m2.mean);
        for (std::size_t i = 0; i < terms.size(); ++i) {
            samples.rows.push_back({std::to_string(i), std::to_string(c.horizons[h]), num(terms[i].cross[h]),
                                    num(terms[i].self[h]), terms[i].tail.empty() ? "" : num(terms[i].tail[h])});
        }
    }
    r.results["per_horizon"] = per;
    if (H >= 2) {
        const LinearFit f1 = weighted_ols(lx, l1, l1se);
        const LinearFit f2 = weighted_ols(lx, l2, l2se);
        const double pred = log_slope_prediction(c);
        const double tol =
            th.error_slope_tol > 0.0 ? th.error_slope_tol : (m.d / m.alpha > 3.0 ? 0.1 : 0.12);
        r.results["slope_first_moment"] = estimate(f1.slope, f1.slope_se);
        r.results["slope_second_moment"] = estimate(f2.slope, f2.slope_se);
        r.results["slope_prediction"] = exact(pred);
        add(r, "first_moment_slope", std::abs(f1.slope - pred) < tol,
            fmt("slope %.4g vs h_d prediction %.4g (tol %.3g)", f1.slope, pred, tol));
        add(r, "second_moment_slope", std::abs(f2.slope - 2.0 * f1.slope) < th.second_moment_tol,
            fmt("slope %.4g vs twice first %.4g (tol %.3g)", f2.slope, 2.0 * f1.slope, th.second_moment_tol));
    }
    r.tables.push_back({"samples.csv", std::move(samples)});
    return r;
}

// ---------------------------------------------------------------- loop coupling

ExperimentReport run_loop_equivalence(const ExperimentConfig& c, int workers) {
    c.validate();
    const WalkModel base = c.model.base();
    const double p = base.base_loop_prob;
    if (!(p >= 0.0 && p < 1.0)) throw DomainError("loop_equivalence requires 0 <= p < 1");
    std::uint64_t L = c.loop_range_horizon;
    for (auto n : c.loop_marginal_horizons) L = std::max(L, n);
    const std::size_t K = c.loop_marginal_horizons.size();
    const StepSampler direct(base);
    const StepSampler free(loop_free_model(base));

    struct Sample {
        std::vector<Site> s, s_hat;
        std::uint64_t range = 0, range_hat = 0;
        bool identity = true;
    };
    std::vector<Sample> out(c.M);
    parallel_for(c.M, workers, [&](std::size_t i) {
        RngStream r1(c.seed, StreamTag::path, i), r2(c.seed, StreamTag::loop_free_path, i), r3(c.seed, StreamTag::loops, i);
        const LatticePath S = sample_path(direct, L, r1);
        const LatticePath tilde = sample_path(free, L, r2);
        const auto [hat, rec] = insert_loops(tilde, p, r3);
        Sample& smp = out[i];
        for (auto n : c.loop_marginal_horizons) {
            smp.s.push_back(S[n]);
            smp.s_hat.push_back(hat[n]);
        }
        smp.range = range_of(S, 0, c.loop_range_horizon).size();
        smp.range_hat = range_of(hat, 0, c.loop_range_horizon).size();
        // R~_n = R^_{n + N_n} = R^_{n + N_{n-1}} for every n <= L.
        SiteSet rt, rh;
        std::size_t k = 0;
        for (std::size_t n = 0; n <= L && smp.identity; ++n) {
            rt.insert(tilde[n]);
            const std::size_t lo = n + rec.before(n), hi = n + rec.N[n];
            for (; k <= hi; ++k) {
                if (rh.insert(hat[k]) && !rt.contains(hat[k])) smp.identity = false;
                if (k == lo && rh.size() != rt.size()) smp.identity = false;
            }
            if (rh.size() != rt.size() || !rh.contains(tilde[n]) || hat[hi] != tilde[n]) smp.identity = false;
        }
    });

    ExperimentReport r = new_report("loop_equivalence", c);
    const auto& th = c.thresholds;
    std::uint64_t bad = 0;
    for (const auto& s : out) bad += s.identity ? 0 : 1;
    r.results["loop_prob"] = exact(p);
    r.results["identity_failures"] = bad;
    add(r, "coupled_identity", bad == 0, std::to_string(bad) + " paths violate R~_n = R^_{n+N_n}");

    int passes = 0;
    json marg = json::array();
    for (std::size_t k = 0; k < K; ++k) {
        std::map<Site, std::pair<double, double>> counts;
        for (const auto& s : out) {
            counts[s.s[k]].first += 1.0;
            counts[s.s_hat[k]].second += 1.0;
        }
        std::vector<double> a, b;
        for (const auto& [_, v] : counts) {
            a.push_back(v.first);
            b.push_back(v.second);
        }
        const ChiSquareResult t = chi_square_two_sample(a, b);
        const bool ok = t.bins < 2 || t.p_value > th.loop_p;
        passes += ok ? 1 : 0;
        marg.push_back({{"n", c.loop_marginal_horizons[k]},
                        {"statistic", t.statistic},
                        {"dof", t.dof},
                        {"bins", t.bins},
                        {"p_value", t.p_value}});
    }
    r.results["marginals"] = marg;
    {
        std::map<std::uint64_t, std::pair<double, double>> counts;
        for (const auto& s : out) {
            counts[s.range].first += 1.0;
            counts[s.range_hat].second += 1.0;
        }
        std::vector<double> a, b;
        for (const auto& [_, v] : counts) {
            a.push_back(v.first);
            b.push_back(v.second);
        }
        const ChiSquareResult t = chi_square_two_sample(a, b);
        r.results["range_size"] = {{"n", c.loop_range_horizon},
                                   {"statistic", t.statistic},
                                   {"dof", t.dof},
                                   {"bins", t.bins},
                                   {"p_value", t.p_value}};
    }
    const int need = std::min<int>(th.loop_min_pass, static_cast<int>(K));
    add(r, "marginal_tests", passes >= need,
        std::to_string(passes) + " of " + std::to_string(K) + " marginal tests have p > " + num(th.loop_p));
    return r;
}

// ---------------------------------------------------------------- transience

ExperimentReport run_transience_diag(const ExperimentConfig& c, int workers) {
    c.validate();
    const WalkModel& m = c.model;
    const auto& th = c.thresholds;
    ExperimentReport r = new_report("transience_diag", c);

    // Even, log-spaced times (the simple walk only returns at even times).
    std::vector<std::uint64_t> ns;
    const int points = 12;
    for (int k = 0; k < points; ++k) {
        const double t = static_cast<double>(c.pn_min) *
                         std::pow(static_cast<double>(c.pn_max) / static_cast<double>(c.pn_min), k / double(points - 1));
        std::uint64_t n = 2 * static_cast<std::uint64_t>(std::llround(t / 2.0));
        n = std::max<std::uint64_t>(n, 2);
        if (ns.empty() || n > ns.back()) ns.push_back(n);
    }
    const auto pn = pn_at_origin(m, ns);
    std::vector<double> lx, ly;
    json pts = json::array();
    for (std::size_t i = 0; i < ns.size(); ++i) {
        pts.push_back({{"n", ns[i]}, {"p_n0", exact(pn[i])}});
        if (pn[i] > 0.0) {
            lx.push_back(std::log(static_cast<double>(ns[i])));
            ly.push_back(std::log(pn[i]));
        }
    }
    r.results["pn_origin"] = pts;
    const double target = -m.d / m.alpha;
    if (lx.size() >= 2) {
        const LinearFit f = ols(lx, ly);
        r.results["pn_slope"] = estimate(f.slope, f.slope_se);
        r.results["pn_slope_target"] = exact(target);
        add(r, "pn_slope", std::abs(f.slope - target) <= th.pn_slope_rel * std::abs(target),
            fmt("slope %.4g vs -d/alpha = %.4g (rel tol %.3g)", f.slope, target, th.pn_slope_rel));
    } else {
        add(r, "pn_slope", false, "p_n(0) vanished on the grid");
    }

    const bool strong = m.d > 2.0 * m.alpha;
    r.results["strongly_transient"] = strong;
    if (c.partial_sum_caps.size() >= 2) {
        auto caps = c.partial_sum_caps;
        std::sort(caps.begin(), caps.end());
        const auto sums = transience_partial_sums(m, caps);
        json ps = json::array();
        for (std::size_t i = 0; i < caps.size(); ++i) ps.push_back({{"N", caps[i]}, {"sum", exact(sums[i])}});
        r.results["partial_sums"] = ps;
        const double last = sums.back(), prev = sums[sums.size() - 2];
        const double inc = last > 0.0 ? (last - prev) / last : INFINITY;
        r.results["last_increment"] = exact(inc);
        const bool saturated = inc < th.saturation;
        r.results["flag"] = saturated ? "saturated" : "recurrent_or_weak";
        if (strong) {
            add(r, "partial_sums_saturate", saturated,
                fmt("last-decade relative increment %.4g (need < %.3g)", inc, th.saturation));
        }
    }

    if (c.M >= 2) {
        const std::size_t H = c.horizons.size();
        const std::uint64_t top = top_horizon(c.horizons);
        const StepSampler sampler(m);
        std::vector<std::vector<double>> norms(c.M);
        parallel_for(c.M, workers, [&](std::size_t i) {
            RngStream rng(c.seed, StreamTag::path, i);
            const LatticePath path = sample_path(sampler, top, rng);
            for (auto n : c.horizons) norms[i].push_back(std::sqrt(norm2(path[n], m.d)));
        });
        std::vector<double> mx, my;
        json med = json::array();
        for (std::size_t h = 0; h < H; ++h) {
            std::vector<double> col;
            for (const auto& v : norms) col.push_back(v[h]);
            std::sort(col.begin(), col.end());
            const std::size_t k = col.size();
            const double md = k % 2 ? col[k / 2] : 0.5 * (col[k / 2 - 1] + col[k / 2]);
            med.push_back({{"n", c.horizons[h]}, {"median_norm", exact(md)}});
            if (md > 0.0) {
                mx.push_back(std::log(static_cast<double>(c.horizons[h])));
                my.push_back(std::log(md));
            }
        }
        r.results["median_norm"] = med;
        if (mx.size() >= 2) {
            const LinearFit f = ols(mx, my);
            const double want = 1.0 / m.alpha;
            r.results["median_slope"] = estimate(f.slope, f.slope_se);
            add(r, "median_growth", std::abs(f.slope - want) <= th.median_slope_rel * want,
                fmt("median |S_n| slope %.4g vs 1/alpha = %.4g (rel tol %.3g)", f.slope, want, th.median_slope_rel));
        }
    }
    return r;
}

// ---------------------------------------------------------------- dispatch and output

const std::vector<std::string>& experiment_names() {
    static const std::vector<std::string> names{"lln",     "variance",         "clt",           "error_scaling",
                                                "moment4", "loop_equivalence", "transience_diag"};
    return names;
}

ExperimentReport run_experiment(const std::string& name, const ExperimentConfig& c, int workers) {
    if (name == "lln") return run_lln(c, workers);
    if (name == "variance") return run_variance(c, workers);
    if (name == "clt") return run_clt(c, workers);
    if (name == "error_scaling") return run_error_scaling(c, workers);
    if (name == "moment4") return run_moment4(c, workers);
    if (name == "loop_equivalence") return run_loop_equivalence(c, workers);
    if (name == "transience_diag") return run_transience_diag(c, workers);
    throw DomainError("unknown experiment '" + name + "'");
}

namespace {

void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw ResourceError("cannot write " + p.string());
    f << text;
    if (!f) throw ResourceError("write failed for " + p.string());
}

std::string csv_text(const CsvTable& t) {
    std::string s;
    auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) s += ',';
            s += cells[i];
        }
        s += '\n';
    };
    line(t.header);
    for (const auto& r : t.rows) line(r);
    return s;
}

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace

void write_experiment_outputs(const ExperimentReport& r, const std::filesystem::path& dir, double wall_seconds,
                              int workers) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw ResourceError("cannot create " + dir.string() + ": " + ec.message());
    write_text(dir / "report.json", report_json_text(r));
    write_text(dir / "config.json", to_json(r.config).dump(2) + "\n");
    json files = json::array({"report.json", "config.json"});
    for (const auto& [name, table] : r.tables) {
        write_text(dir / name, csv_text(table));
        files.push_back(name);
    }
    json manifest;
    manifest["tool"] = "rangecap";
    manifest["version"] = kVersion;
    manifest["experiment"] = r.experiment;
    manifest["config_hash"] = config_hash(r.config);
    manifest["seed"] = r.config.seed;
    manifest["workers"] = workers;
    manifest["finished_utc"] = utc_now();
    manifest["wall_seconds"] = wall_seconds;
    manifest["files"] = files;
    manifest["passed"] = r.passed();
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

}  // namespace rangecap
