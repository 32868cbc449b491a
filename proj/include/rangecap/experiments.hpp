#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <string>
#include <vector>

#include "rangecap/green.hpp"
#include "rangecap/walk_models.hpp"

namespace rangecap {

/// Pass thresholds. Statistical bounds were fixed after pilot runs and are
/// copied into every report.
struct Thresholds {
    double lln_z = 5.0;            // mu_hat / se
    double lln_drift = 0.05;       // |mu_N - mu_{N/2}| / mu_N
    double ratio_sigma = 3.0;      // loop-free / base slope ratio vs 1/(1-p)
    double variance_plateau = 0.15;
    double variance_z = 3.0;
    double clt_skew = 0.25;
    double clt_kurtosis = 0.5;
    double clt_p = 0.01;
    double error_slope_tol = 0.0;  // 0: 0.1 when d/alpha > 3, else 0.12
    double second_moment_tol = 0.2;
    double moment4_ratio = 2.0;    // max <= ratio * median
    double loop_p = 0.001;
    int loop_min_pass = 2;
    double pn_slope_rel = 0.10;
    double saturation = 0.05;
    double median_slope_rel = 0.10;
};

struct ExperimentConfig {
    WalkModel model = subordinate_walk(3, 0.8, 0.0);
    std::vector<std::uint64_t> horizons{256, 512, 1024, 2048};
    std::uint64_t M = 200;
    std::uint64_t seed = 1;

    /// Green table: loaded from table_path when set, else built.
    std::string table_path;
    GreenMethod green_method = GreenMethod::bessel_integral;
    int table_radius = 0;  // 0: default for d
    int grid_n = 0;

    std::uint64_t bootstrap = 5000;
    int hist_bins = 40;
    /// CLT assertions are made at this horizon (0: the largest).
    std::uint64_t clt_horizon = 0;
    /// "", "gaussian" or "exponential": replace C_n by synthetic draws.
    std::string synthetic;

    std::vector<double> tail_c{0.5, 1.0, 2.0};
    double tail_c_prime = 1.0;

    std::vector<std::uint64_t> loop_marginal_horizons{1, 2, 8};
    std::uint64_t loop_range_horizon = 64;

    std::uint64_t pn_min = 50;
    std::uint64_t pn_max = 500;
    std::vector<std::uint64_t> partial_sum_caps{1000, 10000};

    /// Permit LLN/variance runs with 2 alpha <= d <= 5 alpha / 2.
    bool allow_weak = false;
    Thresholds thresholds;

    void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
ExperimentConfig config_from_json(const nlohmann::json& j);
/// FNV-1a of the canonical JSON form, as 16 hex digits.
std::string config_hash(const ExperimentConfig& c);

nlohmann::json model_to_json(const WalkModel& m);
WalkModel model_from_json(const nlohmann::json& j);

struct Assertion {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

struct ExperimentReport {
    std::string experiment;
    ExperimentConfig config;
    nlohmann::json results = nlohmann::json::object();
    std::vector<Assertion> assertions;
    /// Extra outputs written next to report.json, keyed by file name.
    std::vector<std::pair<std::string, CsvTable>> tables;

    bool passed() const;
    const Assertion* find(const std::string& name) const;
    nlohmann::json to_json() const;
};

/// Per-path capacity snapshots at the configured horizons.
struct CapacitySamples {
    std::vector<std::uint64_t> horizons;
    std::vector<std::vector<double>> capacity;        // [path][horizon]
    std::vector<std::vector<std::uint64_t>> range_size;
    /// 1 / J(nu_n); empty unless requested.
    std::vector<std::vector<double>> occupation_bound;

    std::size_t paths() const { return capacity.size(); }
    /// C_n across paths at horizon index h.
    std::vector<double> column(std::size_t h) const;
};

/// Simulates M paths of `walk` (stream (seed, tag, i) for path i) and records
/// Cap(R_n) under `table` at each horizon.
CapacitySamples simulate_capacities(const WalkModel& walk, const GreenTable& table, std::span<const std::uint64_t> horizons,
                                    std::uint64_t M, std::uint64_t seed, StreamTag tag, int workers,
                                    bool occupation = false);

/// Table for the base model of the config (loaded or built).
GreenTable experiment_table(const ExperimentConfig& c, int workers);

ExperimentReport run_lln(const ExperimentConfig& c, int workers);
ExperimentReport run_variance(const ExperimentConfig& c, int workers);
ExperimentReport run_clt(const ExperimentConfig& c, int workers);
ExperimentReport run_error_scaling(const ExperimentConfig& c, int workers);
ExperimentReport run_moment4(const ExperimentConfig& c, int workers);
ExperimentReport run_loop_equivalence(const ExperimentConfig& c, int workers);
ExperimentReport run_transience_diag(const ExperimentConfig& c, int workers);

/// Analyses on precomputed samples; the run_* functions simulate and call these.
ExperimentReport lln_report(const ExperimentConfig& c, const CapacitySamples& base, const CapacitySamples& loop_free);
ExperimentReport variance_report(const ExperimentConfig& c, const CapacitySamples& s);
ExperimentReport clt_report(const ExperimentConfig& c, const CapacitySamples& s, int workers);
ExperimentReport moment4_report(const ExperimentConfig& c, const CapacitySamples& s);

/// Names accepted by run_experiment.
const std::vector<std::string>& experiment_names();
ExperimentReport run_experiment(const std::string& name, const ExperimentConfig& c, int workers);

/// Writes report.json, config.json, the report's CSV tables and manifest.json
/// (timestamps and wall-clock time live only in the manifest).
void write_experiment_outputs(const ExperimentReport& r, const std::filesystem::path& dir, double wall_seconds,
                              int workers);

std::string report_json_text(const ExperimentReport& r);

}  // namespace rangecap
