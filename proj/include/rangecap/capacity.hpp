#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rangecap/green.hpp"
#include "rangecap/walk_models.hpp"

namespace rangecap {

enum class CapacityMethod : std::uint8_t { exact, mc, occupation_bound };
std::string to_string(CapacityMethod m);

struct CapacityEstimate {
    double value = 0.0;
    double std_error = 0.0;
    CapacityMethod method = CapacityMethod::exact;
    std::uint64_t samples = 0;
    std::uint64_t horizon = 0;
    /// exact: max |G e - 1|; mc and bound: 0.
    double residual = 0.0;
    /// mc: horizon cap hit before the hazard criterion; exact: CG iteration cap hit.
    bool flagged = false;
};

struct EquilibriumMeasure {
    std::vector<Site> sites;
    std::vector<double> escape;
    double capacity = 0.0;
    double residual = 0.0;
    int iterations = 0;  // 0 for the direct solver
    int clamped = 0;
};

struct SolverOptions {
    std::size_t direct_limit = 512;
    double cg_tolerance = 1e-10;
    /// Entries below -warn are clamped to 0 with a warning; below -fail is an error.
    double clamp_warn = 1e-9;
    double clamp_fail = 1e-6;
};

/// [G(x_i - x_j)] for the listed sites.
Eigen::MatrixXd green_matrix(std::span<const Site> sites, const GreenTable& table);

/// Solves [G(x - y)] e = 1 on A; Cap(A) = sum e.
std::pair<CapacityEstimate, EquilibriumMeasure> capacity_exact(std::span<const Site> A, const GreenTable& table,
                                                                const SolverOptions& opt = {});
double capacity_value(std::span<const Site> A, const GreenTable& table);

/// sum_{x in A, y in B} G(x - y).
double green_sum(const GreenTable& table, std::span<const Site> A, std::span<const Site> B);
/// nu^T G_A nu.
double green_energy(const GreenTable& table, std::span<const Site> A, std::span<const double> nu);

struct EscapeOptions {
    std::uint64_t initial_horizon = 64;
    std::uint64_t max_horizon = std::uint64_t{1} << 16;
    /// Stop doubling once the returns in the last window, as a fraction of
    /// M, fall below hazard_fraction times the standard error.
    double hazard_fraction = 0.1;
    int workers = 1;
};

/// Fraction of M walks from x in A that avoid A at times 1..h, with h doubled
/// until the last-window hazard is negligible. Trial t uses the stream
/// (seed, escape, stream_offset + t); continuing a trial reuses its stream, so
/// the estimate at 2h never exceeds the estimate at h.
CapacityEstimate escape_prob_mc(std::span<const Site> A, const Site& x, const WalkModel& model, const EscapeOptions& opt,
                                std::uint64_t M, std::uint64_t seed, std::uint64_t stream_offset = 0);
/// Fixed-horizon variant (no doubling).
CapacityEstimate escape_prob_fixed(std::span<const Site> A, const Site& x, const WalkModel& model, std::uint64_t horizon,
                                   std::uint64_t M, std::uint64_t seed, std::uint64_t stream_offset = 0, int workers = 1);

/// Sum of escape_prob_mc over x in A; site i uses stream offset i * M.
CapacityEstimate capacity_mc(std::span<const Site> A, const WalkModel& model, const EscapeOptions& opt, std::uint64_t M,
                             std::uint64_t seed);

/// 1 / J(nu_n) with nu_n the occupation measure of S_1..S_n.
CapacityEstimate occupation_lower_bound(const LatticePath& path, const GreenTable& table);
/// Same with S_1..S_n restricted to the first n steps of the path.
CapacityEstimate occupation_lower_bound(const LatticePath& path, std::size_t n, const GreenTable& table);

struct DecompositionCheck {
    double cap_a = 0.0;
    double cap_b = 0.0;
    double cap_union = 0.0;
    double cap_intersection = 0.0;
    double cross = 0.0;  // G(A, B)
    double lower_slack = 0.0;
    double upper_slack = 0.0;
    bool ok(double tol) const { return lower_slack >= -tol && upper_slack >= -tol; }
};

/// Both sides of Cap(A)+Cap(B)-2G(A,B) <= Cap(A u B) <= Cap(A)+Cap(B)-Cap(A n B).
DecompositionCheck check_decomposition(std::span<const Site> A, std::span<const Site> B, const GreenTable& table);

}  // namespace rangecap
