#pragma once

#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "rangecap/capacity.hpp"
#include "rangecap/green.hpp"
#include "rangecap/walk_models.hpp"

namespace rangecap {

/// Set of sites that iterates in insertion order.
class SiteSet {
public:
    SiteSet() = default;
    explicit SiteSet(std::span<const Site> sites);

    /// Returns false when the site was already present.
    bool insert(const Site& s);
    bool contains(const Site& s) const { return pos_.count(s) != 0; }
    std::size_t size() const { return sites_.size(); }
    bool empty() const { return sites_.empty(); }
    std::span<const Site> sites() const { return sites_; }
    /// Insertion position of s, or size() when absent.
    std::size_t position(const Site& s) const;

    friend bool operator==(const SiteSet& a, const SiteSet& b);

private:
    std::vector<Site> sites_;
    std::unordered_map<Site, std::size_t, SiteHash> pos_;
};

/// R[m, n] = {S_m..S_n} \ {S_0..S_{m-1}} for m >= 1, and {S_0..S_n} for m = 0.
SiteSet range_of(const LatticePath& path, std::size_t m, std::size_t n);

double green_sum(const GreenTable& table, const SiteSet& A, const SiteSet& B);

/// Cap(R_n) via capacity_exact.
CapacityEstimate range_capacity(const LatticePath& path, std::size_t n, const GreenTable& table);

struct RangeProfile {
    std::vector<std::uint64_t> horizons;
    std::vector<double> capacity;          // C_n
    std::vector<std::uint64_t> range_size;  // #R_n
    bool used_fallback = false;
};

/// C_n for every requested horizon from one factorisation. With the range
/// listed in first-visit order, each R_n is a leading block of the Green
/// matrix G = L L^T, so Cap(R_n) = sum_{i < #R_n} y_i^2 where L y = 1.
/// Falls back to one solve per horizon if the factorisation fails.
RangeProfile range_capacity_profile(const LatticePath& path, std::span<const std::uint64_t> horizons,
                                    const GreenTable& table);

/// Prefix capacities Cap({x_0..x_{m-1}}) for m = 1..sites.size().
std::vector<double> prefix_capacities(std::span<const Site> sites, const GreenTable& table);

struct DyadicCheck {
    int levels = 0;
    double total = 0.0;                    // C_n
    std::vector<double> segment_caps;      // 2^L leaf capacities
    std::vector<std::vector<double>> cross;  // cross[l-1][i] = G(left, right) at level l
    double lower_slack = 0.0;
    double upper_slack = 0.0;
};

/// Splits S_0..S_n into 2^L consecutive segments (boundaries floor(i n / 2^L),
/// adjacent segments share their boundary site), recentres each at its first
/// site and checks
///   sum_i Cap(seg_i) - 2 sum_l sum_i G(left_{l,i}, right_{l,i}) <= C_n <= sum_i Cap(seg_i).
DyadicCheck dyadic_check(const LatticePath& path, std::size_t n, int L, const GreenTable& table);

}  // namespace rangecap
