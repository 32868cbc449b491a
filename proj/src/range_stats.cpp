#include "rangecap/range_stats.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

namespace rangecap {

SiteSet::SiteSet(std::span<const Site> sites) {
    for (const auto& s : sites) insert(s);
}

bool SiteSet::insert(const Site& s) {
    auto [it, fresh] = pos_.try_emplace(s, sites_.size());
    if (fresh) sites_.push_back(s);
    return fresh;
}

std::size_t SiteSet::position(const Site& s) const {
    const auto it = pos_.find(s);
    return it == pos_.end() ? sites_.size() : it->second;
}

bool operator==(const SiteSet& a, const SiteSet& b) {
    if (a.size() != b.size()) return false;
    for (const auto& s : a.sites_) {
        if (!b.contains(s)) return false;
    }
    return true;
}

SiteSet range_of(const LatticePath& path, std::size_t m, std::size_t n) {
    if (path.positions.empty() || m > n || n > path.horizon()) {
        throw DomainError("range_of: need 0 <= m <= n <= path horizon");
    }
    SiteSet before;
    for (std::size_t k = 0; k < m; ++k) before.insert(path[k]);
    SiteSet out;
    for (std::size_t k = m; k <= n; ++k) {
        if (!before.contains(path[k])) out.insert(path[k]);
    }
    return out;
}

double green_sum(const GreenTable& table, const SiteSet& A, const SiteSet& B) {
    return green_sum(table, A.sites(), B.sites());
}

CapacityEstimate range_capacity(const LatticePath& path, std::size_t n, const GreenTable& table) {
    return capacity_exact(range_of(path, 0, n).sites(), table).first;
}

std::vector<double> prefix_capacities(std::span<const Site> sites, const GreenTable& table) {
    const auto n = static_cast<Eigen::Index>(sites.size());
    std::vector<double> out(sites.size());
    if (n == 0) return out;
    const Eigen::MatrixXd g = green_matrix(sites, table);
    Eigen::LLT<Eigen::MatrixXd> llt(g);
    if (llt.info() != Eigen::Success) throw NumericError("prefix_capacities: Green matrix is not positive definite");
    Eigen::VectorXd y = Eigen::VectorXd::Ones(n);
    llt.matrixL().solveInPlace(y);
    double s = 0.0, c = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double v = y[i] * y[i];
        const double t = s + v;
        c += std::abs(s) >= std::abs(v) ? (s - t) + v : (v - t) + s;
        s = t;
        out[static_cast<std::size_t>(i)] = s + c;
    }
    return out;
}

RangeProfile range_capacity_profile(const LatticePath& path, std::span<const std::uint64_t> horizons,
                                    const GreenTable& table) {
    RangeProfile prof;
    prof.horizons.assign(horizons.begin(), horizons.end());
    if (horizons.empty()) return prof;
    const std::uint64_t top = *std::max_element(horizons.begin(), horizons.end());
    if (top > path.horizon()) throw DomainError("range_capacity_profile: horizon beyond the path");
    SiteSet range;
    std::vector<std::uint64_t> size_at(top + 1);
    for (std::uint64_t k = 0; k <= top; ++k) {
        range.insert(path[k]);
        size_at[k] = range.size();
    }
    for (auto h : horizons) prof.range_size.push_back(size_at[h]);
    try {
        const auto pc = prefix_capacities(range.sites(), table);
        for (auto h : horizons) prof.capacity.push_back(pc[size_at[h] - 1]);
    } catch (const NumericError&) {
        prof.used_fallback = true;
        prof.capacity.clear();
        for (auto h : horizons) {
            const auto sites = range.sites().first(size_at[h]);
            prof.capacity.push_back(capacity_exact(sites, table).first.value);
        }
    }
    return prof;
}

DyadicCheck dyadic_check(const LatticePath& path, std::size_t n, int L, const GreenTable& table) {
    if (L < 0 || L > 30) throw DomainError("dyadic_check: L out of range");
    const std::size_t parts = std::size_t{1} << L;
    if (parts > n && L > 0) throw DomainError("dyadic_check: need 2^L <= n");
    if (n > path.horizon()) throw DomainError("dyadic_check: n beyond the path");
    DyadicCheck out;
    out.levels = L;
    out.total = range_capacity(path, n, table).value;
    std::vector<std::size_t> bounds(parts + 1);
    for (std::size_t i = 0; i <= parts; ++i) bounds[i] = i * n / parts;
    // Ranges of the segments (unrecentred, for cross terms) and their capacities.
    std::vector<SiteSet> seg(parts);
    for (std::size_t i = 0; i < parts; ++i) {
        const Site origin = path[bounds[i]];
        SiteSet recentred;
        for (std::size_t k = bounds[i]; k <= bounds[i + 1]; ++k) {
            seg[i].insert(path[k]);
            recentred.insert(checked_sub(path[k], origin));
        }
        out.segment_caps.push_back(capacity_exact(recentred.sites(), table).first.value);
    }
    // Level l merges blocks of 2^{L-l} segments pairwise: 2^{l-1} merges.
    out.cross.resize(static_cast<std::size_t>(L));
    double cross_total = 0.0;
    for (int l = 1; l <= L; ++l) {
        const std::size_t half = std::size_t{1} << (L - l);
        const std::size_t merges = std::size_t{1} << (l - 1);
        for (std::size_t i = 0; i < merges; ++i) {
            SiteSet left, right;
            for (std::size_t s = 2 * i * half; s < (2 * i + 1) * half; ++s) {
                for (const auto& x : seg[s].sites()) left.insert(x);
            }
            for (std::size_t s = (2 * i + 1) * half; s < (2 * i + 2) * half; ++s) {
                for (const auto& x : seg[s].sites()) right.insert(x);
            }
            const double g = green_sum(table, left, right);
            out.cross[static_cast<std::size_t>(l - 1)].push_back(g);
            cross_total += g;
        }
    }
    double leaf = 0.0;
    for (double c : out.segment_caps) leaf += c;
    out.upper_slack = leaf - out.total;
    out.lower_slack = out.total - (leaf - 2.0 * cross_total);
    return out;
}

}  // namespace rangecap
