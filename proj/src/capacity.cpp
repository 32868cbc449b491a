#include "rangecap/capacity.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "rangecap/parallel.hpp"

namespace rangecap {

namespace {

// Neumaier-compensated sum.
double stable_sum(std::span<const double> v) {
    double s = 0.0, c = 0.0;
    for (double x : v) {
        const double t = s + x;
        c += std::abs(s) >= std::abs(x) ? (s - t) + x : (x - t) + s;
        s = t;
    }
    return s + c;
}

void check_distinct(std::span<const Site> A) {
    std::unordered_set<Site, SiteHash> seen;
    for (const auto& s : A) {
        if (!seen.insert(s).second) throw DomainError("site set contains duplicates");
    }
}

Eigen::VectorXd apply_kernel(std::span<const Site> A, const GreenTable& table, const Eigen::VectorXd& v) {
    const std::size_t n = A.size();
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += table.at(checked_sub(A[i], A[j])) * v[static_cast<Eigen::Index>(j)];
        out[static_cast<Eigen::Index>(i)] = acc;
    }
    return out;
}

// Conjugate gradient with the scalar Jacobi preconditioner 1/G(0).
template <class Apply>
Eigen::VectorXd conjugate_gradient(Apply&& apply, std::size_t n, double g0, double tol, int cap, int& iterations,
                                   bool& hit_cap) {
    const Eigen::VectorXd b = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n));
    Eigen::VectorXd x = b / g0;
    Eigen::VectorXd r = b - apply(x);
    Eigen::VectorXd z = r / g0;
    Eigen::VectorXd p = z;
    double rz = r.dot(z);
    const double bnorm = b.norm();
    iterations = 0;
    hit_cap = false;
    while (r.norm() > tol * bnorm) {
        if (iterations >= cap) {
            hit_cap = true;
            break;
        }
        const Eigen::VectorXd ap = apply(p);
        const double step = rz / p.dot(ap);
        x += step * p;
        r -= step * ap;
        z = r / g0;
        const double rz_new = r.dot(z);
        p = z + (rz_new / rz) * p;
        rz = rz_new;
        ++iterations;
    }
    return x;
}

std::string condition_diagnostic(const Eigen::MatrixXd& g) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g, Eigen::EigenvaluesOnly);
    std::ostringstream os;
    os << "Green matrix is not positive definite (eigenvalues in [" << es.eigenvalues().minCoeff() << ", "
       << es.eigenvalues().maxCoeff() << "]); the table is too coarse for this set";
    return os.str();
}

}  // namespace

std::string to_string(CapacityMethod m) {
    switch (m) {
        case CapacityMethod::exact:
            return "exact";
        case CapacityMethod::mc:
            return "mc";
        case CapacityMethod::occupation_bound:
            return "occupation_bound";
    }
    return "unknown";
}

Eigen::MatrixXd green_matrix(std::span<const Site> sites, const GreenTable& table) {
    const auto n = static_cast<Eigen::Index>(sites.size());
    check_allocation(static_cast<std::size_t>(n) * static_cast<std::size_t>(n) * sizeof(double), "Green matrix");
    Eigen::MatrixXd g(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        g(i, i) = table.origin();
        for (Eigen::Index j = 0; j < i; ++j) {
            const double v = table.at(checked_sub(sites[static_cast<std::size_t>(i)], sites[static_cast<std::size_t>(j)]));
            g(i, j) = v;
            g(j, i) = v;
        }
    }
    return g;
}

std::pair<CapacityEstimate, EquilibriumMeasure> capacity_exact(std::span<const Site> A, const GreenTable& table,
                                                                const SolverOptions& opt) {
    CapacityEstimate est;
    est.method = CapacityMethod::exact;
    EquilibriumMeasure eq;
    eq.sites.assign(A.begin(), A.end());
    if (A.empty()) return {est, eq};
    check_distinct(A);
    const std::size_t n = A.size();
    Eigen::VectorXd e;
    Eigen::VectorXd ge;
    const bool dense_fits = n * n * sizeof(double) <= memory_budget();
    if (n <= opt.direct_limit) {
        const Eigen::MatrixXd g = green_matrix(A, table);
        Eigen::LLT<Eigen::MatrixXd> llt(g);
        if (llt.info() != Eigen::Success) throw NumericError(condition_diagnostic(g));
        e = llt.solve(Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n)));
        ge = g * e;
    } else {
        const int cap = static_cast<int>(std::ceil(10.0 * std::sqrt(static_cast<double>(n))));
        bool hit = false;
        if (dense_fits) {
            const Eigen::MatrixXd g = green_matrix(A, table);
            e = conjugate_gradient([&](const Eigen::VectorXd& v) { return Eigen::VectorXd(g * v); }, n, table.origin(),
                                   opt.cg_tolerance, cap, eq.iterations, hit);
            ge = g * e;
        } else {
            auto apply = [&](const Eigen::VectorXd& v) { return apply_kernel(A, table, v); };
            e = conjugate_gradient(apply, n, table.origin(), opt.cg_tolerance, cap, eq.iterations, hit);
            ge = apply(e);
        }
        est.flagged = hit;
        if (hit) log_warning("conjugate gradient hit its iteration cap (" + std::to_string(cap) + ")");
    }
    eq.residual = (ge.array() - 1.0).abs().maxCoeff();
    eq.escape.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        double v = e[static_cast<Eigen::Index>(i)];
        if (!std::isfinite(v)) throw NumericError("equilibrium solve produced a non-finite value");
        if (v < -opt.clamp_fail) {
            throw NumericError("escape probability " + std::to_string(v) + " below -" + std::to_string(opt.clamp_fail) +
                               "; the Green table is too coarse");
        }
        if (v < -opt.clamp_warn) {
            log_warning("clamping escape probability " + std::to_string(v) + " to 0");
            ++eq.clamped;
        }
        if (v < 0.0) v = 0.0;
        eq.escape[i] = v;
    }
    eq.capacity = stable_sum(eq.escape);
    est.value = eq.capacity;
    est.residual = eq.residual;
    est.samples = n;
    return {est, eq};
}

double capacity_value(std::span<const Site> A, const GreenTable& table) {
    return capacity_exact(A, table).first.value;
}

double green_sum(const GreenTable& table, std::span<const Site> A, std::span<const Site> B) {
    double s = 0.0, c = 0.0;
    for (const auto& x : A) {
        for (const auto& y : B) {
            const double v = table.at(checked_sub(x, y));
            const double t = s + v;
            c += std::abs(s) >= std::abs(v) ? (s - t) + v : (v - t) + s;
            s = t;
        }
    }
    return s + c;
}

double green_energy(const GreenTable& table, std::span<const Site> A, std::span<const double> nu) {
    if (A.size() != nu.size()) throw DomainError("green_energy: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < A.size(); ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < A.size(); ++j) row += table.at(checked_sub(A[i], A[j])) * nu[j];
        s += nu[i] * row;
    }
    return s;
}

namespace {

struct Trial {
    Site pos;
    RngStream rng;
    bool returned = false;
};

bool member(std::span<const Site> A, const std::unordered_set<Site, SiteHash>& set, const Site& s) {
    if (A.size() <= 16) return std::find(A.begin(), A.end(), s) != A.end();
    return set.count(s) != 0;
}

// Advances every live trial from time t0 to t1; returns the number of first returns.
std::uint64_t advance(std::vector<Trial>& trials, std::span<const Site> A, const std::unordered_set<Site, SiteHash>& set,
                      const StepSampler& sampler, std::uint64_t t0, std::uint64_t t1, int workers) {
    const std::size_t block = 256;
    const std::size_t nblocks = (trials.size() + block - 1) / block;
    std::vector<std::uint64_t> counts(nblocks, 0);
    parallel_for(nblocks, workers, [&](std::size_t b) {
        const std::size_t lo = b * block;
        const std::size_t hi = std::min(trials.size(), lo + block);
        for (std::size_t i = lo; i < hi; ++i) {
            Trial& tr = trials[i];
            if (tr.returned) continue;
            for (std::uint64_t t = t0; t < t1; ++t) {
                tr.pos = checked_add(tr.pos, sampler.step(tr.rng));
                if (member(A, set, tr.pos)) {
                    tr.returned = true;
                    ++counts[b];
                    break;
                }
            }
        }
    });
    std::uint64_t total = 0;
    for (auto c : counts) total += c;
    return total;
}

void check_escape_args(std::span<const Site> A, const Site& x, const WalkModel& model, std::uint64_t M) {
    if (std::find(A.begin(), A.end(), x) == A.end()) throw DomainError("escape_prob_mc: x must belong to A");
    if (!model.transient()) throw DomainError("escape_prob_mc: model must be transient");
    if (M == 0) throw DomainError("escape_prob_mc: M must be positive");
}

CapacityEstimate finish(std::uint64_t M, std::uint64_t returned, std::uint64_t horizon, bool flagged) {
    CapacityEstimate est;
    est.method = CapacityMethod::mc;
    est.samples = M;
    est.horizon = horizon;
    est.flagged = flagged;
    const double m = static_cast<double>(M);
    est.value = static_cast<double>(M - returned) / m;
    est.std_error = std::sqrt(est.value * (1.0 - est.value) / m);
    return est;
}

}  // namespace

CapacityEstimate escape_prob_fixed(std::span<const Site> A, const Site& x, const WalkModel& model, std::uint64_t horizon,
                                   std::uint64_t M, std::uint64_t seed, std::uint64_t stream_offset, int workers) {
    check_escape_args(A, x, model, M);
    const StepSampler sampler(model);
    std::unordered_set<Site, SiteHash> set(A.begin(), A.end());
    std::vector<Trial> trials;
    trials.reserve(M);
    for (std::uint64_t t = 0; t < M; ++t) trials.push_back({x, RngStream(seed, StreamTag::escape, stream_offset + t), false});
    const std::uint64_t returned = advance(trials, A, set, sampler, 0, horizon, workers);
    return finish(M, returned, horizon, false);
}

CapacityEstimate escape_prob_mc(std::span<const Site> A, const Site& x, const WalkModel& model, const EscapeOptions& opt,
                                std::uint64_t M, std::uint64_t seed, std::uint64_t stream_offset) {
    check_escape_args(A, x, model, M);
    if (opt.initial_horizon == 0) return finish(M, 0, 0, false);
    const StepSampler sampler(model);
    std::unordered_set<Site, SiteHash> set(A.begin(), A.end());
    std::vector<Trial> trials;
    trials.reserve(M);
    for (std::uint64_t t = 0; t < M; ++t) trials.push_back({x, RngStream(seed, StreamTag::escape, stream_offset + t), false});
    std::uint64_t returned = advance(trials, A, set, sampler, 0, opt.initial_horizon, opt.workers);
    std::uint64_t h = opt.initial_horizon;
    const double m = static_cast<double>(M);
    while (true) {
        if (h >= opt.max_horizon) {
            return finish(M, returned, h, true);
        }
        const std::uint64_t next = std::min(2 * h, opt.max_horizon);
        const std::uint64_t window = advance(trials, A, set, sampler, h, next, opt.workers);
        returned += window;
        h = next;
        const double e = static_cast<double>(M - returned) / m;
        const double se = std::sqrt(std::max(e * (1.0 - e), 1.0 / m) / m);
        if (static_cast<double>(window) / m < opt.hazard_fraction * se) break;
    }
    return finish(M, returned, h, false);
}

CapacityEstimate capacity_mc(std::span<const Site> A, const WalkModel& model, const EscapeOptions& opt, std::uint64_t M,
                             std::uint64_t seed) {
    CapacityEstimate total;
    total.method = CapacityMethod::mc;
    double var = 0.0;
    for (std::size_t i = 0; i < A.size(); ++i) {
        const auto e = escape_prob_mc(A, A[i], model, opt, M, seed, static_cast<std::uint64_t>(i) * M);
        total.value += e.value;
        var += e.std_error * e.std_error;
        total.samples += e.samples;
        total.horizon = std::max(total.horizon, e.horizon);
        total.flagged = total.flagged || e.flagged;
    }
    total.std_error = std::sqrt(var);
    return total;
}

CapacityEstimate occupation_lower_bound(const LatticePath& path, std::size_t n, const GreenTable& table) {
    if (n < 1 || n > path.horizon()) throw DomainError("occupation_lower_bound: need 1 <= n <= path horizon");
    std::unordered_map<Site, std::uint64_t, SiteHash> counts;
    std::vector<Site> order;
    for (std::size_t k = 1; k <= n; ++k) {
        auto [it, fresh] = counts.try_emplace(path[k], 0);
        if (fresh) order.push_back(path[k]);
        ++it->second;
    }
    double j = 0.0;
    for (std::size_t a = 0; a < order.size(); ++a) {
        const double ca = static_cast<double>(counts[order[a]]);
        j += ca * ca * table.origin();
        for (std::size_t b = 0; b < a; ++b) {
            j += 2.0 * ca * static_cast<double>(counts[order[b]]) * table.at(checked_sub(order[a], order[b]));
        }
    }
    const double nn = static_cast<double>(n);
    j /= nn * nn;
    CapacityEstimate est;
    est.method = CapacityMethod::occupation_bound;
    est.value = 1.0 / j;
    est.samples = n;
    est.horizon = n;
    return est;
}

CapacityEstimate occupation_lower_bound(const LatticePath& path, const GreenTable& table) {
    return occupation_lower_bound(path, path.horizon(), table);
}

DecompositionCheck check_decomposition(std::span<const Site> A, std::span<const Site> B, const GreenTable& table) {
    std::unordered_set<Site, SiteHash> in_a(A.begin(), A.end());
    std::vector<Site> uni(A.begin(), A.end());
    std::vector<Site> inter;
    for (const auto& s : B) {
        if (in_a.count(s)) {
            inter.push_back(s);
        } else {
            uni.push_back(s);
        }
    }
    DecompositionCheck r;
    r.cap_a = capacity_value(A, table);
    r.cap_b = capacity_value(B, table);
    r.cap_union = capacity_value(uni, table);
    r.cap_intersection = capacity_value(inter, table);
    r.cross = green_sum(table, A, B);
    r.lower_slack = r.cap_union - (r.cap_a + r.cap_b - 2.0 * r.cross);
    r.upper_slack = r.cap_a + r.cap_b - r.cap_intersection - r.cap_union;
    return r;
}

}  // namespace rangecap
