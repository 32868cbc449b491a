#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rangecap/core.hpp"
#include "rangecap/walk_models.hpp"

namespace rangecap {

/// Characteristic function of one step; real because every model is symmetric.
double charfn(const WalkModel& model, std::span<const double> theta);

/// Rank of nondecreasing tuples 0 <= v_1 <= ... <= v_d <= R in lexicographic
/// order. Green tables store one value per tuple (sorted absolute coordinates).
class SortedKeyIndex {
public:
    using Key = std::array<std::int64_t, kMaxDim>;

    SortedKeyIndex() = default;
    SortedKeyIndex(int d, int radius);

    int dim() const { return d_; }
    int radius() const { return radius_; }
    std::size_t size() const { return size_; }
    /// key must be sorted ascending in its first d entries and bounded by R.
    std::size_t rank(const Key& key) const;
    /// Sorted absolute coordinates of x; returns false when |x|_inf > R.
    bool key_of(const Site& x, Key& key) const;
    /// Number of lattice points whose sorted absolute coordinates equal key.
    std::uint64_t orbit_size(const Key& key) const;
    /// Visits keys in rank order.
    template <class F>
    void for_each(F&& f) const {
        Key key{};
        std::size_t r = 0;
        visit(f, key, 0, 0, r);
    }

private:
    template <class F>
    void visit(F& f, Key& key, int level, std::int64_t lo, std::size_t& r) const {
        for (std::int64_t v = lo; v <= radius_; ++v) {
            key[static_cast<std::size_t>(level)] = v;
            if (level + 1 == d_) {
                f(static_cast<const Key&>(key), r++);
            } else {
                visit(f, key, level + 1, v, r);
            }
        }
    }

    int d_ = 0;
    int radius_ = 0;
    std::size_t size_ = 0;
    // prefix_[L][a] = number of nondecreasing L-tuples in [u, R] summed over u < a
    std::vector<std::vector<std::size_t>> prefix_;
};

enum class GreenMethod : std::uint8_t {
    bessel_integral = 0,
    fourier_grid = 1,
    renewal_series = 2,
    occupation_mc = 3,
};

std::string to_string(GreenMethod m);
GreenMethod green_method_from_string(const std::string& s);

struct GreenMethodSpec {
    GreenMethod method = GreenMethod::bessel_integral;
    /// fourier_grid: grid size N (even, >= 4R); 0 picks the default for d.
    int grid_n = 0;
    /// renewal_series: truncation K (even); Richardson uses K/2 and K.
    std::uint64_t series_k = 4096;
    /// occupation_mc
    std::uint64_t mc_paths = 100000;
    std::uint64_t mc_horizon = 256;
    std::uint64_t mc_seed = 1;
    int workers = 1;
    /// bessel_integral: trapezoid step in log-time.
    double step = 0.2;
};

/// Default grid size per dimension for the Fourier backend.
int default_grid_size(int d);
/// Default table radius per dimension.
int default_table_radius(int d);

/// Green function on the window |x|_inf <= R with a power-law far field.
class GreenTable {
public:
    GreenTable() = default;
    GreenTable(WalkModel model, int radius, GreenMethodSpec method, std::vector<double> values);

    const WalkModel& model() const { return model_; }
    int radius() const { return index_.radius(); }
    int dim() const { return model_.d; }
    const GreenMethodSpec& method() const { return method_; }
    const SortedKeyIndex& index() const { return index_; }
    std::span<const double> values() const { return values_; }
    /// Per-entry standard errors (occupation_mc only, else empty).
    std::span<const double> standard_errors() const { return stderr_; }
    void set_standard_errors(std::vector<double> se) { stderr_ = std::move(se); }

    double origin() const { return values_.front(); }
    double at(const Site& x) const;
    /// Value at a sorted key (no bounds checks beyond the index).
    double at_key(const SortedKeyIndex::Key& key) const { return values_[index_.rank(key)]; }
    bool in_window(const Site& x) const { return sup_norm(x, model_.d) <= index_.radius(); }

    double far_constant() const { return far_c_; }
    double far_exponent() const { return model_.alpha - model_.d; }
    double far_field(const Site& x) const;
    /// Max relative mismatch between the far-field law and the table on |x|_inf = R.
    double far_mismatch() const { return far_mismatch_; }

    double error_estimate() const { return error_estimate_; }
    void set_error_estimate(double e) { error_estimate_ = e; }
    /// Refit the far-field constant on R/2 <= |x|_inf <= R.
    void fit_far_field();
    void set_far_constant(double c) { far_c_ = c; }
    void set_far_mismatch(double m) { far_mismatch_ = m; }

private:
    WalkModel model_;
    GreenMethodSpec method_;
    SortedKeyIndex index_;
    std::vector<double> values_;
    std::vector<double> stderr_;
    double far_c_ = 0.0;
    double far_mismatch_ = 0.0;
    double error_estimate_ = 0.0;
};

/// G(x) for the given model on |x|_inf <= R. Loop-free models scale the
/// base table by (1 - p); loop-inserted models share the base table.
GreenTable build_green_table(const WalkModel& model, int radius, const GreenMethodSpec& method = {});

double green_at(const GreenTable& table, const Site& x);

/// G_n(x) = sum_{k<=n} p_k(x) evaluated on a uniform N-grid. The grid sum is
/// the periodised quantity sum_m G_n(x + N m), so the aliasing error is
/// sum_{k<=n} P(S_k in x + N Z^d, S_k != x), which decreases in N.
class TruncatedGreenTable {
public:
    TruncatedGreenTable(const WalkModel& model, int radius, std::uint64_t horizon, int grid_n);

    std::uint64_t horizon() const { return horizon_; }
    int grid_size() const { return grid_n_; }
    const SortedKeyIndex& index() const { return index_; }
    std::span<const double> values() const { return values_; }
    /// Lookup inside the window; throws DomainError outside.
    double at(const Site& x) const;

private:
    WalkModel model_;
    std::uint64_t horizon_;
    int grid_n_;
    SortedKeyIndex index_;
    std::vector<double> values_;
};

/// p_n(0) by graded Gauss-Legendre quadrature over the torus, for each n in ns.
std::vector<double> pn_at_origin(const WalkModel& model, std::span<const std::uint64_t> ns);
double pn_at_origin(const WalkModel& model, std::uint64_t n);
/// sum_{n=1}^{N} n p_n(0) for each N in caps.
std::vector<double> transience_partial_sums(const WalkModel& model, std::span<const std::uint64_t> caps);

struct Asymptotics {
    double alpha = 2.0;
    int d = 3;

    /// b(n) = n^{1/alpha} (slowly varying part taken as 1).
    double b(double n) const;
    double delta() const { return d / alpha - 2.5; }
    /// Exponent of h_d in the power regime (0 when d/alpha > 3).
    double h_exponent() const;
};

/// h_d(n): 1 if d/alpha > 3, harmonic sum if d/alpha = 3, n^{3-d/alpha} if 2 < d/alpha < 3.
double h_d_eval(const Asymptotics& asym, std::uint64_t n);

}  // namespace rangecap
