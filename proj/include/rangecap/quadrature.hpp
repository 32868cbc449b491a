#pragma once

#include <cstddef>
#include <vector>

namespace rangecap {

/// Tensor-product Gauss-Legendre rule for the normalised torus average
/// (2 pi)^{-d} \int_{[-pi,pi]^d} F, restricted to integrands that depend on
/// theta only through sum_j (1 - cos theta_j). Such integrands are invariant
/// under reflections and permutations, so only sorted node tuples in
/// [0, pi]^d are visited, each weighted by its orbit size.
///
/// Panels are refined geometrically toward 0 (where 1 - phi has a cusp) and,
/// on request, toward pi (where the simple walk has phi = -1).
class TorusRule {
public:
    struct Options {
        int levels_to_zero = 20;  // finest panel width (pi/2) 2^-levels
        int levels_to_pi = 2;
        int order = 10;           // Gauss-Legendre nodes per panel
    };

    TorusRule(int d, Options opt);
    /// Defaults sized so that d <= 5 stays below ~10^7 tuples.
    static TorusRule for_dimension(int d, bool refine_at_pi);

    int dim() const { return d_; }
    std::size_t nodes_1d() const { return gap_.size(); }
    /// Number of sorted tuples visited by for_each_gap.
    std::size_t tuples() const;

    /// Calls f(gap, weight) where gap = 1 - (1/d) sum cos theta_j is computed
    /// without cancellation; weights sum to 1.
    template <class F>
    void for_each_gap(F&& f) const {
        recurse(f, 0, 0, 0.0, factorial_d_, 0);
    }

private:
    template <class F>
    void recurse(F& f, int level, std::size_t start, double acc, double w, int run) const {
        const double inv_d = 1.0 / d_;
        for (std::size_t i = start; i < gap_.size(); ++i) {
            const int r = (level > 0 && i == start) ? run + 1 : 1;
            const double wi = w * weight_[i] / r;
            const double a = acc + gap_[i];
            if (level + 1 == d_) {
                f(a * inv_d, wi);
            } else {
                recurse(f, level + 1, i, a, wi, r);
            }
        }
    }

    int d_;
    double factorial_d_;
    std::vector<double> gap_;     // 1 - cos theta_i = 2 sin^2(theta_i / 2)
    std::vector<double> weight_;  // normalised to sum 1
};

}  // namespace rangecap
