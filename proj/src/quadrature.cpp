#include "rangecap/quadrature.hpp"

#include <cmath>
#include <numbers>

#include "rangecap/core.hpp"
#include "rangecap/special.hpp"

namespace rangecap {

TorusRule::TorusRule(int d, Options opt) : d_(d) {
    if (d < 1 || d > kMaxDim) throw DomainError("TorusRule: dimension out of range");
    if (opt.order < 1 || opt.levels_to_zero < 0 || opt.levels_to_pi < 0) {
        throw DomainError("TorusRule: bad options");
    }
    const double pi = std::numbers::pi;
    const double half = 0.5 * pi;
    std::vector<double> breaks{0.0};
    for (int k = opt.levels_to_zero; k >= 1; --k) breaks.push_back(half * std::ldexp(1.0, -k));
    breaks.push_back(half);
    for (int k = 1; k <= opt.levels_to_pi; ++k) breaks.push_back(pi - half * std::ldexp(1.0, -k));
    breaks.push_back(pi);

    std::vector<double> x, w;
    gauss_legendre(opt.order, x, w);
    for (std::size_t p = 0; p + 1 < breaks.size(); ++p) {
        const double a = breaks[p];
        const double b = breaks[p + 1];
        const double mid = 0.5 * (a + b);
        const double rad = 0.5 * (b - a);
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double theta = mid + rad * x[i];
            const double s = std::sin(0.5 * theta);
            gap_.push_back(2.0 * s * s);
            weight_.push_back(rad * w[i] / pi);
        }
    }
    factorial_d_ = std::tgamma(d + 1.0);
}

TorusRule TorusRule::for_dimension(int d, bool refine_at_pi) {
    Options opt;
    opt.levels_to_pi = refine_at_pi ? 12 : 1;
    switch (d) {
        case 1:
        case 2:
            opt.levels_to_zero = 40;
            opt.order = 12;
            if (refine_at_pi) opt.levels_to_pi = 40;
            break;
        case 3:
            opt.levels_to_zero = 22;
            opt.order = 10;
            break;
        case 4:
            opt.levels_to_zero = 14;
            opt.order = 6;
            if (refine_at_pi) opt.levels_to_pi = 8;
            break;
        default:
            opt.levels_to_zero = 10;
            opt.order = 4;
            if (refine_at_pi) opt.levels_to_pi = 6;
            break;
    }
    return TorusRule(d, opt);
}

std::size_t TorusRule::tuples() const {
    // multiset coefficient C(n + d - 1, d)
    const std::size_t n = gap_.size();
    double c = 1.0;
    for (int i = 1; i <= d_; ++i) c = c * static_cast<double>(n + static_cast<std::size_t>(i) - 1) / i;
    return static_cast<std::size_t>(std::llround(c));
}

}  // namespace rangecap
