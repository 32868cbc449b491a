#include "rangecap/special.hpp"

#include <algorithm>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <numbers>

#include "rangecap/core.hpp"

namespace rangecap {

namespace {

// Stirling tail sum_{k>=1} B_{2k} / (2k(2k-1) z^{2k-1}), accurate for z >= 1e3.
double stirling_tail(double z) {
    const double iz = 1.0 / z;
    const double iz2 = iz * iz;
    return iz * (1.0 / 12.0 - iz2 * (1.0 / 360.0 - iz2 * (1.0 / 1260.0 - iz2 / 1680.0)));
}

}  // namespace

double log_gamma_diff(double a, double b) {
    if (a == b) return 0.0;
    if (std::min(a, b) < 1e3) return std::lgamma(a) - std::lgamma(b);
    const double delta = a - b;
    const double head = (b - 0.5) * std::log1p(delta / b) + delta * std::log(a) - delta;
    return head + (stirling_tail(a) - stirling_tail(b));
}

void scaled_bessel_i(double z, std::span<double> out) {
    const int nmax = static_cast<int>(out.size()) - 1;
    if (nmax < 0) return;
    if (z < 0.0) throw DomainError("scaled_bessel_i: negative argument");
    if (z == 0.0) {
        std::fill(out.begin(), out.end(), 0.0);
        out[0] = 1.0;
        return;
    }
    if (z < 1e-3) {
        // I_nu(z) = (z/2)^nu / nu! * (1 + (z/2)^2/(nu+1) + ...)
        const double q = 0.25 * z * z;
        const double lz = std::log(0.5 * z);
        for (int nu = 0; nu <= nmax; ++nu) {
            const double lead = nu * lz - std::lgamma(nu + 1.0) - z;
            if (lead < -745.0) {
                out[static_cast<std::size_t>(nu)] = 0.0;
                continue;
            }
            const double series = 1.0 + q / (nu + 1.0) * (1.0 + q / (2.0 * (nu + 2.0)));
            out[static_cast<std::size_t>(nu)] = std::exp(lead) * series;
        }
        return;
    }
    const double nu2max = static_cast<double>(nmax) * nmax;
    if (z > 64.0 * std::max(nu2max, 16.0)) {
        // Hankel expansion; successive term ratio <= (4 nu^2)/(8 k z) < 1/128.
        const double pref = 1.0 / std::sqrt(2.0 * std::numbers::pi * z);
        for (int nu = 0; nu <= nmax; ++nu) {
            const double mu = 4.0 * nu * nu;
            double term = 1.0;
            double sum = 1.0;
            for (int k = 1; k <= 12; ++k) {
                const double odd = 2.0 * k - 1.0;
                term *= -(mu - odd * odd) / (8.0 * k * z);
                sum += term;
                if (std::abs(term) < 1e-17 * std::abs(sum)) break;
            }
            out[static_cast<std::size_t>(nu)] = pref * sum;
        }
        return;
    }
    // Miller: I_{k-1} = I_{k+1} + (2k/z) I_k, started well above both nmax and sqrt(z).
    const int start = nmax + 32 + static_cast<int>(std::ceil(12.0 * std::sqrt(z + 1.0)));
    std::vector<double> r(static_cast<std::size_t>(nmax) + 1, 0.0);
    double above = 0.0;
    double cur = 1e-280;
    double norm = 0.0;  // accumulates 2 * sum_{k>=1} r_k
    for (int k = start; k >= 1; --k) {
        const double below = above + (2.0 * k / z) * cur;
        if (k <= nmax) r[static_cast<std::size_t>(k)] = cur;
        norm += 2.0 * cur;
        above = cur;
        cur = below;
        if (std::abs(cur) > 1e250) {
            const double s = 1e-250;
            cur *= s;
            above *= s;
            norm *= s;
            for (auto& v : r) v *= s;
        }
    }
    // cur now holds r_0
    norm += cur;
    const double inv = 1.0 / norm;
    out[0] = cur * inv;
    for (int k = 1; k <= nmax; ++k) out[static_cast<std::size_t>(k)] = r[static_cast<std::size_t>(k)] * inv;
}

double epstein_zeta(int d, double s) {
    if (d < 1 || s <= 0.0 || s >= d) throw DomainError("epstein_zeta: need 0 < s < d");
    using boost::math::tgamma;
    const double pi = std::numbers::pi;
    const double a = 0.5 * s;
    const double b = 0.5 * (d - s);
    // |n|^2 <= 64 leaves terms below e^{-200}.
    const int box = 8;
    double sum = 0.0;
    std::vector<int> n(static_cast<std::size_t>(d), -box);
    while (true) {
        long r2 = 0;
        for (int v : n) r2 += static_cast<long>(v) * v;
        if (r2 > 0 && r2 <= 64) {
            const double x = pi * static_cast<double>(r2);
            sum += tgamma(a, x) * std::pow(x, -a) + tgamma(b, x) * std::pow(x, -b);
        }
        int i = 0;
        while (i < d && n[static_cast<std::size_t>(i)] == box) {
            n[static_cast<std::size_t>(i)] = -box;
            ++i;
        }
        if (i == d) break;
        ++n[static_cast<std::size_t>(i)];
    }
    const double bracket = sum + 2.0 / (s - d) - 2.0 / s;
    return std::pow(pi, a) / std::tgamma(a) * bracket;
}

double chi_square_sf(double x, double dof) {
    if (x <= 0.0) return 1.0;
    return boost::math::gamma_q(0.5 * dof, 0.5 * x);
}

double normal_cdf(double x) {
    return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

void gauss_legendre(int n, std::vector<double>& nodes, std::vector<double>& weights) {
    nodes.assign(static_cast<std::size_t>(n), 0.0);
    weights.assign(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < (n + 1) / 2; ++i) {
        double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = x;
            for (int k = 2; k <= n; ++k) {
                const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = n * (x * p1 - p0) / (x * x - 1.0);
            const double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-16) break;
        }
        const double w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[static_cast<std::size_t>(i)] = -x;
        nodes[static_cast<std::size_t>(n - 1 - i)] = x;
        weights[static_cast<std::size_t>(i)] = w;
        weights[static_cast<std::size_t>(n - 1 - i)] = w;
    }
}

}  // namespace rangecap
