#include "rangecap/stats.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <limits>
#include <numeric>

#include "rangecap/core.hpp"
#include "rangecap/parallel.hpp"
#include "rangecap/rng.hpp"
#include "rangecap/special.hpp"

namespace rangecap {

void CompensatedSum::add(double v) {
    const double t = sum_ + v;
    comp_ += std::abs(sum_) >= std::abs(v) ? (sum_ - t) + v : (v - t) + sum_;
    sum_ = t;
}

double compensated_sum(std::span<const double> x) {
    CompensatedSum s;
    for (double v : x) s.add(v);
    return s.value();
}

double Moments::std_dev() const { return std::sqrt(std::max(variance, 0.0)); }

double Moments::mean_se() const { return n == 0 ? 0.0 : std_dev() / std::sqrt(static_cast<double>(n)); }

Moments moments(std::span<const double> x) {
    Moments m;
    m.n = x.size();
    if (x.empty()) return m;
    const double n = static_cast<double>(x.size());
    m.mean = compensated_sum(x) / n;
    CompensatedSum s2, s3, s4;
    for (double v : x) {
        const double dv = v - m.mean;
        const double d2 = dv * dv;
        s2.add(d2);
        s3.add(d2 * dv);
        s4.add(d2 * d2);
    }
    if (x.size() < 2) return m;
    m.variance = s2.value() / (n - 1.0);
    const double m2 = s2.value() / n;
    if (m2 > 0.0) {
        m.skewness = (s3.value() / n) / std::pow(m2, 1.5);
        m.excess_kurtosis = (s4.value() / n) / (m2 * m2) - 3.0;
    }
    return m;
}

double raw_moment(std::span<const double> x, int k) {
    if (x.empty()) return 0.0;
    CompensatedSum s;
    for (double v : x) s.add(std::pow(v, k));
    return s.value() / static_cast<double>(x.size());
}

Estimate jackknife(std::span<const double> x, const std::function<double(std::span<const double>)>& stat) {
    const std::size_t n = x.size();
    if (n < 2) throw DomainError("jackknife: need at least 2 values");
    Estimate e;
    e.value = stat(x);
    std::vector<double> buf(n - 1);
    std::vector<double> loo(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::copy(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(i), buf.begin());
        std::copy(x.begin() + static_cast<std::ptrdiff_t>(i) + 1, x.end(), buf.begin() + static_cast<std::ptrdiff_t>(i));
        loo[i] = stat(buf);
    }
    const double mean = compensated_sum(loo) / static_cast<double>(n);
    CompensatedSum ss;
    for (double v : loo) ss.add((v - mean) * (v - mean));
    e.se = std::sqrt(ss.value() * static_cast<double>(n - 1) / static_cast<double>(n));
    return e;
}

Estimate jackknife_variance(std::span<const double> x) {
    const std::size_t n = x.size();
    if (n < 3) throw DomainError("jackknife_variance: need at least 3 values");
    const double nn = static_cast<double>(n);
    const double mean = compensated_sum(x) / nn;
    CompensatedSum q;
    for (double v : x) q.add((v - mean) * (v - mean));
    const double Q = q.value();
    // Leaving out x_i with deviation d_i removes n d_i^2 / (n - 1) from the sum of squares.
    std::vector<double> loo(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double di = x[i] - mean;
        loo[i] = (Q - nn * di * di / (nn - 1.0)) / (nn - 2.0);
    }
    const double lm = compensated_sum(loo) / nn;
    CompensatedSum ss;
    for (double v : loo) ss.add((v - lm) * (v - lm));
    return {Q / (nn - 1.0), std::sqrt(ss.value() * (nn - 1.0) / nn)};
}

LinearFit ols(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw DomainError("ols: need two or more paired points");
    const double n = static_cast<double>(x.size());
    const double mx = compensated_sum(x) / n;
    const double my = compensated_sum(y) / n;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx <= 0.0) throw DomainError("ols: x values are all equal");
    LinearFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    if (x.size() > 2) {
        double rss = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double r = y[i] - f.intercept - f.slope * x[i];
            rss += r * r;
        }
        const double s2 = rss / (n - 2.0);
        f.slope_se = std::sqrt(s2 / sxx);
        f.intercept_se = std::sqrt(s2 * (1.0 / n + mx * mx / sxx));
    }
    return f;
}

LinearFit weighted_ols(std::span<const double> x, std::span<const double> y, std::span<const double> se) {
    if (x.size() != y.size() || x.size() != se.size() || x.size() < 2) {
        throw DomainError("weighted_ols: need two or more paired points with errors");
    }
    if (std::any_of(se.begin(), se.end(), [](double s) { return !(s > 0.0); })) return ols(x, y);
    double sw = 0.0, swx = 0.0, swy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double w = 1.0 / (se[i] * se[i]);
        sw += w;
        swx += w * x[i];
        swy += w * y[i];
    }
    const double mx = swx / sw, my = swy / sw;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double w = 1.0 / (se[i] * se[i]);
        sxx += w * (x[i] - mx) * (x[i] - mx);
        sxy += w * (x[i] - mx) * (y[i] - my);
    }
    if (sxx <= 0.0) throw DomainError("weighted_ols: x values are all equal");
    LinearFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    f.slope_se = std::sqrt(1.0 / sxx);
    f.intercept_se = std::sqrt(1.0 / sw + mx * mx / sxx);
    return f;
}

namespace {

// log Phi(z) without underflow in the lower tail.
double log_normal_cdf(double z) { return std::log(0.5 * std::erfc(-z / std::sqrt(2.0))); }

double ad_sorted_standardised(std::vector<double>& z) {
    std::sort(z.begin(), z.end());
    const std::size_t n = z.size();
    CompensatedSum s;
    for (std::size_t i = 0; i < n; ++i) {
        const double w = static_cast<double>(2 * i + 1);
        s.add(w * (log_normal_cdf(z[i]) + log_normal_cdf(-z[n - 1 - i])));
    }
    return -static_cast<double>(n) - s.value() / static_cast<double>(n);
}

double ad_fitted(std::span<const double> x, std::vector<double>& z) {
    const Moments m = moments(x);
    const double sd = m.std_dev();
    if (!(sd > 0.0)) throw DomainError("anderson_darling_normal: sample has zero variance");
    z.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) z[i] = (x[i] - m.mean) / sd;
    return ad_sorted_standardised(z);
}

}  // namespace

double anderson_darling_normal(std::span<const double> x) {
    if (x.size() < 3) throw DomainError("anderson_darling_normal: need at least 3 values");
    std::vector<double> z;
    return ad_fitted(x, z);
}

BootstrapTest anderson_darling_bootstrap(std::span<const double> x, std::uint64_t B, std::uint64_t seed, int workers) {
    BootstrapTest t;
    t.statistic = anderson_darling_normal(x);
    t.replicates = B;
    std::vector<std::uint8_t> exceed(B, 0);
    const std::size_t n = x.size();
    parallel_for(B, workers, [&](std::size_t b) {
        RngStream rng(seed, StreamTag::bootstrap, b);
        std::vector<double> y(n), z;
        for (auto& v : y) v = rng.normal();
        exceed[b] = ad_fitted(y, z) >= t.statistic ? 1 : 0;
    });
    const std::uint64_t count = std::accumulate(exceed.begin(), exceed.end(), std::uint64_t{0});
    t.p_value = static_cast<double>(1 + count) / static_cast<double>(B + 1);
    return t;
}

ChiSquareResult chi_square_two_sample(std::span<const double> a, std::span<const double> b, double min_expected) {
    if (a.size() != b.size()) throw DomainError("chi_square_two_sample: category counts differ");
    const double na = compensated_sum(a), nb = compensated_sum(b);
    if (!(na > 0.0) || !(nb > 0.0)) throw DomainError("chi_square_two_sample: empty sample");
    const double fa = na / (na + nb), fb = nb / (na + nb);
    std::vector<std::pair<double, double>> bins;
    double rest_a = 0.0, rest_b = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double tot = a[i] + b[i];
        if (tot <= 0.0) continue;
        if (std::min(tot * fa, tot * fb) < min_expected) {
            rest_a += a[i];
            rest_b += b[i];
        } else {
            bins.emplace_back(a[i], b[i]);
        }
    }
    const double rest = rest_a + rest_b;
    if (rest > 0.0) {
        if (std::min(rest * fa, rest * fb) >= min_expected || bins.empty()) {
            bins.emplace_back(rest_a, rest_b);
        } else {
            auto smallest = std::min_element(bins.begin(), bins.end(), [](const auto& l, const auto& r) {
                return l.first + l.second < r.first + r.second;
            });
            smallest->first += rest_a;
            smallest->second += rest_b;
        }
    }
    ChiSquareResult r;
    r.bins = bins.size();
    if (bins.size() < 2) return r;
    const double ka = std::sqrt(nb / na), kb = std::sqrt(na / nb);
    CompensatedSum s;
    for (const auto& [ca, cb] : bins) {
        const double diff = ka * ca - kb * cb;
        s.add(diff * diff / (ca + cb));
    }
    r.statistic = s.value();
    r.dof = static_cast<double>(bins.size() - 1);
    r.p_value = chi_square_sf(r.statistic, r.dof);
    return r;
}

Histogram histogram(std::span<const double> x, int bins) {
    if (bins < 1) throw DomainError("histogram: need at least one bin");
    Histogram h;
    h.counts.assign(static_cast<std::size_t>(bins), 0);
    if (x.empty()) {
        h.edges.assign(static_cast<std::size_t>(bins) + 1, 0.0);
        return h;
    }
    auto [lo_it, hi_it] = std::minmax_element(x.begin(), x.end());
    double lo = *lo_it, hi = *hi_it;
    if (hi <= lo) {
        lo -= 0.5;
        hi += 0.5;
    }
    const double w = (hi - lo) / bins;
    for (int i = 0; i <= bins; ++i) h.edges.push_back(lo + w * i);
    for (double v : x) {
        auto k = static_cast<std::size_t>(std::floor((v - lo) / w));
        if (k >= h.counts.size()) k = h.counts.size() - 1;
        ++h.counts[k];
    }
    return h;
}

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw DomainError("normal_quantile: p must lie in (0, 1)");
    return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

std::vector<QQPoint> normal_qq(std::span<const double> x) {
    const Moments m = moments(x);
    const double sd = m.std_dev();
    std::vector<double> sorted(x.begin(), x.end());
    std::sort(sorted.begin(), sorted.end());
    const double n = static_cast<double>(sorted.size());
    std::vector<QQPoint> out;
    out.reserve(sorted.size());
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        const double p = (static_cast<double>(i + 1) - 0.375) / (n + 0.25);
        out.push_back({normal_quantile(p), sd > 0.0 ? (sorted[i] - m.mean) / sd : 0.0});
    }
    return out;
}

}  // namespace rangecap
