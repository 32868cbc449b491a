#include "rangecap/green.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_map>

#include "rangecap/parallel.hpp"
#include "rangecap/quadrature.hpp"
#include "rangecap/special.hpp"

namespace rangecap {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::size_t binom_exact(std::size_t n, std::size_t k) {
    std::size_t c = 1;
    for (std::size_t i = 1; i <= k; ++i) c = c * (n - k + i) / i;
    return c;
}

// 1 - phi as a function of 1 - phi_Z, computed without cancellation.
double model_gap(const WalkModel& m, double gap_z) {
    double g = (m.kind == WalkKind::simple || m.alpha >= 2.0) ? gap_z : std::pow(gap_z, m.gamma());
    if (m.derived == Derivation::loop_free) g /= 1.0 - m.base_loop_prob;
    return g;
}

// x^n for x = 1 - g, accurate when g is small.
double power_of(double g, double n) {
    const double x = 1.0 - g;
    if (x > 0.0) return std::exp(n * std::log1p(-g));
    return std::pow(x, n);
}

// Small-coefficient sort of |x_j| into key.
void sorted_abs(const Site& x, int d, SortedKeyIndex::Key& key) {
    for (int i = 0; i < d; ++i) {
        const std::int64_t v = x[i];
        key[static_cast<std::size_t>(i)] = v < 0 ? -v : v;
    }
    for (int i = 1; i < d; ++i) {
        const std::int64_t v = key[static_cast<std::size_t>(i)];
        int j = i - 1;
        while (j >= 0 && key[static_cast<std::size_t>(j)] > v) {
            key[static_cast<std::size_t>(j + 1)] = key[static_cast<std::size_t>(j)];
            --j;
        }
        key[static_cast<std::size_t>(j + 1)] = v;
    }
}

void require_transient(const WalkModel& m) {
    m.validate();
    if (!m.transient()) throw DomainError("model is recurrent (d <= alpha); the Green function is infinite");
}

// Sum over the half grid theta_m = 2 pi m / N, m = 0..N/2, of c_m f(theta) prod cos(theta_j x_j)
// for every x in [0, R]^d, by contracting one axis at a time. Input f is
// indexed with the last axis fastest; output likewise over x.
std::vector<double> cosine_contract(std::vector<double> f, int d, int n_half, int radius) {
    const int n = n_half + 1;
    const int nx = radius + 1;
    const int grid_n = 2 * n_half;
    RowMat w(n, nx);
    for (int m = 0; m < n; ++m) {
        const double cm = (m == 0 || m == n_half) ? 1.0 : 2.0;
        for (int x = 0; x < nx; ++x) {
            const double angle = 2.0 * std::numbers::pi * static_cast<double>((static_cast<long>(m) * x) % grid_n) / grid_n;
            w(m, x) = cm * std::cos(angle);
        }
    }
    // Shape tracking: axes are contracted from the last, and the new x axis
    // is moved to the front, so after d steps the order is restored.
    std::size_t other = 1;
    for (int i = 0; i < d - 1; ++i) other *= static_cast<std::size_t>(n);
    for (int step = 0; step < d; ++step) {
        const Eigen::Index rows = static_cast<Eigen::Index>(other);
        Eigen::Map<const RowMat> a(f.data(), rows, n);
        RowMat b = a * w;
        std::vector<double> out(static_cast<std::size_t>(nx) * other);
        Eigen::Map<RowMat>(out.data(), nx, rows) = b.transpose();
        f.swap(out);
        // one axis of length n replaced by one of length nx
        if (step + 1 < d) other = other / static_cast<std::size_t>(n) * static_cast<std::size_t>(nx);
    }
    return f;
}

// Fills f(theta) on the half grid [0, N/2]^d, last axis fastest.
template <class Fn>
std::vector<double> half_grid(int d, int grid_n, Fn&& fn) {
    const int n = grid_n / 2 + 1;
    std::vector<double> gap1(static_cast<std::size_t>(n));
    for (int m = 0; m < n; ++m) {
        const double s = std::sin(std::numbers::pi * m / grid_n);
        gap1[static_cast<std::size_t>(m)] = 2.0 * s * s;
    }
    std::size_t total = 1;
    for (int i = 0; i < d; ++i) total *= static_cast<std::size_t>(n);
    check_allocation(2 * total * sizeof(double), "Fourier grid");
    std::vector<double> f(total);
    std::vector<int> idx(static_cast<std::size_t>(d), 0);
    for (std::size_t lin = 0; lin < total; ++lin) {
        double gz = 0.0;
        bool origin = true;
        for (int j = 0; j < d; ++j) {
            gz += gap1[static_cast<std::size_t>(idx[static_cast<std::size_t>(j)])];
            origin = origin && idx[static_cast<std::size_t>(j)] == 0;
        }
        f[lin] = fn(gz / d, origin);
        for (int j = d - 1; j >= 0; --j) {
            if (++idx[static_cast<std::size_t>(j)] < n) break;
            idx[static_cast<std::size_t>(j)] = 0;
        }
    }
    return f;
}

// Copies the sorted keys out of a full cube [0, R]^d (last axis fastest).
std::vector<double> cube_to_keys(const std::vector<double>& cube, const SortedKeyIndex& index) {
    const int d = index.dim();
    const std::size_t nx = static_cast<std::size_t>(index.radius()) + 1;
    std::vector<double> out(index.size());
    index.for_each([&](const SortedKeyIndex::Key& key, std::size_t r) {
        std::size_t lin = 0;
        for (int j = 0; j < d; ++j) lin = lin * nx + static_cast<std::size_t>(key[static_cast<std::size_t>(j)]);
        out[r] = cube[lin];
    });
    return out;
}

std::vector<double> fourier_values(const WalkModel& base, int grid_n, int radius, const SortedKeyIndex& index) {
    const int d = base.d;
    const double alpha = base.alpha;
    const double c = std::pow(2.0 * d, 0.5 * alpha);
    auto f = half_grid(d, grid_n, [&](double gz, bool origin) { return origin ? 0.0 : 1.0 / model_gap(base, gz); });
    auto cube = cosine_contract(std::move(f), d, grid_n / 2, radius);
    const double h = 2.0 * std::numbers::pi / grid_n;
    const double zero_mode = c * std::pow(h, -alpha) * epstein_zeta(d, alpha);
    const double scale = std::pow(static_cast<double>(grid_n), -d);
    for (auto& v : cube) v = (v - zero_mode) * scale;
    return cube_to_keys(cube, index);
}

std::vector<double> bessel_values(const WalkModel& base, int radius, double step, const SortedKeyIndex& index,
                                  int workers, double& error) {
    const int d = base.d;
    const double gamma = (base.kind == WalkKind::simple) ? 1.0 : base.gamma();
    const double s_min = std::log(1e-17) / gamma;
    const double s_max = 25.0 + 2.0 * std::log(radius + 1.0);
    const std::size_t nodes = static_cast<std::size_t>(std::ceil((s_max - s_min) / step)) + 1;
    const std::size_t nv = static_cast<std::size_t>(radius) + 1;
    const double inv_gamma_fn = 1.0 / std::tgamma(gamma);
    check_allocation(nodes * nv * sizeof(double), "Bessel table");

    // bt[v * nodes + i] = e^{-z} I_v(z) at node i, z = t/d; w[i] = h t^gamma / Gamma(gamma)
    std::vector<double> bt(nv * nodes);
    std::vector<double> w(nodes), w_coarse(nodes, 0.0);
    parallel_for(nodes, workers, [&](std::size_t i) {
        std::vector<double> b(nv);
        const double s = s_min + static_cast<double>(i) * step;
        const double t = std::exp(s);
        scaled_bessel_i(t / d, b);
        for (std::size_t v = 0; v < nv; ++v) bt[v * nodes + i] = b[v];
        w[i] = step * std::exp(gamma * s) * inv_gamma_fn;
    });
    for (std::size_t i = 0; i < nodes; i += 2) w_coarse[i] = 2.0 * w[i];
    // Large-t tail: the integrand approaches t^{gamma-1} (d / 2 pi t)^{d/2}.
    const double t_max = std::exp(s_min + static_cast<double>(nodes - 1) * step);
    const double beta = 0.5 * d - gamma;
    const double tail = std::pow(d / (2.0 * std::numbers::pi), 0.5 * d) * std::pow(t_max, -beta) / beta * inv_gamma_fn;

    std::vector<double> out(index.size());
    auto eval = [&](const std::vector<double>& weights, std::int64_t v1, std::size_t first_rank, bool all) {
        // prefix products per level
        std::vector<std::vector<double>> level(static_cast<std::size_t>(d), std::vector<double>(nodes));
        for (std::size_t i = 0; i < nodes; ++i) level[0][i] = weights[i] * bt[static_cast<std::size_t>(v1) * nodes + i];
        std::size_t r = first_rank;
        double first = 0.0;
        auto dot = [&](const std::vector<double>& p, std::int64_t v) {
            const double* col = &bt[static_cast<std::size_t>(v) * nodes];
            double acc = 0.0;
            for (std::size_t i = 0; i < nodes; ++i) acc += p[i] * col[i];
            return acc + tail;
        };
        if (d == 1) {
            double acc = tail;
            for (std::size_t i = 0; i < nodes; ++i) acc += level[0][i];
            if (all) out[r] = acc;
            return acc;
        }
        auto rec = [&](auto& self, int lvl, std::int64_t lo) -> void {
            if (lvl == d - 1) {
                for (std::int64_t v = lo; v <= radius; ++v) {
                    const double val = dot(level[static_cast<std::size_t>(lvl - 1)], v);
                    if (r == first_rank) first = val;
                    if (all) out[r] = val;
                    ++r;
                    if (!all) return;
                }
                return;
            }
            for (std::int64_t v = lo; v <= radius; ++v) {
                auto& cur = level[static_cast<std::size_t>(lvl)];
                const auto& prev = level[static_cast<std::size_t>(lvl - 1)];
                const double* col = &bt[static_cast<std::size_t>(v) * nodes];
                for (std::size_t i = 0; i < nodes; ++i) cur[i] = prev[i] * col[i];
                self(self, lvl + 1, v);
                if (!all) return;
            }
        };
        rec(rec, 1, v1);
        return first;
    };
    parallel_for(nv, workers, [&](std::size_t v1) {
        SortedKeyIndex::Key key{};
        for (int j = 0; j < d; ++j) key[static_cast<std::size_t>(j)] = static_cast<std::int64_t>(v1);
        eval(w, static_cast<std::int64_t>(v1), index.rank(key), true);
    });
    // Error estimate: step h against 2h on the diagonal keys near the origin.
    error = 0.0;
    for (std::int64_t v1 = 0; v1 <= std::min<std::int64_t>(radius, 2); ++v1) {
        SortedKeyIndex::Key key{};
        for (int j = 0; j < d; ++j) key[static_cast<std::size_t>(j)] = v1;
        const std::size_t r = index.rank(key);
        const double coarse = eval(w_coarse, v1, r, false);
        error = std::max(error, std::abs(coarse - out[r]));
    }
    return out;
}

// Renewal masses u(k) from u(0) = 1, u(k) = sum_j f(j) u(k - j).
std::vector<double> renewal_masses(const WalkModel& base, std::uint64_t k_max) {
    std::vector<double> u(k_max + 1, 0.0);
    u[0] = 1.0;
    if (base.kind == WalkKind::simple || base.alpha >= 2.0) {
        std::fill(u.begin(), u.end(), 1.0);
        return u;
    }
    const auto sub = sibuya_for(base.gamma());
    std::vector<double> f(k_max + 1, 0.0);
    for (std::uint64_t j = 1; j <= k_max; ++j) f[j] = sub->pmf(j);
    for (std::uint64_t k = 1; k <= k_max; ++k) {
        long double acc = 0.0L;
        for (std::uint64_t j = 1; j <= k; ++j) acc += static_cast<long double>(f[j]) * u[k - j];
        u[k] = static_cast<double>(acc);
    }
    return u;
}

// Binomial(m, p) pmf row.
void binomial_row(std::uint64_t m, double p, std::vector<double>& row) {
    row.assign(m + 1, 0.0);
    const double lp = std::log(p);
    const double lq = std::log1p(-p);
    const double lm = std::lgamma(m + 1.0);
    for (std::uint64_t a = 0; a <= m; ++a) {
        const double l = lm - std::lgamma(a + 1.0) - std::lgamma(static_cast<double>(m - a) + 1.0) + a * lp +
                         static_cast<double>(m - a) * lq;
        row[a] = l < -700.0 ? 0.0 : std::exp(l);
    }
}

std::vector<double> renewal_values(const WalkModel& base, int radius, std::uint64_t k_max, const SortedKeyIndex& index,
                                   double& error) {
    if (k_max < 4 || k_max % 2 != 0) throw DomainError("renewal_series: K must be even and >= 4");
    const int d = base.d;
    const std::size_t nx = static_cast<std::size_t>(radius) + 1;
    const std::size_t nk = k_max + 1;
    double ops = 0.5 * static_cast<double>(nk) * nk * (std::pow(static_cast<double>(nx), d - 1) + index.size());
    if (ops > 4e10) throw ResourceError("renewal_series: K and radius too large for the series backend");
    std::size_t cells = nk;
    for (int j = 1; j < d; ++j) cells *= nx;
    check_allocation(2 * cells * sizeof(double), "renewal series");

    // q[m * nx + y] = P(one-dimensional simple walk at y after m steps)
    std::vector<double> q(nk * nx, 0.0);
    for (std::uint64_t m = 0; m <= k_max; ++m) {
        for (std::size_t y = 0; y < nx && y <= m; ++y) {
            if ((m + y) % 2 != 0) continue;
            const double l = std::lgamma(m + 1.0) - std::lgamma((m + y) / 2 + 1.0) - std::lgamma((m - y) / 2 + 1.0) -
                             static_cast<double>(m) * std::numbers::ln2;
            q[m * nx + y] = std::exp(l);
        }
    }
    // level j: P_j[m][y_1..y_j], y_j fastest
    std::vector<double> prev = q;
    std::size_t width = nx;
    std::vector<double> row;
    for (int j = 2; j < d; ++j) {
        const std::size_t nwidth = width * nx;
        std::vector<double> cur(nk * nwidth, 0.0);
        for (std::uint64_t m = 0; m <= k_max; ++m) {
            binomial_row(m, 1.0 / j, row);
            double* dst = &cur[m * nwidth];
            for (std::uint64_t a = 0; a <= m; ++a) {
                if (row[a] == 0.0) continue;
                const double* src = &prev[(m - a) * width];
                for (std::size_t y = 0; y < nx && y <= a; ++y) {
                    const double t = row[a] * q[a * nx + y];
                    if (t == 0.0) continue;
                    for (std::size_t yp = 0; yp < width; ++yp) dst[yp * nx + y] += t * src[yp];
                }
            }
        }
        prev.swap(cur);
        width = nwidth;
    }
    const auto u = renewal_masses(base, k_max);
    std::vector<double> full(index.size()), half(index.size());
    const std::uint64_t k_half = k_max / 2;
    // Flattened positions of each key: prefix coordinates and last coordinate.
    std::vector<std::size_t> key_yp(index.size()), key_y(index.size());
    index.for_each([&](const SortedKeyIndex::Key& key, std::size_t r) {
        std::size_t yp = 0;
        for (int j = 0; j + 1 < d; ++j) yp = yp * nx + static_cast<std::size_t>(key[static_cast<std::size_t>(j)]);
        key_yp[r] = yp;
        key_y[r] = static_cast<std::size_t>(key[static_cast<std::size_t>(d - 1)]);
    });
    std::vector<long double> acc(index.size(), 0.0L);
    for (std::uint64_t k = 0; k <= k_max; ++k) {
        if (d > 1) binomial_row(k, 1.0 / d, row);
        for (std::size_t r = 0; r < index.size(); ++r) {
            const std::size_t y = key_y[r];
            long double pk = 0.0L;
            if (d == 1) {
                pk = q[k * nx + y];
            } else {
                for (std::uint64_t a = y; a <= k; ++a) {
                    const double qa = q[a * nx + y];
                    if (qa == 0.0 || row[a] == 0.0) continue;
                    pk += static_cast<long double>(row[a]) * qa * prev[(k - a) * width + key_yp[r]];
                }
            }
            acc[r] += static_cast<long double>(u[k]) * pk;
            if (k == k_half) half[r] = static_cast<double>(acc[r]);
        }
    }
    for (std::size_t r = 0; r < index.size(); ++r) full[r] = static_cast<double>(acc[r]);
    // Tail sum_{k>K} u(k) p_k(x) ~ A K^{-beta}; eliminate A with K/2 and K.
    const double gamma = (base.kind == WalkKind::simple) ? 1.0 : base.gamma();
    const double beta = 0.5 * d - gamma;
    const double factor = 1.0 / (std::pow(2.0, beta) - 1.0);
    error = 0.0;
    index.for_each([&](const SortedKeyIndex::Key& key, std::size_t r) {
        const double corr = (full[r] - half[r]) * factor;
        full[r] += corr;
        // next-order tail term is O((4 + |x|^2) / K) relative to the corrected one
        double x2 = 0.0;
        for (int j = 0; j < d; ++j) x2 += static_cast<double>(key[static_cast<std::size_t>(j)] * key[static_cast<std::size_t>(j)]);
        error = std::max(error, std::abs(corr) * 4.0 * (4.0 + x2) / static_cast<double>(k_max));
    });
    return full;
}

std::vector<double> occupation_values(const WalkModel& base, const GreenMethodSpec& spec, const SortedKeyIndex& index,
                                      std::vector<double>& se) {
    if (spec.mc_paths < 2) throw DomainError("occupation_mc: need at least 2 paths");
    const std::size_t nkeys = index.size();
    const std::uint64_t block = 1024;
    const std::uint64_t nblocks = (spec.mc_paths + block - 1) / block;
    check_allocation(2 * nblocks * nkeys * sizeof(double), "occupation sums");
    std::vector<std::vector<double>> sums(nblocks), sq(nblocks);
    std::vector<double> orbit(nkeys);
    index.for_each([&](const SortedKeyIndex::Key& key, std::size_t r) { orbit[r] = static_cast<double>(index.orbit_size(key)); });
    const StepSampler sampler(base);
    parallel_for(nblocks, spec.workers, [&](std::size_t b) {
        std::vector<double> s(nkeys, 0.0), s2(nkeys, 0.0);
        std::unordered_map<std::size_t, std::uint32_t> visits;
        const std::uint64_t lo = b * block;
        const std::uint64_t hi = std::min(spec.mc_paths, lo + block);
        SortedKeyIndex::Key key{};
        for (std::uint64_t p = lo; p < hi; ++p) {
            RngStream rng(spec.mc_seed, StreamTag::occupation, p);
            visits.clear();
            Site pos{};
            for (std::uint64_t n = 0;; ++n) {
                if (index.key_of(pos, key)) ++visits[index.rank(key)];
                if (n == spec.mc_horizon) break;
                pos = checked_add(pos, sampler.step(rng));
            }
            for (const auto& [r, c] : visits) {
                const double v = c / orbit[r];
                s[r] += v;
                s2[r] += v * v;
            }
        }
        sums[b] = std::move(s);
        sq[b] = std::move(s2);
    });
    const double m = static_cast<double>(spec.mc_paths);
    std::vector<double> mean(nkeys, 0.0), m2(nkeys, 0.0);
    for (std::uint64_t b = 0; b < nblocks; ++b) {
        for (std::size_t r = 0; r < nkeys; ++r) {
            mean[r] += sums[b][r];
            m2[r] += sq[b][r];
        }
    }
    se.assign(nkeys, 0.0);
    for (std::size_t r = 0; r < nkeys; ++r) {
        mean[r] /= m;
        const double var = std::max(0.0, (m2[r] / m - mean[r] * mean[r]) * m / (m - 1.0));
        se[r] = std::sqrt(var / m);
    }
    return mean;
}

}  // namespace

double charfn(const WalkModel& model, std::span<const double> theta) {
    if (static_cast<int>(theta.size()) != model.d) throw DomainError("charfn: theta has the wrong dimension");
    double gz = 0.0;
    for (double t : theta) {
        const double s = std::sin(0.5 * t);
        gz += 2.0 * s * s;
    }
    return 1.0 - model_gap(model, gz / model.d);
}

SortedKeyIndex::SortedKeyIndex(int d, int radius) : d_(d), radius_(radius) {
    if (d < 1 || d > kMaxDim) throw DomainError("SortedKeyIndex: dimension out of range");
    if (radius < 0) throw DomainError("SortedKeyIndex: negative radius");
    const std::size_t r = static_cast<std::size_t>(radius);
    size_ = binom_exact(r + static_cast<std::size_t>(d), static_cast<std::size_t>(d));
    prefix_.assign(static_cast<std::size_t>(d), std::vector<std::size_t>(r + 2, 0));
    for (int len = 0; len < d; ++len) {
        auto& pre = prefix_[static_cast<std::size_t>(len)];
        for (std::size_t u = 0; u <= r; ++u) {
            pre[u + 1] = pre[u] + binom_exact(r - u + static_cast<std::size_t>(len), static_cast<std::size_t>(len));
        }
    }
}

std::size_t SortedKeyIndex::rank(const Key& key) const {
    std::size_t r = 0;
    std::int64_t prev = 0;
    for (int i = 0; i < d_; ++i) {
        const auto& pre = prefix_[static_cast<std::size_t>(d_ - 1 - i)];
        const std::int64_t v = key[static_cast<std::size_t>(i)];
        r += pre[static_cast<std::size_t>(v)] - pre[static_cast<std::size_t>(prev)];
        prev = v;
    }
    return r;
}

bool SortedKeyIndex::key_of(const Site& x, Key& key) const {
    sorted_abs(x, d_, key);
    return key[static_cast<std::size_t>(d_ - 1)] <= radius_;
}

std::uint64_t SortedKeyIndex::orbit_size(const Key& key) const {
    std::uint64_t n = 1;
    for (int i = 1; i <= d_; ++i) n *= static_cast<std::uint64_t>(i);
    int run = 1;
    for (int i = 0; i < d_; ++i) {
        if (key[static_cast<std::size_t>(i)] != 0) n *= 2;
        if (i > 0 && key[static_cast<std::size_t>(i)] == key[static_cast<std::size_t>(i - 1)]) {
            ++run;
            n /= static_cast<std::uint64_t>(run);
        } else {
            run = 1;
        }
    }
    return n;
}

std::string to_string(GreenMethod m) {
    switch (m) {
        case GreenMethod::bessel_integral:
            return "bessel_integral";
        case GreenMethod::fourier_grid:
            return "fourier_grid";
        case GreenMethod::renewal_series:
            return "renewal_series";
        case GreenMethod::occupation_mc:
            return "occupation_mc";
    }
    return "unknown";
}

GreenMethod green_method_from_string(const std::string& s) {
    if (s == "bessel_integral" || s == "bessel") return GreenMethod::bessel_integral;
    if (s == "fourier_grid" || s == "fourier") return GreenMethod::fourier_grid;
    if (s == "renewal_series" || s == "renewal") return GreenMethod::renewal_series;
    if (s == "occupation_mc" || s == "mc") return GreenMethod::occupation_mc;
    throw DomainError("unknown Green method: " + s);
}

int default_grid_size(int d) {
    switch (d) {
        case 1:
            return 4096;
        case 2:
            return 1024;
        case 3:
            return 128;
        case 4:
            return 64;
        case 5:
            return 24;
        default:
            return 16;
    }
}

int default_table_radius(int d) {
    switch (d) {
        case 1:
            return 4096;
        case 2:
            return 256;
        case 3:
            return 64;
        case 4:
            return 40;
        case 5:
            return 24;
        default:
            return 16;
    }
}

GreenTable::GreenTable(WalkModel model, int radius, GreenMethodSpec method, std::vector<double> values)
    : model_(model), method_(method), index_(model.d, radius), values_(std::move(values)) {
    if (values_.size() != index_.size()) throw DomainError("GreenTable: value count does not match the window");
}

double GreenTable::far_field(const Site& x) const {
    return far_c_ * std::pow(norm2(x, model_.d), 0.5 * far_exponent());
}

double GreenTable::at(const Site& x) const {
    SortedKeyIndex::Key key;
    if (index_.key_of(x, key)) return values_[index_.rank(key)];
    return far_field(x);
}

void GreenTable::fit_far_field() {
    const int radius = index_.radius();
    const int d = model_.d;
    const double expo = far_exponent();
    double num = 0.0, den = 0.0;
    index_.for_each([&](const SortedKeyIndex::Key& key, std::size_t r) {
        const std::int64_t top = key[static_cast<std::size_t>(d - 1)];
        if (2 * top < radius || top == 0 || values_[r] <= 0.0) return;
        double n2 = 0.0;
        for (int j = 0; j < d; ++j) n2 += static_cast<double>(key[static_cast<std::size_t>(j)] * key[static_cast<std::size_t>(j)]);
        const double w = static_cast<double>(index_.orbit_size(key));
        num += w * (std::log(values_[r]) - 0.5 * expo * std::log(n2));
        den += w;
    });
    far_c_ = den > 0.0 ? std::exp(num / den) : 0.0;
    far_mismatch_ = 0.0;
    index_.for_each([&](const SortedKeyIndex::Key& key, std::size_t r) {
        if (key[static_cast<std::size_t>(d - 1)] != radius || values_[r] <= 0.0) return;
        double n2 = 0.0;
        for (int j = 0; j < d; ++j) n2 += static_cast<double>(key[static_cast<std::size_t>(j)] * key[static_cast<std::size_t>(j)]);
        far_mismatch_ = std::max(far_mismatch_, std::abs(far_c_ * std::pow(n2, 0.5 * expo) / values_[r] - 1.0));
    });
}

GreenTable build_green_table(const WalkModel& model, int radius, const GreenMethodSpec& method) {
    require_transient(model);
    if (radius < 1) throw DomainError("Green table radius must be >= 1");
    const WalkModel base = model.base();
    SortedKeyIndex index(model.d, radius);
    check_allocation(index.size() * sizeof(double), "Green table");
    std::vector<double> values;
    std::vector<double> se;
    double error = 0.0;
    GreenMethodSpec spec = method;
    switch (method.method) {
        case GreenMethod::bessel_integral:
            if (!(spec.step > 0.0 && spec.step <= 1.0)) throw DomainError("bessel_integral: step must be in (0, 1]");
            values = bessel_values(base, radius, spec.step, index, spec.workers, error);
            break;
        case GreenMethod::fourier_grid: {
            if (spec.grid_n == 0) spec.grid_n = std::max(default_grid_size(model.d), 4 * radius + (4 * radius) % 2);
            if (spec.grid_n % 2 != 0 || spec.grid_n < 4 * radius) throw DomainError("fourier_grid: need N even and N >= 4R");
            values = fourier_values(base, spec.grid_n, radius, index);
            if (spec.grid_n >= 8) {
                // Zero-mode corrected grid error is O(h^{d+2-alpha}); compare with N/2.
                const int coarse_n = spec.grid_n / 2 + (spec.grid_n / 2) % 2;
                const int r_small = std::min(radius, coarse_n / 8);
                SortedKeyIndex small(model.d, r_small);
                const auto coarse = fourier_values(base, coarse_n, r_small, small);
                const double ratio = std::pow(2.0, model.d + 2.0 - model.alpha) - 1.0;
                small.for_each([&](const SortedKeyIndex::Key& key, std::size_t r) {
                    error = std::max(error, std::abs(coarse[r] - values[index.rank(key)]) / ratio);
                });
            }
            break;
        }
        case GreenMethod::renewal_series:
            values = renewal_values(base, radius, spec.series_k, index, error);
            break;
        case GreenMethod::occupation_mc:
            values = occupation_values(base, spec, index, se);
            for (double s : se) error = std::max(error, s);
            break;
    }
    if (model.derived == Derivation::loop_free) {
        const double scale = 1.0 - model.base_loop_prob;
        for (auto& v : values) v *= scale;
        for (auto& s : se) s *= scale;
        error *= scale;
    }
    GreenTable table(model, radius, spec, std::move(values));
    table.set_standard_errors(std::move(se));
    table.set_error_estimate(error);
    table.fit_far_field();
    return table;
}

double green_at(const GreenTable& table, const Site& x) {
    return table.at(x);
}

TruncatedGreenTable::TruncatedGreenTable(const WalkModel& model, int radius, std::uint64_t horizon, int grid_n)
    : model_(model), horizon_(horizon), grid_n_(grid_n), index_(model.d, radius) {
    model.validate();
    if (grid_n % 2 != 0 || grid_n < 4 * radius) throw DomainError("truncated Green: need N even and N >= 4R");
    const double n1 = static_cast<double>(horizon) + 1.0;
    auto f = half_grid(model.d, grid_n, [&](double gz, bool origin) {
        if (origin) return n1;
        const double g = model_gap(model, gz);
        // (1 - phi^{n+1}) / (1 - phi)
        return (1.0 - power_of(g, n1)) / g;
    });
    auto cube = cosine_contract(std::move(f), model.d, grid_n / 2, radius);
    const double scale = std::pow(static_cast<double>(grid_n), -model.d);
    for (auto& v : cube) v *= scale;
    values_ = cube_to_keys(cube, index_);
}

double TruncatedGreenTable::at(const Site& x) const {
    SortedKeyIndex::Key key;
    if (!index_.key_of(x, key)) throw DomainError("truncated Green lookup outside the window");
    return values_[index_.rank(key)];
}

std::vector<double> pn_at_origin(const WalkModel& model, std::span<const std::uint64_t> ns) {
    model.validate();
    const bool at_pi = model.kind == WalkKind::simple || model.alpha >= 2.0;
    const TorusRule rule = TorusRule::for_dimension(model.d, at_pi);
    std::vector<long double> acc(ns.size(), 0.0L);
    rule.for_each_gap([&](double gz, double w) {
        const double g = model_gap(model, gz);
        for (std::size_t i = 0; i < ns.size(); ++i) {
            acc[i] += static_cast<long double>(w) * power_of(g, static_cast<double>(ns[i]));
        }
    });
    std::vector<double> out(ns.size());
    for (std::size_t i = 0; i < ns.size(); ++i) out[i] = ns[i] == 0 ? 1.0 : std::clamp(static_cast<double>(acc[i]), 0.0, 1.0);
    return out;
}

double pn_at_origin(const WalkModel& model, std::uint64_t n) {
    const std::uint64_t ns[1] = {n};
    return pn_at_origin(model, ns)[0];
}

std::vector<double> transience_partial_sums(const WalkModel& model, std::span<const std::uint64_t> caps) {
    model.validate();
    const bool at_pi = model.kind == WalkKind::simple || model.alpha >= 2.0;
    const TorusRule rule = TorusRule::for_dimension(model.d, at_pi);
    std::vector<long double> acc(caps.size(), 0.0L);
    rule.for_each_gap([&](double gz, double w) {
        const double g = model_gap(model, gz);
        const double x = 1.0 - g;
        for (std::size_t i = 0; i < caps.size(); ++i) {
            const double n = static_cast<double>(caps[i]);
            double s;
            if (g * n < 0.5) {
                // sum_{k=1}^{N} k x^k directly; only a few nodes near the origin land here
                long double t = 0.0L, xk = 1.0L;
                for (std::uint64_t k = 1; k <= caps[i]; ++k) {
                    xk *= x;
                    t += static_cast<long double>(k) * xk;
                }
                s = static_cast<double>(t);
            } else {
                // x (1 - x^N (1 + N g)) / g^2 with 1 - x^N evaluated directly
                const double xn = power_of(g, n);
                const double one_minus = x > 0.0 ? -std::expm1(n * std::log1p(-g)) : 1.0 - xn;
                s = x * (one_minus - xn * n * g) / (g * g);
            }
            acc[i] += static_cast<long double>(w) * s;
        }
    });
    std::vector<double> out(caps.size());
    for (std::size_t i = 0; i < caps.size(); ++i) out[i] = static_cast<double>(acc[i]);
    return out;
}

double Asymptotics::b(double n) const {
    return std::pow(n, 1.0 / alpha);
}

double Asymptotics::h_exponent() const {
    const double ratio = d / alpha;
    if (ratio >= 3.0 - 1e-12) return 0.0;
    return 3.0 - ratio;
}

double h_d_eval(const Asymptotics& asym, std::uint64_t n) {
    if (n < 1) throw DomainError("h_d: n must be >= 1");
    const double ratio = asym.d / asym.alpha;
    if (ratio <= 2.0) throw DomainError("h_d: requires d > 2 alpha (strong transience)");
    if (ratio > 3.0 + 1e-12) return 1.0;
    if (std::abs(ratio - 3.0) <= 1e-12) {
        double s = 0.0;
        for (std::uint64_t k = n; k >= 1; --k) s += 1.0 / static_cast<double>(k);
        return s;
    }
    return std::pow(static_cast<double>(n), 3.0 - ratio);
}

}  // namespace rangecap
