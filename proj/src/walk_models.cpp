#include "rangecap/walk_models.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <mutex>
#include <sstream>

#include "rangecap/quadrature.hpp"
#include "rangecap/special.hpp"

namespace rangecap {

namespace {

constexpr double kTwo53 = 9007199254740992.0;

void check_gamma(double gamma) {
    if (!(gamma > 0.0 && gamma < 1.0)) throw DomainError("Sibuya gamma must lie in (0, 1)");
}

// Uniform unit steps drawn from a shared bit buffer: the axis uses
// bit_width(d - 1) bits with rejection (exactly uniform), the sign one bit.
class UnitSteps {
public:
    UnitSteps(RngStream& rng, int d)
        : rng_(rng), d_(static_cast<std::uint32_t>(d)), width_(std::bit_width(static_cast<unsigned>(d - 1)) + 1) {}

    // Adds one step to c[0..d).
    void add(std::int64_t* c) {
        while (true) {
            if (left_ < width_) {
                word_ = rng_.next_u64();
                left_ = 64;
            }
            const auto v = static_cast<std::uint32_t>(word_ & ((std::uint64_t{1} << width_) - 1));
            word_ >>= width_;
            left_ -= width_;
            const std::uint32_t axis = v >> 1;
            if (axis >= d_) continue;
            c[axis] += 2 * static_cast<std::int64_t>(v & 1u) - 1;
            return;
        }
    }

private:
    RngStream& rng_;
    std::uint32_t d_;
    int width_;
    std::uint64_t word_ = 0;
    int left_ = 0;
};

Site random_unit(RngStream& rng, int d) {
    Site s;
    UnitSteps(rng, d).add(s.c.data());
    return s;
}

// Sum of k fair +-1 steps via popcounts of random words.
std::int64_t fair_walk_1d(RngStream& rng, std::uint64_t k) {
    std::uint64_t up = 0;
    std::uint64_t left = k;
    while (left >= 64) {
        up += static_cast<std::uint64_t>(std::popcount(rng.next_u64()));
        left -= 64;
    }
    if (left > 0) up += static_cast<std::uint64_t>(std::popcount(rng.next_u64() & ((std::uint64_t{1} << left) - 1)));
    return static_cast<std::int64_t>(2 * up) - static_cast<std::int64_t>(k);
}

std::int64_t checked_round(double v) {
    if (!(std::abs(v) < 9.2e18)) throw ResourceError("lattice coordinate overflow");
    return static_cast<std::int64_t>(std::llround(v));
}

std::uint64_t binomial_inversion(RngStream& rng, std::uint64_t n, double p) {
    const double q = 1.0 - p;
    const double s = p / q;
    const double a = static_cast<double>(n + 1) * s;
    double r = std::pow(q, static_cast<double>(n));
    double u = rng.uniform();
    std::uint64_t x = 0;
    while (u > r && x < n) {
        u -= r;
        ++x;
        r *= a / static_cast<double>(x) - s;
    }
    return x;
}

// Hormann's BTRS; requires n p >= 10, which holds for n > 64 and p >= 1/6.
std::uint64_t binomial_btrs(RngStream& rng, std::uint64_t n_int, double p) {
    const double n = static_cast<double>(n_int);
    const double q = 1.0 - p;
    const double spq = std::sqrt(n * p * q);
    const double b = 1.15 + 2.53 * spq;
    const double a = -0.0873 + 0.0248 * b + 0.01 * p;
    const double c = n * p + 0.5;
    const double vr = 0.92 - 4.2 / b;
    const double alpha = (2.83 + 5.1 / b) * spq;
    const double lpq = std::log(p / q);
    const double m = std::floor((n + 1.0) * p);
    while (true) {
        const double u = rng.uniform_open() - 0.5;
        double v = rng.uniform_open();
        const double us = 0.5 - std::abs(u);
        const double k = std::floor((2.0 * a / us + b) * u + c);
        if (k < 0.0 || k > n) continue;
        if (us >= 0.07 && v <= vr) return static_cast<std::uint64_t>(k);
        v = std::log(v * alpha / (a / (us * us) + b));
        const double bound = log_gamma_diff(m + 1.0, k + 1.0) + log_gamma_diff(n - m + 1.0, n - k + 1.0) +
                             (k - m) * lpq;
        if (v <= bound) return static_cast<std::uint64_t>(k);
    }
}

}  // namespace

WalkModel WalkModel::base() const {
    WalkModel b = *this;
    b.derived = Derivation::none;
    return b;
}

std::string WalkModel::describe() const {
    std::ostringstream os;
    os << (kind == WalkKind::simple ? "simple" : "subordinate") << "(d=" << d;
    if (kind == WalkKind::subordinate) os << ",alpha=" << alpha;
    os << ")";
    if (derived == Derivation::loop_free) os << "/loop_free";
    if (derived == Derivation::loop_inserted) os << "/loop_inserted";
    return os.str();
}

void WalkModel::validate() const {
    if (d < 1 || d > kMaxDim) throw DomainError("dimension must be in [1, " + std::to_string(kMaxDim) + "]");
    if (!(alpha > 0.0 && alpha <= 2.0)) throw DomainError("alpha must be in (0, 2]");
    if (kind == WalkKind::simple && alpha != 2.0) throw DomainError("simple walk has alpha = 2");
    if (!(base_loop_prob >= 0.0 && base_loop_prob < 1.0)) throw DomainError("loop probability must be in [0, 1)");
}

WalkModel simple_walk(int d) {
    WalkModel m;
    m.kind = WalkKind::simple;
    m.d = d;
    m.alpha = 2.0;
    m.validate();
    return m;
}

WalkModel subordinate_walk(int d, double alpha) {
    WalkModel m;
    m.kind = WalkKind::subordinate;
    m.d = d;
    m.alpha = alpha;
    m.validate();
    m.base_loop_prob = loop_probability(d, alpha);
    return m;
}

WalkModel subordinate_walk(int d, double alpha, double loop_prob) {
    WalkModel m;
    m.kind = WalkKind::subordinate;
    m.d = d;
    m.alpha = alpha;
    m.base_loop_prob = loop_prob;
    m.validate();
    return m;
}

WalkModel loop_free_model(const WalkModel& m) {
    if (m.derived != Derivation::none) throw DomainError("loop_free_model expects a base model");
    WalkModel r = m;
    r.derived = Derivation::loop_free;
    return r;
}

WalkModel loop_inserted_model(const WalkModel& m) {
    if (m.derived != Derivation::none) throw DomainError("loop_inserted_model expects a base model");
    WalkModel r = m;
    r.derived = Derivation::loop_inserted;
    return r;
}

double loop_probability(int d, double alpha) {
    if (alpha >= 2.0) return 0.0;
    const double gamma = 0.5 * alpha;
    const TorusRule rule = TorusRule::for_dimension(d, false);
    long double acc = 0.0L;
    rule.for_each_gap([&](double gap, double w) { acc += static_cast<long double>(w) * (1.0 - std::pow(gap, gamma)); });
    return static_cast<double>(acc);
}

double sibuya_tail(double gamma, std::uint64_t k) {
    check_gamma(gamma);
    if (k <= (1u << 20)) {
        long double t = 1.0L;
        for (std::uint64_t i = 1; i <= k; ++i) t *= 1.0L - static_cast<long double>(gamma) / static_cast<long double>(i);
        return static_cast<double>(t);
    }
    const double kd = static_cast<double>(k);
    return std::exp(log_gamma_diff(kd + 1.0 - gamma, kd + 1.0) - std::lgamma(1.0 - gamma));
}

double sibuya_pmf(double gamma, std::uint64_t k) {
    check_gamma(gamma);
    if (k == 0) throw DomainError("Sibuya support starts at 1");
    return sibuya_tail(gamma, k - 1) * gamma / static_cast<double>(k);
}

SibuyaSubordinator::SibuyaSubordinator(double gamma) : gamma_(gamma) {
    check_gamma(gamma);
    lgamma_one_minus_ = std::lgamma(1.0 - gamma);
    tail_.resize(kTableSize + 1);
    long double t = 1.0L;
    tail_[0] = 1.0;
    for (std::uint64_t k = 1; k <= kTableSize; ++k) {
        t *= 1.0L - static_cast<long double>(gamma) / static_cast<long double>(k);
        tail_[k] = static_cast<double>(t);
    }
    // guide_[j] = smallest k with T(k) <= j / G, capped at the table end.
    guide_.resize(kGuideSize + 1);
    for (std::size_t j = 0; j <= kGuideSize; ++j) {
        const double u = static_cast<double>(j) / kGuideSize;
        const auto it = std::lower_bound(tail_.begin() + 1, tail_.end(), u, [](double t, double x) { return t > x; });
        guide_[j] = std::min<std::uint64_t>(static_cast<std::uint64_t>(it - tail_.begin()), kTableSize);
    }
}

double SibuyaSubordinator::tail(std::uint64_t k) const {
    if (k <= kTableSize) return tail_[k];
    return std::exp(log_tail(static_cast<double>(k)));
}

double SibuyaSubordinator::pmf(std::uint64_t k) const {
    if (k == 0) return 0.0;
    return tail(k - 1) * gamma_ / static_cast<double>(k);
}

double SibuyaSubordinator::log_tail(double k) const {
    return log_gamma_diff(k + 1.0 - gamma_, k + 1.0) - lgamma_one_minus_;
}

std::uint64_t SibuyaSubordinator::invert(double u, std::uint64_t cap, bool& beyond) const {
    beyond = false;
    if (u >= tail_[1]) return 1;
    if (u >= tail_[kTableSize]) {
        // The guide brackets the answer for u in [j/G, (j+1)/G).
        const std::size_t j = static_cast<std::size_t>(u * kGuideSize);
        const auto lo = tail_.begin() + static_cast<std::ptrdiff_t>(guide_[j + 1]);
        const auto hi = tail_.begin() + static_cast<std::ptrdiff_t>(guide_[j]) + 1;
        const auto it = std::lower_bound(lo, hi, u, [](double t, double x) { return t > x; });
        return static_cast<std::uint64_t>(it - tail_.begin());
    }
    const double lu = std::log(u);
    std::uint64_t lo = kTableSize;  // T(lo) > u
    std::uint64_t hi = kTableSize;
    while (true) {
        if (hi >= cap) {
            beyond = true;
            return 0;
        }
        hi = std::min(2 * hi, cap);
        if (log_tail(static_cast<double>(hi)) <= lu) break;
        lo = hi;
    }
    while (hi - lo > 1) {
        const std::uint64_t mid = lo + (hi - lo) / 2;
        if (log_tail(static_cast<double>(mid)) <= lu) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    return hi;
}

std::uint64_t SibuyaSubordinator::sample(RngStream& rng) const {
    bool beyond = false;
    const std::uint64_t k = invert(rng.uniform_open(), std::uint64_t{1} << 63, beyond);
    if (beyond) throw ResourceError("Sibuya draw exceeds 2^63");
    return k;
}

double SibuyaSubordinator::sample_real(RngStream& rng) const {
    const double u = rng.uniform_open();
    bool beyond = false;
    const std::uint64_t k = invert(u, std::uint64_t{1} << 53, beyond);
    if (!beyond) return static_cast<double>(k);
    // T(k) ~ k^{-gamma} / Gamma(1 - gamma); relative error O(1/k) < 1e-15 here.
    return std::exp(-(std::log(u) + lgamma_one_minus_) / gamma_);
}

std::shared_ptr<const SibuyaSubordinator> sibuya_for(double gamma) {
    static std::mutex mu;
    static std::map<double, std::shared_ptr<const SibuyaSubordinator>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto& slot = cache[gamma];
    if (!slot) slot = std::make_shared<const SibuyaSubordinator>(gamma);
    return slot;
}

std::uint64_t sibuya_sample(RngStream& rng, double gamma) {
    return sibuya_for(gamma)->sample(rng);
}

std::uint64_t binomial_sample(RngStream& rng, std::uint64_t n, double p) {
    if (!(p >= 0.0 && p <= 1.0)) throw DomainError("binomial p out of range");
    if (n == 0 || p == 0.0) return 0;
    if (p == 1.0) return n;
    if (p > 0.5) return n - binomial_sample(rng, n, 1.0 - p);
    if (n <= 64) return binomial_inversion(rng, n, p);
    return binomial_btrs(rng, n, p);
}

Site simple_walk_displacement(RngStream& rng, double k, int d) {
    Site s;
    if (k <= 0.0) return s;
    if (k <= 48.0) {
        // Short walks: stepping directly is cheaper than the binomial splits.
        UnitSteps steps(rng, d);
        for (int i = 0; i < static_cast<int>(k); ++i) steps.add(s.c.data());
        return s;
    }
    if (k <= kTwo53) {
        std::uint64_t left = static_cast<std::uint64_t>(k);
        for (int j = 0; j < d; ++j) {
            const std::uint64_t kj = (j + 1 == d) ? left : binomial_sample(rng, left, 1.0 / (d - j));
            left -= kj;
            if (kj <= 4096) {
                s[j] = fair_walk_1d(rng, kj);
            } else {
                const std::uint64_t up = binomial_sample(rng, kj, 0.5);
                s[j] = static_cast<std::int64_t>(2 * up) - static_cast<std::int64_t>(kj);
            }
        }
        return s;
    }
    const double sd = std::sqrt(k / d);
    for (int j = 0; j < d; ++j) s[j] = checked_round(sd * rng.normal());
    return s;
}

Site subordinate_increment(RngStream& rng, const WalkModel& model) {
    if (model.kind != WalkKind::subordinate) throw DomainError("subordinate_increment needs a subordinate model");
    if (model.alpha >= 2.0) return random_unit(rng, model.d);
    return simple_walk_displacement(rng, sibuya_for(model.gamma())->sample_real(rng), model.d);
}

StepSampler::StepSampler(const WalkModel& model) : model_(model) {
    model_.validate();
    if (model_.kind == WalkKind::subordinate && model_.alpha < 2.0) sub_ = sibuya_for(model_.gamma());
}

Site StepSampler::base_step(RngStream& rng) const {
    if (!sub_) return random_unit(rng, model_.d);
    return simple_walk_displacement(rng, sub_->sample_real(rng), model_.d);
}

Site StepSampler::loop_free_step(RngStream& rng) const {
    while (true) {
        const Site s = base_step(rng);
        if (s != Site{}) return s;
    }
}

Site StepSampler::step(RngStream& rng) const {
    switch (model_.derived) {
        case Derivation::none:
            return base_step(rng);
        case Derivation::loop_free:
            return loop_free_step(rng);
        case Derivation::loop_inserted:
            // A geometric run of loops before each loop-free step is the same
            // as an independent loop with probability p at every step.
            if (rng.uniform() < model_.base_loop_prob) return Site{};
            return loop_free_step(rng);
    }
    return Site{};
}

LatticePath sample_path(const StepSampler& sampler, std::uint64_t n, RngStream& rng, const Site& start) {
    if (n > kMaxHorizon) throw ResourceError("horizon exceeds the configured maximum");
    check_allocation((n + 1) * sizeof(Site), "path");
    LatticePath path;
    path.d = sampler.model().d;
    path.seed = rng.seed();
    path.tag = rng.tag();
    path.index = rng.index();
    path.positions.reserve(n + 1);
    path.positions.push_back(start);
    for (std::uint64_t k = 0; k < n; ++k) {
        path.positions.push_back(checked_add(path.positions.back(), sampler.step(rng)));
    }
    return path;
}

LatticePath sample_path(const WalkModel& model, std::uint64_t n, RngStream& rng, const Site& start) {
    return sample_path(StepSampler(model), n, rng, start);
}

std::uint64_t geometric_sample(RngStream& rng, double p) {
    if (!(p >= 0.0 && p < 1.0)) throw DomainError("geometric p must be in [0, 1)");
    if (p == 0.0) return 0;
    return static_cast<std::uint64_t>(std::floor(std::log(rng.uniform_open()) / std::log(p)));
}

std::pair<LatticePath, LoopInsertionRecord> insert_loops(const LatticePath& tilde, std::vector<std::uint64_t> xi) {
    const std::size_t n = tilde.horizon();
    if (tilde.positions.empty()) throw DomainError("insert_loops: empty path");
    if (xi.size() != n + 1) throw DomainError("insert_loops: need xi_0..xi_n");
    for (std::size_t k = 1; k <= n; ++k) {
        if (tilde[k] == tilde[k - 1]) throw DomainError("insert_loops: input path has a one-step loop");
    }
    LoopInsertionRecord rec;
    rec.xi = std::move(xi);
    rec.N.resize(n + 1);
    std::uint64_t acc = 0;
    for (std::size_t k = 0; k <= n; ++k) {
        acc += rec.xi[k];
        rec.N[k] = acc;
    }
    check_allocation((n + acc + 1) * sizeof(Site), "loop-inserted path");
    LatticePath hat;
    hat.d = tilde.d;
    hat.seed = tilde.seed;
    hat.tag = tilde.tag;
    hat.index = tilde.index;
    hat.positions.reserve(n + acc + 1);
    for (std::size_t k = 0; k <= n; ++k) {
        // S~_k occupies [k + N_{k-1}, k + N_k].
        hat.positions.insert(hat.positions.end(), rec.xi[k] + 1, tilde[k]);
    }
    return {std::move(hat), std::move(rec)};
}

std::pair<LatticePath, LoopInsertionRecord> insert_loops(const LatticePath& tilde, double p, RngStream& rng) {
    std::vector<std::uint64_t> xi(tilde.horizon() + 1);
    for (auto& x : xi) x = geometric_sample(rng, p);
    return insert_loops(tilde, std::move(xi));
}

}  // namespace rangecap
