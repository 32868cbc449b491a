#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "rangecap/core.hpp"
#include "rangecap/rng.hpp"

namespace rangecap {

enum class WalkKind : std::uint8_t { simple = 0, subordinate = 1 };
enum class Derivation : std::uint8_t { none = 0, loop_free = 1, loop_inserted = 2 };

/// Law of one step. The simple walk is stored with alpha = 2.
struct WalkModel {
    WalkKind kind = WalkKind::simple;
    Derivation derived = Derivation::none;
    int d = 3;
    double alpha = 2.0;
    /// One-step-loop probability of the underlying base model.
    double base_loop_prob = 0.0;

    double gamma() const { return 0.5 * alpha; }
    /// p_1(0) of this model (0 for the loop-free version).
    double loop_prob() const { return derived == Derivation::loop_free ? 0.0 : base_loop_prob; }
    bool transient() const { return d > alpha; }
    /// The base model with derived = none.
    WalkModel base() const;
    std::string describe() const;
    /// Throws DomainError when the fields violate the model invariants.
    void validate() const;
};

WalkModel simple_walk(int d);
/// Subordinate walk; the loop probability is computed by quadrature.
WalkModel subordinate_walk(int d, double alpha);
WalkModel subordinate_walk(int d, double alpha, double loop_prob);
WalkModel loop_free_model(const WalkModel& m);
WalkModel loop_inserted_model(const WalkModel& m);

/// p_1(0) = 1 - E_theta[(1 - phi_Z(theta))^{alpha/2}] over the torus.
double loop_probability(int d, double alpha);

/// Sibuya(gamma) probability mass at k >= 1.
double sibuya_pmf(double gamma, std::uint64_t k);
/// P(eta > k) = prod_{i<=k} (1 - gamma/i).
double sibuya_tail(double gamma, std::uint64_t k);

class SibuyaSubordinator {
public:
    static constexpr std::uint64_t kTableSize = 1u << 16;
    static constexpr std::size_t kGuideSize = 4096;

    explicit SibuyaSubordinator(double gamma);

    double gamma() const { return gamma_; }
    double pmf(std::uint64_t k) const;
    double tail(std::uint64_t k) const;
    /// Exact inversion of the tail; throws ResourceError past 2^63.
    std::uint64_t sample(RngStream& rng) const;
    /// As sample(), but returns the asymptotic inverse (u Gamma(1-gamma))^{-1/gamma}
    /// instead of throwing when the draw exceeds 2^53.
    double sample_real(RngStream& rng) const;

private:
    double log_tail(double k) const;
    std::uint64_t invert(double u, std::uint64_t cap, bool& beyond) const;

    double gamma_;
    double lgamma_one_minus_;
    std::vector<double> tail_;  // tail_[k] = T(k), k <= kTableSize
    std::vector<std::uint64_t> guide_;
};

/// Shared subordinator for a given gamma (cached, thread-safe).
std::shared_ptr<const SibuyaSubordinator> sibuya_for(double gamma);

std::uint64_t sibuya_sample(RngStream& rng, double gamma);

/// Binomial(n, p) draw: inversion for n <= 64, BTRS rejection above.
std::uint64_t binomial_sample(RngStream& rng, std::uint64_t n, double p);

/// Z_k - Z_0 for a d-dimensional simple walk, k >= 0, without simulating
/// k steps. Beyond 2^53 coordinates use the Gaussian limit.
Site simple_walk_displacement(RngStream& rng, double k, int d);

/// One step of the subordinate walk (alpha < 2 or the alpha = 2 degenerate case).
Site subordinate_increment(RngStream& rng, const WalkModel& model);

struct LatticePath {
    int d = 0;
    std::vector<Site> positions;
    std::uint64_t seed = 0;
    StreamTag tag = StreamTag::path;
    std::uint64_t index = 0;

    std::size_t horizon() const { return positions.empty() ? 0 : positions.size() - 1; }
    const Site& operator[](std::size_t k) const { return positions[k]; }
};

/// Longest horizon accepted by sample_path.
inline constexpr std::uint64_t kMaxHorizon = std::uint64_t{1} << 26;

/// Draws steps of a fixed model; holds the subordinator table once.
class StepSampler {
public:
    explicit StepSampler(const WalkModel& model);
    const WalkModel& model() const { return model_; }
    Site step(RngStream& rng) const;

private:
    Site base_step(RngStream& rng) const;
    Site loop_free_step(RngStream& rng) const;

    WalkModel model_;
    std::shared_ptr<const SibuyaSubordinator> sub_;
};

LatticePath sample_path(const StepSampler& sampler, std::uint64_t n, RngStream& rng, const Site& start = Site{});
LatticePath sample_path(const WalkModel& model, std::uint64_t n, RngStream& rng, const Site& start = Site{});

struct LoopInsertionRecord {
    std::vector<std::uint64_t> xi;  // xi_0..xi_n
    std::vector<std::uint64_t> N;   // N_k = xi_0 + ... + xi_k

    /// N_{k-1} with N_{-1} = 0.
    std::uint64_t before(std::size_t k) const { return k == 0 ? 0 : N[k - 1]; }
    /// I_k = [k + N_{k-1} + 1, k + N_k]; empty when xi_k = 0.
    std::pair<std::uint64_t, std::uint64_t> interval(std::size_t k) const {
        return {k + before(k) + 1, k + N[k]};
    }
};

/// Geometric(p) on {0, 1, ...}: P(k) = p^k (1 - p).
std::uint64_t geometric_sample(RngStream& rng, double p);

/// Inserts xi_k one-step loops after S~_k. The result has length n + N_n + 1
/// and satisfies hat{S}_{k + N_k} = tilde{S}_k.
std::pair<LatticePath, LoopInsertionRecord> insert_loops(const LatticePath& tilde, double p, RngStream& rng);
/// Same construction from explicit loop counts.
std::pair<LatticePath, LoopInsertionRecord> insert_loops(const LatticePath& tilde, std::vector<std::uint64_t> xi);

}  // namespace rangecap
