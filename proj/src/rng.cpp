#include "rangecap/rng.hpp"

#include <cmath>
#include <numbers>

namespace rangecap {

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
    const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
    hi = static_cast<std::uint32_t>(p >> 32);
    lo = static_cast<std::uint32_t>(p);
}

}  // namespace

std::uint64_t splitmix64(std::uint64_t x) {
    std::uint64_t z = x + 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                        std::array<std::uint32_t, 2> key) {
    for (int round = 0; round < 10; ++round) {
        std::uint32_t hi0, lo0, hi1, lo1;
        mulhilo(kPhiloxM0, ctr[0], hi0, lo0);
        mulhilo(kPhiloxM1, ctr[2], hi1, lo1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        key[0] += kPhiloxW0;
        key[1] += kPhiloxW1;
    }
    return ctr;
}

RngStream::RngStream(std::uint64_t seed, StreamTag tag, std::uint64_t index)
    : seed_(seed), tag_(tag), index_(index) {
    const std::uint64_t k = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(tag) + 0x51ed27u));
    key_ = {static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
}

std::uint64_t RngStream::next_u64() {
    // Each Philox block yields two words; block number = position / 2.
    const std::uint64_t slot = position_ & 1u;
    if (slot == 0) {
        const std::uint64_t blk = position_ >> 1;
        const auto out = philox4x32({static_cast<std::uint32_t>(blk), static_cast<std::uint32_t>(blk >> 32),
                                     static_cast<std::uint32_t>(index_), static_cast<std::uint32_t>(index_ >> 32)},
                                    key_);
        block_[0] = (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
        block_[1] = (static_cast<std::uint64_t>(out[3]) << 32) | out[2];
    }
    ++position_;
    return block_[slot];
}

double RngStream::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform_open() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double RngStream::normal() {
    if (has_spare_normal_) {
        has_spare_normal_ = false;
        return spare_normal_;
    }
    const double u1 = uniform_open();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double phi = 2.0 * std::numbers::pi * u2;
    spare_normal_ = r * std::sin(phi);
    has_spare_normal_ = true;
    return r * std::cos(phi);
}

}  // namespace rangecap
