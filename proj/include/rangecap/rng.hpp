#pragma once

#include <array>
#include <cstdint>

namespace rangecap {

/// Purposes that partition the stream space of one experiment seed.
enum class StreamTag : std::uint32_t {
    path = 1,
    partner_path = 2,
    loops = 3,
    loop_free_path = 4,
    escape = 5,
    bootstrap = 6,
    synthetic = 7,
    occupation = 8,
    set_sampler = 9,
    test = 100,
};

/// Philox4x32-10 block: maps (key, counter) to four 32-bit words.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                        std::array<std::uint32_t, 2> key);

/// Counter-based random stream. Every draw is a pure function of
/// (seed, tag, index, position); copying a stream forks an identical
/// sequence, so streams can move between worker threads freely.
class RngStream {
public:
    RngStream(std::uint64_t seed, StreamTag tag, std::uint64_t index);

    std::uint64_t next_u64();
    /// Uniform on [0, 1) with 53 random bits.
    double uniform();
    /// Uniform on (0, 1); never returns 0 or 1.
    double uniform_open();
    /// Standard normal (Box-Muller, cached pair).
    double normal();

    std::uint64_t seed() const { return seed_; }
    StreamTag tag() const { return tag_; }
    std::uint64_t index() const { return index_; }
    /// Number of 64-bit words consumed so far.
    std::uint64_t position() const { return position_; }

private:
    std::uint64_t seed_;
    StreamTag tag_;
    std::uint64_t index_;
    std::array<std::uint32_t, 2> key_;
    std::uint64_t position_ = 0;
    std::array<std::uint64_t, 2> block_{};
    bool has_spare_normal_ = false;
    double spare_normal_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace rangecap
