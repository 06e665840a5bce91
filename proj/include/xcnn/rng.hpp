#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

#include "xcnn/error.hpp"

namespace xcnn {

/// Counter-based generator: Philox4x32-10 (Salmon et al., Random123).
///
/// The 64-bit seed is the Philox key; the 128-bit counter is
/// (draw index lo, draw index hi, stream lo, stream hi). A given
/// (seed, stream) pair therefore names one fixed sequence on every platform,
/// and distinct streams are independent blocks of the same keyed permutation.
///
/// Constants: multipliers 0xD2511F53, 0xCD9E8D57; Weyl key increments
/// 0x9E3779B9, 0xBB67AE85; 10 rounds. Each block yields two 64-bit words.
class Rng {
public:
    Rng(std::uint64_t seed, std::uint64_t stream = 0) noexcept : seed_(seed), stream_(stream) {}

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream() const noexcept { return stream_; }

    /// Child generator sharing the seed but on a different stream.
    Rng derive(std::uint64_t stream) const noexcept { return Rng(seed_, stream); }

    std::uint64_t next_u64() noexcept {
        if (lane_ == 2) {
            block_ = block(seed_, stream_, counter_++);
            lane_ = 0;
        }
        return block_[lane_++];
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n), unbiased (rejection sampling).
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw UsageError("Rng::below requires n > 0");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do x = next_u64();
        while (x >= limit);
        return x % n;
    }

    /// Standard normal draw via Box-Muller; the paired value is cached.
    double normal() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform(); // (0, 1]
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    /// One Philox4x32-10 block for counter (index, stream) under key `seed`.
    static std::array<std::uint64_t, 2> block(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) noexcept {
        std::uint32_t c0 = static_cast<std::uint32_t>(index), c1 = static_cast<std::uint32_t>(index >> 32);
        std::uint32_t c2 = static_cast<std::uint32_t>(stream), c3 = static_cast<std::uint32_t>(stream >> 32);
        std::uint32_t k0 = static_cast<std::uint32_t>(seed), k1 = static_cast<std::uint32_t>(seed >> 32);
        for (int round = 0; round < 10; ++round) {
            std::uint32_t hi0, hi1;
            const std::uint32_t lo0 = mulhilo(0xD2511F53u, c0, hi0);
            const std::uint32_t lo1 = mulhilo(0xCD9E8D57u, c2, hi1);
            c0 = hi1 ^ c1 ^ k0;
            c1 = lo1;
            c2 = hi0 ^ c3 ^ k1;
            c3 = lo0;
            k0 += 0x9E3779B9u;
            k1 += 0xBB67AE85u;
        }
        return {(static_cast<std::uint64_t>(c1) << 32) | c0, (static_cast<std::uint64_t>(c3) << 32) | c2};
    }

private:
    static std::uint32_t mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi) noexcept {
        const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
        hi = static_cast<std::uint32_t>(p >> 32);
        return static_cast<std::uint32_t>(p);
    }

    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t counter_ = 0;
    std::array<std::uint64_t, 2> block_{};
    int lane_ = 2;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace xcnn
