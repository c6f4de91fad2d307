#pragma once

#include <array>
#include <cstddef>
#include <cstdint>

namespace vqqat::numerics {

// Deterministic xoshiro256** stream seeded through SplitMix64. Integer and
// uniform draws are integer arithmetic only, so a fixed seed reproduces the
// identical bit stream across runs and platforms. gaussian() goes through
// libm (sqrt/log/cos) and is reproducible per platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();
    double next_double();                       // uniform [0, 1), 53 bits
    double next_gaussian();                     // standard normal, Box-Muller
    std::size_t uniform_index(std::size_t n);   // uniform over [0, n), n >= 1

    // Child stream keyed by (a, b). Derived from this stream's seed only,
    // never from its position, so fork(a, b) is stable no matter how much
    // the parent has already drawn. Used for per-purpose substreams
    // (data shuffle, k-means, per-(layer, step) branch sampling).
    Rng fork(std::uint64_t a, std::uint64_t b = 0) const;

    std::uint64_t seed() const { return seed_; }
    std::array<std::uint64_t, 4> state() const { return state_; }
    void set_state(const std::array<std::uint64_t, 4>& s) { state_ = s; }

private:
    std::uint64_t seed_;
    std::array<std::uint64_t, 4> state_;
};

}  // namespace vqqat::numerics
