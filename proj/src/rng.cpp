#include "vqqat/rng.hpp"

#include <cmath>

namespace vqqat::numerics {

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t v, int k) {
    return (v << k) | (v >> (64 - k));
}

}  // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed) {
    std::uint64_t sm = seed;
    for (auto& word : state_) word = splitmix64(sm);
}

std::uint64_t Rng::next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
}

double Rng::next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::next_gaussian() {
    // Box-Muller without spare caching: checkpoint restore stays trivial and
    // every draw depends only on the integer stream position.
    double u1 = next_double();
    double u2 = next_double();
    while (u1 == 0.0) u1 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    constexpr double two_pi = 6.283185307179586476925286766559;
    return r * std::cos(two_pi * u2);
}

std::size_t Rng::uniform_index(std::size_t n) {
    // Lemire's multiply-shift with rejection: exact uniformity over [0, n).
    const std::uint64_t range = static_cast<std::uint64_t>(n);
    std::uint64_t x = next_u64();
    __uint128_t m = static_cast<__uint128_t>(x) * range;
    std::uint64_t low = static_cast<std::uint64_t>(m);
    if (low < range) {
        const std::uint64_t threshold = (0 - range) % range;
        while (low < threshold) {
            x = next_u64();
            m = static_cast<__uint128_t>(x) * range;
            low = static_cast<std::uint64_t>(m);
        }
    }
    return static_cast<std::size_t>(m >> 64);
}

Rng Rng::fork(std::uint64_t a, std::uint64_t b) const {
    // Key off the original seed so forks are position-independent.
    std::uint64_t sm = seed_ ^ (0x6a09e667f3bcc909ULL + a * 0x9e3779b97f4a7c15ULL);
    std::uint64_t k1 = splitmix64(sm);
    sm ^= 0xbb67ae8584caa73bULL + b * 0xc2b2ae3d27d4eb4fULL;
    std::uint64_t k2 = splitmix64(sm);
    return Rng(k1 ^ rotl(k2, 32));
}

}  // namespace vqqat::numerics
