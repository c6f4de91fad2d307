#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "test_util.hpp"
#include "vqqat/errors.hpp"
#include "vqqat/numerics.hpp"
#include "vqqat/rng.hpp"

using vqqat::numerics::Rng;
using vqqat::numerics::VecF;
using testutil::blob_data;
using testutil::gaussian_vec;
using testutil::naive_lloyd;

TEST_CASE("rng determinism and stream independence") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    // fork() keys off the seed, not the stream position.
    Rng parent1(99), parent2(99);
    for (int i = 0; i < 1234; ++i) parent1.next_u64();
    Rng f1 = parent1.fork(3, 5);
    Rng f2 = parent2.fork(3, 5);
    for (int i = 0; i < 50; ++i) CHECK(f1.next_u64() == f2.next_u64());

    // Distinct keys give distinct streams.
    Rng g1 = parent2.fork(3, 6);
    Rng g2 = parent2.fork(4, 5);
    int same = 0;
    Rng f3 = parent2.fork(3, 5);
    for (int i = 0; i < 20; ++i) {
        const std::uint64_t base = f3.next_u64();
        if (g1.next_u64() == base) ++same;
        if (g2.next_u64() == base) ++same;
    }
    CHECK(same == 0);

    // State save/restore reproduces the stream.
    Rng r(7);
    r.next_gaussian();
    const auto st = r.state();
    const double x1 = r.next_double();
    const std::uint64_t u1 = r.next_u64();
    r.set_state(st);
    CHECK(r.next_double() == x1);
    CHECK(r.next_u64() == u1);
}

TEST_CASE("rng draw ranges and moments") {
    Rng rng(2024);
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.next_double();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        const std::size_t idx = rng.uniform_index(7);
        CHECK(idx < 7);
    }
    double sum = 0.0, sumsq = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const double g = rng.next_gaussian();
        sum += g;
        sumsq += g * g;
    }
    const double mean = sum / n;
    const double var = sumsq / n - mean * mean;
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(var - 1.0) < 0.05);

    // uniform_index covers all buckets roughly evenly.
    std::vector<int> bins(5, 0);
    for (int i = 0; i < 50000; ++i) ++bins[rng.uniform_index(5)];
    for (int c : bins) CHECK(std::abs(c - 10000) < 500);
}

TEST_CASE("softmax matches the direct formula and is overflow-safe") {
    Rng rng(31);
    for (int rep = 0; rep < 200; ++rep) {
        const std::size_t n = 1 + rng.uniform_index(16);
        VecF s = gaussian_vec(n, rng, 3.0);
        const VecF p = vqqat::numerics::softmax(s);
        long double z = 0.0L;
        for (double v : s) z += std::exp(static_cast<long double>(v));
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double ref =
                static_cast<double>(std::exp(static_cast<long double>(s[i])) / z);
            CHECK(p[i] == doctest::Approx(ref).epsilon(1e-12));
            total += p[i];
        }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }

    const VecF p = vqqat::numerics::softmax({1000.0, 1000.0, 999.0});
    CHECK(vqqat::numerics::all_finite(p));
    CHECK(p[0] == p[1]);
    CHECK(p[0] + p[1] + p[2] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p[2] == doctest::Approx(std::exp(-1.0) / (2.0 + std::exp(-1.0))).epsilon(1e-12));
}

TEST_CASE("argmax resolves ties to the lowest index") {
    CHECK(vqqat::numerics::argmax_tiebreak_low({1.0, 3.0, 3.0, 2.0}) == 1);
    CHECK(vqqat::numerics::argmax_tiebreak_low({0.0, 0.0, 0.0}) == 0);
    CHECK(vqqat::numerics::argmax_tiebreak_low({-5.0}) == 0);

    // Property over values drawn from a tiny grid, so ties are common.
    const double grid[5] = {-1.0, -0.5, 0.0, 0.5, 1.0};
    Rng rng(77);
    for (int rep = 0; rep < 10000; ++rep) {
        const std::size_t n = 1 + rng.uniform_index(12);
        VecF v(n);
        for (double& x : v) x = grid[rng.uniform_index(5)];
        std::size_t expect = 0;
        for (std::size_t i = 1; i < n; ++i) {
            if (v[i] > v[expect]) expect = i;
        }
        CHECK(vqqat::numerics::argmax_tiebreak_low(v) == expect);
    }
}

TEST_CASE("vector helpers") {
    CHECK(vqqat::numerics::all_finite({1.0, -2.0, 0.0}));
    CHECK(!vqqat::numerics::all_finite({1.0, std::nan(""), 0.0}));
    CHECK(!vqqat::numerics::all_finite({1.0, INFINITY}));

    const VecF a{3.0, 4.0};
    CHECK(vqqat::numerics::l2_norm(a) == doctest::Approx(5.0).epsilon(1e-15));
    CHECK(vqqat::numerics::dot(a, {1.0, 2.0}) == doctest::Approx(11.0).epsilon(1e-15));
    CHECK(vqqat::numerics::sqdist(a, {0.0, 0.0}) == doctest::Approx(25.0).epsilon(1e-15));
    CHECK_THROWS(vqqat::numerics::dot(a, {1.0}));
}

TEST_CASE("kmeans recovers separated clusters") {
    Rng rng(5);
    const std::size_t n = 40, d = 2, k = 4;
    VecF data = blob_data(n, d, k, rng, 0.2, 12.0);
    Rng krng = rng.fork(1);
    const auto res = vqqat::numerics::kmeans(data.data(), n, d, k, krng);

    // Every point lands with its generating blob: points i and i+k share a
    // centroid, points i and i+1 do not.
    for (std::size_t i = 0; i + k < n; ++i) {
        CHECK(res.assignments[i] == res.assignments[i + k]);
    }
    for (std::size_t i = 0; i + 1 < k; ++i) {
        CHECK(res.assignments[i] != res.assignments[i + 1]);
    }
    // Distortion is the within-blob spread, far below the blob separation.
    CHECK(res.distortion < 1.0);
    CHECK(res.distortion > 0.0);
}

TEST_CASE("kmeans distortion history is non-increasing") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(seed);
        const std::size_t n = 120, d = 3, k = 5;
        // Mildly overlapping clusters so Lloyd has real work to do.
        VecF data = blob_data(n, d, k, rng, 1.5, 3.0);
        Rng krng = rng.fork(1);
        const auto res = vqqat::numerics::kmeans(data.data(), n, d, k, krng);
        REQUIRE(res.distortion_history.size() >= 2);
        for (std::size_t i = 1; i < res.distortion_history.size(); ++i) {
            CHECK(res.distortion_history[i] <= res.distortion_history[i - 1]);
        }
        CHECK(res.distortion == res.distortion_history.back());
    }
}

TEST_CASE("kmeans matches a naive Lloyd reference from identical seeds") {
    for (std::uint64_t seed = 100; seed < 110; ++seed) {
        Rng rng(seed);
        const std::size_t n = 90, d = 2, k = 4;
        VecF data = blob_data(n, d, k, rng, 1.0, 5.0);

        Rng seed_a = rng.fork(1);
        const VecF init =
            vqqat::numerics::kmeans_seed_centroids(data.data(), n, d, k, seed_a);
        const double ref = naive_lloyd(data, n, d, init, k);

        Rng seed_b = rng.fork(1);
        const auto res = vqqat::numerics::kmeans(data.data(), n, d, k, seed_b);
        CHECK(res.distortion <= ref * 1.05);
        CHECK(res.distortion >= ref * 0.95);
    }
}

TEST_CASE("kmeans is deterministic for a fixed seed") {
    Rng rng(314);
    const std::size_t n = 80, d = 4, k = 6;
    VecF data = blob_data(n, d, k, rng, 1.0, 4.0);
    Rng r1(271828), r2(271828);
    const auto a = vqqat::numerics::kmeans(data.data(), n, d, k, r1);
    const auto b = vqqat::numerics::kmeans(data.data(), n, d, k, r2);
    CHECK(a.centroids == b.centroids);
    CHECK(a.assignments == b.assignments);
    CHECK(a.distortion == b.distortion);
}

TEST_CASE("kmeans splits two obvious pairs") {
    const VecF pts{0, 0, 0, 1, 10, 10, 10, 11};
    Rng rng(1);
    const auto res = vqqat::numerics::kmeans(pts.data(), 4, 2, 2, rng);
    CHECK(res.assignments[0] == res.assignments[1]);
    CHECK(res.assignments[2] == res.assignments[3]);
    CHECK(res.assignments[0] != res.assignments[2]);
    const std::size_t lo = res.assignments[0];
    CHECK(res.centroids[2 * lo] == 0.0);
    CHECK(res.centroids[2 * lo + 1] == 0.5);
    CHECK(res.centroids[2 * (1 - lo)] == 10.0);
    CHECK(res.centroids[2 * (1 - lo) + 1] == 10.5);
    CHECK(res.distortion == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("kmeans is competitive with 50 naive random restarts") {
    Rng data_rng(2718);
    const std::size_t n = 200, d = 2, k = 4;
    VecF data(n * d);
    for (double& x : data) x = data_rng.next_double() * 10.0;

    double best_ref = 0.0;
    Rng restart_rng(999);
    for (int r = 0; r < 50; ++r) {
        // Random init: k distinct points.
        VecF init;
        std::vector<std::size_t> picked;
        while (picked.size() < k) {
            const std::size_t i = restart_rng.uniform_index(n);
            bool dup = false;
            for (std::size_t p : picked) dup = dup || p == i;
            if (dup) continue;
            picked.push_back(i);
            init.insert(init.end(), data.begin() + i * d, data.begin() + (i + 1) * d);
        }
        const double ref = naive_lloyd(data, n, d, init, k);
        if (r == 0 || ref < best_ref) best_ref = ref;
    }

    Rng krng(31337);
    const auto res = vqqat::numerics::kmeans(data.data(), n, d, k, krng);
    CHECK(res.distortion <= best_ref * 1.05);
}

TEST_CASE("kmeans rejects k larger than the point count") {
    const VecF pts{0, 0, 1, 1};
    Rng rng(3);
    CHECK_THROWS_AS(vqqat::numerics::kmeans(pts.data(), 2, 2, 3, rng),
                    vqqat::ConfigError);
}

TEST_CASE("softmax is invariant to score shifts") {
    Rng rng(33);
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t n = 1 + rng.uniform_index(10);
        VecF s = gaussian_vec(n, rng, 2.0);
        const VecF p = vqqat::numerics::softmax(s);
        VecF shifted = s;
        const double c = rng.next_gaussian() * 50.0;
        for (double& v : shifted) v += c;
        const VecF q = vqqat::numerics::softmax(shifted);
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(std::abs(p[i] - q[i]) < 1e-9);
        }
    }
}

TEST_CASE("kmeans degenerate shapes") {
    // k = 1: centroid is the mean.
    Rng rng(9);
    VecF data = gaussian_vec(50 * 3, rng);
    Rng krng(10);
    const auto res = vqqat::numerics::kmeans(data.data(), 50, 3, 1, krng);
    for (std::size_t t = 0; t < 3; ++t) {
        long double mean = 0.0L;
        for (std::size_t i = 0; i < 50; ++i) mean += data[i * 3 + t];
        mean /= 50.0L;
        CHECK(res.centroids[t] ==
              doctest::Approx(static_cast<double>(mean)).epsilon(1e-12));
    }

    // k = n over distinct points: zero distortion, all points covered.
    VecF four{0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0};
    Rng k4(11);
    const auto exact = vqqat::numerics::kmeans(four.data(), 4, 2, 4, k4);
    CHECK(exact.distortion == 0.0);
    std::vector<std::size_t> seen = exact.assignments;
    std::sort(seen.begin(), seen.end());
    CHECK(seen == std::vector<std::size_t>{0, 1, 2, 3});

    // Duplicated points with k larger than the number of distinct values:
    // must terminate and keep the history monotone.
    VecF dup{1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 8.0, 8.0};
    Rng kd(12);
    const auto degen = vqqat::numerics::kmeans(dup.data(), 4, 2, 3, kd);
    CHECK(degen.distortion == 0.0);
    for (std::size_t i = 1; i < degen.distortion_history.size(); ++i) {
        CHECK(degen.distortion_history[i] <= degen.distortion_history[i - 1]);
    }
}
