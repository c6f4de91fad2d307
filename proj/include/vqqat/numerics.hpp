#pragma once

#include <cstddef>
#include <vector>

namespace vqqat::numerics {

using VecF = std::vector<double>;

bool all_finite(const double* x, std::size_t n);
bool all_finite(const VecF& x);

double dot(const VecF& a, const VecF& b);
double l2_norm(const VecF& a);
double sqdist(const VecF& a, const VecF& b);

// Numerically stable softmax: subtract max, exponentiate, normalize.
VecF softmax(const VecF& scores);

// Index of the largest element; exact ties resolve to the lowest index.
std::size_t argmax_tiebreak_low(const double* x, std::size_t n);
std::size_t argmax_tiebreak_low(const VecF& x);

class Rng;

struct KmeansOpts {
    std::size_t max_iters = 100;
    double tol = 1e-6;  // max centroid displacement (L2) signaling convergence
};

struct KmeansResult {
    VecF centroids;                       // k x d, row-major
    std::vector<std::size_t> assignments; // n, nearest centroid per point
    std::vector<double> distortion_history; // mean sq L2, one per Lloyd pass
    double distortion = 0.0;              // final mean squared L2 distance
    std::size_t iterations = 0;
};

// k-means++ seeding: first center uniform, the rest sampled proportional to
// the squared distance to the nearest center chosen so far. Returns k x d
// centroids, row-major. Exposed so alternative Lloyd loops can start from
// identical seeds.
VecF kmeans_seed_centroids(const double* data, std::size_t n, std::size_t d,
                           std::size_t k, Rng& rng);

// k-means++ seeding followed by Lloyd iterations. Empty clusters are refilled
// with the point farthest from its centroid. Deterministic given rng.
KmeansResult kmeans(const double* data, std::size_t n, std::size_t d,
                    std::size_t k, Rng& rng, const KmeansOpts& opts = {});

}  // namespace vqqat::numerics
