#include "vqqat/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "vqqat/errors.hpp"
#include "vqqat/kernels.hpp"
#include "vqqat/rng.hpp"

namespace vqqat::numerics {

bool all_finite(const double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(x[i])) return false;
    }
    return true;
}

bool all_finite(const VecF& x) { return all_finite(x.data(), x.size()); }

double dot(const VecF& a, const VecF& b) {
    if (a.size() != b.size()) throw ConfigError("dot: size mismatch");
    return kernels::dot(a.data(), b.data(), a.size());
}

double l2_norm(const VecF& a) {
    return std::sqrt(kernels::sumsq(a.data(), a.size()));
}

double sqdist(const VecF& a, const VecF& b) {
    if (a.size() != b.size()) throw ConfigError("sqdist: size mismatch");
    return kernels::sqdist(a.data(), b.data(), a.size());
}

VecF softmax(const VecF& scores) {
    VecF p(scores.size());
    if (scores.empty()) return p;
    double mx = scores[0];
    for (double s : scores) mx = std::max(mx, s);
    double sum = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        p[i] = std::exp(scores[i] - mx);
        sum += p[i];
    }
    for (double& v : p) v /= sum;
    return p;
}

std::size_t argmax_tiebreak_low(const double* x, std::size_t n) {
    if (n == 0) throw ConfigError("argmax: empty input");
    std::size_t best = 0;
    for (std::size_t i = 1; i < n; ++i) {
        if (x[i] > x[best]) best = i;
    }
    return best;
}

std::size_t argmax_tiebreak_low(const VecF& x) {
    return argmax_tiebreak_low(x.data(), x.size());
}

namespace {

// Nearest centroid per point (ties to lowest index); returns mean sq distance
// and leaves each point's sq distance in d2.
double assign_pass(const double* data, std::size_t n, std::size_t d,
                   const VecF& centroids, std::size_t k,
                   std::vector<std::size_t>& assignments, VecF& d2) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* x = data + i * d;
        std::size_t best = 0;
        double best_d2 = kernels::sqdist(x, centroids.data(), d);
        for (std::size_t j = 1; j < k; ++j) {
            const double dist = kernels::sqdist(x, centroids.data() + j * d, d);
            if (dist < best_d2) {
                best_d2 = dist;
                best = j;
            }
        }
        assignments[i] = best;
        d2[i] = best_d2;
        total += best_d2;
    }
    return total / static_cast<double>(n);
}

}  // namespace

VecF kmeans_seed_centroids(const double* data, std::size_t n, std::size_t d,
                           std::size_t k, Rng& rng) {
    if (n == 0 || d == 0 || k == 0) {
        throw ConfigError("kmeans: n, d, k must all be positive");
    }
    if (k > n) throw ConfigError("kmeans: k exceeds the number of points");
    VecF centroids(k * d);
    std::vector<bool> chosen(n, false);
    std::size_t first = rng.uniform_index(n);
    std::copy_n(data + first * d, d, centroids.begin());
    chosen[first] = true;

    VecF d2(n);
    for (std::size_t i = 0; i < n; ++i) {
        d2[i] = kernels::sqdist(data + i * d, centroids.data(), d);
    }
    for (std::size_t c = 1; c < k; ++c) {
        double total = 0.0;
        for (double v : d2) total += v;
        std::size_t pick = n;
        if (total > 0.0) {
            const double target = rng.next_double() * total;
            double cum = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                cum += d2[i];
                if (cum > target) {
                    pick = i;
                    break;
                }
            }
            if (pick == n) pick = n - 1;  // guard against rounding at the top
        } else {
            // Every point coincides with a chosen centroid; take the first
            // unchosen one (k <= n guarantees it exists).
            for (std::size_t i = 0; i < n; ++i) {
                if (!chosen[i]) {
                    pick = i;
                    break;
                }
            }
        }
        chosen[pick] = true;
        std::copy_n(data + pick * d, d, centroids.begin() + c * d);
        for (std::size_t i = 0; i < n; ++i) {
            const double dist =
                kernels::sqdist(data + i * d, centroids.data() + c * d, d);
            d2[i] = std::min(d2[i], dist);
        }
    }
    return centroids;
}

KmeansResult kmeans(const double* data, std::size_t n, std::size_t d,
                    std::size_t k, Rng& rng, const KmeansOpts& opts) {
    if (n == 0 || d == 0 || k == 0) {
        throw ConfigError("kmeans: n, d, k must all be positive");
    }
    if (k > n) throw ConfigError("kmeans: k exceeds the number of points");
    KmeansResult res;
    res.centroids = kmeans_seed_centroids(data, n, d, k, rng);
    res.assignments.assign(n, 0);

    VecF d2(n);
    VecF sums(k * d);
    std::vector<std::size_t> counts(k);

    for (std::size_t iter = 0; iter < opts.max_iters; ++iter) {
        const double distortion =
            assign_pass(data, n, d, res.centroids, k, res.assignments, d2);
        res.distortion_history.push_back(distortion);
        res.iterations = iter + 1;

        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t j = res.assignments[i];
            kernels::axpy(1.0, data + i * d, sums.data() + j * d, d);
            ++counts[j];
        }
        double max_disp2 = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            if (counts[j] == 0) continue;
            const double inv = 1.0 / static_cast<double>(counts[j]);
            for (std::size_t t = 0; t < d; ++t) sums[j * d + t] *= inv;
        }
        // Refill empty clusters with the point currently farthest from its
        // centroid; that point's distance drops to zero, so the next
        // assignment pass cannot increase the distortion.
        for (std::size_t j = 0; j < k; ++j) {
            if (counts[j] != 0) continue;
            const std::size_t far = argmax_tiebreak_low(d2);
            std::copy_n(data + far * d, d, sums.begin() + j * d);
            d2[far] = 0.0;
        }
        for (std::size_t j = 0; j < k; ++j) {
            const double disp =
                kernels::sqdist(sums.data() + j * d, res.centroids.data() + j * d, d);
            max_disp2 = std::max(max_disp2, disp);
        }
        res.centroids = sums;
        if (max_disp2 <= opts.tol * opts.tol) break;
    }
    // Final pass so the returned assignments and distortion describe the
    // returned centroids.
    res.distortion =
        assign_pass(data, n, d, res.centroids, k, res.assignments, d2);
    res.distortion_history.push_back(res.distortion);
    return res;
}

}  // namespace vqqat::numerics
