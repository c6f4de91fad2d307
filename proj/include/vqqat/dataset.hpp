#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "vqqat/numerics.hpp"
#include "vqqat/rng.hpp"

namespace vqqat::trainer {

using numerics::Rng;
using numerics::VecF;

struct Dataset {
    std::size_t n = 0;        // samples
    std::size_t d = 0;        // feature dimension
    std::size_t classes = 0;  // label values are in [0, classes)
    VecF features;            // n x d row-major
    std::vector<int> labels;  // n entries

    const double* sample(std::size_t i) const { return features.data() + i * d; }
};

// Big-endian IDX files: images carry magic 0x00000803 and three dimension
// sizes (count, rows, cols) with one byte per pixel, scaled to [0,1] by /255;
// labels carry magic 0x00000801 and one byte per entry. Malformed input
// raises ParseError with a distinct message per failure (open, truncated
// header, wrong magic, truncated data, image/label count mismatch).
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// Class-conditional Gaussian blobs. Class c is centered on a deterministic
// axis pattern scaled by `separation` (no rng involved), so train and eval
// sets generated from different rng streams share the same class geometry.
// Labels cycle i % classes.
struct SyntheticSpec {
    std::size_t n = 0;
    std::size_t d = 2;
    std::size_t classes = 2;
    double separation = 6.0;  // distance scale between class means
    double spread = 1.0;      // within-class standard deviation
};

Dataset make_synthetic(const SyntheticSpec& spec, Rng& rng);

// The class mean used by make_synthetic, exposed for oracle tests.
VecF synthetic_class_mean(const SyntheticSpec& spec, std::size_t cls);

// Weight-vector generator for utilization experiments: directions uniform on
// the sphere (normalized Gaussians), magnitudes log-normal
// exp(log_mu + log_sigma * z). Returns count x d row-major.
VecF make_weight_vectors(std::size_t count, std::size_t d, double log_mu,
                         double log_sigma, Rng& rng);

// Fisher-Yates permutation of [0, n) driven by rng.
std::vector<std::size_t> permutation(std::size_t n, Rng& rng);

}  // namespace vqqat::trainer
