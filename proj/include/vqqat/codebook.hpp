#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "vqqat/numerics.hpp"

namespace vqqat::codebook {

using numerics::Rng;
using numerics::VecF;

enum class Metric { L2, Cosine };

const char* metric_name(Metric m);                 // "l2" / "cosine"
Metric metric_from_name(const std::string& name);  // ConfigError on unknown

// A layer's weight tensor flattened row-major and cut into consecutive
// vectors of length vec_len, zero-padded at the end so the cut is exact.
struct GroupedWeights {
    VecF flat;  // n_vectors * vec_len values; the last pad_count are zeros
    std::size_t vec_len = 0;
    std::size_t n_vectors = 0;
    std::size_t pad_count = 0;
    std::vector<std::size_t> orig_shape;

    const double* vec(std::size_t i) const { return flat.data() + i * vec_len; }
    double* vec(std::size_t i) { return flat.data() + i * vec_len; }
    std::size_t orig_size() const {
        return n_vectors * vec_len - pad_count;
    }
};

GroupedWeights group(const VecF& weights, const std::vector<std::size_t>& shape,
                     std::size_t vec_len);

// Inverse of group(): drops the padding and returns the original flat tensor.
VecF regroup(const GroupedWeights& gw);

struct Codebook {
    std::size_t b_index = 0;  // number of entries N = 2^b_index
    std::size_t vec_len = 0;
    Metric metric = Metric::L2;
    VecF entries;  // N * vec_len, row-major

    std::size_t size() const { return std::size_t{1} << b_index; }
    const double* entry(std::size_t i) const {
        return entries.data() + i * vec_len;
    }
    double* entry(std::size_t i) { return entries.data() + i * vec_len; }
};

// Nearest codeword: L2 minimizes squared distance, Cosine maximizes
// w·c_i/|c_i| (w itself is not normalized; the argmax is invariant to |w|).
// Ties resolve to the lowest index, which also sends an all-zero w to 0
// under Cosine.
std::size_t assign(const Codebook& cb, const double* w);
std::size_t assign(const Codebook& cb, const VecF& w);

// k-means over the weight vectors with k = 2^b_index; centroids become the
// entries. Under Cosine any near-zero centroid is replaced by a random unit
// vector so normalization stays well-defined.
Codebook init_codebook(const GroupedWeights& gw, std::size_t b_index,
                       Metric metric, Rng& rng);

struct UtilizationStats {
    std::vector<std::size_t> counts;  // per-codeword assignments
    double entropy = 0.0;             // nats; 0 <= entropy <= ln(N)
    std::size_t dead_count = 0;       // codewords never assigned
};

UtilizationStats utilization(const Codebook& cb, const GroupedWeights& gw);

// Smallest norm a cosine-metric codeword may reach; entries below it are
// rescaled up after optimizer steps so c/|c| never divides by zero.
inline constexpr double kCodewordNormFloor = 1e-8;

void enforce_norm_floor(Codebook& cb);

nlohmann::json codebook_to_json(const Codebook& cb);
Codebook codebook_from_json(const nlohmann::json& j);  // ParseError on bad input

}  // namespace vqqat::codebook
