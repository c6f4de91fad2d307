#include "vqqat/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <utility>
#include <vector>

#include "vqqat/errors.hpp"

namespace vqqat::trainer {

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ParseError("cannot open file: " + path);
    }
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(in),
                                      std::istreambuf_iterator<char>());
}

std::uint32_t read_be32(const std::vector<unsigned char>& buf,
                        std::size_t offset, const std::string& path) {
    if (offset + 4 > buf.size()) {
        throw ParseError("truncated header in " + path);
    }
    return (std::uint32_t{buf[offset]} << 24) |
           (std::uint32_t{buf[offset + 1]} << 16) |
           (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

}  // namespace

Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path) {
    const auto img = read_file(images_path);
    const std::uint32_t img_magic = read_be32(img, 0, images_path);
    if (img_magic != kImagesMagic) {
        throw ParseError("wrong magic in " + images_path +
                         ": expected image file (0x00000803)");
    }
    const std::size_t n = read_be32(img, 4, images_path);
    const std::size_t rows = read_be32(img, 8, images_path);
    const std::size_t cols = read_be32(img, 12, images_path);
    const std::size_t d = rows * cols;
    if (img.size() < 16 + n * d) {
        throw ParseError("truncated data in " + images_path);
    }

    const auto lab = read_file(labels_path);
    const std::uint32_t lab_magic = read_be32(lab, 0, labels_path);
    if (lab_magic != kLabelsMagic) {
        throw ParseError("wrong magic in " + labels_path +
                         ": expected label file (0x00000801)");
    }
    const std::size_t n_labels = read_be32(lab, 4, labels_path);
    if (lab.size() < 8 + n_labels) {
        throw ParseError("truncated data in " + labels_path);
    }
    if (n_labels != n) {
        throw ParseError("image/label count mismatch: " + std::to_string(n) +
                         " images vs " + std::to_string(n_labels) + " labels");
    }

    Dataset ds;
    ds.n = n;
    ds.d = d;
    ds.features.resize(n * d);
    for (std::size_t i = 0; i < n * d; ++i) {
        ds.features[i] = static_cast<double>(img[16 + i]) / 255.0;
    }
    ds.labels.resize(n);
    int max_label = 0;
    for (std::size_t i = 0; i < n; ++i) {
        ds.labels[i] = static_cast<int>(lab[8 + i]);
        max_label = std::max(max_label, ds.labels[i]);
    }
    ds.classes = static_cast<std::size_t>(max_label) + 1;
    return ds;
}

VecF synthetic_class_mean(const SyntheticSpec& spec, std::size_t cls) {
    VecF mean(spec.d, 0.0);
    const std::size_t axis = cls % spec.d;
    const double ring = 1.0 + static_cast<double>(cls / spec.d);
    mean[axis] = spec.separation * ring;
    return mean;
}

Dataset make_synthetic(const SyntheticSpec& spec, Rng& rng) {
    if (spec.n == 0 || spec.d == 0 || spec.classes == 0) {
        throw ConfigError("synthetic dataset needs n, d, classes >= 1");
    }
    Dataset ds;
    ds.n = spec.n;
    ds.d = spec.d;
    ds.classes = spec.classes;
    ds.features.resize(spec.n * spec.d);
    ds.labels.resize(spec.n);
    std::vector<VecF> means;
    means.reserve(spec.classes);
    for (std::size_t c = 0; c < spec.classes; ++c) {
        means.push_back(synthetic_class_mean(spec, c));
    }
    for (std::size_t i = 0; i < spec.n; ++i) {
        const std::size_t c = i % spec.classes;
        ds.labels[i] = static_cast<int>(c);
        for (std::size_t t = 0; t < spec.d; ++t) {
            ds.features[i * spec.d + t] =
                means[c][t] + spec.spread * rng.next_gaussian();
        }
    }
    return ds;
}

VecF make_weight_vectors(std::size_t count, std::size_t d, double log_mu,
                         double log_sigma, Rng& rng) {
    if (count == 0 || d == 0) {
        throw ConfigError("weight vector generator needs count, d >= 1");
    }
    VecF out(count * d);
    for (std::size_t i = 0; i < count; ++i) {
        double norm = 0.0;
        do {
            norm = 0.0;
            for (std::size_t t = 0; t < d; ++t) {
                out[i * d + t] = rng.next_gaussian();
                norm += out[i * d + t] * out[i * d + t];
            }
            norm = std::sqrt(norm);
        } while (norm < 1e-12);
        const double mag = std::exp(log_mu + log_sigma * rng.next_gaussian());
        for (std::size_t t = 0; t < d; ++t) {
            out[i * d + t] = out[i * d + t] / norm * mag;
        }
    }
    return out;
}

std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = rng.uniform_index(i);
        std::swap(perm[i - 1], perm[j]);
    }
    return perm;
}

}  // namespace vqqat::trainer
