#include "vqqat/codebook.hpp"

#include <cmath>
#include <limits>

#include "vqqat/errors.hpp"
#include "vqqat/kernels.hpp"
#include "vqqat/rng.hpp"

namespace vqqat::codebook {

const char* metric_name(Metric m) {
    return m == Metric::L2 ? "l2" : "cosine";
}

Metric metric_from_name(const std::string& name) {
    if (name == "l2") return Metric::L2;
    if (name == "cosine") return Metric::Cosine;
    throw ConfigError("unknown metric '" + name + "' (expected 'l2' or 'cosine')");
}

GroupedWeights group(const VecF& weights, const std::vector<std::size_t>& shape,
                     std::size_t vec_len) {
    if (vec_len == 0) throw ConfigError("vec_len must be >= 1");
    std::size_t total = 1;
    for (std::size_t dim : shape) total *= dim;
    if (shape.empty()) total = 0;
    if (total != weights.size()) {
        throw ConfigError("weight count does not match its shape");
    }
    GroupedWeights gw;
    gw.vec_len = vec_len;
    gw.orig_shape = shape;
    gw.n_vectors = (weights.size() + vec_len - 1) / vec_len;
    gw.pad_count = gw.n_vectors * vec_len - weights.size();
    gw.flat = weights;
    gw.flat.resize(gw.n_vectors * vec_len, 0.0);
    return gw;
}

VecF regroup(const GroupedWeights& gw) {
    VecF out(gw.flat.begin(), gw.flat.begin() + gw.orig_size());
    return out;
}

namespace {

std::size_t assign_l2(const Codebook& cb, const double* w) {
    const std::size_t n = cb.size();
    std::size_t best = 0;
    double best_d = kernels::sqdist(w, cb.entry(0), cb.vec_len);
    for (std::size_t i = 1; i < n; ++i) {
        const double d = kernels::sqdist(w, cb.entry(i), cb.vec_len);
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

std::size_t assign_cosine(const Codebook& cb, const double* w) {
    const std::size_t n = cb.size();
    std::size_t best = 0;
    double best_s = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        const double norm = std::sqrt(kernels::sumsq(cb.entry(i), cb.vec_len));
        if (norm == 0.0) continue;  // floored entries make this unreachable
        const double s = kernels::dot(w, cb.entry(i), cb.vec_len) / norm;
        if (s > best_s) {
            best_s = s;
            best = i;
        }
    }
    return best;
}

}  // namespace

std::size_t assign(const Codebook& cb, const double* w) {
    return cb.metric == Metric::L2 ? assign_l2(cb, w) : assign_cosine(cb, w);
}

std::size_t assign(const Codebook& cb, const VecF& w) {
    if (w.size() != cb.vec_len) {
        throw ConfigError("assign: vector length does not match codebook");
    }
    return assign(cb, w.data());
}

Codebook init_codebook(const GroupedWeights& gw, std::size_t b_index,
                       Metric metric, Rng& rng) {
    if (b_index >= 31) throw ConfigError("b_index too large");
    const std::size_t k = std::size_t{1} << b_index;
    if (k > gw.n_vectors) {
        throw ConfigError("2^b_index exceeds the number of weight vectors");
    }
    const auto km = numerics::kmeans(gw.flat.data(), gw.n_vectors, gw.vec_len, k, rng);

    Codebook cb;
    cb.b_index = b_index;
    cb.vec_len = gw.vec_len;
    cb.metric = metric;
    cb.entries = km.centroids;
    if (metric == Metric::Cosine) {
        for (std::size_t i = 0; i < k; ++i) {
            double* c = cb.entry(i);
            if (std::sqrt(kernels::sumsq(c, cb.vec_len)) >= kCodewordNormFloor) {
                continue;
            }
            double norm = 0.0;
            while (norm < 1e-3) {  // redraw excludes degenerate directions
                for (std::size_t t = 0; t < cb.vec_len; ++t) {
                    c[t] = rng.next_gaussian();
                }
                norm = std::sqrt(kernels::sumsq(c, cb.vec_len));
            }
            for (std::size_t t = 0; t < cb.vec_len; ++t) c[t] /= norm;
        }
    }
    return cb;
}

UtilizationStats utilization(const Codebook& cb, const GroupedWeights& gw) {
    if (gw.vec_len != cb.vec_len) {
        throw ConfigError("utilization: vector length does not match codebook");
    }
    UtilizationStats st;
    st.counts.assign(cb.size(), 0);
    for (std::size_t i = 0; i < gw.n_vectors; ++i) {
        ++st.counts[assign(cb, gw.vec(i))];
    }
    const double total = static_cast<double>(gw.n_vectors);
    for (std::size_t c : st.counts) {
        if (c == 0) {
            ++st.dead_count;
            continue;
        }
        const double p = static_cast<double>(c) / total;
        st.entropy -= p * std::log(p);
    }
    return st;
}

void enforce_norm_floor(Codebook& cb) {
    if (cb.metric != Metric::Cosine) return;
    for (std::size_t i = 0; i < cb.size(); ++i) {
        double* c = cb.entry(i);
        const double norm = std::sqrt(kernels::sumsq(c, cb.vec_len));
        if (norm >= kCodewordNormFloor) continue;
        if (norm == 0.0) {
            // No direction to keep; pick the first axis deterministically.
            c[0] = kCodewordNormFloor;
            for (std::size_t t = 1; t < cb.vec_len; ++t) c[t] = 0.0;
        } else {
            const double scale = kCodewordNormFloor / norm;
            for (std::size_t t = 0; t < cb.vec_len; ++t) c[t] *= scale;
        }
    }
}

nlohmann::json codebook_to_json(const Codebook& cb) {
    return nlohmann::json{{"b_index", cb.b_index},
                          {"vec_len", cb.vec_len},
                          {"metric", metric_name(cb.metric)},
                          {"entries", cb.entries}};
}

Codebook codebook_from_json(const nlohmann::json& j) {
    try {
        Codebook cb;
        cb.b_index = j.at("b_index").get<std::size_t>();
        cb.vec_len = j.at("vec_len").get<std::size_t>();
        cb.metric = metric_from_name(j.at("metric").get<std::string>());
        cb.entries = j.at("entries").get<VecF>();
        if (cb.b_index >= 31 || cb.vec_len == 0 ||
            cb.entries.size() != cb.size() * cb.vec_len) {
            throw ParseError("codebook entries do not match b_index x vec_len");
        }
        if (!numerics::all_finite(cb.entries)) {
            throw ParseError("codebook entries must be finite");
        }
        return cb;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed codebook: ") + e.what());
    } catch (const ConfigError& e) {
        throw ParseError(std::string("malformed codebook: ") + e.what());
    }
}

}  // namespace vqqat::codebook
