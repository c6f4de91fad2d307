#include "vqqat/quantizers.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "vqqat/errors.hpp"
#include "vqqat/kernels.hpp"

namespace vqqat::quantizers {

namespace {

void check_lq_spec(const LinearQuantSpec& spec) {
    if (spec.bits < 1 || spec.bits > 32) {
        throw ConfigError("lq bits must be in [1, 32]");
    }
    if (!(spec.clip_hi - spec.clip_lo >= 1e-12)) {
        throw ConfigError("lq clip range is degenerate (clip_hi - clip_lo < 1e-12)");
    }
}

double lq_scale(const LinearQuantSpec& spec) {
    const double levels = static_cast<double>((std::int64_t{1} << spec.bits) - 1);
    return (spec.clip_hi - spec.clip_lo) / levels;
}

}  // namespace

LqResult lq_forward(double x, const LinearQuantSpec& spec) {
    check_lq_spec(spec);
    const double levels = static_cast<double>((std::int64_t{1} << spec.bits) - 1);
    const double s = lq_scale(spec);
    const double z = std::round(-spec.clip_lo / s);
    const double q = std::clamp(std::round(x / s) + z, 0.0, levels);
    return LqResult{(q - z) * s, q, x};
}

LqGrad lq_backward(double g, const LqResult& result, const LinearQuantSpec& spec) {
    check_lq_spec(spec);
    LqGrad out;
    if (result.x > spec.clip_hi) {
        out.d_clip_hi = g;
    } else if (result.x < spec.clip_lo) {
        out.d_clip_lo = g;
    } else {
        out.d_x = g;
    }
    return out;
}

ProjVqResult projvq_forward(const VecF& w, const Codebook& cb,
                            const LinearQuantSpec& scalar_spec) {
    if (cb.metric != codebook::Metric::Cosine) {
        throw ConfigError("projvq requires a cosine-metric codebook");
    }
    if (w.size() != cb.vec_len) {
        throw ConfigError("projvq: vector length does not match codebook");
    }
    ProjVqResult res;
    res.index = codebook::assign(cb, w.data());
    const double* c = cb.entry(res.index);
    const double denom = kernels::sumsq(c, cb.vec_len);
    res.s_raw = kernels::dot(w.data(), c, cb.vec_len) / denom;
    res.s_lq = lq_forward(res.s_raw, scalar_spec);
    res.s = res.s_lq.w_q;
    res.w_q.resize(cb.vec_len);
    for (std::size_t t = 0; t < cb.vec_len; ++t) res.w_q[t] = res.s * c[t];
    return res;
}

void projvq_backward_accum(const VecF& g, const ProjVqResult& result,
                           const Codebook& cb, VecF& d_weights,
                           VecF& d_codebook) {
    for (std::size_t t = 0; t < g.size(); ++t) d_weights[t] += g[t];
    kernels::axpy(result.s, g.data(),
                  d_codebook.data() + result.index * cb.vec_len, cb.vec_len);
}

GradBundle projvq_backward(const VecF& g, const ProjVqResult& result,
                           const Codebook& cb) {
    GradBundle out;
    out.d_weights.assign(cb.vec_len, 0.0);
    out.d_codebook.assign(cb.size() * cb.vec_len, 0.0);
    projvq_backward_accum(g, result, cb, out.d_weights, out.d_codebook);
    return out;
}

HavqResult havq_forward(const VecF& w, const Codebook& cb, HavqMode mode) {
    if (w.size() != cb.vec_len) {
        throw ConfigError("havq: vector length does not match codebook");
    }
    const std::size_t n = cb.size();
    HavqResult res;
    res.scores.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* c = cb.entry(i);
        const double norm = std::sqrt(kernels::sumsq(c, cb.vec_len));
        if (norm == 0.0) {
            throw NumericError("havq: zero-norm codeword (floor invariant broken)");
        }
        res.scores[i] = kernels::dot(w.data(), c, cb.vec_len) / norm;
    }
    // Argmax over the raw scores: softmax is order-preserving, so this is
    // Eq.-level equivalent to argmax over p, and it keeps the selection
    // independent of whether the probabilities were materialized.
    res.index = numerics::argmax_tiebreak_low(res.scores);
    if (mode == HavqMode::Train) res.p = numerics::softmax(res.scores);
    res.w_q.assign(cb.entry(res.index), cb.entry(res.index) + cb.vec_len);
    return res;
}

void havq_backward_accum(const VecF& g, const HavqResult& result, const VecF& w,
                         const Codebook& cb, VecF& d_weights, VecF& d_codebook) {
    if (result.p.size() != cb.size()) {
        throw ConfigError("havq_backward requires a training-mode forward result");
    }
    const std::size_t n = cb.size();
    const std::size_t L = cb.vec_len;

    VecF d_p(n);
    for (std::size_t i = 0; i < n; ++i) {
        d_p[i] = kernels::dot(g.data(), cb.entry(i), L);
    }
    double mix = 0.0;
    for (std::size_t i = 0; i < n; ++i) mix += result.p[i] * d_p[i];

    for (std::size_t i = 0; i < n; ++i) {
        const double d_s = result.p[i] * (d_p[i] - mix);
        const double* c = cb.entry(i);
        const double norm = std::sqrt(kernels::sumsq(c, L));
        const double inv = 1.0 / norm;

        // d_w += d_s * k_i
        kernels::axpy(d_s * inv, c, d_weights.data(), L);

        // d_c_i += p_i g + (d_s/|c|) (w - s_i k_i)
        double* row = d_codebook.data() + i * L;
        kernels::axpy(result.p[i], g.data(), row, L);
        kernels::axpy(d_s * inv, w.data(), row, L);
        kernels::axpy(-d_s * result.scores[i] * inv * inv, c, row, L);
    }
}

GradBundle havq_backward(const VecF& g, const HavqResult& result, const VecF& w,
                         const Codebook& cb) {
    GradBundle out;
    out.d_weights.assign(cb.vec_len, 0.0);
    out.d_codebook.assign(cb.size() * cb.vec_len, 0.0);
    havq_backward_accum(g, result, w, cb, out.d_weights, out.d_codebook);
    return out;
}

double projvq_bits_per_weight(const ProjectionVQSpec& spec) {
    if (spec.b_index < 1 || spec.b_scalar < 1 || spec.vec_len == 0) {
        throw ConfigError("projvq spec requires b_index >= 1, b_scalar >= 1, vec_len >= 1");
    }
    return static_cast<double>(spec.b_index + spec.b_scalar) /
           static_cast<double>(spec.vec_len);
}

double projvq_compression_ratio(const ProjectionVQSpec& spec) {
    return 32.0 / projvq_bits_per_weight(spec);
}

double havq_bits_per_weight(const HardAttentionVQSpec& spec) {
    if (spec.b_index < 1 || spec.vec_len == 0) {
        throw ConfigError("havq spec requires b_index >= 1, vec_len >= 1");
    }
    return static_cast<double>(spec.b_index) / static_cast<double>(spec.vec_len);
}

double havq_compression_ratio(const HardAttentionVQSpec& spec) {
    return 32.0 / havq_bits_per_weight(spec);
}

}  // namespace vqqat::quantizers
