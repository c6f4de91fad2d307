#pragma once

#include <cstddef>

#include "vqqat/codebook.hpp"
#include "vqqat/numerics.hpp"

// The three quantizers with explicit forward/backward contracts. Forward ops
// are pure; every backward op is the exact reverse-mode gradient of a
// declared surrogate forward, which makes all of them finite-difference
// checkable:
//   lq     — surrogate clip(x, m, M); pass-through inside the clip range,
//            saturation gradient routed to the clip thresholds.
//   projvq — surrogate s0 * c (assignment and quantized scalar frozen at
//            their forward values): d_w = g, d_c_i += s0 * g.
//   havq   — surrogate sum_i p_i c_i with p = softmax of the key scores;
//            backward differentiates it exactly (value and key paths).
namespace vqqat::quantizers {

using codebook::Codebook;
using numerics::VecF;

// ---------------------------------------------------------------- uniform LQ

struct LinearQuantSpec {
    int bits = 8;
    double clip_lo = -1.0;  // m, learnable
    double clip_hi = 1.0;   // M, learnable
};

struct LqResult {
    double w_q = 0.0;
    double q = 0.0;  // clipped integer level (integer-valued double)
    double x = 0.0;  // forward input, needed by the backward contract
};

// s = (M-m)/(2^b-1), z = round(-m/s), q = clip(round(x/s)+z, 0, 2^b-1),
// w_q = (q-z)*s. Rounding is half-away-from-zero.
LqResult lq_forward(double x, const LinearQuantSpec& spec);

struct LqGrad {
    double d_x = 0.0;
    double d_clip_lo = 0.0;
    double d_clip_hi = 0.0;
};

// Clipped straight-through: d_x = g inside [m, M]; outside, the gradient
// moves the violated threshold instead.
LqGrad lq_backward(double g, const LqResult& result, const LinearQuantSpec& spec);

// --------------------------------------------------------- vector quantizers

struct ProjectionVQSpec {
    int b_index = 1;
    int b_scalar = 8;
    std::size_t vec_len = 1;
};

struct HardAttentionVQSpec {
    int b_index = 1;
    std::size_t vec_len = 1;
};

struct GradBundle {
    VecF d_weights;   // gradient for the input vector w
    VecF d_codebook;  // N x vec_len, row-major, summed in vector order
};

struct ProjVqResult {
    VecF w_q;
    std::size_t index = 0;  // assigned codeword
    double s_raw = 0.0;     // w.c / |c|^2 before quantization
    double s = 0.0;         // quantized scalar actually multiplied in
    LqResult s_lq;          // scalar-quantizer state for aux replay
};

// Cosine assignment, optimal projection scalar, scalar quantization at
// scalar_spec.bits, reconstruction s * c_i.
ProjVqResult projvq_forward(const VecF& w, const Codebook& cb,
                            const LinearQuantSpec& scalar_spec);

// d_w = g; the assigned codeword accumulates s * g; s itself is a constant
// (no gradient path through the scalar or the assignment).
GradBundle projvq_backward(const VecF& g, const ProjVqResult& result,
                           const Codebook& cb);
void projvq_backward_accum(const VecF& g, const ProjVqResult& result,
                           const Codebook& cb, VecF& d_weights,
                           VecF& d_codebook);

enum class HavqMode { Train, Infer };

struct HavqResult {
    VecF w_q;
    std::size_t index = 0;
    VecF scores;  // s_i = w.k_i
    VecF p;       // softmax(scores); empty in Infer mode
};

// Normalized-key attention scores, hard argmax lookup w_q = c_i. Train and
// Infer modes share the score/argmax/lookup path bit-for-bit; Train
// additionally materializes p for the backward pass.
HavqResult havq_forward(const VecF& w, const Codebook& cb,
                        HavqMode mode = HavqMode::Train);

// Exact gradient of the soft surrogate sum_i p_i c_i:
//   d_p_i = g.c_i, d_s = softmax-Jacobian^T d_p, d_w = sum_i d_s_i k_i,
//   d_c_i = p_i g + d_s_i (I - k_i k_i^T) w / |c_i|.
GradBundle havq_backward(const VecF& g, const HavqResult& result, const VecF& w,
                         const Codebook& cb);
void havq_backward_accum(const VecF& g, const HavqResult& result, const VecF& w,
                         const Codebook& cb, VecF& d_weights, VecF& d_codebook);

// ------------------------------------------------------ storage accounting

double projvq_bits_per_weight(const ProjectionVQSpec& spec);
double projvq_compression_ratio(const ProjectionVQSpec& spec);  // 32L/(bi+bs)
double havq_bits_per_weight(const HardAttentionVQSpec& spec);
double havq_compression_ratio(const HardAttentionVQSpec& spec);  // 32L/bi

}  // namespace vqqat::quantizers
