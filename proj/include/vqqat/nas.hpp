#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "vqqat/codebook.hpp"
#include "vqqat/quantizers.hpp"
#include "vqqat/rng.hpp"

// Layer-wise search between a vector-quantized branch and a linearly
// quantized branch. Each searched layer keeps two parallel weight copies and
// a pair of architecture logits; the forward pass samples one branch, the
// backward pass treats the hard gate as continuous (straight-through to the
// softmax probabilities), and a global bit budget freezes the choice once the
// expected storage falls below target.
namespace vqqat::nas {

using numerics::Rng;
using numerics::VecF;

enum class Branch { VQ, LQ };

const char* branch_name(Branch b);  // "vq" / "lq"

struct ArchParams {
    double logit_vq = 0.0;  // a
    double logit_lq = 0.0;  // b
    bool frozen = false;
    Branch frozen_choice = Branch::LQ;  // meaningful only once frozen
};

// softmax([a, b])[0]; always in (0, 1).
double prob_vq(const ArchParams& arch);

// Fixes the layer to its current argmax branch (p_vq == 0.5 ties go to LQ).
void freeze(ArchParams& arch);

// A linear map y = W x whose weight matrix exists in two quantized variants.
// Both branches share the (out_dim, in_dim) shape; biases and activations
// live outside this type.
struct MixedLayer {
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;

    VecF w_vq;  // branch 1 weights, row-major out_dim x in_dim
    VecF w_lq;  // branch 2 weights, same shape
    codebook::Codebook cb;  // codebook for the VQ branch
    quantizers::HardAttentionVQSpec vq_spec;
    quantizers::LinearQuantSpec lq_spec;
    ArchParams arch;

    std::size_t n_weights() const { return in_dim * out_dim; }
};

struct SampleResult {
    Branch choice = Branch::LQ;
    double p_vq = 0.0;
};

// Draws choice = VQ with probability p_vq = softmax([a,b])[0]. A frozen layer
// returns its fixed choice without consuming the rng.
SampleResult sample_branch(const ArchParams& arch, Rng& rng);

// One branch's weights pushed through its quantizer. Per-element / per-vector
// results are kept so the training backward can route gradients.
struct BranchQuant {
    Branch choice = Branch::LQ;
    VecF w_q;  // flat quantized weights, same size as the branch weights
    std::vector<quantizers::HavqResult> vq_results;  // VQ branch only
    std::vector<quantizers::LqResult> lq_results;    // LQ branch only
    std::size_t pad_count = 0;  // zeros appended for vector grouping
};

BranchQuant quantize_branch(const MixedLayer& layer, Branch choice,
                            quantizers::HavqMode mode);

struct MixedForwardResult {
    VecF y;
    Branch choice = Branch::LQ;
    double p_vq = 0.0;
};

// Samples a branch, quantizes its weights, and applies y = W_q x.
MixedForwardResult mixed_forward(const MixedLayer& layer, const VecF& x,
                                 Rng& rng);

struct ArchGrad {
    double d_logit_vq = 0.0;
    double d_logit_lq = 0.0;
};

// Chain rule from d(loss)/d(p_vq) through the two-way softmax to the logits.
// Frozen parameters receive exactly zero gradient.
ArchGrad arch_grad_from_dp(double d_p_vq, const ArchParams& arch);

// Straight-through architecture gradient: the hard one-hot gate is replaced
// by [p_vq, 1-p_vq] in the backward, so d_p_vq = <g, y_vq - y_lq> with both
// branch outputs materialized.
ArchGrad arch_backward(const VecF& g, const VecF& y_vq, const VecF& y_lq,
                       const ArchParams& arch);

// E[storage] = p*(N/L)*Q_vq + (1-p)*N*Q_lq in bits, with p the VQ branch
// probability (exactly 0 or 1 once frozen).
double expected_storage(const MixedLayer& layer);

// d(E[storage])/d(p_vq) = (N/L)*Q_vq - N*Q_lq; the caller scales by beta.
double storage_grad_p_vq(const MixedLayer& layer);

// L = CE + lambda*|w|^2 + beta*E[storage].
double total_loss(double ce, double weights_sq_norm,
                  double sum_expected_storage, double lambda, double beta);

struct BudgetController {
    double target_avg_bits = 0.0;
    double current_avg_bits = 0.0;
    bool triggered = false;
};

// Recomputes the average expected bits/weight over the searched layers and,
// the first time it reaches the target, freezes every layer's architecture.
// Returns ctrl.triggered.
bool update_budget(BudgetController& ctrl,
                   const std::vector<MixedLayer*>& layers);

}  // namespace vqqat::nas
