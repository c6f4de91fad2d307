#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "vqqat/codebook.hpp"
#include "vqqat/nas.hpp"
#include "vqqat/quantizers.hpp"
#include "vqqat/rng.hpp"

// Desk-scale feed-forward classifier with per-layer weight quantization.
// Layers are affine maps named fc0..fc{k-1} with ReLU between hidden layers;
// each layer's weight matrix can stay float, go through the learned-clip
// linear quantizer, either vector quantizer, or a two-branch searched mix.
namespace vqqat::trainer {

using numerics::Rng;
using numerics::VecF;

enum class QuantKind { Float, Lq, ProjVq, Havq, Mixed };

const char* quant_kind_name(QuantKind k);
QuantKind quant_kind_from_name(const std::string& s);  // ConfigError

struct LayerQuantConfig {
    QuantKind kind = QuantKind::Float;
    std::size_t vec_len = 4;  // vector length L for VQ kinds
    int b_index = 4;          // codeword index bits
    int b_scalar = 8;         // projection-scalar bits (ProjVq)
    int lq_bits = 8;          // linear-quant bits (Lq and the Mixed LQ branch)
    bool pad = true;          // zero-pad when vec_len does not divide the layer
    bool freeze_assignments = false;  // Havq: pin vector->codeword at init
};

struct ModelConfig {
    std::vector<std::size_t> dims;         // k+1 entries define k layers
    std::vector<LayerQuantConfig> layers;  // k entries, fc0..fc{k-1}
};

// One named parameter block with its gradient and momentum buffers. The
// optimizer updates value from grad/momentum; `decay` marks participation in
// weight decay, `active` is cleared for the unsampled branch of a mixed
// layer so it receives no update that step.
struct Param {
    std::string name;
    VecF value, grad, momentum;
    bool decay = true;
    double lr_scale = 1.0;
    bool active = true;

    void setup(std::string n, std::size_t size, bool decay_flag);
    void zero_grad();
    bool empty() const { return value.empty(); }
};

enum class RunMode { Train, Eval };

// Per-forward state consumed by backward().
struct LayerCache {
    std::size_t batch = 0;
    VecF a_in;  // batch x in_dim inputs
    VecF z;     // batch x out_dim preactivations
    VecF w_q;   // quantized weights used by this forward
    std::vector<quantizers::LqResult> lq;
    std::vector<quantizers::ProjVqResult> pvq;
    std::vector<quantizers::HavqResult> havq;
    nas::BranchQuant mixed;
    nas::Branch mixed_choice = nas::Branch::LQ;
};

struct Layer {
    std::string name;
    std::size_t in_dim = 0, out_dim = 0;
    bool relu = false;  // applied to this layer's output
    LayerQuantConfig cfg;

    Param W;           // latent weights, row-major out_dim x in_dim;
                       // doubles as the VQ-branch weights of a mixed layer
    Param bias;        // out_dim
    Param clip;        // Lq only: {clip_lo, clip_hi}, learnable, no decay
    Param cb_entries;  // ProjVq/Havq/Mixed codebook entries, no decay
    Param w_lq;        // Mixed only: LQ-branch weights
    Param arch;        // Mixed only: {logit_vq, logit_lq}, no decay

    // ProjVq: the projection-scalar quantizer (clips fixed at init).
    // Mixed: the LQ branch quantizer (clips fixed at init).
    quantizers::LinearQuantSpec scalar_spec;
    std::vector<std::size_t> frozen_assign;  // Havq freeze_assignments
    nas::ArchParams arch_state;              // Mixed freeze bookkeeping

    LayerCache cache;

    std::size_t n_weights() const { return in_dim * out_dim; }
    std::size_t n_vectors() const {
        return (n_weights() + cfg.vec_len - 1) / cfg.vec_len;
    }
    bool has_codebook() const {
        return cfg.kind == QuantKind::ProjVq || cfg.kind == QuantKind::Havq ||
               cfg.kind == QuantKind::Mixed;
    }
    codebook::Codebook codebook_view() const;
    nas::MixedLayer mixed_view() const;
};

struct Model {
    ModelConfig cfg;
    std::vector<Layer> layers;
    std::uint64_t global_step = 0;  // advanced by the trainer per batch

    std::size_t input_dim() const { return cfg.dims.front(); }
    std::size_t output_dim() const { return cfg.dims.back(); }
};

// Validates the config, draws the float initialization, and names layers.
Model build_model(const ModelConfig& cfg, Rng& rng);

// Initializes quantizer state from the current float weights: k-means
// codebooks, Lq clip ranges, projection-scalar ranges, frozen assignments,
// and the mixed layers' second branch (copied from the same float weights).
void init_quantizers(Model& m, Rng& rng);

std::vector<Param*> collect_params(Model& m);

// Name of the first parameter tensor holding a non-finite value or gradient,
// or empty string if all are finite.
std::string first_nonfinite_param(Model& m);

// Quantizes every layer's weights per its config and applies the network to
// a batch (row-major batch x input_dim). Train mode caches quantizer state
// for backward and samples mixed branches from nas_root substreams keyed
// (layer index, global_step); Eval mode uses inference quantization and the
// frozen/argmax branch. Returns logits, batch x output_dim.
VecF forward(Model& m, const VecF& x, std::size_t batch, RunMode mode,
             Rng& nas_root);

struct LossStats {
    double ce = 0.0;          // mean cross-entropy over the batch
    std::size_t correct = 0;  // argmax(logits) == label count
};

// Softmax cross-entropy with mean reduction; when d_logits is non-null it
// receives (softmax - onehot)/batch.
LossStats ce_loss(const VecF& logits, const int* labels, std::size_t batch,
                  std::size_t classes, VecF* d_logits);

// Propagates d_logits through the cached forward, accumulating into each
// Param's grad: straight-through for the quantizers, exact softmax-surrogate
// for hard attention, and the soft-gate architecture gradient for mixed
// layers (task term only; the storage term is added by the trainer).
void backward(Model& m, const VecF& d_logits);

void zero_grads(Model& m);

// Post-optimizer maintenance: cosine-metric codeword norm floors.
void post_step(Model& m);

// Storage accounting consistent with the compression-ratio ops: float 32
// bits/weight, Lq lq_bits, ProjVq (b_index+b_scalar)/L, Havq b_index/L,
// Mixed its expected storage. Biases are excluded.
double layer_storage_bits(const Layer& l);
double model_avg_bits(const Model& m);

// Sum of squared values over weight-decayed parameters (the ||w||^2 that the
// reported loss's lambda term covers).
double decayed_sq_norm(Model& m);

nlohmann::json model_to_json(const Model& m);
Model model_from_json(const nlohmann::json& j);  // ParseError on bad input

}  // namespace vqqat::trainer
