#include "vqqat/nas.hpp"

#include <cmath>
#include <cstddef>

#include "vqqat/errors.hpp"
#include "vqqat/kernels.hpp"
#include "vqqat/numerics.hpp"

namespace vqqat::nas {

const char* branch_name(Branch b) { return b == Branch::VQ ? "vq" : "lq"; }

double prob_vq(const ArchParams& arch) {
    const VecF p = numerics::softmax({arch.logit_vq, arch.logit_lq});
    return p[0];
}

void freeze(ArchParams& arch) {
    if (arch.frozen) return;
    arch.frozen_choice = prob_vq(arch) > 0.5 ? Branch::VQ : Branch::LQ;
    arch.frozen = true;
}

SampleResult sample_branch(const ArchParams& arch, Rng& rng) {
    if (arch.frozen) {
        return {arch.frozen_choice, prob_vq(arch)};
    }
    const double p = prob_vq(arch);
    const double u = rng.next_double();
    return {u < p ? Branch::VQ : Branch::LQ, p};
}

namespace {

void check_layer(const MixedLayer& layer) {
    if (layer.in_dim == 0 || layer.out_dim == 0) {
        throw ConfigError("mixed layer has empty shape");
    }
    if (layer.w_vq.size() != layer.n_weights() ||
        layer.w_lq.size() != layer.n_weights()) {
        throw ConfigError("mixed layer branch weights do not match its shape");
    }
    if (layer.cb.vec_len != layer.vq_spec.vec_len || layer.vq_spec.b_index < 0 ||
        layer.cb.b_index != static_cast<std::size_t>(layer.vq_spec.b_index)) {
        throw ConfigError("mixed layer codebook does not match its VQ spec");
    }
}

}  // namespace

BranchQuant quantize_branch(const MixedLayer& layer, Branch choice,
                            quantizers::HavqMode mode) {
    check_layer(layer);
    BranchQuant out;
    out.choice = choice;
    if (choice == Branch::VQ) {
        codebook::GroupedWeights gw = codebook::group(
            layer.w_vq, {layer.out_dim, layer.in_dim}, layer.vq_spec.vec_len);
        out.pad_count = gw.pad_count;
        out.vq_results.reserve(gw.n_vectors);
        for (std::size_t v = 0; v < gw.n_vectors; ++v) {
            VecF w(gw.vec(v), gw.vec(v) + gw.vec_len);
            out.vq_results.push_back(
                quantizers::havq_forward(w, layer.cb, mode));
            const VecF& w_q = out.vq_results.back().w_q;
            std::copy(w_q.begin(), w_q.end(), gw.vec(v));
        }
        out.w_q = codebook::regroup(gw);
    } else {
        out.w_q.resize(layer.n_weights());
        out.lq_results.reserve(layer.n_weights());
        for (std::size_t i = 0; i < layer.n_weights(); ++i) {
            out.lq_results.push_back(
                quantizers::lq_forward(layer.w_lq[i], layer.lq_spec));
            out.w_q[i] = out.lq_results.back().w_q;
        }
    }
    return out;
}

MixedForwardResult mixed_forward(const MixedLayer& layer, const VecF& x,
                                 Rng& rng) {
    check_layer(layer);
    if (x.size() != layer.in_dim) {
        throw ConfigError("mixed layer input has wrong dimension");
    }
    const SampleResult s = sample_branch(layer.arch, rng);
    const BranchQuant bq =
        quantize_branch(layer, s.choice, quantizers::HavqMode::Infer);

    MixedForwardResult res;
    res.choice = s.choice;
    res.p_vq = s.p_vq;
    res.y.resize(layer.out_dim);
    for (std::size_t o = 0; o < layer.out_dim; ++o) {
        res.y[o] = kernels::dot(bq.w_q.data() + o * layer.in_dim, x.data(),
                                layer.in_dim);
    }
    return res;
}

ArchGrad arch_grad_from_dp(double d_p_vq, const ArchParams& arch) {
    if (arch.frozen) return {0.0, 0.0};
    const double p = prob_vq(arch);
    const double jac = p * (1.0 - p);  // d p / d a = -d p / d b
    return {d_p_vq * jac, -d_p_vq * jac};
}

ArchGrad arch_backward(const VecF& g, const VecF& y_vq, const VecF& y_lq,
                       const ArchParams& arch) {
    if (g.size() != y_vq.size() || g.size() != y_lq.size()) {
        throw ConfigError("arch_backward: mismatched output sizes");
    }
    double d_p = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        d_p += g[i] * (y_vq[i] - y_lq[i]);
    }
    return arch_grad_from_dp(d_p, arch);
}

double expected_storage(const MixedLayer& layer) {
    check_layer(layer);
    const double p = layer.arch.frozen
                         ? (layer.arch.frozen_choice == Branch::VQ ? 1.0 : 0.0)
                         : prob_vq(layer.arch);
    const double n = static_cast<double>(layer.n_weights());
    const double vq_bits = n / static_cast<double>(layer.vq_spec.vec_len) *
                           static_cast<double>(layer.vq_spec.b_index);
    const double lq_bits = n * static_cast<double>(layer.lq_spec.bits);
    return p * vq_bits + (1.0 - p) * lq_bits;
}

double storage_grad_p_vq(const MixedLayer& layer) {
    check_layer(layer);
    const double n = static_cast<double>(layer.n_weights());
    return n / static_cast<double>(layer.vq_spec.vec_len) *
               static_cast<double>(layer.vq_spec.b_index) -
           n * static_cast<double>(layer.lq_spec.bits);
}

double total_loss(double ce, double weights_sq_norm,
                  double sum_expected_storage, double lambda, double beta) {
    return ce + lambda * weights_sq_norm + beta * sum_expected_storage;
}

bool update_budget(BudgetController& ctrl,
                   const std::vector<MixedLayer*>& layers) {
    double total_bits = 0.0;
    double total_weights = 0.0;
    for (const MixedLayer* layer : layers) {
        total_bits += expected_storage(*layer);
        total_weights += static_cast<double>(layer->n_weights());
    }
    if (total_weights == 0.0) {
        throw ConfigError("budget update over zero searched weights");
    }
    ctrl.current_avg_bits = total_bits / total_weights;
    if (!ctrl.triggered && ctrl.current_avg_bits <= ctrl.target_avg_bits) {
        ctrl.triggered = true;
        for (MixedLayer* layer : layers) {
            freeze(layer->arch);
        }
    }
    return ctrl.triggered;
}

}  // namespace vqqat::nas
