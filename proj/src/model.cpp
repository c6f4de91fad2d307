#include "vqqat/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <utility>

#include "vqqat/errors.hpp"
#include "vqqat/kernels.hpp"
#include "vqqat/numerics.hpp"

namespace vqqat::trainer {

namespace q = vqqat::quantizers;
namespace cbk = vqqat::codebook;

const char* quant_kind_name(QuantKind k) {
    switch (k) {
        case QuantKind::Float: return "float";
        case QuantKind::Lq: return "lq";
        case QuantKind::ProjVq: return "projvq";
        case QuantKind::Havq: return "havq";
        case QuantKind::Mixed: return "mixed";
    }
    return "float";
}

QuantKind quant_kind_from_name(const std::string& s) {
    if (s == "float") return QuantKind::Float;
    if (s == "lq") return QuantKind::Lq;
    if (s == "projvq") return QuantKind::ProjVq;
    if (s == "havq") return QuantKind::Havq;
    if (s == "mixed") return QuantKind::Mixed;
    throw ConfigError("unknown quantizer kind: " + s);
}

void Param::setup(std::string n, std::size_t size, bool decay_flag) {
    name = std::move(n);
    value.assign(size, 0.0);
    grad.assign(size, 0.0);
    momentum.assign(size, 0.0);
    decay = decay_flag;
    lr_scale = 1.0;
    active = true;
}

void Param::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

codebook::Codebook Layer::codebook_view() const {
    codebook::Codebook cb;
    cb.b_index = static_cast<std::size_t>(cfg.b_index);
    cb.vec_len = cfg.vec_len;
    cb.metric = cbk::Metric::Cosine;
    cb.entries = cb_entries.value;
    return cb;
}

nas::MixedLayer Layer::mixed_view() const {
    nas::MixedLayer view;
    view.in_dim = in_dim;
    view.out_dim = out_dim;
    view.w_vq = W.value;
    view.w_lq = w_lq.value;
    view.cb = codebook_view();
    view.vq_spec = {cfg.b_index, cfg.vec_len};
    view.lq_spec = scalar_spec;
    view.arch = arch_state;
    view.arch.logit_vq = arch.value[0];
    view.arch.logit_lq = arch.value[1];
    return view;
}

namespace {

void validate_layer_cfg(const std::string& name, std::size_t n_weights,
                        const LayerQuantConfig& cfg) {
    const bool vq_kind = cfg.kind == QuantKind::ProjVq ||
                         cfg.kind == QuantKind::Havq ||
                         cfg.kind == QuantKind::Mixed;
    const bool lq_kind =
        cfg.kind == QuantKind::Lq || cfg.kind == QuantKind::Mixed;
    if (lq_kind && (cfg.lq_bits < 1 || cfg.lq_bits > 32)) {
        throw ConfigError("layer " + name + ": lq_bits must be in [1,32]");
    }
    if (cfg.kind == QuantKind::ProjVq &&
        (cfg.b_scalar < 1 || cfg.b_scalar > 32)) {
        throw ConfigError("layer " + name + ": b_scalar must be in [1,32]");
    }
    if (!vq_kind) return;
    if (cfg.vec_len == 0) {
        throw ConfigError("layer " + name + ": vec_len must be >= 1");
    }
    if (cfg.b_index < 1 || cfg.b_index > 24) {
        throw ConfigError("layer " + name + ": b_index must be in [1,24]");
    }
    if (!cfg.pad && n_weights % cfg.vec_len != 0) {
        throw ConfigError("layer " + name + ": vec_len " +
                          std::to_string(cfg.vec_len) + " does not divide " +
                          std::to_string(n_weights) +
                          " weights and padding is disabled");
    }
    const std::size_t n_vectors =
        (n_weights + cfg.vec_len - 1) / cfg.vec_len;
    const std::size_t entries = std::size_t{1} << cfg.b_index;
    if (entries > n_vectors) {
        throw ConfigError("layer " + name + ": codebook with " +
                          std::to_string(entries) + " entries needs at least " +
                          std::to_string(entries) + " vectors, got " +
                          std::to_string(n_vectors));
    }
}

}  // namespace

Model build_model(const ModelConfig& cfg, Rng& rng) {
    if (cfg.dims.size() < 2) {
        throw ConfigError("model needs at least input and output dims");
    }
    for (const std::size_t d : cfg.dims) {
        if (d == 0) throw ConfigError("model dims must be >= 1");
    }
    if (cfg.layers.size() != cfg.dims.size() - 1) {
        throw ConfigError("model has " + std::to_string(cfg.dims.size() - 1) +
                          " layers but " + std::to_string(cfg.layers.size()) +
                          " layer configs");
    }

    Model m;
    m.cfg = cfg;
    const std::size_t k = cfg.layers.size();
    m.layers.resize(k);
    for (std::size_t l = 0; l < k; ++l) {
        Layer& layer = m.layers[l];
        layer.name = "fc" + std::to_string(l);
        layer.in_dim = cfg.dims[l];
        layer.out_dim = cfg.dims[l + 1];
        layer.relu = l + 1 < k;
        layer.cfg = cfg.layers[l];
        validate_layer_cfg(layer.name, layer.n_weights(), layer.cfg);

        layer.W.setup(layer.name + ".W", layer.n_weights(), true);
        const double scale = 1.0 / std::sqrt(static_cast<double>(layer.in_dim));
        for (double& w : layer.W.value) w = scale * rng.next_gaussian();
        layer.bias.setup(layer.name + ".bias", layer.out_dim, true);

        switch (layer.cfg.kind) {
            case QuantKind::Float:
                break;
            case QuantKind::Lq:
                layer.clip.setup(layer.name + ".clip", 2, false);
                break;
            case QuantKind::ProjVq:
            case QuantKind::Havq:
                layer.cb_entries.setup(
                    layer.name + ".codebook",
                    (std::size_t{1} << layer.cfg.b_index) * layer.cfg.vec_len,
                    false);
                break;
            case QuantKind::Mixed:
                layer.cb_entries.setup(
                    layer.name + ".codebook",
                    (std::size_t{1} << layer.cfg.b_index) * layer.cfg.vec_len,
                    false);
                layer.w_lq.setup(layer.name + ".w_lq", layer.n_weights(), true);
                layer.arch.setup(layer.name + ".arch", 2, false);
                break;
        }
    }
    return m;
}

namespace {

std::pair<double, double> value_range(const VecF& v) {
    double lo = v[0], hi = v[0];
    for (const double x : v) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    if (hi - lo < 1e-6) {
        lo -= 1e-3;
        hi += 1e-3;
    }
    return {lo, hi};
}

}  // namespace

void init_quantizers(Model& m, Rng& rng) {
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        Layer& layer = m.layers[l];
        Rng sub = rng.fork(l);
        switch (layer.cfg.kind) {
            case QuantKind::Float:
                break;
            case QuantKind::Lq: {
                const auto [lo, hi] = value_range(layer.W.value);
                layer.clip.value = {lo, hi};
                break;
            }
            case QuantKind::ProjVq: {
                const auto gw =
                    cbk::group(layer.W.value, {layer.out_dim, layer.in_dim},
                               layer.cfg.vec_len);
                const cbk::Codebook cb = cbk::init_codebook(
                    gw, static_cast<std::size_t>(layer.cfg.b_index),
                    cbk::Metric::Cosine, sub);
                layer.cb_entries.value = cb.entries;
                // Projection-scalar clip range from the observed projections.
                VecF s_raw(gw.n_vectors);
                for (std::size_t v = 0; v < gw.n_vectors; ++v) {
                    const std::size_t idx = cbk::assign(cb, gw.vec(v));
                    const double num =
                        kernels::dot(gw.vec(v), cb.entry(idx), cb.vec_len);
                    const double den =
                        kernels::sumsq(cb.entry(idx), cb.vec_len);
                    s_raw[v] = num / den;
                }
                const auto [lo, hi] = value_range(s_raw);
                layer.scalar_spec = {layer.cfg.b_scalar, lo, hi};
                break;
            }
            case QuantKind::Havq: {
                const auto gw =
                    cbk::group(layer.W.value, {layer.out_dim, layer.in_dim},
                               layer.cfg.vec_len);
                const cbk::Codebook cb = cbk::init_codebook(
                    gw, static_cast<std::size_t>(layer.cfg.b_index),
                    cbk::Metric::Cosine, sub);
                layer.cb_entries.value = cb.entries;
                if (layer.cfg.freeze_assignments) {
                    layer.frozen_assign.resize(gw.n_vectors);
                    for (std::size_t v = 0; v < gw.n_vectors; ++v) {
                        layer.frozen_assign[v] = cbk::assign(cb, gw.vec(v));
                    }
                }
                break;
            }
            case QuantKind::Mixed: {
                layer.w_lq.value = layer.W.value;
                const auto gw =
                    cbk::group(layer.W.value, {layer.out_dim, layer.in_dim},
                               layer.cfg.vec_len);
                const cbk::Codebook cb = cbk::init_codebook(
                    gw, static_cast<std::size_t>(layer.cfg.b_index),
                    cbk::Metric::Cosine, sub);
                layer.cb_entries.value = cb.entries;
                const auto [lo, hi] = value_range(layer.w_lq.value);
                layer.scalar_spec = {layer.cfg.lq_bits, lo, hi};
                layer.arch.value = {0.0, 0.0};
                layer.arch_state = nas::ArchParams{};
                break;
            }
        }
    }
}

std::vector<Param*> collect_params(Model& m) {
    std::vector<Param*> out;
    for (Layer& layer : m.layers) {
        for (Param* p : {&layer.W, &layer.bias, &layer.clip, &layer.cb_entries,
                         &layer.w_lq, &layer.arch}) {
            if (!p->empty()) out.push_back(p);
        }
    }
    return out;
}

std::string first_nonfinite_param(Model& m) {
    for (Param* p : collect_params(m)) {
        if (!numerics::all_finite(p->value) || !numerics::all_finite(p->grad)) {
            return p->name;
        }
    }
    return "";
}

namespace {

// Gathers vector v of the grouped view of `flat` (zero-padding the tail) into
// `out` (vec_len entries).
void gather_vector(const VecF& flat, std::size_t v, std::size_t vec_len,
                   VecF& out) {
    for (std::size_t t = 0; t < vec_len; ++t) {
        const std::size_t f = v * vec_len + t;
        out[t] = f < flat.size() ? flat[f] : 0.0;
    }
}

void quantize_layer(Model& m, std::size_t layer_idx, RunMode mode,
                    Rng& nas_root) {
    Layer& layer = m.layers[layer_idx];
    LayerCache& c = layer.cache;
    c.lq.clear();
    c.pvq.clear();
    c.havq.clear();
    c.mixed = nas::BranchQuant{};

    switch (layer.cfg.kind) {
        case QuantKind::Float:
            c.w_q = layer.W.value;
            break;
        case QuantKind::Lq: {
            const q::LinearQuantSpec spec{layer.cfg.lq_bits,
                                          layer.clip.value[0],
                                          layer.clip.value[1]};
            const std::size_t n = layer.n_weights();
            c.w_q.resize(n);
            c.lq.reserve(n);
            for (std::size_t i = 0; i < n; ++i) {
                c.lq.push_back(q::lq_forward(layer.W.value[i], spec));
                c.w_q[i] = c.lq.back().w_q;
            }
            break;
        }
        case QuantKind::ProjVq: {
            const cbk::Codebook cb = layer.codebook_view();
            const std::size_t n_vec = layer.n_vectors();
            c.w_q.resize(layer.n_weights());
            c.pvq.reserve(n_vec);
            VecF w_v(layer.cfg.vec_len);
            for (std::size_t v = 0; v < n_vec; ++v) {
                gather_vector(layer.W.value, v, layer.cfg.vec_len, w_v);
                c.pvq.push_back(
                    q::projvq_forward(w_v, cb, layer.scalar_spec));
                const VecF& w_q = c.pvq.back().w_q;
                for (std::size_t t = 0; t < layer.cfg.vec_len; ++t) {
                    const std::size_t f = v * layer.cfg.vec_len + t;
                    if (f < c.w_q.size()) c.w_q[f] = w_q[t];
                }
            }
            break;
        }
        case QuantKind::Havq: {
            const cbk::Codebook cb = layer.codebook_view();
            const std::size_t n_vec = layer.n_vectors();
            c.w_q.resize(layer.n_weights());
            VecF w_v(layer.cfg.vec_len);
            if (!layer.frozen_assign.empty()) {
                for (std::size_t v = 0; v < n_vec; ++v) {
                    const double* entry = cb.entry(layer.frozen_assign[v]);
                    for (std::size_t t = 0; t < layer.cfg.vec_len; ++t) {
                        const std::size_t f = v * layer.cfg.vec_len + t;
                        if (f < c.w_q.size()) c.w_q[f] = entry[t];
                    }
                }
                break;
            }
            c.havq.reserve(n_vec);
            const q::HavqMode hm = mode == RunMode::Train
                                       ? q::HavqMode::Train
                                       : q::HavqMode::Infer;
            for (std::size_t v = 0; v < n_vec; ++v) {
                gather_vector(layer.W.value, v, layer.cfg.vec_len, w_v);
                c.havq.push_back(q::havq_forward(w_v, cb, hm));
                const VecF& w_q = c.havq.back().w_q;
                for (std::size_t t = 0; t < layer.cfg.vec_len; ++t) {
                    const std::size_t f = v * layer.cfg.vec_len + t;
                    if (f < c.w_q.size()) c.w_q[f] = w_q[t];
                }
            }
            break;
        }
        case QuantKind::Mixed: {
            const nas::MixedLayer view = layer.mixed_view();
            nas::Branch choice;
            if (mode == RunMode::Train) {
                Rng sub = nas_root.fork(layer_idx, m.global_step);
                choice = nas::sample_branch(view.arch, sub).choice;
            } else if (view.arch.frozen) {
                choice = view.arch.frozen_choice;
            } else {
                choice = nas::prob_vq(view.arch) > 0.5 ? nas::Branch::VQ
                                                       : nas::Branch::LQ;
            }
            c.mixed = nas::quantize_branch(view, choice,
                                           mode == RunMode::Train
                                               ? q::HavqMode::Train
                                               : q::HavqMode::Infer);
            c.mixed_choice = choice;
            c.w_q = c.mixed.w_q;
            if (mode == RunMode::Train) {
                const bool vq = choice == nas::Branch::VQ;
                layer.W.active = vq;
                layer.cb_entries.active = vq;
                layer.w_lq.active = !vq;
                layer.arch.active = !view.arch.frozen;
            }
            break;
        }
    }
}

}  // namespace

VecF forward(Model& m, const VecF& x, std::size_t batch, RunMode mode,
             Rng& nas_root) {
    if (batch == 0 || x.size() != batch * m.input_dim()) {
        throw ConfigError("forward: input size does not match batch x dims");
    }
    VecF a = x;
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        quantize_layer(m, l, mode, nas_root);
        Layer& layer = m.layers[l];
        LayerCache& c = layer.cache;
        c.batch = batch;
        c.a_in = a;
        c.z.assign(batch * layer.out_dim, 0.0);
        for (std::size_t b = 0; b < batch; ++b) {
            const double* row = a.data() + b * layer.in_dim;
            for (std::size_t o = 0; o < layer.out_dim; ++o) {
                c.z[b * layer.out_dim + o] =
                    kernels::dot(c.w_q.data() + o * layer.in_dim, row,
                                 layer.in_dim) +
                    layer.bias.value[o];
            }
        }
        if (layer.relu) {
            a.resize(c.z.size());
            for (std::size_t i = 0; i < c.z.size(); ++i) {
                a[i] = c.z[i] > 0.0 ? c.z[i] : 0.0;
            }
        } else {
            a = c.z;
        }
    }
    return a;
}

LossStats ce_loss(const VecF& logits, const int* labels, std::size_t batch,
                  std::size_t classes, VecF* d_logits) {
    if (batch == 0 || logits.size() != batch * classes) {
        throw ConfigError("ce_loss: logits size does not match batch");
    }
    if (d_logits) d_logits->assign(batch * classes, 0.0);
    LossStats stats;
    VecF row(classes);
    for (std::size_t b = 0; b < batch; ++b) {
        const int y = labels[b];
        if (y < 0 || static_cast<std::size_t>(y) >= classes) {
            throw ConfigError("ce_loss: label out of range");
        }
        std::copy(logits.begin() + b * classes,
                  logits.begin() + (b + 1) * classes, row.begin());
        if (numerics::argmax_tiebreak_low(row) ==
            static_cast<std::size_t>(y)) {
            ++stats.correct;
        }
        const VecF p = numerics::softmax(row);
        stats.ce -= std::log(p[static_cast<std::size_t>(y)]);
        if (d_logits) {
            for (std::size_t cls = 0; cls < classes; ++cls) {
                (*d_logits)[b * classes + cls] =
                    (p[cls] - (cls == static_cast<std::size_t>(y) ? 1.0 : 0.0)) /
                    static_cast<double>(batch);
            }
        }
    }
    stats.ce /= static_cast<double>(batch);
    return stats;
}

namespace {

// Routes the quantized-weight gradient d_wq (flat out*in) into the layer's
// parameter gradients through its quantizer's backward contract.
void route_weight_grad(Layer& layer, const VecF& d_wq) {
    const std::size_t vec_len = layer.cfg.vec_len;
    switch (layer.cfg.kind) {
        case QuantKind::Float:
            for (std::size_t i = 0; i < d_wq.size(); ++i) {
                layer.W.grad[i] += d_wq[i];
            }
            break;
        case QuantKind::Lq: {
            const q::LinearQuantSpec spec{layer.cfg.lq_bits,
                                          layer.clip.value[0],
                                          layer.clip.value[1]};
            for (std::size_t i = 0; i < d_wq.size(); ++i) {
                const q::LqGrad g = q::lq_backward(d_wq[i], layer.cache.lq[i],
                                                   spec);
                layer.W.grad[i] += g.d_x;
                layer.clip.grad[0] += g.d_clip_lo;
                layer.clip.grad[1] += g.d_clip_hi;
            }
            break;
        }
        case QuantKind::ProjVq: {
            const cbk::Codebook cb = layer.codebook_view();
            VecF g_v(vec_len), dw(vec_len);
            for (std::size_t v = 0; v < layer.cache.pvq.size(); ++v) {
                gather_vector(d_wq, v, vec_len, g_v);
                std::fill(dw.begin(), dw.end(), 0.0);
                q::projvq_backward_accum(g_v, layer.cache.pvq[v], cb, dw,
                                         layer.cb_entries.grad);
                for (std::size_t t = 0; t < vec_len; ++t) {
                    const std::size_t f = v * vec_len + t;
                    if (f < layer.W.grad.size()) layer.W.grad[f] += dw[t];
                }
            }
            break;
        }
        case QuantKind::Havq: {
            if (!layer.frozen_assign.empty()) {
                for (std::size_t v = 0; v < layer.frozen_assign.size(); ++v) {
                    const std::size_t row = layer.frozen_assign[v];
                    for (std::size_t t = 0; t < vec_len; ++t) {
                        const std::size_t f = v * vec_len + t;
                        if (f < d_wq.size()) {
                            layer.cb_entries.grad[row * vec_len + t] += d_wq[f];
                        }
                    }
                }
                break;
            }
            const cbk::Codebook cb = layer.codebook_view();
            VecF g_v(vec_len), w_v(vec_len), dw(vec_len);
            for (std::size_t v = 0; v < layer.cache.havq.size(); ++v) {
                gather_vector(d_wq, v, vec_len, g_v);
                gather_vector(layer.W.value, v, vec_len, w_v);
                std::fill(dw.begin(), dw.end(), 0.0);
                q::havq_backward_accum(g_v, layer.cache.havq[v], w_v, cb, dw,
                                       layer.cb_entries.grad);
                for (std::size_t t = 0; t < vec_len; ++t) {
                    const std::size_t f = v * vec_len + t;
                    if (f < layer.W.grad.size()) layer.W.grad[f] += dw[t];
                }
            }
            break;
        }
        case QuantKind::Mixed: {
            const nas::BranchQuant& bq = layer.cache.mixed;
            if (layer.cache.mixed_choice == nas::Branch::VQ) {
                const cbk::Codebook cb = layer.codebook_view();
                VecF g_v(vec_len), w_v(vec_len), dw(vec_len);
                for (std::size_t v = 0; v < bq.vq_results.size(); ++v) {
                    gather_vector(d_wq, v, vec_len, g_v);
                    gather_vector(layer.W.value, v, vec_len, w_v);
                    std::fill(dw.begin(), dw.end(), 0.0);
                    q::havq_backward_accum(g_v, bq.vq_results[v], w_v, cb, dw,
                                           layer.cb_entries.grad);
                    for (std::size_t t = 0; t < vec_len; ++t) {
                        const std::size_t f = v * vec_len + t;
                        if (f < layer.W.grad.size()) layer.W.grad[f] += dw[t];
                    }
                }
            } else {
                // LQ branch: straight-through clip; the branch clip range is
                // fixed at init, so its gradient is dropped.
                for (std::size_t i = 0; i < d_wq.size(); ++i) {
                    const q::LqGrad g = q::lq_backward(
                        d_wq[i], bq.lq_results[i], layer.scalar_spec);
                    layer.w_lq.grad[i] += g.d_x;
                }
            }
            // Soft-gate architecture gradient needs both quantized branches;
            // the unsampled one is materialized on demand.
            if (!layer.arch_state.frozen) {
                const nas::MixedLayer view = layer.mixed_view();
                const nas::Branch other =
                    layer.cache.mixed_choice == nas::Branch::VQ
                        ? nas::Branch::LQ
                        : nas::Branch::VQ;
                const VecF other_wq =
                    nas::quantize_branch(view, other, q::HavqMode::Infer).w_q;
                const VecF& vq_wq = layer.cache.mixed_choice == nas::Branch::VQ
                                        ? layer.cache.w_q
                                        : other_wq;
                const VecF& lq_wq = layer.cache.mixed_choice == nas::Branch::VQ
                                        ? other_wq
                                        : layer.cache.w_q;
                double d_p = 0.0;
                for (std::size_t i = 0; i < d_wq.size(); ++i) {
                    d_p += d_wq[i] * (vq_wq[i] - lq_wq[i]);
                }
                const nas::ArchGrad g = nas::arch_grad_from_dp(d_p, view.arch);
                layer.arch.grad[0] += g.d_logit_vq;
                layer.arch.grad[1] += g.d_logit_lq;
            }
            break;
        }
    }
}

}  // namespace

void backward(Model& m, const VecF& d_logits) {
    if (m.layers.empty() || m.layers.back().cache.batch == 0) {
        throw ConfigError("backward called before forward");
    }
    const std::size_t batch = m.layers.back().cache.batch;
    if (d_logits.size() != batch * m.output_dim()) {
        throw ConfigError("backward: gradient size does not match logits");
    }

    VecF d_z = d_logits;
    for (std::size_t li = m.layers.size(); li-- > 0;) {
        Layer& layer = m.layers[li];
        const LayerCache& c = layer.cache;
        const std::size_t in = layer.in_dim, out = layer.out_dim;

        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t o = 0; o < out; ++o) {
                layer.bias.grad[o] += d_z[b * out + o];
            }
        }

        VecF d_wq(out * in, 0.0);
        for (std::size_t b = 0; b < batch; ++b) {
            const double* a_row = c.a_in.data() + b * in;
            for (std::size_t o = 0; o < out; ++o) {
                kernels::axpy(d_z[b * out + o], a_row, d_wq.data() + o * in,
                              in);
            }
        }
        route_weight_grad(layer, d_wq);

        if (li == 0) break;
        VecF d_a(batch * in, 0.0);
        for (std::size_t b = 0; b < batch; ++b) {
            double* d_row = d_a.data() + b * in;
            for (std::size_t o = 0; o < out; ++o) {
                kernels::axpy(d_z[b * out + o], c.w_q.data() + o * in, d_row,
                              in);
            }
        }
        d_z = std::move(d_a);
        const Layer& prev = m.layers[li - 1];
        if (prev.relu) {
            for (std::size_t i = 0; i < d_z.size(); ++i) {
                if (!(prev.cache.z[i] > 0.0)) d_z[i] = 0.0;
            }
        }
    }
}

void zero_grads(Model& m) {
    for (Param* p : collect_params(m)) p->zero_grad();
}

void post_step(Model& m) {
    for (Layer& layer : m.layers) {
        if (!layer.has_codebook()) continue;
        codebook::Codebook cb = layer.codebook_view();
        cbk::enforce_norm_floor(cb);
        layer.cb_entries.value = std::move(cb.entries);
    }
}

double layer_storage_bits(const Layer& l) {
    const double n = static_cast<double>(l.n_weights());
    switch (l.cfg.kind) {
        case QuantKind::Float:
            return 32.0 * n;
        case QuantKind::Lq:
            return static_cast<double>(l.cfg.lq_bits) * n;
        case QuantKind::ProjVq:
            return n * q::projvq_bits_per_weight(
                           {l.cfg.b_index, l.cfg.b_scalar, l.cfg.vec_len});
        case QuantKind::Havq:
            return n * q::havq_bits_per_weight({l.cfg.b_index, l.cfg.vec_len});
        case QuantKind::Mixed:
            return nas::expected_storage(l.mixed_view());
    }
    return 32.0 * n;
}

double model_avg_bits(const Model& m) {
    double bits = 0.0, weights = 0.0;
    for (const Layer& l : m.layers) {
        bits += layer_storage_bits(l);
        weights += static_cast<double>(l.n_weights());
    }
    return bits / weights;
}

double decayed_sq_norm(Model& m) {
    double total = 0.0;
    for (Param* p : collect_params(m)) {
        if (!p->decay) continue;
        total += kernels::sumsq(p->value.data(), p->value.size());
    }
    return total;
}

namespace {

nlohmann::json param_to_json(const Param& p) {
    return {{"value", p.value}, {"momentum", p.momentum}};
}

void param_from_json(const nlohmann::json& j, Param& p) {
    const VecF value = j.at("value").get<VecF>();
    const VecF momentum = j.at("momentum").get<VecF>();
    if (value.size() != p.value.size() || momentum.size() != p.momentum.size()) {
        throw ParseError("checkpoint parameter " + p.name +
                         " has the wrong size");
    }
    p.value = value;
    p.momentum = momentum;
}

nlohmann::json layer_cfg_to_json(const LayerQuantConfig& c) {
    return {{"kind", quant_kind_name(c.kind)},
            {"vec_len", c.vec_len},
            {"b_index", c.b_index},
            {"b_scalar", c.b_scalar},
            {"lq_bits", c.lq_bits},
            {"pad", c.pad},
            {"freeze_assignments", c.freeze_assignments}};
}

LayerQuantConfig layer_cfg_from_json(const nlohmann::json& j) {
    LayerQuantConfig c;
    c.kind = quant_kind_from_name(j.at("kind").get<std::string>());
    c.vec_len = j.at("vec_len").get<std::size_t>();
    c.b_index = j.at("b_index").get<int>();
    c.b_scalar = j.at("b_scalar").get<int>();
    c.lq_bits = j.at("lq_bits").get<int>();
    c.pad = j.at("pad").get<bool>();
    c.freeze_assignments = j.at("freeze_assignments").get<bool>();
    return c;
}

}  // namespace

nlohmann::json model_to_json(const Model& m) {
    nlohmann::json cfg;
    cfg["dims"] = m.cfg.dims;
    cfg["layers"] = nlohmann::json::array();
    for (const auto& lc : m.cfg.layers) cfg["layers"].push_back(layer_cfg_to_json(lc));

    nlohmann::json layers = nlohmann::json::array();
    for (const Layer& l : m.layers) {
        nlohmann::json jl;
        jl["name"] = l.name;
        nlohmann::json params;
        for (const Param* p :
             {&l.W, &l.bias, &l.clip, &l.cb_entries, &l.w_lq, &l.arch}) {
            if (!p->empty()) params[p->name] = param_to_json(*p);
        }
        jl["params"] = params;
        jl["scalar_spec"] = {{"bits", l.scalar_spec.bits},
                             {"clip_lo", l.scalar_spec.clip_lo},
                             {"clip_hi", l.scalar_spec.clip_hi}};
        jl["frozen_assign"] = l.frozen_assign;
        jl["arch_frozen"] = l.arch_state.frozen;
        jl["arch_choice"] = nas::branch_name(l.arch_state.frozen_choice);
        layers.push_back(jl);
    }
    return {{"config", cfg},
            {"global_step", m.global_step},
            {"layers", layers}};
}

Model model_from_json(const nlohmann::json& j) {
    try {
        ModelConfig cfg;
        cfg.dims = j.at("config").at("dims").get<std::vector<std::size_t>>();
        for (const auto& jl : j.at("config").at("layers")) {
            cfg.layers.push_back(layer_cfg_from_json(jl));
        }
        Rng scratch(0);
        Model m = build_model(cfg, scratch);
        m.global_step = j.at("global_step").get<std::uint64_t>();
        const auto& layers = j.at("layers");
        if (layers.size() != m.layers.size()) {
            throw ParseError("checkpoint layer count does not match config");
        }
        for (std::size_t l = 0; l < m.layers.size(); ++l) {
            Layer& layer = m.layers[l];
            const auto& jl = layers.at(l);
            const auto& params = jl.at("params");
            for (Param* p : {&layer.W, &layer.bias, &layer.clip,
                             &layer.cb_entries, &layer.w_lq, &layer.arch}) {
                if (!p->empty()) param_from_json(params.at(p->name), *p);
            }
            layer.scalar_spec.bits = jl.at("scalar_spec").at("bits").get<int>();
            layer.scalar_spec.clip_lo =
                jl.at("scalar_spec").at("clip_lo").get<double>();
            layer.scalar_spec.clip_hi =
                jl.at("scalar_spec").at("clip_hi").get<double>();
            layer.frozen_assign =
                jl.at("frozen_assign").get<std::vector<std::size_t>>();
            layer.arch_state.frozen = jl.at("arch_frozen").get<bool>();
            layer.arch_state.frozen_choice =
                jl.at("arch_choice").get<std::string>() == "vq"
                    ? nas::Branch::VQ
                    : nas::Branch::LQ;
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed checkpoint: ") + e.what());
    }
}

}  // namespace vqqat::trainer
