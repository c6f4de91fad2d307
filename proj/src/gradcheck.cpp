#include "vqqat/gradcheck.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "vqqat/codebook.hpp"
#include "vqqat/errors.hpp"
#include "vqqat/kernels.hpp"
#include "vqqat/model.hpp"
#include "vqqat/nas.hpp"
#include "vqqat/numerics.hpp"
#include "vqqat/quantizers.hpp"
#include "vqqat/rng.hpp"

namespace vqqat::gradcheck {

namespace q = vqqat::quantizers;
namespace cbk = vqqat::codebook;
using numerics::Rng;
using numerics::VecF;
using trainer::LayerQuantConfig;
using trainer::QuantKind;

namespace {

constexpr double kStep = 1e-6;  // central-difference step
constexpr double kUnitTol = 1e-5;
constexpr double kEndToEndTol = 1e-4;
constexpr double kRelFloor = 1e-2;
// Keep evaluation points at least this far from clip/ReLU kinks; the
// finite-difference step cannot cross a region boundary from there.
constexpr double kKinkMargin = 1e-3;

double rel_err(double analytic, double fd) {
    return std::abs(analytic - fd) /
           std::max({std::abs(analytic), std::abs(fd), kRelFloor});
}

struct Comparator {
    double max_rel = 0.0;
    bool corrupt = false;
    bool corrupted_yet = false;

    void note(double analytic, double fd) {
        if (corrupt && !corrupted_yet) {
            // Scale-and-shift guarantees a visible defect even on a zero
            // gradient; the harness must flag it.
            analytic = analytic * 1.01 + 1e-3;
            corrupted_yet = true;
        }
        max_rel = std::max(max_rel, rel_err(analytic, fd));
    }
};

cbk::Codebook random_codebook(std::size_t b_index, std::size_t vec_len,
                              Rng& rng) {
    cbk::Codebook cb;
    cb.b_index = b_index;
    cb.vec_len = vec_len;
    cb.metric = cbk::Metric::Cosine;
    cb.entries.resize(cb.size() * vec_len);
    for (std::size_t i = 0; i < cb.size(); ++i) {
        double norm = 0.0;
        while (norm < 0.3) {  // keep keys well-conditioned for normalization
            for (std::size_t t = 0; t < vec_len; ++t) {
                cb.entry(i)[t] = rng.next_gaussian();
            }
            norm = std::sqrt(kernels::sumsq(cb.entry(i), vec_len));
        }
    }
    return cb;
}

VecF gaussian_vec(std::size_t n, Rng& rng, double scale = 1.0) {
    VecF v(n);
    for (double& x : v) x = scale * rng.next_gaussian();
    return v;
}

// ------------------------------------------------------------- unit suites

void check_lq(Comparator& cmp, std::size_t instances, Rng& rng) {
    for (std::size_t inst = 0; inst < instances; ++inst) {
        q::LinearQuantSpec spec;
        spec.bits = 2 + static_cast<int>(rng.uniform_index(7));
        spec.clip_lo = -0.5 - rng.next_double();
        spec.clip_hi = 0.5 + rng.next_double();
        double x = 1.5 * rng.next_gaussian();
        if (std::abs(x - spec.clip_lo) < kKinkMargin) x += 5e-3;
        if (std::abs(x - spec.clip_hi) < kKinkMargin) x += 5e-3;
        const double g = rng.next_gaussian();
        const q::LqGrad an = q::lq_backward(g, q::lq_forward(x, spec), spec);

        const auto f = [&](double xi, double lo, double hi) {
            return g * std::clamp(xi, lo, hi);
        };
        const double lo = spec.clip_lo, hi = spec.clip_hi;
        cmp.note(an.d_x,
                 (f(x + kStep, lo, hi) - f(x - kStep, lo, hi)) / (2 * kStep));
        cmp.note(an.d_clip_lo,
                 (f(x, lo + kStep, hi) - f(x, lo - kStep, hi)) / (2 * kStep));
        cmp.note(an.d_clip_hi,
                 (f(x, lo, hi + kStep) - f(x, lo, hi - kStep)) / (2 * kStep));
    }
}

void check_projvq(Comparator& cmp, std::size_t instances, Rng& rng) {
    for (std::size_t inst = 0; inst < instances; ++inst) {
        const std::size_t vec_len = 2 + rng.uniform_index(4);
        const std::size_t b_index = 1 + rng.uniform_index(3);
        const cbk::Codebook cb = random_codebook(b_index, vec_len, rng);
        const VecF w = gaussian_vec(vec_len, rng);
        const VecF g = gaussian_vec(vec_len, rng);
        const q::LinearQuantSpec sspec{8, -3.0, 3.0};
        const q::ProjVqResult res = q::projvq_forward(w, cb, sspec);

        VecF dw(vec_len, 0.0), dC(cb.entries.size(), 0.0);
        q::projvq_backward_accum(g, res, cb, dw, dC);

        // Surrogate: assignment and quantized scalar frozen at their forward
        // values; only the pass-through and codeword-row terms remain.
        const auto f = [&](const VecF& wv, const VecF& entries) {
            double out = 0.0;
            for (std::size_t t = 0; t < vec_len; ++t) {
                out += g[t] * ((wv[t] - w[t]) +
                               res.s * entries[res.index * vec_len + t]);
            }
            return out;
        };
        for (std::size_t t = 0; t < vec_len; ++t) {
            VecF wp = w, wm = w;
            wp[t] += kStep;
            wm[t] -= kStep;
            cmp.note(dw[t], (f(wp, cb.entries) - f(wm, cb.entries)) / (2 * kStep));
        }
        for (std::size_t i = 0; i < cb.entries.size(); ++i) {
            VecF ep = cb.entries, em = cb.entries;
            ep[i] += kStep;
            em[i] -= kStep;
            cmp.note(dC[i], (f(w, ep) - f(w, em)) / (2 * kStep));
        }
    }
}

void check_havq(Comparator& cmp, std::size_t instances, Rng& rng) {
    for (std::size_t inst = 0; inst < instances; ++inst) {
        const std::size_t vec_len = 2 + rng.uniform_index(4);
        const std::size_t b_index = 2 + rng.uniform_index(2);
        cbk::Codebook cb = random_codebook(b_index, vec_len, rng);
        const VecF w = gaussian_vec(vec_len, rng);
        const VecF g = gaussian_vec(vec_len, rng);
        const q::HavqResult res = q::havq_forward(w, cb, q::HavqMode::Train);

        VecF dw(vec_len, 0.0), dC(cb.entries.size(), 0.0);
        q::havq_backward_accum(g, res, w, cb, dw, dC);

        // Soft surrogate sum_i p_i <g, c_i>, recomputed live so the score and
        // value paths both enter the finite difference.
        const auto f = [&](const VecF& wv, const VecF& entries) {
            cbk::Codebook cb2 = cb;
            cb2.entries = entries;
            const q::HavqResult r = q::havq_forward(wv, cb2, q::HavqMode::Train);
            double out = 0.0;
            for (std::size_t i = 0; i < cb2.size(); ++i) {
                out += r.p[i] * kernels::dot(g.data(), cb2.entry(i), vec_len);
            }
            return out;
        };
        for (std::size_t t = 0; t < vec_len; ++t) {
            VecF wp = w, wm = w;
            wp[t] += kStep;
            wm[t] -= kStep;
            cmp.note(dw[t], (f(wp, cb.entries) - f(wm, cb.entries)) / (2 * kStep));
        }
        for (std::size_t i = 0; i < cb.entries.size(); ++i) {
            VecF ep = cb.entries, em = cb.entries;
            ep[i] += kStep;
            em[i] -= kStep;
            cmp.note(dC[i], (f(w, ep) - f(w, em)) / (2 * kStep));
        }
    }
}

void check_arch(Comparator& cmp, std::size_t instances, Rng& rng) {
    for (std::size_t inst = 0; inst < instances; ++inst) {
        const std::size_t dim = 2 + rng.uniform_index(5);
        const VecF y_vq = gaussian_vec(dim, rng);
        const VecF y_lq = gaussian_vec(dim, rng);
        const VecF g = gaussian_vec(dim, rng);
        nas::ArchParams arch;
        arch.logit_vq = 2.0 * rng.next_gaussian();
        arch.logit_lq = 2.0 * rng.next_gaussian();
        const nas::ArchGrad an = nas::arch_backward(g, y_vq, y_lq, arch);

        const auto f = [&](double lv, double ll) {
            nas::ArchParams a2;
            a2.logit_vq = lv;
            a2.logit_lq = ll;
            const double p = nas::prob_vq(a2);
            return p * kernels::dot(g.data(), y_vq.data(), dim) +
                   (1.0 - p) * kernels::dot(g.data(), y_lq.data(), dim);
        };
        const double lv = arch.logit_vq, ll = arch.logit_lq;
        cmp.note(an.d_logit_vq,
                 (f(lv + kStep, ll) - f(lv - kStep, ll)) / (2 * kStep));
        cmp.note(an.d_logit_lq,
                 (f(lv, ll + kStep) - f(lv, ll - kStep)) / (2 * kStep));
    }
}

// ------------------------------------------------------- end-to-end suite

// Base-point snapshot of one layer's quantization, captured right after the
// analytic forward/backward. The end-to-end surrogate is value-matched: at
// the base point it reproduces the hard-quantized forward exactly, and its
// Jacobian there is the straight-through contract the backward pass claims.
struct LayerBase {
    QuantKind kind = QuantKind::Float;
    VecF w_q0;
    VecF w0;  // base weights of the quantized path (W, or w_lq for mixed-LQ)
    double lo0 = 0.0, hi0 = 0.0;
    std::vector<std::size_t> idx0;  // projvq per-vector assignments
    VecF s0;                        // projvq per-vector quantized scalars
    VecF entries0;
    VecF soft0;  // havq soft reconstruction at the base point
    nas::Branch choice = nas::Branch::LQ;
    double p0 = 0.0;
    VecF gate_diff;  // hard vq output minus hard lq output (mixed)
};

void gather_vec(const VecF& flat, std::size_t v, std::size_t len, VecF& out) {
    for (std::size_t t = 0; t < len; ++t) {
        const std::size_t f = v * len + t;
        out[t] = f < flat.size() ? flat[f] : 0.0;
    }
}

VecF soft_recon(const trainer::Layer& layer) {
    const cbk::Codebook cb = layer.codebook_view();
    const std::size_t len = layer.cfg.vec_len;
    VecF out(layer.n_weights());
    VecF w_v(len), sv(len);
    for (std::size_t v = 0; v < layer.n_vectors(); ++v) {
        gather_vec(layer.W.value, v, len, w_v);
        const q::HavqResult r = q::havq_forward(w_v, cb, q::HavqMode::Train);
        std::fill(sv.begin(), sv.end(), 0.0);
        for (std::size_t i = 0; i < cb.size(); ++i) {
            kernels::axpy(r.p[i], cb.entry(i), sv.data(), len);
        }
        for (std::size_t t = 0; t < len; ++t) {
            const std::size_t f = v * len + t;
            if (f < out.size()) out[f] = sv[t];
        }
    }
    return out;
}

void capture(const trainer::Layer& layer, LayerBase& b) {
    b.kind = layer.cfg.kind;
    b.w_q0 = layer.cache.w_q;
    switch (layer.cfg.kind) {
        case QuantKind::Float:
            break;
        case QuantKind::Lq:
            b.w0 = layer.W.value;
            b.lo0 = layer.clip.value[0];
            b.hi0 = layer.clip.value[1];
            break;
        case QuantKind::ProjVq: {
            b.w0 = layer.W.value;
            b.entries0 = layer.cb_entries.value;
            for (const q::ProjVqResult& r : layer.cache.pvq) {
                b.idx0.push_back(r.index);
                b.s0.push_back(r.s);
            }
            break;
        }
        case QuantKind::Havq:
            b.soft0 = soft_recon(layer);
            break;
        case QuantKind::Mixed: {
            b.choice = layer.cache.mixed_choice;
            if (b.choice == nas::Branch::VQ) {
                b.soft0 = soft_recon(layer);
            } else {
                b.w0 = layer.w_lq.value;
            }
            const nas::MixedLayer view = layer.mixed_view();
            b.p0 = nas::prob_vq(view.arch);
            const nas::Branch other = b.choice == nas::Branch::VQ
                                          ? nas::Branch::LQ
                                          : nas::Branch::VQ;
            const VecF other_wq =
                nas::quantize_branch(view, other, q::HavqMode::Infer).w_q;
            const VecF& vq =
                b.choice == nas::Branch::VQ ? layer.cache.w_q : other_wq;
            const VecF& lq =
                b.choice == nas::Branch::VQ ? other_wq : layer.cache.w_q;
            b.gate_diff.resize(layer.n_weights());
            for (std::size_t i = 0; i < b.gate_diff.size(); ++i) {
                b.gate_diff[i] = vq[i] - lq[i];
            }
            break;
        }
    }
}

VecF surrogate_wq(const trainer::Layer& layer, const LayerBase& b) {
    const std::size_t n = layer.n_weights();
    switch (b.kind) {
        case QuantKind::Float:
            return layer.W.value;
        case QuantKind::Lq: {
            const double lo = layer.clip.value[0], hi = layer.clip.value[1];
            VecF out(n);
            for (std::size_t i = 0; i < n; ++i) {
                out[i] = b.w_q0[i] + std::clamp(layer.W.value[i], lo, hi) -
                         std::clamp(b.w0[i], b.lo0, b.hi0);
            }
            return out;
        }
        case QuantKind::ProjVq: {
            const std::size_t len = layer.cfg.vec_len;
            VecF out = b.w_q0;
            for (std::size_t v = 0; v < b.idx0.size(); ++v) {
                for (std::size_t t = 0; t < len; ++t) {
                    const std::size_t f = v * len + t;
                    if (f >= n) break;
                    const std::size_t e = b.idx0[v] * len + t;
                    out[f] += (layer.W.value[f] - b.w0[f]) +
                              b.s0[v] * (layer.cb_entries.value[e] -
                                         b.entries0[e]);
                }
            }
            return out;
        }
        case QuantKind::Havq: {
            const VecF soft = soft_recon(layer);
            VecF out(n);
            for (std::size_t i = 0; i < n; ++i) {
                out[i] = b.w_q0[i] + soft[i] - b.soft0[i];
            }
            return out;
        }
        case QuantKind::Mixed: {
            VecF out(n);
            if (b.choice == nas::Branch::VQ) {
                const VecF soft = soft_recon(layer);
                for (std::size_t i = 0; i < n; ++i) {
                    out[i] = b.w_q0[i] + soft[i] - b.soft0[i];
                }
            } else {
                const double lo = layer.scalar_spec.clip_lo;
                const double hi = layer.scalar_spec.clip_hi;
                for (std::size_t i = 0; i < n; ++i) {
                    out[i] = b.w_q0[i] +
                             std::clamp(layer.w_lq.value[i], lo, hi) -
                             std::clamp(b.w0[i], lo, hi);
                }
            }
            nas::ArchParams a2;
            a2.logit_vq = layer.arch.value[0];
            a2.logit_lq = layer.arch.value[1];
            const double p = nas::prob_vq(a2);
            for (std::size_t i = 0; i < n; ++i) {
                out[i] += (p - b.p0) * b.gate_diff[i];
            }
            return out;
        }
    }
    return layer.W.value;
}

double surrogate_loss(const trainer::Model& m,
                      const std::vector<LayerBase>& bases, const VecF& x,
                      const std::vector<int>& labels, std::size_t batch) {
    VecF a = x;
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        const trainer::Layer& layer = m.layers[l];
        const VecF w_q = surrogate_wq(layer, bases[l]);
        VecF z(batch * layer.out_dim);
        for (std::size_t b = 0; b < batch; ++b) {
            const double* row = a.data() + b * layer.in_dim;
            for (std::size_t o = 0; o < layer.out_dim; ++o) {
                z[b * layer.out_dim + o] =
                    kernels::dot(w_q.data() + o * layer.in_dim, row,
                                 layer.in_dim) +
                    layer.bias.value[o];
            }
        }
        if (layer.relu) {
            for (double& v : z) v = v > 0.0 ? v : 0.0;
        }
        a = std::move(z);
    }
    return trainer::ce_loss(a, labels.data(), batch, m.output_dim(), nullptr)
        .ce;
}

void keep_clear_of(VecF& w, double lo, double hi) {
    for (double& v : w) {
        if (std::abs(v - lo) < 2.0 * kKinkMargin) v += 5e-3;
        if (std::abs(v - hi) < 2.0 * kKinkMargin) v += 5e-3;
    }
}

void check_e2e(Comparator& cmp, std::size_t instances, Rng& rng) {
    constexpr std::array<QuantKind, 5> kKinds = {
        QuantKind::Float, QuantKind::Lq, QuantKind::ProjVq, QuantKind::Havq,
        QuantKind::Mixed};
    const auto cfg_for = [](QuantKind k) {
        LayerQuantConfig c;
        c.kind = k;
        c.vec_len = 2;
        c.b_index = 1;
        c.b_scalar = 6;
        c.lq_bits = 6;
        return c;
    };

    for (std::size_t inst = 0; inst < instances; ++inst) {
        trainer::ModelConfig cfg;
        cfg.dims = {2, 3, 2};  // 17 float params; worst case 41 with mixed
        cfg.layers = {cfg_for(kKinds[inst % 5]),
                      cfg_for(kKinds[(inst / 5) % 5])};
        Rng model_rng = rng.fork(inst);
        trainer::Model m = trainer::build_model(cfg, model_rng);
        trainer::init_quantizers(m, model_rng);

        for (trainer::Layer& layer : m.layers) {
            if (layer.cfg.kind == QuantKind::Lq) {
                layer.clip.value = {-0.4, 0.4};
                keep_clear_of(layer.W.value, -0.4, 0.4);
            }
            if (layer.cfg.kind == QuantKind::Mixed) {
                layer.scalar_spec.clip_lo = -0.4;
                layer.scalar_spec.clip_hi = 0.4;
                keep_clear_of(layer.w_lq.value, -0.4, 0.4);
                layer.arch.value = {0.6 * model_rng.next_gaussian(),
                                    0.6 * model_rng.next_gaussian()};
            }
        }

        const std::size_t batch = 4;
        Rng data_rng = rng.fork(inst, 1);
        Rng nas_rng = rng.fork(inst, 2);
        VecF x, logits;
        std::vector<int> labels(batch);
        for (int attempt = 0; attempt < 200; ++attempt) {
            x = gaussian_vec(batch * m.input_dim(), data_rng);
            for (int& y : labels) {
                y = static_cast<int>(data_rng.uniform_index(m.output_dim()));
            }
            logits = trainer::forward(m, x, batch, trainer::RunMode::Train,
                                      nas_rng);
            // ReLU kink margin on the hidden pre-activations.
            double min_abs = 1e300;
            for (const double z : m.layers[0].cache.z) {
                min_abs = std::min(min_abs, std::abs(z));
            }
            if (min_abs >= kKinkMargin) break;
        }

        VecF d_logits;
        trainer::ce_loss(logits, labels.data(), batch, m.output_dim(),
                         &d_logits);
        trainer::zero_grads(m);
        trainer::backward(m, d_logits);

        std::vector<LayerBase> bases(m.layers.size());
        for (std::size_t l = 0; l < m.layers.size(); ++l) {
            capture(m.layers[l], bases[l]);
        }

        for (trainer::Param* p : trainer::collect_params(m)) {
            for (std::size_t i = 0; i < p->value.size(); ++i) {
                const double save = p->value[i];
                p->value[i] = save + kStep;
                const double fp = surrogate_loss(m, bases, x, labels, batch);
                p->value[i] = save - kStep;
                const double fm = surrogate_loss(m, bases, x, labels, batch);
                p->value[i] = save;
                cmp.note(p->grad[i], (fp - fm) / (2.0 * kStep));
            }
        }
    }
}

}  // namespace

const std::vector<std::string>& suite_names() {
    static const std::vector<std::string> kNames = {
        "lq_backward", "projvq_backward", "havq_backward", "arch_backward",
        "e2e"};
    return kNames;
}

SuiteResult run_suite(const std::string& op, const GradcheckOpts& opts) {
    if (opts.instances == 0) {
        throw ConfigError("gradcheck: instances must be >= 1");
    }
    const auto& names = suite_names();
    const auto it = std::find(names.begin(), names.end(), op);
    if (it == names.end()) {
        std::string valid;
        for (const auto& n : names) {
            if (!valid.empty()) valid += ", ";
            valid += n;
        }
        throw ConfigError("unknown gradcheck op '" + op + "' (valid: " + valid +
                          ")");
    }
    const auto idx = static_cast<std::size_t>(it - names.begin());

    Comparator cmp;
    cmp.corrupt = opts.corrupt;
    Rng root(opts.seed);
    Rng rng = root.fork(idx);
    switch (idx) {
        case 0: check_lq(cmp, opts.instances, rng); break;
        case 1: check_projvq(cmp, opts.instances, rng); break;
        case 2: check_havq(cmp, opts.instances, rng); break;
        case 3: check_arch(cmp, opts.instances, rng); break;
        case 4: check_e2e(cmp, opts.instances, rng); break;
        default: break;
    }

    SuiteResult res;
    res.op = op;
    res.instances = opts.instances;
    res.max_rel_err = cmp.max_rel;
    res.tolerance = idx == 4 ? kEndToEndTol : kUnitTol;
    res.pass = cmp.max_rel <= res.tolerance;
    return res;
}

std::vector<SuiteResult> run_all(const GradcheckOpts& opts) {
    std::vector<SuiteResult> out;
    out.reserve(suite_names().size());
    for (const std::string& op : suite_names()) {
        out.push_back(run_suite(op, opts));
    }
    return out;
}

}  // namespace vqqat::gradcheck
