#include "vqqat/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <sstream>
#include <string>

#include "vqqat/errors.hpp"
#include "vqqat/kernels.hpp"
#include "vqqat/numerics.hpp"

namespace vqqat::trainer {

namespace cbk = vqqat::codebook;

namespace {

// Substream keys off the run seed; position-independent by Rng::fork design.
constexpr std::uint64_t kShuffleStream = 0x53485546;  // data shuffling
constexpr std::uint64_t kNasStream = 0x4E415342;      // branch sampling

std::string fmt(double v) {
    // Shortest representation that parses back to the same double, so CSV
    // values are both byte-stable and lossless.
    return nlohmann::json(v).dump();
}

}  // namespace

double cosine_lr(std::size_t t, std::size_t total, double lr0) {
    if (total == 0) throw ConfigError("cosine_lr: total epochs must be >= 1");
    if (t >= total) return 0.0;
    const double phase = std::numbers::pi * static_cast<double>(t) /
                         static_cast<double>(total);
    return 0.5 * lr0 * (1.0 + std::cos(phase));
}

void sgd_step(const std::vector<Param*>& params, double lr, double momentum,
              double weight_decay) {
    for (Param* p : params) {
        if (!p->active) continue;
        const double step = lr * p->lr_scale;
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double g =
                p->grad[i] + (p->decay ? weight_decay * p->value[i] : 0.0);
            p->momentum[i] = momentum * p->momentum[i] + g;
            p->value[i] -= step * p->momentum[i];
        }
    }
}

namespace {

double mixed_storage_bits(const Model& m) {
    double bits = 0.0;
    for (const Layer& l : m.layers) {
        if (l.cfg.kind == QuantKind::Mixed) {
            bits += nas::expected_storage(l.mixed_view());
        }
    }
    return bits;
}

void add_storage_arch_grads(Model& m, double beta) {
    if (beta == 0.0) return;
    for (Layer& l : m.layers) {
        if (l.cfg.kind != QuantKind::Mixed || l.arch_state.frozen) continue;
        const nas::MixedLayer view = l.mixed_view();
        const double d_p = beta * nas::storage_grad_p_vq(view);
        const nas::ArchGrad g = nas::arch_grad_from_dp(d_p, view.arch);
        l.arch.grad[0] += g.d_logit_vq;
        l.arch.grad[1] += g.d_logit_lq;
    }
}

void collect_codebook_stats(Model& m, MetricsRow& row) {
    for (Layer& l : m.layers) {
        if (!l.has_codebook()) continue;
        const cbk::Codebook cb = l.codebook_view();
        const auto gw = cbk::group(l.W.value, {l.out_dim, l.in_dim},
                                   l.cfg.vec_len);
        cbk::UtilizationStats st;
        if (!l.frozen_assign.empty()) {
            st.counts.assign(cb.size(), 0);
            for (const std::size_t idx : l.frozen_assign) ++st.counts[idx];
            for (const std::size_t c : st.counts) {
                if (c == 0) {
                    ++st.dead_count;
                    continue;
                }
                const double p = static_cast<double>(c) /
                                 static_cast<double>(l.frozen_assign.size());
                st.entropy -= p * std::log(p);
            }
        } else {
            st = cbk::utilization(cb, gw);
        }
        row.entropy.emplace_back(l.name, st.entropy);
        row.dead.emplace_back(l.name, st.dead_count);
    }
}

void run_budget_check(Model& m, const NasConfig& nas_cfg,
                      nas::BudgetController& budget) {
    std::vector<nas::MixedLayer> views;
    std::vector<Layer*> owners;
    for (Layer& l : m.layers) {
        if (l.cfg.kind != QuantKind::Mixed) continue;
        views.push_back(l.mixed_view());
        owners.push_back(&l);
    }
    if (views.empty()) return;
    budget.target_avg_bits = nas_cfg.target_avg_bits;
    std::vector<nas::MixedLayer*> ptrs;
    ptrs.reserve(views.size());
    for (auto& v : views) ptrs.push_back(&v);
    nas::update_budget(budget, ptrs);
    for (std::size_t i = 0; i < views.size(); ++i) {
        owners[i]->arch_state.frozen = views[i].arch.frozen;
        owners[i]->arch_state.frozen_choice = views[i].arch.frozen_choice;
    }
}

}  // namespace

EvalStats evaluate(Model& m, const Dataset& data, std::size_t batch_size) {
    if (batch_size == 0) throw ConfigError("evaluate: batch_size must be >= 1");
    if (data.n == 0) return {};
    Rng unused(0);
    const std::size_t classes = m.output_dim();
    double ce_sum = 0.0;
    std::size_t correct = 0;
    VecF x;
    for (std::size_t start = 0; start < data.n; start += batch_size) {
        const std::size_t b = std::min(batch_size, data.n - start);
        x.assign(data.features.begin() + start * data.d,
                 data.features.begin() + (start + b) * data.d);
        const VecF logits = forward(m, x, b, RunMode::Eval, unused);
        const LossStats st =
            ce_loss(logits, data.labels.data() + start, b, classes, nullptr);
        ce_sum += st.ce * static_cast<double>(b);
        correct += st.correct;
    }
    return {ce_sum / static_cast<double>(data.n),
            static_cast<double>(correct) / static_cast<double>(data.n)};
}

MetricsRow train_epoch(Model& m, const Dataset& train_data,
                       const Dataset& eval_data, const OptimConfig& opt,
                       std::size_t epoch, const NasConfig& nas_cfg,
                       nas::BudgetController& budget, const Rng& root,
                       std::vector<int>* predictions) {
    if (opt.batch_size == 0) {
        throw ConfigError("train: batch_size must be >= 1");
    }
    if (train_data.n == 0) throw ConfigError("train: empty training set");
    if (train_data.d != m.input_dim()) {
        throw ConfigError("train: dataset dimension " +
                          std::to_string(train_data.d) +
                          " does not match model input " +
                          std::to_string(m.input_dim()));
    }
    const std::size_t classes = m.output_dim();
    const double lr = cosine_lr(epoch, opt.epochs, opt.lr0);
    const double lambda = opt.weight_decay / 2.0;
    const double beta = nas_cfg.enabled ? nas_cfg.beta : 0.0;

    Rng shuffle_rng = root.fork(kShuffleStream, epoch);
    Rng nas_root = root.fork(kNasStream);
    const auto perm = permutation(train_data.n, shuffle_rng);
    if (predictions) predictions->assign(train_data.n, -1);

    double loss_sum = 0.0;
    std::size_t correct = 0;
    VecF x, d_logits, row_buf(classes);
    std::vector<int> y;
    for (std::size_t start = 0; start < train_data.n;
         start += opt.batch_size) {
        const std::size_t b = std::min(opt.batch_size, train_data.n - start);
        x.resize(b * train_data.d);
        y.resize(b);
        for (std::size_t i = 0; i < b; ++i) {
            const std::size_t src = perm[start + i];
            std::copy(train_data.sample(src), train_data.sample(src) +
                          train_data.d,
                      x.begin() + i * train_data.d);
            y[i] = train_data.labels[src];
        }

        const VecF logits = forward(m, x, b, RunMode::Train, nas_root);
        const LossStats st = ce_loss(logits, y.data(), b, classes, &d_logits);
        const double storage = nas_cfg.enabled ? mixed_storage_bits(m) : 0.0;
        const double total =
            nas::total_loss(st.ce, decayed_sq_norm(m), storage, lambda, beta);
        if (!std::isfinite(total) || !numerics::all_finite(logits)) {
            std::string name = first_nonfinite_param(m);
            if (name.empty()) name = "logits";
            throw NumericError("training aborted: non-finite values in tensor '" +
                               name + "'");
        }

        if (predictions) {
            for (std::size_t i = 0; i < b; ++i) {
                std::copy(logits.begin() + i * classes,
                          logits.begin() + (i + 1) * classes, row_buf.begin());
                (*predictions)[perm[start + i]] = static_cast<int>(
                    numerics::argmax_tiebreak_low(row_buf));
            }
        }
        correct += st.correct;
        loss_sum += total * static_cast<double>(b);

        zero_grads(m);
        backward(m, d_logits);
        add_storage_arch_grads(m, beta);
        sgd_step(collect_params(m), lr, opt.momentum, opt.weight_decay);
        post_step(m);
        ++m.global_step;
    }

    if (nas_cfg.enabled) run_budget_check(m, nas_cfg, budget);

    MetricsRow row;
    row.epoch = epoch;
    row.train_loss = loss_sum / static_cast<double>(train_data.n);
    row.train_acc =
        static_cast<double>(correct) / static_cast<double>(train_data.n);
    row.eval_acc = evaluate(m, eval_data, opt.batch_size).acc;
    row.avg_bits = model_avg_bits(m);
    row.lr = lr;
    collect_codebook_stats(m, row);
    return row;
}

std::vector<MetricsRow> train(Model& m, const Dataset& train_data,
                              const Dataset& eval_data, const OptimConfig& opt,
                              const NasConfig& nas_cfg,
                              nas::BudgetController& budget, const Rng& root) {
    if (opt.epochs == 0) throw ConfigError("train: epochs must be >= 1");
    for (Layer& l : m.layers) {
        if (l.has_codebook()) l.cb_entries.lr_scale = opt.codebook_lr_scale;
    }
    std::vector<MetricsRow> rows;
    rows.reserve(opt.epochs);
    for (std::size_t e = 0; e < opt.epochs; ++e) {
        rows.push_back(
            train_epoch(m, train_data, eval_data, opt, e, nas_cfg, budget, root));
    }
    return rows;
}

std::string metrics_csv_header(const Model& m) {
    std::string h = "epoch,train_loss,train_acc,eval_acc,avg_bits,lr";
    for (const Layer& l : m.layers) {
        if (!l.has_codebook()) continue;
        h += ",entropy_" + l.name + ",dead_" + l.name;
    }
    return h;
}

std::string metrics_csv_row(const MetricsRow& r) {
    std::ostringstream out;
    out << r.epoch << ',' << fmt(r.train_loss) << ',' << fmt(r.train_acc)
        << ',' << fmt(r.eval_acc) << ',' << fmt(r.avg_bits) << ','
        << fmt(r.lr);
    for (std::size_t i = 0; i < r.entropy.size(); ++i) {
        out << ',' << fmt(r.entropy[i].second) << ',' << r.dead[i].second;
    }
    return out.str();
}

nlohmann::json checkpoint_to_json(const Model& m, const OptimConfig& opt,
                                  const nas::BudgetController& budget,
                                  std::size_t epoch, std::uint64_t seed) {
    return {{"schema", 1},
            {"model", model_to_json(m)},
            {"optim",
             {{"lr0", opt.lr0},
              {"momentum", opt.momentum},
              {"weight_decay", opt.weight_decay},
              {"codebook_lr_scale", opt.codebook_lr_scale},
              {"epochs", opt.epochs},
              {"batch_size", opt.batch_size}}},
            {"budget",
             {{"target_avg_bits", budget.target_avg_bits},
              {"current_avg_bits", budget.current_avg_bits},
              {"triggered", budget.triggered}}},
            {"epoch", epoch},
            {"rng", {{"seed", seed}, {"state", Rng(seed).state()}}}};
}

Checkpoint checkpoint_from_json(const nlohmann::json& j) {
    try {
        Checkpoint ck;
        ck.model = model_from_json(j.at("model"));
        const auto& o = j.at("optim");
        ck.optim.lr0 = o.at("lr0").get<double>();
        ck.optim.momentum = o.at("momentum").get<double>();
        ck.optim.weight_decay = o.at("weight_decay").get<double>();
        ck.optim.codebook_lr_scale = o.at("codebook_lr_scale").get<double>();
        ck.optim.epochs = o.at("epochs").get<std::size_t>();
        ck.optim.batch_size = o.at("batch_size").get<std::size_t>();
        const auto& b = j.at("budget");
        ck.budget.target_avg_bits = b.at("target_avg_bits").get<double>();
        ck.budget.current_avg_bits = b.at("current_avg_bits").get<double>();
        ck.budget.triggered = b.at("triggered").get<bool>();
        ck.epoch = j.at("epoch").get<std::size_t>();
        ck.seed = j.at("rng").at("seed").get<std::uint64_t>();
        return ck;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed checkpoint: ") + e.what());
    }
}

}  // namespace vqqat::trainer
