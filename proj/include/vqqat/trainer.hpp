#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vqqat/dataset.hpp"
#include "vqqat/model.hpp"
#include "vqqat/nas.hpp"

namespace vqqat::trainer {

struct OptimConfig {
    double lr0 = 0.1;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    double codebook_lr_scale = 1.0;
    std::size_t epochs = 20;
    std::size_t batch_size = 32;
};

struct NasConfig {
    bool enabled = false;
    double beta = 0.0;            // per-bit storage pressure
    double target_avg_bits = 0.0; // budget over searched (mixed) layers
};

// 0.5 * lr0 * (1 + cos(pi t / T)); t past T clamps to zero.
double cosine_lr(std::size_t t, std::size_t total, double lr0);

// v <- mu v + (g + wd p); p <- p - lr v. Weight decay skips parameters with
// decay=false (codebooks, clips, arch logits); inactive parameters (the
// unsampled branch of a mixed layer) are left untouched entirely.
void sgd_step(const std::vector<Param*>& params, double lr, double momentum,
              double weight_decay);

struct MetricsRow {
    std::size_t epoch = 0;
    double train_loss = 0.0;  // per-sample mean of the full objective
    double train_acc = 0.0;
    double eval_acc = 0.0;
    double avg_bits = 0.0;
    double lr = 0.0;
    // One entry per codebook-bearing layer, in layer order.
    std::vector<std::pair<std::string, double>> entropy;
    std::vector<std::pair<std::string, std::size_t>> dead;
};

std::string metrics_csv_header(const Model& m);
std::string metrics_csv_row(const MetricsRow& r);

struct EvalStats {
    double loss = 0.0;  // mean cross-entropy
    double acc = 0.0;
};

// Full deterministic pass in inference quantization.
EvalStats evaluate(Model& m, const Dataset& data, std::size_t batch_size);

// One epoch: deterministic shuffle from root.fork(kShuffleStream, epoch),
// mini-batch SGD through the quantizer backward contracts, beta-weighted
// storage gradient on arch logits, budget check at the epoch end. The
// reported lambda equals weight_decay/2 so the logged objective matches the
// applied update exactly. Aborts with NumericError naming the first
// non-finite tensor. When `predictions` is non-null it receives the online
// per-sample predicted class (original dataset order).
MetricsRow train_epoch(Model& m, const Dataset& train_data,
                       const Dataset& eval_data, const OptimConfig& opt,
                       std::size_t epoch, const NasConfig& nas_cfg,
                       nas::BudgetController& budget, const Rng& root,
                       std::vector<int>* predictions = nullptr);

// Runs opt.epochs epochs and returns one MetricsRow per epoch.
std::vector<MetricsRow> train(Model& m, const Dataset& train_data,
                              const Dataset& eval_data, const OptimConfig& opt,
                              const NasConfig& nas_cfg,
                              nas::BudgetController& budget, const Rng& root);

// Checkpoint = model (parameters, codebooks, arch state, momentum) plus
// optimizer config, budget state, epoch counter, and the rng seed.
nlohmann::json checkpoint_to_json(const Model& m, const OptimConfig& opt,
                                  const nas::BudgetController& budget,
                                  std::size_t epoch, std::uint64_t seed);

struct Checkpoint {
    Model model;
    OptimConfig optim;
    nas::BudgetController budget;
    std::size_t epoch = 0;
    std::uint64_t seed = 0;
};

Checkpoint checkpoint_from_json(const nlohmann::json& j);  // ParseError

}  // namespace vqqat::trainer
