#include "vqqat/cli.hpp"

#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vqqat/config.hpp"
#include "vqqat/errors.hpp"
#include "vqqat/gradcheck.hpp"
#include "vqqat/model.hpp"
#include "vqqat/nas.hpp"
#include "vqqat/trainer.hpp"

namespace vqqat::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using numerics::Rng;
using numerics::VecF;

namespace {

// Per-purpose substreams forked from the run seed, so a single seed pins the
// whole experiment while each consumer stays statistically independent.
constexpr std::uint64_t kModelStream = 1;
constexpr std::uint64_t kTrainDataStream = 2;
constexpr std::uint64_t kEvalDataStream = 3;
constexpr std::uint64_t kTrainStream = 4;
constexpr std::uint64_t kPtqStream = 5;

void print_error(const std::string& msg) {
    std::cerr << "error: " << msg << "\n";
}

void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    out.flush();
    if (!out) throw ConfigError("cannot write file: " + path.string());
}

json read_json_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open file: " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ParseError("invalid json in " + path + ": " + std::string(e.what()));
    }
}

trainer::Checkpoint load_checkpoint(const std::string& path) {
    return trainer::checkpoint_from_json(read_json_file(path));
}

trainer::Dataset make_dataset(const RunConfig& cfg, bool eval_split,
                              const Rng& root) {
    const DataConfig& d = cfg.data;
    if (d.source == "idx") {
        if (eval_split) {
            if (d.eval_images.empty()) return {};
            return trainer::load_idx(d.eval_images, d.eval_labels);
        }
        return trainer::load_idx(d.images, d.labels);
    }
    const std::size_t n = eval_split ? d.n_eval : d.n_train;
    if (n == 0) return {};
    trainer::SyntheticSpec spec;
    spec.n = n;
    spec.d = d.d;
    spec.classes = d.classes;
    spec.separation = d.separation;
    spec.spread = d.spread;
    Rng rng = root.fork(eval_split ? kEvalDataStream : kTrainDataStream);
    return trainer::make_synthetic(spec, rng);
}

std::string metrics_csv_text(const trainer::Model& m,
                             const std::vector<trainer::MetricsRow>& rows) {
    std::string text = trainer::metrics_csv_header(m);
    text += '\n';
    for (const trainer::MetricsRow& r : rows) {
        text += trainer::metrics_csv_row(r);
        text += '\n';
    }
    return text;
}

json arch_report_json(const trainer::Model& m,
                      const nas::BudgetController& budget,
                      const trainer::NasConfig& nas_cfg) {
    json layers = json::array();
    for (const trainer::Layer& layer : m.layers) {
        if (layer.cfg.kind != trainer::QuantKind::Mixed) continue;
        const nas::MixedLayer view = layer.mixed_view();
        const double p = nas::prob_vq(view.arch);
        const nas::Branch choice =
            view.arch.frozen ? view.arch.frozen_choice
                             : (p > 0.5 ? nas::Branch::VQ : nas::Branch::LQ);
        layers.push_back(
            {{"layer", layer.name},
             {"p_vq", p},
             {"choice", nas::branch_name(choice)},
             {"frozen", view.arch.frozen},
             {"expected_bits_per_weight",
              nas::expected_storage(view) / double(view.n_weights())},
             {"weights", layer.n_weights()}});
    }
    return json{{"schema", 1},
                {"beta", nas_cfg.beta},
                {"target_avg_bits", budget.target_avg_bits},
                {"current_avg_bits", budget.current_avg_bits},
                {"triggered", budget.triggered},
                {"layers", layers}};
}

int cmd_train(const RunConfig& cfg) {
    const Rng root(cfg.seed);
    const trainer::Dataset train_set = make_dataset(cfg, false, root);
    const trainer::Dataset eval_set = make_dataset(cfg, true, root);

    Rng model_rng = root.fork(kModelStream);
    trainer::Model m = trainer::build_model(cfg.model, model_rng);
    trainer::init_quantizers(m, model_rng);

    nas::BudgetController budget;
    const Rng train_rng = root.fork(kTrainStream);
    const std::vector<trainer::MetricsRow> rows =
        trainer::train(m, train_set, eval_set, cfg.optim, cfg.nas, budget,
                       train_rng);

    const fs::path out(cfg.out_dir);
    fs::create_directories(out);
    write_text_file(out / "metrics.csv", metrics_csv_text(m, rows));
    write_text_file(out / "config.json", config_to_json(cfg).dump(2) + "\n");
    write_text_file(out / "checkpoint.json",
                    trainer::checkpoint_to_json(m, cfg.optim, budget,
                                                cfg.optim.epochs, cfg.seed)
                            .dump(2) +
                        "\n");
    if (cfg.nas.enabled) {
        write_text_file(out / "arch_report.json",
                        arch_report_json(m, budget, cfg.nas).dump(2) + "\n");
    }

    const trainer::MetricsRow& last = rows.back();
    std::cout << "trained " << rows.size()
              << " epochs: train_acc=" << last.train_acc
              << " eval_acc=" << last.eval_acc << " avg_bits=" << last.avg_bits
              << "\n"
              << "wrote " << (out / "metrics.csv").string() << ", "
              << (out / "checkpoint.json").string() << "\n";
    return 0;
}

int cmd_quantize(const RunConfig& cfg, const std::string& checkpoint_path) {
    const trainer::Checkpoint ck = load_checkpoint(checkpoint_path);
    if (cfg.model.dims != ck.model.cfg.dims) {
        throw ConfigError(
            "quantize: model dims in the config do not match the checkpoint");
    }

    trainer::ModelConfig qcfg;
    qcfg.dims = ck.model.cfg.dims;
    qcfg.layers = cfg.model.layers;
    Rng scratch(cfg.seed);  // build_model's init draws are overwritten below
    trainer::Model qm = trainer::build_model(qcfg, scratch);
    for (std::size_t l = 0; l < qm.layers.size(); ++l) {
        qm.layers[l].W.value = ck.model.layers[l].W.value;
        qm.layers[l].bias.value = ck.model.layers[l].bias.value;
    }
    const Rng root(cfg.seed);
    Rng ptq_rng = root.fork(kPtqStream);
    trainer::init_quantizers(qm, ptq_rng);

    // One inference pass materializes every layer's reconstruction exactly as
    // eval-time forwards will see it.
    Rng unused(0);
    const VecF probe(qm.input_dim(), 0.0);
    trainer::forward(qm, probe, 1, trainer::RunMode::Eval, unused);

    json layers = json::array();
    for (const trainer::Layer& layer : qm.layers) {
        const std::size_t n = layer.n_weights();
        double mse = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double diff = layer.W.value[i] - layer.cache.w_q[i];
            mse += diff * diff;
        }
        mse /= double(n);
        const double bits = trainer::layer_storage_bits(layer) / double(n);

        json entry{{"layer", layer.name},
                   {"kind", trainer::quant_kind_name(layer.cfg.kind)},
                   {"weights", n},
                   {"mse", mse},
                   {"bits_per_weight", bits},
                   {"compression_ratio", 32.0 / bits}};
        switch (layer.cfg.kind) {
            case trainer::QuantKind::Float:
                break;
            case trainer::QuantKind::Lq:
                entry["clip"] = {layer.clip.value[0], layer.clip.value[1]};
                break;
            case trainer::QuantKind::ProjVq: {
                entry["codebook"] = codebook::codebook_to_json(layer.codebook_view());
                json idx = json::array();
                json scalars = json::array();
                for (const quantizers::ProjVqResult& r : layer.cache.pvq) {
                    idx.push_back(r.index);
                    scalars.push_back(r.s);
                }
                entry["assignments"] = std::move(idx);
                entry["scalars"] = std::move(scalars);
                break;
            }
            case trainer::QuantKind::Havq: {
                entry["codebook"] = codebook::codebook_to_json(layer.codebook_view());
                json idx = json::array();
                if (!layer.frozen_assign.empty()) {
                    for (std::size_t a : layer.frozen_assign) idx.push_back(a);
                } else {
                    for (const quantizers::HavqResult& r : layer.cache.havq) {
                        idx.push_back(r.index);
                    }
                }
                entry["assignments"] = std::move(idx);
                break;
            }
            case trainer::QuantKind::Mixed: {
                entry["choice"] = nas::branch_name(layer.cache.mixed_choice);
                if (layer.cache.mixed_choice == nas::Branch::VQ) {
                    entry["codebook"] =
                        codebook::codebook_to_json(layer.codebook_view());
                    json idx = json::array();
                    for (const quantizers::HavqResult& r :
                         layer.cache.mixed.vq_results) {
                        idx.push_back(r.index);
                    }
                    entry["assignments"] = std::move(idx);
                } else {
                    entry["clip"] = {layer.scalar_spec.clip_lo,
                                     layer.scalar_spec.clip_hi};
                }
                break;
            }
        }
        layers.push_back(std::move(entry));
        std::cout << "layer=" << layer.name
                  << " kind=" << trainer::quant_kind_name(layer.cfg.kind)
                  << " mse=" << mse << " bits_per_weight=" << bits << "\n";
    }

    const double avg_bits = trainer::model_avg_bits(qm);
    const json report{{"schema", 1},
                      {"checkpoint", checkpoint_path},
                      {"avg_bits_per_weight", avg_bits},
                      {"layers", layers}};

    const fs::path out(cfg.out_dir);
    fs::create_directories(out);
    write_text_file(out / "quantized.json",
                    trainer::checkpoint_to_json(qm, ck.optim, ck.budget,
                                                ck.epoch, cfg.seed)
                            .dump(2) +
                        "\n");
    write_text_file(out / "ptq_report.json", report.dump(2) + "\n");
    std::cout << "avg_bits_per_weight=" << avg_bits << "\n"
              << "wrote " << (out / "quantized.json").string() << ", "
              << (out / "ptq_report.json").string() << "\n";
    return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& checkpoint_path,
             const std::string& split) {
    trainer::Checkpoint ck = load_checkpoint(checkpoint_path);
    const Rng root(cfg.seed);
    const trainer::Dataset data = make_dataset(cfg, split == "eval", root);
    if (data.n == 0) {
        throw ConfigError("eval: the '" + split + "' split is empty");
    }
    const trainer::EvalStats stats =
        trainer::evaluate(ck.model, data, cfg.optim.batch_size);
    const json out{{"split", split},
                   {"n", data.n},
                   {"loss", stats.loss},
                   {"acc", stats.acc},
                   {"avg_bits_per_weight", trainer::model_avg_bits(ck.model)}};
    std::cout << out.dump() << "\n";
    return 0;
}

int cmd_gradcheck(const GradcheckSection& section, std::uint64_t seed) {
    gradcheck::GradcheckOpts opts;
    opts.instances = section.instances;
    opts.seed = seed;
    opts.corrupt = section.corrupt;
    const std::vector<std::string> ops =
        section.ops.empty() ? gradcheck::suite_names() : section.ops;

    std::vector<std::string> offenders;
    for (const std::string& op : ops) {
        const gradcheck::SuiteResult r = gradcheck::run_suite(op, opts);
        char err_buf[32];
        char tol_buf[32];
        std::snprintf(err_buf, sizeof err_buf, "%.6e", r.max_rel_err);
        std::snprintf(tol_buf, sizeof tol_buf, "%.0e", r.tolerance);
        std::cout << "op=" << r.op << " instances=" << r.instances
                  << " max_rel_err=" << err_buf << " tolerance=" << tol_buf
                  << " status=" << (r.pass ? "ok" : "FAIL") << "\n";
        if (!r.pass) offenders.push_back(r.op);
    }
    if (!offenders.empty()) {
        std::string joined;
        for (const std::string& op : offenders) {
            if (!joined.empty()) joined += ", ";
            joined += op;
        }
        print_error("gradient check exceeded tolerance for: " + joined);
        return 1;
    }
    return 0;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};

CsvTable read_metrics_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open file: " + path.string());
    CsvTable table;
    std::string line;
    if (!std::getline(in, line)) {
        throw ParseError("empty metrics file: " + path.string());
    }
    table.header = split_csv(line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const std::vector<std::string> cells = split_csv(line);
        if (cells.size() != table.header.size()) {
            throw ParseError("malformed metrics row in " + path.string());
        }
        std::vector<double> row;
        row.reserve(cells.size());
        for (const std::string& cell : cells) {
            try {
                row.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw ParseError("malformed metrics value in " + path.string());
            }
        }
        table.rows.push_back(std::move(row));
    }
    if (table.rows.empty()) {
        throw ParseError("no metric rows in " + path.string());
    }
    return table;
}

int cmd_report(const std::string& run_dir) {
    const fs::path dir(run_dir);
    const fs::path csv_path = dir / "metrics.csv";
    const fs::path ck_path = dir / "checkpoint.json";
    if (!fs::exists(csv_path)) {
        throw ConfigError("missing metrics.csv in " + run_dir);
    }
    if (!fs::exists(ck_path)) {
        throw ConfigError("missing checkpoint.json in " + run_dir);
    }
    const CsvTable table = read_metrics_csv(csv_path);
    const trainer::Checkpoint ck = load_checkpoint(ck_path.string());

    const auto col = [&table, &csv_path](const std::string& name) {
        for (std::size_t i = 0; i < table.header.size(); ++i) {
            if (table.header[i] == name) return i;
        }
        throw ParseError(csv_path.string() + " is missing column '" + name +
                         "'");
    };
    const std::vector<double>& last = table.rows.back();
    const json final_row{
        {"epoch", std::size_t(last[col("epoch")])},
        {"train_loss", last[col("train_loss")]},
        {"train_acc", last[col("train_acc")]},
        {"eval_acc", last[col("eval_acc")]},
        {"avg_bits", last[col("avg_bits")]},
        {"lr", last[col("lr")]}};

    json per_layer = json::array();
    for (const trainer::Layer& layer : ck.model.layers) {
        per_layer.push_back(
            {{"layer", layer.name},
             {"kind", trainer::quant_kind_name(layer.cfg.kind)},
             {"weights", layer.n_weights()},
             {"bits_per_weight",
              trainer::layer_storage_bits(layer) / double(layer.n_weights())}});
    }

    // Codebook-health trajectories: every column past the six fixed ones is a
    // per-layer entropy_* or dead_* series.
    json utilization = json::object();
    for (std::size_t i = 6; i < table.header.size(); ++i) {
        json series = json::array();
        for (const std::vector<double>& row : table.rows) {
            series.push_back(row[i]);
        }
        utilization[table.header[i]] = std::move(series);
    }

    json summary{{"schema", 1},
                 {"epochs", table.rows.size()},
                 {"final", final_row},
                 {"bits_per_weight", trainer::model_avg_bits(ck.model)},
                 {"per_layer", per_layer},
                 {"utilization", utilization}};
    const fs::path arch_path = dir / "arch_report.json";
    if (fs::exists(arch_path)) {
        summary["arch"] = read_json_file(arch_path.string());
    }

    write_text_file(dir / "summary.json", summary.dump(2) + "\n");
    std::cout << summary.dump(2) << "\n";
    return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"vector-quantization-aware training workbench"};
    app.require_subcommand(1);

    std::string config_path;
    std::uint64_t seed = 0;
    std::string out_dir;
    CLI::Option* config_opt =
        app.add_option("--config", config_path, "run configuration json");
    CLI::Option* seed_opt =
        app.add_option("--seed", seed, "override the config seed");
    CLI::Option* out_opt =
        app.add_option("--out", out_dir, "override the config output directory");

    std::string checkpoint_path;
    std::string split = "eval";
    std::vector<std::string> ops;
    std::size_t instances = 0;
    bool corrupt = false;
    std::string run_dir;

    CLI::App* train_cmd =
        app.add_subcommand("train", "quantization-aware training run");
    CLI::App* quant_cmd = app.add_subcommand(
        "quantize", "post-training quantization of a checkpoint");
    quant_cmd->add_option("--checkpoint", checkpoint_path,
                          "checkpoint whose float weights get quantized")
        ->required();
    CLI::App* eval_cmd =
        app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
    eval_cmd->add_option("--checkpoint", checkpoint_path,
                         "checkpoint to evaluate")
        ->required();
    eval_cmd->add_option("--split", split, "dataset split (train or eval)")
        ->check(CLI::IsMember({"train", "eval"}));
    CLI::App* gc_cmd =
        app.add_subcommand("gradcheck", "finite-difference gradient audit");
    gc_cmd->add_option("--op", ops, "suite selection (default: all suites)");
    CLI::Option* instances_opt = gc_cmd->add_option(
        "--instances", instances, "random instances per suite");
    gc_cmd->add_flag("--corrupt", corrupt,
                     "corrupt the fixture first (negative control)");
    CLI::App* report_cmd =
        app.add_subcommand("report", "summarize a finished run directory");
    report_cmd
        ->add_option("run_dir", run_dir,
                     "directory holding metrics.csv and checkpoint.json")
        ->required();

    for (CLI::App* sub : {train_cmd, quant_cmd, eval_cmd, gc_cmd, report_cmd}) {
        sub->fallthrough();
    }

    std::vector<std::string> argv_storage;
    argv_storage.reserve(args.size() + 1);
    argv_storage.emplace_back("vqqat");
    argv_storage.insert(argv_storage.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    argv.reserve(argv_storage.size());
    for (const std::string& s : argv_storage) argv.push_back(s.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        print_error(e.what());
        return 2;
    }

    try {
        RunConfig cfg;
        const bool have_config = config_opt->count() > 0;
        if (have_config) cfg = load_config(config_path);
        if (seed_opt->count() > 0) cfg.seed = seed;
        if (out_opt->count() > 0) cfg.out_dir = out_dir;

        const auto need_config = [have_config](const char* cmd) {
            if (!have_config) {
                throw ConfigError(std::string(cmd) + " requires --config");
            }
        };

        if (train_cmd->parsed()) {
            need_config("train");
            return cmd_train(cfg);
        }
        if (quant_cmd->parsed()) {
            need_config("quantize");
            return cmd_quantize(cfg, checkpoint_path);
        }
        if (eval_cmd->parsed()) {
            need_config("eval");
            return cmd_eval(cfg, checkpoint_path, split);
        }
        if (gc_cmd->parsed()) {
            GradcheckSection section = cfg.gradcheck;
            if (!ops.empty()) section.ops = ops;
            if (instances_opt->count() > 0) section.instances = instances;
            if (corrupt) section.corrupt = true;
            const std::uint64_t gc_seed = have_config || seed_opt->count() > 0
                                              ? cfg.seed
                                              : gradcheck::GradcheckOpts{}.seed;
            return cmd_gradcheck(section, gc_seed);
        }
        if (report_cmd->parsed()) {
            return cmd_report(run_dir);
        }
        return 2;  // unreachable: require_subcommand(1)
    } catch (const ParseError& e) {
        print_error(e.what());
        return 2;
    } catch (const ConfigError& e) {
        print_error(e.what());
        return 2;
    } catch (const NumericError& e) {
        print_error(e.what());
        return 3;
    } catch (const std::exception& e) {
        print_error(e.what());
        return 2;
    }
}

int run(int argc, const char* const* argv) {
    std::vector<std::string> args;
    if (argc > 1) args.assign(argv + 1, argv + argc);
    return run(args);
}

}  // namespace vqqat::cli
