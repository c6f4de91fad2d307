#include "vqqat/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "vqqat/errors.hpp"
#include "vqqat/gradcheck.hpp"

namespace vqqat::cli {

namespace {

using nlohmann::json;

std::string layer_name(std::size_t index) {
    return "fc" + std::to_string(index);
}

// Unknown keys are rejected rather than ignored: a typo like "optim" for
// "optimizer" must not silently train with defaults.
void require_known_keys(const json& j, const std::string& section,
                        std::initializer_list<const char*> allowed) {
    if (!j.is_object()) {
        throw ConfigError(section + " must be a json object");
    }
    for (const auto& [key, value] : j.items()) {
        (void)value;
        const bool known =
            std::any_of(allowed.begin(), allowed.end(),
                        [&key](const char* k) { return key == k; });
        if (!known) {
            throw ConfigError(section + " has unknown key '" + key + "'");
        }
    }
}

trainer::LayerQuantConfig layer_cfg_from_json(const std::string& name,
                                              const json& j) {
    require_known_keys(j, "layer " + name,
                       {"kind", "vec_len", "b_index", "b_scalar", "lq_bits",
                        "pad", "freeze_assignments"});
    trainer::LayerQuantConfig c;
    c.kind = trainer::quant_kind_from_name(j.at("kind").get<std::string>());
    c.vec_len = j.value("vec_len", c.vec_len);
    c.b_index = j.value("b_index", c.b_index);
    c.b_scalar = j.value("b_scalar", c.b_scalar);
    c.lq_bits = j.value("lq_bits", c.lq_bits);
    c.pad = j.value("pad", c.pad);
    c.freeze_assignments = j.value("freeze_assignments", c.freeze_assignments);
    if (c.b_index < 1 || c.b_scalar < 1 || c.lq_bits < 1) {
        throw ConfigError("layer " + name + ": all bit widths must be >= 1");
    }
    if (c.vec_len == 0) {
        throw ConfigError("layer " + name + ": vec_len must be >= 1");
    }
    return c;
}

json layer_cfg_to_json(const trainer::LayerQuantConfig& c) {
    return {{"kind", trainer::quant_kind_name(c.kind)},
            {"vec_len", c.vec_len},
            {"b_index", c.b_index},
            {"b_scalar", c.b_scalar},
            {"lq_bits", c.lq_bits},
            {"pad", c.pad},
            {"freeze_assignments", c.freeze_assignments}};
}

void parse_model(const json& j, trainer::ModelConfig& model) {
    require_known_keys(j, "model", {"dims", "layers"});
    model.dims = j.at("dims").get<std::vector<std::size_t>>();
    if (model.dims.size() < 2) {
        throw ConfigError("model.dims needs at least input and output sizes");
    }
    for (const std::size_t d : model.dims) {
        if (d == 0) throw ConfigError("model.dims entries must be >= 1");
    }
    const std::size_t n_layers = model.dims.size() - 1;
    model.layers.assign(n_layers, trainer::LayerQuantConfig{});
    if (!j.contains("layers")) return;
    for (const auto& [name, jl] : j.at("layers").items()) {
        std::size_t index = n_layers;
        for (std::size_t l = 0; l < n_layers; ++l) {
            if (name == layer_name(l)) {
                index = l;
                break;
            }
        }
        if (index == n_layers) {
            throw ConfigError("config references missing layer '" + name +
                              "' (model has " + std::to_string(n_layers) +
                              " layers: fc0.." + layer_name(n_layers - 1) +
                              ")");
        }
        model.layers[index] = layer_cfg_from_json(name, jl);
    }
}

void parse_optim(const json& j, trainer::OptimConfig& o) {
    require_known_keys(j, "optimizer",
                       {"lr0", "momentum", "weight_decay", "codebook_lr_scale",
                        "epochs", "batch_size"});
    o.lr0 = j.value("lr0", o.lr0);
    o.momentum = j.value("momentum", o.momentum);
    o.weight_decay = j.value("weight_decay", o.weight_decay);
    o.codebook_lr_scale = j.value("codebook_lr_scale", o.codebook_lr_scale);
    o.epochs = j.value("epochs", o.epochs);
    o.batch_size = j.value("batch_size", o.batch_size);
    if (o.lr0 <= 0.0) throw ConfigError("optimizer.lr0 must be > 0");
    if (o.momentum < 0.0 || o.momentum >= 1.0) {
        throw ConfigError("optimizer.momentum must be in [0, 1)");
    }
    if (o.weight_decay < 0.0) {
        throw ConfigError("optimizer.weight_decay must be >= 0");
    }
    if (o.codebook_lr_scale < 0.0) {
        throw ConfigError("optimizer.codebook_lr_scale must be >= 0");
    }
    if (o.epochs == 0) throw ConfigError("optimizer.epochs must be >= 1");
    if (o.batch_size == 0) throw ConfigError("optimizer.batch_size must be >= 1");
}

void parse_nas(const json& j, trainer::NasConfig& n) {
    require_known_keys(j, "nas", {"enabled", "beta", "target_avg_bits"});
    n.enabled = j.value("enabled", n.enabled);
    n.beta = j.value("beta", n.beta);
    n.target_avg_bits = j.value("target_avg_bits", n.target_avg_bits);
    if (n.beta < 0.0) throw ConfigError("nas.beta must be >= 0");
    if (n.target_avg_bits < 0.0) {
        throw ConfigError("nas.target_avg_bits must be >= 0");
    }
}

void parse_data(const json& j, DataConfig& d) {
    d.source = j.value("source", d.source);
    if (d.source != "synthetic" && d.source != "idx") {
        throw ConfigError("data.source must be 'synthetic' or 'idx'");
    }
    if (d.source == "synthetic") {
        require_known_keys(j, "data",
                           {"source", "n_train", "n_eval", "d", "classes",
                            "separation", "spread"});
        d.n_train = j.value("n_train", d.n_train);
        d.n_eval = j.value("n_eval", d.n_eval);
        d.d = j.value("d", d.d);
        d.classes = j.value("classes", d.classes);
        d.separation = j.value("separation", d.separation);
        d.spread = j.value("spread", d.spread);
        if (d.n_train == 0) throw ConfigError("data.n_train must be >= 1");
        if (d.d == 0 || d.classes == 0) {
            throw ConfigError("data.d and data.classes must be >= 1");
        }
        if (d.spread <= 0.0) throw ConfigError("data.spread must be > 0");
    } else {
        require_known_keys(
            j, "data",
            {"source", "images", "labels", "eval_images", "eval_labels"});
        d.images = j.value("images", std::string{});
        d.labels = j.value("labels", std::string{});
        d.eval_images = j.value("eval_images", std::string{});
        d.eval_labels = j.value("eval_labels", std::string{});
        if (d.images.empty() || d.labels.empty()) {
            throw ConfigError("data.images and data.labels are required for idx");
        }
        if (d.eval_images.empty() != d.eval_labels.empty()) {
            throw ConfigError(
                "data.eval_images and data.eval_labels must be set together");
        }
    }
}

void parse_gradcheck(const json& j, GradcheckSection& g) {
    require_known_keys(j, "gradcheck", {"instances", "ops", "corrupt"});
    g.instances = j.value("instances", g.instances);
    g.corrupt = j.value("corrupt", g.corrupt);
    if (j.contains("ops")) {
        g.ops = j.at("ops").get<std::vector<std::string>>();
    }
    if (g.instances == 0) {
        throw ConfigError("gradcheck.instances must be >= 1");
    }
    const auto& valid = gradcheck::suite_names();
    for (const std::string& op : g.ops) {
        if (std::find(valid.begin(), valid.end(), op) == valid.end()) {
            throw ConfigError("gradcheck.ops has unknown op '" + op + "'");
        }
    }
}

}  // namespace

RunConfig parse_config(const nlohmann::json& j) {
    try {
        if (!j.contains("schema") || j.at("schema").get<int>() != 1) {
            throw ParseError("unsupported config schema (expected schema: 1)");
        }
        require_known_keys(j, "config",
                           {"schema", "seed", "out_dir", "model", "optimizer",
                            "nas", "data", "gradcheck"});
        RunConfig cfg;
        cfg.seed = j.value("seed", cfg.seed);
        cfg.out_dir = j.value("out_dir", cfg.out_dir);
        parse_model(j.at("model"), cfg.model);
        if (j.contains("optimizer")) parse_optim(j.at("optimizer"), cfg.optim);
        if (j.contains("nas")) parse_nas(j.at("nas"), cfg.nas);
        if (j.contains("data")) parse_data(j.at("data"), cfg.data);
        if (j.contains("gradcheck")) {
            parse_gradcheck(j.at("gradcheck"), cfg.gradcheck);
        }
        if (cfg.data.source == "synthetic") {
            if (cfg.model.dims.front() != cfg.data.d) {
                throw ConfigError(
                    "model input dim " + std::to_string(cfg.model.dims.front()) +
                    " does not match data.d " + std::to_string(cfg.data.d));
            }
            if (cfg.model.dims.back() != cfg.data.classes) {
                throw ConfigError(
                    "model output dim " + std::to_string(cfg.model.dims.back()) +
                    " does not match data.classes " +
                    std::to_string(cfg.data.classes));
            }
        }
        return cfg;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed config: ") + e.what());
    }
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(buf.str());
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("invalid json in " + path + ": " + e.what());
    }
    return parse_config(j);
}

nlohmann::json config_to_json(const RunConfig& cfg) {
    nlohmann::json layers;
    for (std::size_t l = 0; l < cfg.model.layers.size(); ++l) {
        layers[layer_name(l)] = layer_cfg_to_json(cfg.model.layers[l]);
    }
    nlohmann::json data;
    if (cfg.data.source == "synthetic") {
        data = {{"source", "synthetic"},     {"n_train", cfg.data.n_train},
                {"n_eval", cfg.data.n_eval}, {"d", cfg.data.d},
                {"classes", cfg.data.classes}, {"separation", cfg.data.separation},
                {"spread", cfg.data.spread}};
    } else {
        data = {{"source", "idx"},
                {"images", cfg.data.images},
                {"labels", cfg.data.labels},
                {"eval_images", cfg.data.eval_images},
                {"eval_labels", cfg.data.eval_labels}};
    }
    return {{"schema", 1},
            {"seed", cfg.seed},
            {"out_dir", cfg.out_dir},
            {"model", {{"dims", cfg.model.dims}, {"layers", layers}}},
            {"optimizer",
             {{"lr0", cfg.optim.lr0},
              {"momentum", cfg.optim.momentum},
              {"weight_decay", cfg.optim.weight_decay},
              {"codebook_lr_scale", cfg.optim.codebook_lr_scale},
              {"epochs", cfg.optim.epochs},
              {"batch_size", cfg.optim.batch_size}}},
            {"nas",
             {{"enabled", cfg.nas.enabled},
              {"beta", cfg.nas.beta},
              {"target_avg_bits", cfg.nas.target_avg_bits}}},
            {"data", data},
            {"gradcheck",
             {{"instances", cfg.gradcheck.instances},
              {"ops", cfg.gradcheck.ops},
              {"corrupt", cfg.gradcheck.corrupt}}}};
}

}  // namespace vqqat::cli
