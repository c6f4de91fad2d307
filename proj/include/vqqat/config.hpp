#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "vqqat/model.hpp"
#include "vqqat/trainer.hpp"

namespace vqqat::cli {

// Dataset source: seeded synthetic blobs or IDX image/label files. For
// synthetic data the model input/output dims must match d/classes; for IDX
// the eval pair may be omitted (training then reports eval_acc 0).
struct DataConfig {
    std::string source = "synthetic";  // "synthetic" | "idx"
    std::size_t n_train = 512;
    std::size_t n_eval = 256;
    std::size_t d = 2;
    std::size_t classes = 2;
    double separation = 6.0;
    double spread = 1.0;
    std::string images, labels;            // idx training pair
    std::string eval_images, eval_labels;  // idx eval pair (optional)
};

struct GradcheckSection {
    std::size_t instances = 120;
    std::vector<std::string> ops;  // empty = all suites
    bool corrupt = false;          // negative-control fixture
};

// Full experiment description, parsed from a versioned JSON document
// (top-level "schema": 1). All validation happens at parse time, before any
// compute. Layer quantizer settings are keyed by layer name ("fc0", ...);
// unnamed layers stay float. The decay penalty weight lambda equals
// optimizer.weight_decay / 2 (the SGD decay term is its exact gradient).
struct RunConfig {
    std::uint64_t seed = 0;
    std::string out_dir = "run";
    trainer::ModelConfig model;
    trainer::OptimConfig optim;
    trainer::NasConfig nas;
    DataConfig data;
    GradcheckSection gradcheck;
};

// Parses and validates; throws ParseError for malformed documents and
// ConfigError for well-formed documents with invalid values (unknown layer,
// zero bit widths, mismatched dims, ...).
RunConfig parse_config(const nlohmann::json& j);

// Reads the file, parses JSON, then parse_config.
RunConfig load_config(const std::string& path);

// Canonical serialization: every field explicit, every layer listed, so
// parse(serialize(parse(text))) reproduces the same document byte for byte.
nlohmann::json config_to_json(const RunConfig& cfg);

}  // namespace vqqat::cli
