#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace vqqat::gradcheck {

// Finite-difference verification of every backward contract. Each suite
// draws seeded random instances, evaluates the op's surrogate forward (the
// differentiable function whose exact gradient the backward pass claims to
// return), and compares central differences against the analytic gradients.
//
// Relative error is |analytic - fd| / max(|analytic|, |fd|, 0.01); the floor
// keeps near-zero gradients from amplifying finite-difference noise while a
// sign or scale bug on any meaningful component still lands far above
// tolerance.

struct SuiteResult {
    std::string op;
    std::size_t instances = 0;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

struct GradcheckOpts {
    std::size_t instances = 120;  // per suite; >= 100 keeps the suites honest
    std::uint64_t seed = 2024;
    // Negative-control fixture: perturbs one analytic gradient per suite so
    // the comparison must fail. Exists to prove the harness can fail.
    bool corrupt = false;
};

// Suites in run order: lq_backward, projvq_backward, havq_backward,
// arch_backward, e2e (assembled 2-layer model, every quantizer pairing).
const std::vector<std::string>& suite_names();

// Runs one suite; throws ConfigError for an unknown op name.
SuiteResult run_suite(const std::string& op, const GradcheckOpts& opts);

std::vector<SuiteResult> run_all(const GradcheckOpts& opts);

}  // namespace vqqat::gradcheck
