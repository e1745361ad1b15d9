#pragma once

// Property suites behind `mldg-lab selfcheck`.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mldg/meta_core.hpp"

namespace mldg {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
};

struct SelfcheckOptions {
    std::uint64_t seed = 2024;
    std::size_t gradient_cases = 4;  // per variant
    std::size_t instances = 100;     // reduction and Taylor suites
    double fd_step = 1e-5;
    double gradient_tol = 1e-3;
    double taylor_alpha = 1e-2;
    double taylor_pass_fraction = 0.9;
};

/// A small random problem: a tanh MLP with at most 50 weights and three
/// synthetic domains split 2 / 1.
struct ToyProblem {
    MlpSpec spec;
    ParameterVector params;
    std::vector<DomainBatch> domains;
    IndexSplit partition;

    MetaSplit split() const;
};

ToyProblem make_toy_problem(std::uint64_t seed);

/// Objective value for the variant at flat parameters `theta`.
double objective_value(const ToyProblem& p, std::span<const double> theta, const MldgConfig& cfg);
/// Analytic meta-gradient for the variant at `theta`.
std::vector<double> objective_gradient(const ToyProblem& p, std::span<const double> theta,
                                       const MldgConfig& cfg);

CheckResult check_gradients(const SelfcheckOptions& opt = {});
CheckResult check_alpha_zero(const SelfcheckOptions& opt = {});
CheckResult check_taylor(const SelfcheckOptions& opt = {});

std::vector<CheckResult> run_selfcheck(const SelfcheckOptions& opt = {});

}  // namespace mldg
