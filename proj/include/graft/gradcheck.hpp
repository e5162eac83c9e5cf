#pragma once

#include <functional>
#include <string>
#include <vector>

#include "graft/tensor.hpp"

namespace graft {

// Per-parameter-block comparison of analytic vs central-difference gradients.
struct GradBlockReport {
    std::string name;
    double max_rel_err = 0.0;
    double analytic_norm = 0.0;
    double numeric_norm = 0.0;
    size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    bool pass = true;
};

struct GradReport {
    std::vector<GradBlockReport> blocks;
    double max_rel_err = 0.0;
    double tol = 1e-4;
    // true when some relu input sat within kink_tol of 0 during the forward
    // pass: finite differences straddle the kink and the check is unreliable
    bool near_kink = false;

    bool pass() const;  // vacuously true with no blocks
    std::string summary() const;
};

/// Central-difference gradient of `loss_fn` (evaluated at the current
/// parameter values) with respect to `p`. Requires f64 precision; runs
/// with the tape off. `loss_fn` must be a pure function of parameter
/// values. Throws domain_error if the loss goes non-finite.
std::vector<double> finite_diff_grad(const std::function<double()>& loss_fn, Parameter& p,
                                     double h = 1e-5);

/// Runs one backward pass of `loss_builder` and compares the gradient on
/// every parameter block against finite differences of the same loss.
/// rel err = |a - n| / max(|a|, |n|, 1e-12), per coordinate, max per block.
GradReport grad_check(const std::function<Tensor()>& loss_builder, const ParamRefs& params,
                      double tol = 1e-4, double h = 1e-5, double kink_tol = 1e-3);

}  // namespace graft
