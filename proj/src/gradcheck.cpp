#include "graft/gradcheck.hpp"

#include <cmath>
#include <sstream>

namespace graft {

bool GradReport::pass() const {
    for (const auto& b : blocks)
        if (!b.pass) return false;
    return true;
}

std::string GradReport::summary() const {
    std::ostringstream os;
    for (const auto& b : blocks) {
        os << (b.pass ? "ok   " : "FAIL ") << b.name << "  max_rel_err=" << b.max_rel_err
           << "  |analytic|=" << b.analytic_norm << "  |numeric|=" << b.numeric_norm;
        if (!b.pass)
            os << "  worst[" << b.worst_index << "] analytic=" << b.worst_analytic
               << " numeric=" << b.worst_numeric;
        os << "\n";
    }
    os << (pass() ? "PASS" : "FAIL") << "  overall max_rel_err=" << max_rel_err << "  tol=" << tol;
    if (near_kink) os << "  (warning: relu input near kink, numeric gradient unreliable)";
    os << "\n";
    return os.str();
}

std::vector<double> finite_diff_grad(const std::function<double()>& loss_fn, Parameter& p,
                                     double h) {
    if (precision() != Precision::f64)
        throw contract_error("finite_diff_grad requires f64 precision");
    NoGradGuard ng;
    auto& theta = p.tensor().mutable_values();
    std::vector<double> grad(theta.size());
    for (size_t i = 0; i < theta.size(); ++i) {
        const double saved = theta[i];
        theta[i] = saved + h;
        const double up = loss_fn();
        theta[i] = saved - h;
        const double down = loss_fn();
        theta[i] = saved;
        if (!std::isfinite(up) || !std::isfinite(down))
            throw domain_error("finite_diff_grad: loss is non-finite near current parameters");
        grad[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

GradReport grad_check(const std::function<Tensor()>& loss_builder, const ParamRefs& params,
                      double tol, double h, double kink_tol) {
    if (precision() != Precision::f64)
        throw contract_error("grad_check requires f64 precision");

    GradReport report;
    report.tol = tol;

    for (Parameter* p : params) p->zero_grad();
    reset_relu_kink_gap();
    Tensor loss = loss_builder();
    loss.backward();
    report.near_kink = relu_kink_gap() < kink_tol;

    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (Parameter* p : params) analytic.push_back(p->grad());

    auto scalar_loss = [&]() { return loss_builder().scalar_value(); };

    for (size_t pi = 0; pi < params.size(); ++pi) {
        Parameter& p = *params[pi];
        const std::vector<double> numeric = finite_diff_grad(scalar_loss, p, h);
        const std::vector<double>& a = analytic[pi];

        GradBlockReport block;
        block.name = p.name();
        double a2 = 0.0, n2 = 0.0;
        for (size_t i = 0; i < a.size(); ++i) {
            a2 += a[i] * a[i];
            n2 += numeric[i] * numeric[i];
            const double denom = std::max({std::fabs(a[i]), std::fabs(numeric[i]), 1e-12});
            const double rel = std::fabs(a[i] - numeric[i]) / denom;
            if (rel > block.max_rel_err) {
                block.max_rel_err = rel;
                block.worst_index = i;
                block.worst_analytic = a[i];
                block.worst_numeric = numeric[i];
            }
        }
        block.analytic_norm = std::sqrt(a2);
        block.numeric_norm = std::sqrt(n2);
        block.pass = block.max_rel_err <= tol;
        report.max_rel_err = std::max(report.max_rel_err, block.max_rel_err);
        report.blocks.push_back(std::move(block));
    }
    return report;
}

}  // namespace graft
