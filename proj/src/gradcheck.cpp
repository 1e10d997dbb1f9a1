#include "evlie/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "evlie/errors.hpp"
#include "evlie/kernels.hpp"

namespace evlie {

namespace {

double eval_scalar(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                   const std::vector<Tensor>& inputs) {
    Tensor root = f(inputs);
    if (!root || root->numel() != 1) {
        throw ArgumentError("grad_check: function must return a scalar");
    }
    for (TensorNode* node : topo_order(root)) {
        for (double v : node->value) {
            if (!std::isfinite(v)) {
                throw NumericError(std::string("grad_check: non-finite value "
                                               "in op ") +
                                   node->op);
            }
        }
    }
    return root->value[0];
}

} // namespace

GradCheckReport grad_check(
    const std::function<Tensor(const std::vector<Tensor>&)>& f,
    const std::vector<Tensor>& inputs, double step, double tol) {
    if (step <= 0.0) throw ArgumentError("grad_check: step must be > 0");
    kernels::SerialGuard serial;

    Tensor root = f(inputs);
    if (!root || root->numel() != 1) {
        throw ArgumentError("grad_check: function must return a scalar");
    }
    // Inputs the function never touches stay outside the graph; their
    // gradient is zero, not whatever an earlier sweep left behind.
    for (const Tensor& in : inputs) {
        if (in->requires_grad) {
            in->ensure_grad();
            std::fill(in->grad.begin(), in->grad.end(), 0.0);
        }
    }
    backward(root);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(inputs.size());
    for (const Tensor& in : inputs) {
        if (in->requires_grad) {
            analytic.push_back(in->grad);
        } else {
            analytic.emplace_back();
        }
    }

    GradCheckReport report;
    double err_sum = 0.0;
    for (size_t k = 0; k < inputs.size(); ++k) {
        if (!inputs[k]->requires_grad) continue;
        std::vector<double>& vals = inputs[k]->value;
        for (size_t e = 0; e < vals.size(); ++e) {
            const double saved = vals[e];
            vals[e] = saved + step;
            const double up = eval_scalar(f, inputs);
            vals[e] = saved - step;
            const double dn = eval_scalar(f, inputs);
            vals[e] = saved;
            const double fd = (up - dn) / (2.0 * step);
            const double an = analytic[k][e];
            const double rel = std::fabs(an - fd) /
                               std::max({1.0, std::fabs(an), std::fabs(fd)});
            err_sum += rel;
            ++report.checked;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_input = static_cast<int>(k);
                report.worst_index = static_cast<int64_t>(e);
            }
        }
    }
    if (report.checked > 0) {
        report.mean_rel_err = err_sum / static_cast<double>(report.checked);
    }
    report.ok = report.max_rel_err <= tol;
    return report;
}

} // namespace evlie
