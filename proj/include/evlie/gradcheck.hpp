#pragma once

#include <functional>
#include <vector>

#include "evlie/tensor.hpp"

namespace evlie {

struct GradCheckReport {
    double max_rel_err = 0.0;
    double mean_rel_err = 0.0;
    int64_t checked = 0;
    bool ok = true;
    int worst_input = -1;
    int64_t worst_index = -1;
};

// Central-difference verification of reverse-mode gradients. `f` must
// rebuild its graph from the given leaves on every call and return a
// scalar; leaves with requires_grad are perturbed element by element.
// Relative error is |analytic - fd| / max(1, |analytic|, |fd|). Runs
// with parallel kernels switched off so results are machine-stable.
GradCheckReport grad_check(
    const std::function<Tensor(const std::vector<Tensor>&)>& f,
    const std::vector<Tensor>& inputs, double step = 1e-5,
    double tol = 1e-4);

} // namespace evlie
