#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

namespace evlie {

struct TensorNode;

// Tensors are shared handles into a dynamically built computation graph.
// Ops compute values eagerly and record a backprop closure plus parent
// links; backward() replays the closures in reverse topological order.
using Tensor = std::shared_ptr<TensorNode>;

struct TensorNode {
    std::vector<int64_t> shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<Tensor> parents;
    std::function<void()> backprop;

    int64_t numel() const {
        int64_t n = 1;
        for (int64_t d : shape) n *= d;
        return n;
    }
    // grad buffers are allocated on first use so pure inference graphs
    // never pay for them
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

Tensor make_tensor(std::vector<int64_t> shape, std::vector<double> values,
                   bool requires_grad = false);
Tensor zeros(std::vector<int64_t> shape, bool requires_grad = false);
Tensor full(std::vector<int64_t> shape, double v, bool requires_grad = false);
Tensor scalar_tensor(double v, bool requires_grad = false);

// Parents-before-children linearization of the graph rooted at `root`,
// computed iteratively so deep chains cannot overflow the stack.
std::vector<TensorNode*> topo_order(const Tensor& root);

// Reverse-mode sweep from a scalar root: zeroes every grad in the
// graph, seeds d(root)/d(root) = 1 and runs the recorded closures.
void backward(const Tensor& root);

} // namespace evlie
