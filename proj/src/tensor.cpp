#include "evlie/tensor.hpp"

#include <algorithm>
#include <unordered_set>

#include "evlie/errors.hpp"

namespace evlie {

Tensor make_tensor(std::vector<int64_t> shape, std::vector<double> values,
                   bool requires_grad) {
    auto t = std::make_shared<TensorNode>();
    t->shape = std::move(shape);
    for (int64_t d : t->shape) {
        if (d <= 0) throw ArgumentError("tensor dimensions must be positive");
    }
    if (static_cast<int64_t>(values.size()) != t->numel()) {
        throw ArgumentError("tensor value count does not match shape");
    }
    t->value = std::move(values);
    t->requires_grad = requires_grad;
    return t;
}

Tensor zeros(std::vector<int64_t> shape, bool requires_grad) {
    auto t = std::make_shared<TensorNode>();
    t->shape = std::move(shape);
    for (int64_t d : t->shape) {
        if (d <= 0) throw ArgumentError("tensor dimensions must be positive");
    }
    t->value.assign(static_cast<size_t>(t->numel()), 0.0);
    t->requires_grad = requires_grad;
    return t;
}

Tensor full(std::vector<int64_t> shape, double v, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (double& x : t->value) x = v;
    return t;
}

Tensor scalar_tensor(double v, bool requires_grad) {
    return make_tensor({1}, {v}, requires_grad);
}

std::vector<TensorNode*> topo_order(const Tensor& root) {
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    // explicit stack of (node, next parent index) pairs
    std::vector<std::pair<TensorNode*, size_t>> stack;
    if (!root) throw ArgumentError("null tensor");
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            TensorNode* parent = node->parents[idx++].get();
            if (seen.insert(parent).second) {
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order; // parents precede children
}

void backward(const Tensor& root) {
    if (!root) throw ArgumentError("null tensor");
    if (root->numel() != 1) {
        throw ArgumentError("backward needs a scalar root, got " +
                            std::to_string(root->numel()) + " elements");
    }
    std::vector<TensorNode*> order = topo_order(root);
    for (TensorNode* node : order) {
        node->ensure_grad();
        std::fill(node->grad.begin(), node->grad.end(), 0.0);
    }
    root->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->requires_grad && (*it)->backprop) (*it)->backprop();
    }
}

} // namespace evlie
