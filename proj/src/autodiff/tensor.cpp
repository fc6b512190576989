#include "detlab/autodiff/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace detlab::ad {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::vector<double>& Node::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<Node>()) {
    for (auto d : shape) {
        if (d == 0) throw DimensionError("tensor extents must be positive: " + shape_str(shape));
    }
    if (shape_size(shape) != data.size()) {
        throw DimensionError("data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return filled(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
    auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return Tensor({1}, {value}, requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data,
                      bool requires_grad) {
    return Tensor({rows, cols}, std::move(data), requires_grad);
}

Tensor Tensor::from_op(const char* op, Shape shape, std::vector<double> data,
                       std::vector<Tensor> parents, std::function<void(Node&)> backward) {
    Tensor out(std::move(shape), std::move(data));
    if (!g_grad_enabled) return out;
    bool any = std::any_of(parents.begin(), parents.end(),
                           [](const Tensor& p) { return p.requires_grad(); });
    if (!any) return out;
    out.impl_->requires_grad = true;
    out.impl_->op = op;
    out.impl_->backward = std::move(backward);
    out.impl_->parents.reserve(parents.size());
    for (auto& p : parents) out.impl_->parents.push_back(p.impl_);
    return out;
}

std::size_t Tensor::rows() const {
    if (dim() == 1) return 1;
    if (dim() != 2) throw DimensionError("expected a 2-D tensor, got " + shape_str(shape()));
    return impl_->shape[0];
}

std::size_t Tensor::cols() const {
    if (dim() == 1) return impl_->shape[0];
    if (dim() != 2) throw DimensionError("expected a 2-D tensor, got " + shape_str(shape()));
    return impl_->shape[1];
}

double Tensor::item() const {
    if (size() != 1) throw UsageError("item() on non-scalar tensor " + shape_str(shape()));
    return impl_->data[0];
}

void Tensor::set_requires_grad(bool on) {
    if (!impl_->is_leaf()) throw UsageError("requires_grad can only be toggled on leaves");
    impl_->requires_grad = on;
}

void Tensor::zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
    return Tensor(impl_->shape, impl_->data);
}

void Tensor::backward() const {
    if (size() != 1) {
        throw UsageError("backward() needs a scalar seed, got " + shape_str(shape()));
    }
    if (!impl_->requires_grad) return;

    // Iterative post-order DFS yields a topological order (parents first).
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{impl_.get(), 0}};
    seen.insert(impl_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node* n : order) {
        if (!n->is_leaf()) n->grad.assign(n->data.size(), 0.0);
    }
    impl_->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if (!(*it)->is_leaf()) (*it)->backward(**it);
    }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

}  // namespace detlab::ad
