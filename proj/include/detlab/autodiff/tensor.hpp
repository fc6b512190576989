#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace detlab::ad {

using Shape = std::vector<std::size_t>;

struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct UsageError : std::logic_error {
    using std::logic_error::logic_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

// One vertex of the computation graph. Leaves have no backward function;
// interior nodes read their own grad and accumulate into their parents.
struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;
    const char* op = "leaf";

    bool is_leaf() const { return !backward; }
    std::vector<double>& ensure_grad();
};

// Shared handle to a graph node. Copies alias the same storage, like the
// tensor handles of most autograd engines.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor filled(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data,
                         bool requires_grad = false);

    // Creates an interior node. Returns a detached tensor when grad mode is
    // off or no parent requires a gradient.
    static Tensor from_op(const char* op, Shape shape, std::vector<double> data,
                          std::vector<Tensor> parents, std::function<void(Node&)> backward);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::size_t dim() const { return impl_->shape.size(); }
    std::size_t size() const { return impl_->data.size(); }
    // 2-D helpers; a 1-D tensor is treated as a single row.
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> data() const { return impl_->data; }
    std::span<double> mutable_data() { return impl_->data; }
    std::span<const double> grad() const { return impl_->grad; }
    bool has_grad() const { return !impl_->grad.empty(); }
    double item() const;
    double at(std::size_t r, std::size_t c) const { return impl_->data[r * cols() + c]; }
    double operator[](std::size_t i) const { return impl_->data[i]; }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool on);
    void zero_grad();
    Tensor detach() const;

    // Reverse-mode sweep from this scalar. Leaf gradients accumulate across
    // calls; interior gradients are recomputed each sweep.
    void backward() const;

    Node* node() const { return impl_.get(); }
    const std::shared_ptr<Node>& node_ptr() const { return impl_; }

private:
    std::shared_ptr<Node> impl_;
};

bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

}  // namespace detlab::ad
