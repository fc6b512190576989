#include "detlab/autodiff/parameter.hpp"

#include <cmath>

namespace detlab::ad {

Tensor ParameterSet::add_uniform(const std::string& name, Shape shape, std::size_t fan_in, Rng& rng) {
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    std::vector<double> data(shape_size(shape));
    for (double& d : data) d = rng.uniform(-bound, bound);
    return add(name, Tensor(std::move(shape), std::move(data), true));
}

Tensor ParameterSet::add_constant(const std::string& name, Shape shape, double value) {
    return add(name, Tensor::filled(std::move(shape), value, true));
}

Tensor ParameterSet::add(const std::string& name, Tensor tensor) {
    if (find(name)) throw UsageError("duplicate parameter name: " + name);
    tensor.set_requires_grad(true);
    params_.push_back({name, tensor});
    return tensor;
}

const Parameter* ParameterSet::find(const std::string& name) const {
    for (const auto& p : params_) {
        if (p.name == name) return &p;
    }
    return nullptr;
}

std::size_t ParameterSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.size();
    return n;
}

void ParameterSet::zero_grad() {
    for (auto& p : params_) {
        p.tensor.node()->ensure_grad();
        p.tensor.zero_grad();
    }
}

}  // namespace detlab::ad
