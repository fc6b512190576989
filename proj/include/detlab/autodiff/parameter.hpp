#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "detlab/autodiff/tensor.hpp"
#include "detlab/rng.hpp"

namespace detlab::ad {

struct Parameter {
    std::string name;
    Tensor tensor;
};

// Ordered, name-unique collection of trainable tensors.
class ParameterSet {
public:
    // Registers a tensor initialized uniformly in [-sqrt(1/fan_in), sqrt(1/fan_in)].
    Tensor add_uniform(const std::string& name, Shape shape, std::size_t fan_in, Rng& rng);
    Tensor add_constant(const std::string& name, Shape shape, double value);
    Tensor add(const std::string& name, Tensor tensor);

    std::span<Parameter> items() { return params_; }
    std::span<const Parameter> items() const { return params_; }
    const Parameter* find(const std::string& name) const;
    std::size_t scalar_count() const;
    // Allocates (if needed) and zeroes every gradient buffer.
    void zero_grad();

private:
    std::vector<Parameter> params_;
};

}  // namespace detlab::ad
