#pragma once

#include <string>

#include "detlab/autodiff/parameter.hpp"
#include "detlab/autodiff/tensor.hpp"

namespace detlab::model {

// y = x W + b with W [in x out].
struct Linear {
    ad::Tensor weight;
    ad::Tensor bias;

    static Linear create(ad::ParameterSet& params, const std::string& name, std::size_t in, std::size_t out,
                         Rng& rng);
    ad::Tensor operator()(const ad::Tensor& x) const;
};

struct LayerNorm {
    ad::Tensor gain;
    ad::Tensor shift;

    static LayerNorm create(ad::ParameterSet& params, const std::string& name, std::size_t width);
    ad::Tensor operator()(const ad::Tensor& x) const;
};

// Multi-head scaled dot-product attention with input and output projections.
struct MultiHeadAttention {
    Linear q, k, v, out;
    std::size_t heads = 1;

    static MultiHeadAttention create(ad::ParameterSet& params, const std::string& name, std::size_t width,
                                     std::size_t heads, Rng& rng);
    // query [nq x C], key/value [nk x C] -> [nq x C]
    ad::Tensor operator()(const ad::Tensor& query, const ad::Tensor& key, const ad::Tensor& value) const;
};

// Two linear layers with a ReLU between them.
struct FeedForward {
    Linear in, out;

    static FeedForward create(ad::ParameterSet& params, const std::string& name, std::size_t width,
                              std::size_t hidden, Rng& rng);
    ad::Tensor operator()(const ad::Tensor& x) const;
};

}  // namespace detlab::model
