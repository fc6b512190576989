#include "detlab/layers.hpp"

#include <cmath>
#include <vector>

#include "detlab/autodiff/ops.hpp"

namespace detlab::model {

Linear Linear::create(ad::ParameterSet& params, const std::string& name, std::size_t in, std::size_t out,
                      Rng& rng) {
    Linear l;
    l.weight = params.add_uniform(name + ".weight", {in, out}, in, rng);
    l.bias = params.add_uniform(name + ".bias", {1, out}, in, rng);
    return l;
}

ad::Tensor Linear::operator()(const ad::Tensor& x) const {
    return ad::add_bias(ad::matmul(x, weight), bias);
}

LayerNorm LayerNorm::create(ad::ParameterSet& params, const std::string& name, std::size_t width) {
    return {params.add_constant(name + ".gain", {1, width}, 1.0),
            params.add_constant(name + ".shift", {1, width}, 0.0)};
}

ad::Tensor LayerNorm::operator()(const ad::Tensor& x) const { return ad::layer_norm(x, gain, shift); }

MultiHeadAttention MultiHeadAttention::create(ad::ParameterSet& params, const std::string& name,
                                              std::size_t width, std::size_t heads, Rng& rng) {
    MultiHeadAttention m;
    m.q = Linear::create(params, name + ".q", width, width, rng);
    m.k = Linear::create(params, name + ".k", width, width, rng);
    m.v = Linear::create(params, name + ".v", width, width, rng);
    m.out = Linear::create(params, name + ".out", width, width, rng);
    m.heads = heads;
    return m;
}

ad::Tensor MultiHeadAttention::operator()(const ad::Tensor& query, const ad::Tensor& key,
                                          const ad::Tensor& value) const {
    const ad::Tensor qp = q(query), kp = k(key), vp = v(value);
    const std::size_t width = qp.cols();
    const std::size_t head_dim = width / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
    std::vector<ad::Tensor> per_head;
    per_head.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        const ad::Tensor qh = ad::slice_cols(qp, h * head_dim, head_dim);
        const ad::Tensor kh = ad::slice_cols(kp, h * head_dim, head_dim);
        const ad::Tensor vh = ad::slice_cols(vp, h * head_dim, head_dim);
        const ad::Tensor logits = ad::scale(ad::matmul(qh, ad::transpose(kh)), scale);
        per_head.push_back(ad::matmul(ad::softmax(logits, 1), vh));
    }
    return out(heads == 1 ? per_head[0] : ad::concat_cols(per_head));
}

FeedForward FeedForward::create(ad::ParameterSet& params, const std::string& name, std::size_t width,
                                std::size_t hidden, Rng& rng) {
    return {Linear::create(params, name + ".in", width, hidden, rng),
            Linear::create(params, name + ".out", hidden, width, rng)};
}

ad::Tensor FeedForward::operator()(const ad::Tensor& x) const { return out(ad::relu(in(x))); }

}  // namespace detlab::model
