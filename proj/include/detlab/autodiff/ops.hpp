#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "detlab/autodiff/tensor.hpp"

namespace detlab::ad {

// Matrix product of [m x k] and [k x n].
Tensor matmul(const Tensor& a, const Tensor& b);

enum class Elementwise { add, sub, mul, relu, sigmoid };

// Dispatches to the named op; binary ops take two same-shape inputs.
Tensor elementwise(Elementwise op, std::span<const Tensor> inputs);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor scale(const Tensor& x, double factor);

// x [n x c] plus a row vector b [1 x c] (or [c]) broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& b);

Tensor transpose(const Tensor& x);

// Reductions keep the reduced axis with extent 1.
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor mean(const Tensor& x, std::size_t axis);
Tensor sum(const Tensor& x);
Tensor mean_all(const Tensor& x);

// Row-wise layer normalization with learned gain and shift [1 x c].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps = 1e-5);

// Per-entry sin/cos features: row i of x [n x d] maps to
// [sin(2 pi f_0 x_i0), cos(2 pi f_0 x_i0), sin(2 pi f_1 x_i0), ...], width d * 2 * |f|.
Tensor sine_embedding(const Tensor& x, std::span<const double> frequencies);

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);

}  // namespace detlab::ad
