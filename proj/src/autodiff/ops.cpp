#include "detlab/autodiff/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace detlab::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    }
}

void require_2d(const Tensor& x, const char* op) {
    if (x.dim() != 2) {
        throw DimensionError(std::string(op) + ": expected 2-D tensor, got " + shape_str(x.shape()));
    }
}

// Splits shape around axis into (outer, extent, inner) strides.
struct AxisView {
    std::size_t outer = 1, extent = 1, inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis, const char* op) {
    if (axis >= shape.size()) {
        throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                             " out of range for " + shape_str(shape));
    }
    AxisView v;
    for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
    v.extent = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
    return v;
}

Node& parent(Node& n, std::size_t i) { return *n.parents[i]; }

// Applies fn(parent_grad) to parent i when it requires a gradient.
template <typename Fn>
void accumulate(Node& n, std::size_t i, Fn&& fn) {
    Node& p = parent(n, i);
    if (p.requires_grad) fn(p.ensure_grad());
}

double sigmoid_scalar(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        throw DimensionError("matmul: inner dimensions disagree " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    std::vector<double> out(m * n);
    MutMap(out.data(), m, n).noalias() = ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
    return Tensor::from_op("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
        ConstMap g(self.grad.data(), m, n);
        Node& pa = parent(self, 0);
        Node& pb = parent(self, 1);
        if (pa.requires_grad) {
            MutMap(pa.ensure_grad().data(), m, k).noalias() += g * ConstMap(pb.data.data(), k, n).transpose();
        }
        if (pb.requires_grad) {
            MutMap(pb.ensure_grad().data(), k, n).noalias() += ConstMap(pa.data.data(), m, k).transpose() * g;
        }
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return Tensor::from_op("add", a.shape(), std::move(out), {a, b}, [](Node& self) {
        for (std::size_t p = 0; p < 2; ++p) {
            accumulate(self, p, [&](std::vector<double>& g) {
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
            });
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    return Tensor::from_op("sub", a.shape(), std::move(out), {a, b}, [](Node& self) {
        accumulate(self, 0, [&](std::vector<double>& g) {
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        });
        accumulate(self, 1, [&](std::vector<double>& g) {
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        });
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return Tensor::from_op("mul", a.shape(), std::move(out), {a, b}, [](Node& self) {
        const auto& av = parent(self, 0).data;
        const auto& bv = parent(self, 1).data;
        accumulate(self, 0, [&](std::vector<double>& g) {
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
        });
        accumulate(self, 1, [&](std::vector<double>& g) {
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
        });
    });
}

Tensor relu(const Tensor& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
    return Tensor::from_op("relu", x.shape(), std::move(out), {x}, [](Node& self) {
        const auto& xv = parent(self, 0).data;
        accumulate(self, 0, [&](std::vector<double>& g) {
            // subgradient at exactly zero is zero
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (xv[i] > 0.0) g[i] += self.grad[i];
            }
        });
    });
}

Tensor sigmoid(const Tensor& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_scalar(x[i]);
    return Tensor::from_op("sigmoid", x.shape(), std::move(out), {x}, [](Node& self) {
        accumulate(self, 0, [&](std::vector<double>& g) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double s = self.data[i];
                g[i] += self.grad[i] * s * (1.0 - s);
            }
        });
    });
}

Tensor sine_embedding(const Tensor& x, std::span<const double> frequencies) {
    if (frequencies.empty()) throw UsageError("sine_embedding: no frequencies");
    const std::size_t n = x.rows(), d = x.cols(), nf = frequencies.size();
    const std::size_t width = d * 2 * nf;
    std::vector<double> w(nf);
    for (std::size_t k = 0; k < nf; ++k) w[k] = 2.0 * std::numbers::pi * frequencies[k];
    std::vector<double> out(n * width);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            const double v = x[i * d + j];
            for (std::size_t k = 0; k < nf; ++k) {
                out[i * width + (j * nf + k) * 2] = std::sin(w[k] * v);
                out[i * width + (j * nf + k) * 2 + 1] = std::cos(w[k] * v);
            }
        }
    }
    return Tensor::from_op("sine_embedding", {n, width}, std::move(out), {x}, [w, n, d, nf, width](Node& self) {
        accumulate(self, 0, [&](std::vector<double>& g) {
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < d; ++j) {
                    double acc = 0.0;
                    for (std::size_t k = 0; k < nf; ++k) {
                        const std::size_t o = i * width + (j * nf + k) * 2;
                        // d sin = w cos, d cos = -w sin
                        acc += w[k] * (self.grad[o] * self.data[o + 1] - self.grad[o + 1] * self.data[o]);
                    }
                    g[i * d + j] += acc;
                }
            }
        });
    });
}

Tensor abs(const Tensor& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(x[i]);
    return Tensor::from_op("abs", x.shape(), std::move(out), {x}, [](Node& self) {
        const auto& xv = parent(self, 0).data;
        accumulate(self, 0, [&](std::vector<double>& g) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (xv[i] > 0.0) g[i] += self.grad[i];
                else if (xv[i] < 0.0) g[i] -= self.grad[i];
            }
        });
    });
}

Tensor scale(const Tensor& x, double factor) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
    return Tensor::from_op("scale", x.shape(), std::move(out), {x}, [factor](Node& self) {
        accumulate(self, 0, [&](std::vector<double>& g) {
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
        });
    });
}

Tensor elementwise(Elementwise op, std::span<const Tensor> inputs) {
    const bool binary = op == Elementwise::add || op == Elementwise::sub || op == Elementwise::mul;
    const std::size_t arity = binary ? 2 : 1;
    if (inputs.size() != arity) {
        throw UsageError("elementwise: expected " + std::to_string(arity) + " inputs, got " +
                         std::to_string(inputs.size()));
    }
    switch (op) {
        case Elementwise::add: return add(inputs[0], inputs[1]);
        case Elementwise::sub: return sub(inputs[0], inputs[1]);
        case Elementwise::mul: return mul(inputs[0], inputs[1]);
        case Elementwise::relu: return relu(inputs[0]);
        case Elementwise::sigmoid: return sigmoid(inputs[0]);
    }
    throw UsageError("elementwise: unknown op");
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
    require_2d(x, "add_bias");
    const std::size_t n = x.rows(), c = x.cols();
    if (b.size() != c || b.rows() != 1) {
        throw DimensionError("add_bias: bias " + shape_str(b.shape()) + " does not fit " +
                             shape_str(x.shape()));
    }
    std::vector<double> out(x.size());
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t j = 0; j < c; ++j) out[r * c + j] = x[r * c + j] + b[j];
    }
    return Tensor::from_op("add_bias", x.shape(), std::move(out), {x, b}, [n, c](Node& self) {
        accumulate(self, 0, [&](std::vector<double>& g) {
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        });
        accumulate(self, 1, [&](std::vector<double>& g) {
            for (std::size_t r = 0; r < n; ++r) {
                for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[r * c + j];
            }
        });
    });
}

Tensor transpose(const Tensor& x) {
    require_2d(x, "transpose");
    const std::size_t m = x.rows(), n = x.cols();
    std::vector<double> out(x.size());
    for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < n; ++c) out[c * m + r] = x[r * n + c];
    }
    return Tensor::from_op("transpose", {n, m}, std::move(out), {x}, [m, n](Node& self) {
        accumulate(self, 0, [&](std::vector<double>& g) {
            for (std::size_t r = 0; r < m; ++r) {
                for (std::size_t c = 0; c < n; ++c) g[r * n + c] += self.grad[c * m + r];
            }
        });
    });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
    const AxisView v = axis_view(x.shape(), axis, "softmax");
    std::vector<double> out(x.size());
    for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t in = 0; in < v.inner; ++in) {
            const std::size_t base = o * v.extent * v.inner + in;
            double mx = x[base];
            for (std::size_t k = 1; k < v.extent; ++k) mx = std::max(mx, x[base + k * v.inner]);
            double total = 0.0;
            for (std::size_t k = 0; k < v.extent; ++k) {
                const double e = std::exp(x[base + k * v.inner] - mx);
                out[base + k * v.inner] = e;
                total += e;
            }
            for (std::size_t k = 0; k < v.extent; ++k) out[base + k * v.inner] /= total;
        }
    }
    return Tensor::from_op("softmax", x.shape(), std::move(out), {x}, [v](Node& self) {
        accumulate(self, 0, [&](std::vector<double>& g) {
            for (std::size_t o = 0; o < v.outer; ++o) {
                for (std::size_t in = 0; in < v.inner; ++in) {
                    const std::size_t base = o * v.extent * v.inner + in;
                    double dot = 0.0;
                    for (std::size_t k = 0; k < v.extent; ++k) {
                        const std::size_t i = base + k * v.inner;
                        dot += self.grad[i] * self.data[i];
                    }
                    for (std::size_t k = 0; k < v.extent; ++k) {
                        const std::size_t i = base + k * v.inner;
                        g[i] += self.data[i] * (self.grad[i] - dot);
                    }
                }
            }
        });
    });
}

Tensor mean(const Tensor& x, std::size_t axis) {
    const AxisView v = axis_view(x.shape(), axis, "mean");
    Shape out_shape = x.shape();
    out_shape[axis] = 1;
    std::vector<double> out(v.outer * v.inner, 0.0);
    const double inv = 1.0 / static_cast<double>(v.extent);
    for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t k = 0; k < v.extent; ++k) {
            for (std::size_t in = 0; in < v.inner; ++in) {
                out[o * v.inner + in] += x[(o * v.extent + k) * v.inner + in] * inv;
            }
        }
    }
    return Tensor::from_op("mean", std::move(out_shape), std::move(out), {x}, [v, inv](Node& self) {
        accumulate(self, 0, [&](std::vector<double>& g) {
            for (std::size_t o = 0; o < v.outer; ++o) {
                for (std::size_t k = 0; k < v.extent; ++k) {
                    for (std::size_t in = 0; in < v.inner; ++in) {
                        g[(o * v.extent + k) * v.inner + in] += self.grad[o * v.inner + in] * inv;
                    }
                }
            }
        });
    });
}

Tensor sum(const Tensor& x) {
    double total = 0.0;
    for (double d : x.data()) total += d;
    return Tensor::from_op("sum", {1}, {total}, {x}, [](Node& self) {
        accumulate(self, 0, [&](std::vector<double>& g) {
            for (double& gi : g) gi += self.grad[0];
        });
    });
}

Tensor mean_all(const Tensor& x) {
    return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps) {
    require_2d(x, "layer_norm");
    const std::size_t n = x.rows(), c = x.cols();
    if (gain.size() != c || shift.size() != c) {
        throw DimensionError("layer_norm: affine parameters do not match width " + std::to_string(c));
    }
    std::vector<double> out(x.size());
    std::vector<double> xhat(x.size());
    std::vector<double> inv_std(n);
    for (std::size_t r = 0; r < n; ++r) {
        double mu = 0.0;
        for (std::size_t j = 0; j < c; ++j) mu += x[r * c + j];
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double d = x[r * c + j] - mu;
            var += d * d;
        }
        var /= static_cast<double>(c);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < c; ++j) {
            const std::size_t i = r * c + j;
            xhat[i] = (x[i] - mu) * inv_std[r];
            out[i] = xhat[i] * gain[j] + shift[j];
        }
    }
    return Tensor::from_op(
        "layer_norm", x.shape(), std::move(out), {x, gain, shift},
        [n, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
            const auto& gv = parent(self, 1).data;
            accumulate(self, 1, [&](std::vector<double>& g) {
                for (std::size_t i = 0; i < n * c; ++i) g[i % c] += self.grad[i] * xhat[i];
            });
            accumulate(self, 2, [&](std::vector<double>& g) {
                for (std::size_t i = 0; i < n * c; ++i) g[i % c] += self.grad[i];
            });
            accumulate(self, 0, [&](std::vector<double>& g) {
                const double inv_c = 1.0 / static_cast<double>(c);
                for (std::size_t r = 0; r < n; ++r) {
                    double mean_dy = 0.0, mean_dy_xhat = 0.0;
                    for (std::size_t j = 0; j < c; ++j) {
                        const std::size_t i = r * c + j;
                        const double dy = self.grad[i] * gv[j];
                        mean_dy += dy;
                        mean_dy_xhat += dy * xhat[i];
                    }
                    mean_dy *= inv_c;
                    mean_dy_xhat *= inv_c;
                    for (std::size_t j = 0; j < c; ++j) {
                        const std::size_t i = r * c + j;
                        const double dy = self.grad[i] * gv[j];
                        g[i] += inv_std[r] * (dy - mean_dy - xhat[i] * mean_dy_xhat);
                    }
                }
            });
        });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
    require_2d(x, "slice_cols");
    const std::size_t n = x.rows(), c = x.cols();
    if (count == 0 || begin + count > c) {
        throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " +
                             std::to_string(begin + count) + ") outside width " + std::to_string(c));
    }
    std::vector<double> out(n * count);
    for (std::size_t r = 0; r < n; ++r) {
        std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(r * c + begin), count,
                    out.begin() + static_cast<std::ptrdiff_t>(r * count));
    }
    return Tensor::from_op("slice_cols", {n, count}, std::move(out), {x}, [n, c, begin, count](Node& self) {
        accumulate(self, 0, [&](std::vector<double>& g) {
            for (std::size_t r = 0; r < n; ++r) {
                for (std::size_t j = 0; j < count; ++j) g[r * c + begin + j] += self.grad[r * count + j];
            }
        });
    });
}

Tensor concat_cols(std::span<const Tensor> parts) {
    if (parts.empty()) throw UsageError("concat_cols: no inputs");
    const std::size_t n = parts[0].rows();
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        require_2d(p, "concat_cols");
        if (p.rows() != n) throw DimensionError("concat_cols: row counts differ");
        widths.push_back(p.cols());
        total += p.cols();
    }
    std::vector<double> out(n * total);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t j = 0; j < widths[k]; ++j) out[r * total + offset + j] = parts[k][r * widths[k] + j];
        }
        offset += widths[k];
    }
    std::vector<Tensor> parents(parts.begin(), parts.end());
    return Tensor::from_op("concat_cols", {n, total}, std::move(out), std::move(parents),
                           [n, total, widths](Node& self) {
                               std::size_t off = 0;
                               for (std::size_t k = 0; k < widths.size(); ++k) {
                                   accumulate(self, k, [&](std::vector<double>& g) {
                                       for (std::size_t r = 0; r < n; ++r) {
                                           for (std::size_t j = 0; j < widths[k]; ++j) {
                                               g[r * widths[k] + j] += self.grad[r * total + off + j];
                                           }
                                       }
                                   });
                                   off += widths[k];
                               }
                           });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
    require_2d(x, "gather_rows");
    const std::size_t n = x.rows(), c = x.cols();
    if (rows.empty()) throw DimensionError("gather_rows: empty index list");
    std::vector<double> out(rows.size() * c);
    for (std::size_t k = 0; k < rows.size(); ++k) {
        if (rows[k] >= n) throw DimensionError("gather_rows: row index out of range");
        std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(rows[k] * c), c,
                    out.begin() + static_cast<std::ptrdiff_t>(k * c));
    }
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    return Tensor::from_op("gather_rows", {idx.size(), c}, std::move(out), {x}, [idx, c](Node& self) {
        accumulate(self, 0, [&](std::vector<double>& g) {
            for (std::size_t k = 0; k < idx.size(); ++k) {
                for (std::size_t j = 0; j < c; ++j) g[idx[k] * c + j] += self.grad[k * c + j];
            }
        });
    });
}

}  // namespace detlab::ad
