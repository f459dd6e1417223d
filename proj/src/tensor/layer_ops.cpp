#include "sprobe/layer_ops.hpp"

#include <Eigen/Core>
#include <algorithm>

#include "sprobe/errors.hpp"

namespace sprobe::ops {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

struct ConvGeometry {
    std::size_t batch, in_c, out_c, height, width, kernel, pad;
    std::size_t plane() const { return height * width; }
    std::size_t col_rows() const { return in_c * kernel * kernel; }
};

ConvGeometry conv_geometry(const Shape& input_shape, const Tensor& weight) {
    if (input_shape.size() != 4 || weight.rank() != 4) {
        throw ConfigError("conv2d expects (N,C,H,W) input and (O,I,k,k) weight");
    }
    if (weight.dim(1) != input_shape[1]) {
        throw ConfigError("conv2d channel mismatch: input " + shape_string(input_shape) + ", weight " +
                          shape_string(weight.shape()));
    }
    const std::size_t k = weight.dim(2);
    if (k % 2 == 0 || weight.dim(3) != k) throw ConfigError("conv2d kernel must be square and odd");
    return {input_shape[0], input_shape[1], weight.dim(0), input_shape[2], input_shape[3], k, k / 2};
}

void im2col(const double* in, const ConvGeometry& g, RowMat& col) {
    const auto H = static_cast<std::ptrdiff_t>(g.height);
    const auto W = static_cast<std::ptrdiff_t>(g.width);
    const auto k = static_cast<std::ptrdiff_t>(g.kernel);
    const auto p = static_cast<std::ptrdiff_t>(g.pad);
    col.resize(static_cast<Eigen::Index>(g.col_rows()), static_cast<Eigen::Index>(g.plane()));
    for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(g.in_c); ++c) {
        const double* src = in + c * H * W;
        for (std::ptrdiff_t ki = 0; ki < k; ++ki) {
            for (std::ptrdiff_t kj = 0; kj < k; ++kj) {
                double* dst = col.data() + ((c * k + ki) * k + kj) * H * W;
                const std::ptrdiff_t dx = kj - p;
                const std::ptrdiff_t x_lo = std::max<std::ptrdiff_t>(0, -dx);
                const std::ptrdiff_t x_hi = std::min<std::ptrdiff_t>(W, W - dx);
                for (std::ptrdiff_t y = 0; y < H; ++y) {
                    double* row = dst + y * W;
                    const std::ptrdiff_t sy = y + ki - p;
                    if (sy < 0 || sy >= H || x_lo >= x_hi) {
                        std::fill(row, row + W, 0.0);
                        continue;
                    }
                    std::fill(row, row + x_lo, 0.0);
                    std::copy(src + sy * W + x_lo + dx, src + sy * W + x_hi + dx, row + x_lo);
                    std::fill(row + x_hi, row + W, 0.0);
                }
            }
        }
    }
}

void col2im_add(const RowMat& col, const ConvGeometry& g, double* out) {
    const auto H = static_cast<std::ptrdiff_t>(g.height);
    const auto W = static_cast<std::ptrdiff_t>(g.width);
    const auto k = static_cast<std::ptrdiff_t>(g.kernel);
    const auto p = static_cast<std::ptrdiff_t>(g.pad);
    for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(g.in_c); ++c) {
        double* dst = out + c * H * W;
        for (std::ptrdiff_t ki = 0; ki < k; ++ki) {
            for (std::ptrdiff_t kj = 0; kj < k; ++kj) {
                const double* src = col.data() + ((c * k + ki) * k + kj) * H * W;
                const std::ptrdiff_t dx = kj - p;
                const std::ptrdiff_t x_lo = std::max<std::ptrdiff_t>(0, -dx);
                const std::ptrdiff_t x_hi = std::min<std::ptrdiff_t>(W, W - dx);
                for (std::ptrdiff_t y = 0; y < H; ++y) {
                    const std::ptrdiff_t sy = y + ki - p;
                    if (sy < 0 || sy >= H) continue;
                    const double* row = src + y * W;
                    double* target = dst + sy * W + dx;
                    for (std::ptrdiff_t x = x_lo; x < x_hi; ++x) target[x] += row[x];
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    const auto g = conv_geometry(input.shape(), weight);
    Tensor out({g.batch, g.out_c, g.height, g.width});
    ConstMapMat w(weight.data(), static_cast<Eigen::Index>(g.out_c), static_cast<Eigen::Index>(g.col_rows()));
    RowMat col;
    const std::size_t in_stride = g.in_c * g.plane();
    const std::size_t out_stride = g.out_c * g.plane();
    for (std::size_t n = 0; n < g.batch; ++n) {
        im2col(input.data() + n * in_stride, g, col);
        MapMat o(out.data() + n * out_stride, static_cast<Eigen::Index>(g.out_c),
                 static_cast<Eigen::Index>(g.plane()));
        o.noalias() = w * col;
        if (!bias.empty()) {
            for (std::size_t c = 0; c < g.out_c; ++c) o.row(static_cast<Eigen::Index>(c)).array() += bias[c];
        }
    }
    return out;
}

Tensor conv2d_backward_input(const Tensor& grad_output, const Tensor& weight, const Shape& input_shape) {
    const auto g = conv_geometry(input_shape, weight);
    Tensor grad_in(input_shape);
    ConstMapMat w(weight.data(), static_cast<Eigen::Index>(g.out_c), static_cast<Eigen::Index>(g.col_rows()));
    RowMat dcol;
    const std::size_t in_stride = g.in_c * g.plane();
    const std::size_t out_stride = g.out_c * g.plane();
    for (std::size_t n = 0; n < g.batch; ++n) {
        ConstMapMat go(grad_output.data() + n * out_stride, static_cast<Eigen::Index>(g.out_c),
                       static_cast<Eigen::Index>(g.plane()));
        dcol.noalias() = w.transpose() * go;
        col2im_add(dcol, g, grad_in.data() + n * in_stride);
    }
    return grad_in;
}

void conv2d_backward_params(const Tensor& input, const Tensor& grad_output, Tensor& grad_weight, Tensor& grad_bias) {
    const auto g = conv_geometry(input.shape(), grad_weight);
    MapMat dw(grad_weight.data(), static_cast<Eigen::Index>(g.out_c), static_cast<Eigen::Index>(g.col_rows()));
    RowMat col;
    const std::size_t in_stride = g.in_c * g.plane();
    const std::size_t out_stride = g.out_c * g.plane();
    for (std::size_t n = 0; n < g.batch; ++n) {
        im2col(input.data() + n * in_stride, g, col);
        ConstMapMat go(grad_output.data() + n * out_stride, static_cast<Eigen::Index>(g.out_c),
                       static_cast<Eigen::Index>(g.plane()));
        dw.noalias() += go * col.transpose();
        if (!grad_bias.empty()) {
            for (std::size_t c = 0; c < g.out_c; ++c) {
                const double* row = grad_output.data() + n * out_stride + c * g.plane();
                for (std::size_t i = 0; i < g.plane(); ++i) grad_bias[c] += row[i];
            }
        }
    }
}

Tensor dense_forward(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    if (input.rank() != 2 || weight.rank() != 2 || weight.dim(1) != input.dim(1)) {
        throw ConfigError("dense shape mismatch: input " + shape_string(input.shape()) + ", weight " +
                          shape_string(weight.shape()));
    }
    const auto n = static_cast<Eigen::Index>(input.dim(0));
    const auto in_f = static_cast<Eigen::Index>(input.dim(1));
    const auto out_f = static_cast<Eigen::Index>(weight.dim(0));
    Tensor out({input.dim(0), weight.dim(0)});
    ConstMapMat x(input.data(), n, in_f);
    ConstMapMat w(weight.data(), out_f, in_f);
    MapMat y(out.data(), n, out_f);
    y.noalias() = x * w.transpose();
    if (!bias.empty()) {
        for (Eigen::Index r = 0; r < n; ++r) {
            for (Eigen::Index c = 0; c < out_f; ++c) y(r, c) += bias[static_cast<std::size_t>(c)];
        }
    }
    return out;
}

Tensor dense_backward_input(const Tensor& grad_output, const Tensor& weight) {
    const auto n = static_cast<Eigen::Index>(grad_output.dim(0));
    const auto in_f = static_cast<Eigen::Index>(weight.dim(1));
    const auto out_f = static_cast<Eigen::Index>(weight.dim(0));
    Tensor grad_in({grad_output.dim(0), weight.dim(1)});
    ConstMapMat go(grad_output.data(), n, out_f);
    ConstMapMat w(weight.data(), out_f, in_f);
    MapMat gi(grad_in.data(), n, in_f);
    gi.noalias() = go * w;
    return grad_in;
}

void dense_backward_params(const Tensor& input, const Tensor& grad_output, Tensor& grad_weight, Tensor& grad_bias) {
    const auto n = static_cast<Eigen::Index>(input.dim(0));
    const auto in_f = static_cast<Eigen::Index>(input.dim(1));
    const auto out_f = static_cast<Eigen::Index>(grad_output.dim(1));
    ConstMapMat x(input.data(), n, in_f);
    ConstMapMat go(grad_output.data(), n, out_f);
    MapMat dw(grad_weight.data(), out_f, in_f);
    dw.noalias() += go.transpose() * x;
    if (!grad_bias.empty()) {
        for (Eigen::Index r = 0; r < n; ++r) {
            for (Eigen::Index c = 0; c < out_f; ++c) grad_bias[static_cast<std::size_t>(c)] += go(r, c);
        }
    }
}

Tensor maxpool_forward(const Tensor& input, std::size_t size, std::vector<std::uint32_t>* argmax) {
    if (input.rank() != 4) throw ConfigError("maxpool expects (N,C,H,W) input");
    const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const std::size_t oh = H / size, ow = W / size;
    if (oh == 0 || ow == 0) throw ConfigError("maxpool window larger than input " + shape_string(input.shape()));
    Tensor out({N, C, oh, ow});
    if (argmax) argmax->assign(out.size(), 0);
    std::size_t o = 0;
    for (std::size_t n = 0; n < N; ++n) {
        const double* sample = input.data() + n * C * H * W;
        for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t y = 0; y < oh; ++y) {
                for (std::size_t x = 0; x < ow; ++x, ++o) {
                    std::size_t best = (c * H + y * size) * W + x * size;
                    double best_v = sample[best];
                    for (std::size_t dy = 0; dy < size; ++dy) {
                        for (std::size_t dx = 0; dx < size; ++dx) {
                            const std::size_t idx = (c * H + y * size + dy) * W + x * size + dx;
                            if (sample[idx] > best_v) {
                                best_v = sample[idx];
                                best = idx;
                            }
                        }
                    }
                    out[o] = best_v;
                    if (argmax) (*argmax)[o] = static_cast<std::uint32_t>(best);
                }
            }
        }
    }
    return out;
}

Tensor maxpool_backward(const Tensor& grad_output, const std::vector<std::uint32_t>& argmax,
                        const Shape& input_shape) {
    Tensor grad_in(input_shape);
    const std::size_t N = input_shape[0];
    const std::size_t in_stride = shape_product(input_shape) / N;
    const std::size_t out_stride = grad_output.size() / N;
    for (std::size_t n = 0; n < N; ++n) {
        double* dst = grad_in.data() + n * in_stride;
        for (std::size_t i = 0; i < out_stride; ++i) {
            dst[argmax[n * out_stride + i]] += grad_output[n * out_stride + i];
        }
    }
    return grad_in;
}

Tensor positive_part(const Tensor& t) {
    Tensor out = t;
    for (auto& v : out.values()) v = std::max(v, 0.0);
    return out;
}

Tensor negative_part(const Tensor& t) {
    Tensor out = t;
    for (auto& v : out.values()) v = std::min(v, 0.0);
    return out;
}

}  // namespace sprobe::ops
