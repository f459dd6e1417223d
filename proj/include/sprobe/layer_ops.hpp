#pragma once

#include <cstdint>
#include <vector>

#include "sprobe/tensor.hpp"

// Batched layer primitives shared by the differentiation core and the
// relevance propagation rules. Activations are (N, C, H, W) or (N, F).
namespace sprobe::ops {

// "Same" zero padding, stride 1, odd kernel. bias may be empty.
Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor& bias);
Tensor conv2d_backward_input(const Tensor& grad_output, const Tensor& weight, const Shape& input_shape);
// Accumulates into grad_weight / grad_bias.
void conv2d_backward_params(const Tensor& input, const Tensor& grad_output, Tensor& grad_weight, Tensor& grad_bias);

Tensor dense_forward(const Tensor& input, const Tensor& weight, const Tensor& bias);
Tensor dense_backward_input(const Tensor& grad_output, const Tensor& weight);
void dense_backward_params(const Tensor& input, const Tensor& grad_output, Tensor& grad_weight, Tensor& grad_bias);

// Non-overlapping pooling with kernel == stride == size. argmax receives, per
// output element, the flat index into the same sample's input; ties go to the
// first maximum in row-major window order.
Tensor maxpool_forward(const Tensor& input, std::size_t size, std::vector<std::uint32_t>* argmax);
Tensor maxpool_backward(const Tensor& grad_output, const std::vector<std::uint32_t>& argmax,
                        const Shape& input_shape);

// Elementwise positive / negative parts.
Tensor positive_part(const Tensor& t);
Tensor negative_part(const Tensor& t);

}  // namespace sprobe::ops
