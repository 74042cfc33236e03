#pragma once

#include "bugscope/network.hpp"

// Raw per-layer kernels shared by the gradient engine and relevance rules.
namespace bugscope::detail {

// Dense or Conv2D applied to x, optionally without the bias term.
Tensor linear_forward(const Layer& layer, const Tensor& x, bool with_bias);

// Transpose of the linear map of a Dense or Conv2D layer applied to g.
Tensor linear_backward_input(const Layer& layer, const Shape& input_shape, const Tensor& g);

// Flat offset of the first maximum in the pooling window (oh, ow, ch).
std::size_t pool_argmax(const MaxPool2D& p, const Tensor& x, std::size_t oh, std::size_t ow,
                        std::size_t ch);

}  // namespace bugscope::detail
