// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fedconv/autodiff.hpp"

namespace fedconv {

/// Output extent of a convolution along one axis: (in + 2p - k) / s + 1.
/// Throws ConfigError when the padded input is smaller than the kernel.
std::size_t conv_out_dim(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding);

/// Output extent of a transposed convolution: (in - 1) * s - 2p + k.
std::size_t tconv_out_dim(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding);

// Differentiable ops. All of them record into the graph that owns the inputs.

/// input [N, C_in, H, W], kernel [C_out, C_in, k1, k2] -> [N, C_out, H', W'].
Var conv2d(Var input, Var kernel, std::size_t stride = 1, std::size_t padding = 0);

/// input [N, C_in, H, W], kernel [C_in, C_out, k1, k2] -> [N, C_out, H', W'].
/// Exact adjoint of conv2d with the same kernel tensor and geometry.
Var transposed_conv2d(Var input, Var kernel, std::size_t stride = 1, std::size_t padding = 0);

/// x [N, I], weight [O, I] -> x * weight^T, shape [N, O].
Var linear(Var x, Var weight);

/// Adds bias[C] along axis 1 of x ([N, C] or [N, C, H, W]).
Var add_bias(Var x, Var bias);

Var add(Var a, Var b);
Var scale(Var x, double factor);
/// Multiplies every element of x by the single element of `factor`.
Var scale_by(Var x, Var factor);

Var relu(Var x);

/// Modified leaky ReLU: slope_pos * x for x >= 0, slope_neg * x otherwise.
/// The subgradient at 0 is slope_pos.
Var mlr(Var x, double slope_pos, double slope_neg);

/// magnitude[o] * direction[o] / ||direction[o]||, per leading-axis slice.
/// `magnitude` holds one entry per slice of `direction` along axis 0.
Var weight_norm(Var direction, Var magnitude);

Var reshape(Var x, Shape shape);

/// Mean over the batch of -log softmax(logits)[label].
Var cross_entropy(Var logits, std::span<const int> labels);

Var sum(Var x);
/// <a, b> as a one-element tensor.
Var dot(Var a, Var b);

/// weight [O, I, k1, k2] -> slice [1, 1, O, I] at kernel position (row, col).
Var kernel_slice(Var weight, std::size_t row, std::size_t col);

/// Inverse of kernel_slice: k1*k2 slices [1, 1, O, I] in row-major kernel
/// order -> [O, I, k1, k2].
Var stack_kernel_slices(std::span<const Var> slices, std::size_t k1, std::size_t k2);

}  // namespace fedconv
