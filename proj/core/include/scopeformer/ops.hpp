#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "scopeformer/tensor.hpp"

namespace scopeformer {

// Elementwise. Binary ops require identical shapes; there is no implicit
// broadcasting. Use broadcast_add / broadcast_mul for explicit trailing-axis
// broadcasts (biases, positional tables, per-channel affine).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& x);
/// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor scale(const Tensor& x, double factor);

/// `b`'s shape must equal the trailing axes of `x`; `b` is added to every
/// leading slice.
Tensor broadcast_add(const Tensor& x, const Tensor& b);
Tensor broadcast_mul(const Tensor& x, const Tensor& b);

/// Prepends a new leading axis of extent `n`, repeating `x`.
Tensor expand(const Tensor& x, std::size_t n);

/// [..., M, K] x [..., K, N] -> [..., M, N]; leading extents must match.
Tensor matmul(const Tensor& a, const Tensor& b);

enum class Padding { Same, Valid };

/// NHWC input, HWIO weights (k x k x Cin x Cout). Same padding pads k/2
/// on every side.
Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride, Padding padding);

/// NHWC input, k x k x C weights, one filter per channel.
Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, std::size_t stride, Padding padding);

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                               Padding padding);

Tensor softmax(const Tensor& x, int axis);

/// Normalizes over the last axis with population variance.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor concat(std::span<const Tensor> parts, int axis);
Tensor concat(std::initializer_list<Tensor> parts, int axis);
Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x, std::vector<std::size_t> perm);
/// Half-open range [begin, end) along `axis`.
Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end);

/// Reductions drop the reduced axis; reducing a rank-1 tensor yields shape {1}.
Tensor sum(const Tensor& x, int axis);
Tensor mean(const Tensor& x, int axis);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

/// Inverted dropout: elements whose draw in [0,1) falls below `p` are zeroed,
/// the rest scaled by 1/(1-p). One draw per element.
Tensor dropout(const Tensor& x, double p, std::span<const double> uniform_draws);

/// Caps worker threads used inside ops. Results do not depend on it.
void set_num_threads(std::size_t n);
std::size_t num_threads();

}  // namespace scopeformer
