#pragma once

#include <vector>

#include "pmf/autograd.hpp"
#include "pmf/tensor.hpp"

namespace pmf {

/// Stride is always 1; output size is h + 2*padding - dilation*(k-1).
struct ConvGeometry {
    int padding = 0;
    int dilation = 1;
};

/// Same-size geometry for an odd kernel.
inline ConvGeometry same_padding(int kernel, int dilation = 1)
{
    return ConvGeometry{dilation * (kernel - 1) / 2, dilation};
}

// Differentiable primitives. Weights are (out, in, k, k); biases are
// (1, out, 1, 1) and may be an undefined Var.

template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias, ConvGeometry geometry);

/// Deformable convolution with per-location sampling offsets
/// (n, 2*k*k, h_out, w_out), laid out as (dy, dx) pairs per kernel tap in
/// row-major tap order. Samples falling outside the image read zero.
template <typename Scalar>
Var<Scalar> deform_conv2d(const Var<Scalar>& x, const Var<Scalar>& offsets, const Var<Scalar>& weight,
                          const Var<Scalar>& bias, ConvGeometry geometry);

/// 2x2 max pooling with stride 2; spatial dims must be even.
template <typename Scalar>
Var<Scalar> max_pool2(const Var<Scalar>& x);

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& x);

template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& x);

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b);

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& x, Scalar factor);

/// Elementwise product of a single-channel mask broadcast over every
/// channel of x.
template <typename Scalar>
Var<Scalar> gate(const Var<Scalar>& mask, const Var<Scalar>& x);

template <typename Scalar>
Var<Scalar> concat_channels(const std::vector<Var<Scalar>>& parts);

/// Half-pixel-centred bilinear resize (edges clamped).
template <typename Scalar>
Var<Scalar> resize_bilinear(const Var<Scalar>& x, int height, int width);

template <typename Scalar>
Var<Scalar> global_avg_pool(const Var<Scalar>& x);

/// Batch normalization over (n, h, w) per channel. In training mode the
/// running statistics are updated in place.
template <typename Scalar>
Var<Scalar> batch_norm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                       Var<Scalar>& running_mean, Var<Scalar>& running_var, bool training, Scalar momentum,
                       Scalar eps);

/// Mean binary cross-entropy of sigmoid(logits) against a {0,1} target.
template <typename Scalar>
Var<Scalar> bce_with_logits(const Var<Scalar>& logits, const Tensor<Scalar>& target);

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& x);

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& x);

/// sum(x * weights); weights are constant.
template <typename Scalar>
Var<Scalar> weighted_sum(const Var<Scalar>& x, const Tensor<Scalar>& weights);

// Plain tensor kernels shared with data loading.

template <typename Scalar>
Tensor<Scalar> resize_bilinear(const Tensor<Scalar>& x, int height, int width);

/// Nearest-neighbour resize using floor(dst * in / out).
template <typename Scalar>
Tensor<Scalar> resize_nearest(const Tensor<Scalar>& x, int height, int width);

} // namespace pmf
