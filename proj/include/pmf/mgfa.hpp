#pragma once

#include <vector>

#include "pmf/nn.hpp"

namespace pmf {

struct DenseBlockConfig {
    int layers = 3;
    int growth = 32;

    friend bool operator==(const DenseBlockConfig&, const DenseBlockConfig&) = default;
};

/// Mask-guided feature aggregation output. `mask` is the sigmoid gate,
/// kept for inspection and debug dumps.
template <typename Scalar>
struct MgfaOutput {
    Var<Scalar> fused;
    Var<Scalar> mask;
};

/// Densely connected 3x3 conv stack: layer k sees the input concatenated
/// with every earlier layer's output; a 1x1 projection maps the final
/// concatenation (channels + layers*growth wide) back to `channels`.
template <typename Scalar>
class DenseBlock {
public:
    DenseBlock() = default;
    DenseBlock(const Scope<Scalar>& scope, int channels, DenseBlockConfig config);

    Var<Scalar> operator()(const Var<Scalar>& x, Mode mode) const;

    [[nodiscard]] int projection_input_width() const { return projection_input_width_; }
    [[nodiscard]] const std::vector<ConvBnRelu<Scalar>>& layers() const { return layers_; }

private:
    std::vector<ConvBnRelu<Scalar>> layers_;
    ConvBnRelu<Scalar> project_;
    int projection_input_width_ = 0;
};

/// Depth gating, dense enrichment of the semantic stream, and projected
/// concatenation of refined RGB, gated depth and dense features.
template <typename Scalar>
class Mgfa {
public:
    Mgfa() = default;
    Mgfa(const Scope<Scalar>& scope, int channels, DenseBlockConfig dense);

    /// sigmoid(3x3 -> ReLU -> 3x3 -> ReLU -> 1x1) over the stream, one channel.
    Var<Scalar> depth_mask(const Var<Scalar>& stream) const;

    Var<Scalar> dense_block(const Var<Scalar>& stream, Mode mode) const { return dense_(stream, mode); }

    /// Concatenates (refined rgb, gated depth, dense) in that order and
    /// projects 3C -> C with a 1x1 conv, batch norm and ReLU.
    MgfaOutput<Scalar> aggregate(const Var<Scalar>& refined_rgb, const Var<Scalar>& gated_depth,
                                 const Var<Scalar>& dense, Mode mode) const;

    /// All three steps: mask from the stream, gate depth, densify the
    /// stream, aggregate with the refined RGB features.
    MgfaOutput<Scalar> operator()(const Var<Scalar>& stream, const Var<Scalar>& refined_rgb,
                                  const Var<Scalar>& depth, Mode mode) const;

    [[nodiscard]] const DenseBlock<Scalar>& dense() const { return dense_; }
    [[nodiscard]] int channels() const { return channels_; }

private:
    Conv2d<Scalar> mask_conv1_;
    Conv2d<Scalar> mask_conv2_;
    Conv2d<Scalar> mask_out_;
    DenseBlock<Scalar> dense_;
    ConvBnRelu<Scalar> project_;
    int channels_ = 0;
};

/// Gates depth features with a broadcast single-channel mask.
template <typename Scalar>
Var<Scalar> gate_depth(const Var<Scalar>& mask, const Var<Scalar>& depth)
{
    return gate(mask, depth);
}

} // namespace pmf
