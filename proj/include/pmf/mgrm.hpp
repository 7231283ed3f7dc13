#pragma once

#include "pmf/nn.hpp"

namespace pmf {

/// 3x3 deformable convolution whose sampling offsets come from a 3x3
/// conv over the same input. The offset predictor starts at zero, so a
/// fresh layer computes an ordinary 3x3 convolution.
template <typename Scalar>
class DeformConv2d {
public:
    DeformConv2d() = default;
    DeformConv2d(const Scope<Scalar>& scope, int in_channels, int out_channels);

    Var<Scalar> operator()(const Var<Scalar>& x) const { return apply(x, predict_offsets(x)); }

    Var<Scalar> predict_offsets(const Var<Scalar>& x) const { return offset_predictor_(x); }

    /// Runs the sampling conv with caller-supplied offsets (n, 18, h, w).
    Var<Scalar> apply(const Var<Scalar>& x, const Var<Scalar>& offsets) const
    {
        return deform_conv2d(x, offsets, weight_, bias_, same_padding(3));
    }

    [[nodiscard]] const Var<Scalar>& weight() const { return weight_; }
    [[nodiscard]] const Var<Scalar>& bias() const { return bias_; }
    [[nodiscard]] const Conv2d<Scalar>& offset_predictor() const { return offset_predictor_; }

private:
    Conv2d<Scalar> offset_predictor_;
    Var<Scalar> weight_;
    Var<Scalar> bias_;
};

template <typename Scalar>
struct MgrmOutput {
    Var<Scalar> refined;   ///< deformable(u) + mask * f_r
    Var<Scalar> mask;      ///< RGB gate at the fine scale
    Var<Scalar> upsampled; ///< the stream resized to f_r's size (u)
};

/// Mask-guided refinement of one RGB level by the coarser semantic stream.
template <typename Scalar>
class Mgrm {
public:
    Mgrm() = default;
    Mgrm(const Scope<Scalar>& scope, int channels);

    /// sigmoid(3x3 -> ReLU -> 1x1) over the stream, one channel.
    Var<Scalar> rgb_mask(const Var<Scalar>& stream) const;

    /// Upsamples the stream bilinearly to rgb's size, gates rgb with the
    /// mask computed on the upsampled stream, and adds the deformable conv
    /// of the upsampled stream.
    MgrmOutput<Scalar> refine(const Var<Scalar>& stream, const Var<Scalar>& rgb) const;

    [[nodiscard]] const DeformConv2d<Scalar>& deformable() const { return deform_; }

private:
    Conv2d<Scalar> mask_conv_;
    Conv2d<Scalar> mask_out_;
    DeformConv2d<Scalar> deform_;
    int channels_ = 0;
};

} // namespace pmf
