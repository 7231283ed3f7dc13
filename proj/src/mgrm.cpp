#include "pmf/mgrm.hpp"

namespace pmf {

template <typename Scalar>
DeformConv2d<Scalar>::DeformConv2d(const Scope<Scalar>& scope, int in_channels, int out_channels)
    : offset_predictor_(scope.child("offset"), in_channels, 2 * 3 * 3, 3, same_padding(3), WeightInit::zeros)
{
    // Reuse Conv2d's initialisation for the sampling weights.
    Conv2d<Scalar> sampling(scope, in_channels, out_channels, 3, same_padding(3));
    weight_ = sampling.weight();
    bias_ = sampling.bias();
}

template <typename Scalar>
Mgrm<Scalar>::Mgrm(const Scope<Scalar>& scope, int channels)
    : mask_conv_(scope.child("mask.conv1"), channels, channels, 3, same_padding(3)),
      mask_out_(scope.child("mask.out"), channels, 1, 1, ConvGeometry{}),
      deform_(scope.child("deform"), channels, channels),
      channels_(channels)
{
}

template <typename Scalar>
Var<Scalar> Mgrm<Scalar>::rgb_mask(const Var<Scalar>& stream) const
{
    return sigmoid(mask_out_(relu(mask_conv_(stream))));
}

template <typename Scalar>
MgrmOutput<Scalar> Mgrm<Scalar>::refine(const Var<Scalar>& stream, const Var<Scalar>& rgb) const
{
    const Shape& ss = stream.shape();
    const Shape& rs = rgb.shape();
    if (ss.c != channels_ || rs.c != channels_ || ss.n != rs.n) {
        throw ContractError("mgrm: stream " + to_string(ss) + " and rgb " + to_string(rs) +
                            " must both have " + std::to_string(channels_) + " channels");
    }
    MgrmOutput<Scalar> out;
    out.upsampled = resize_bilinear(stream, rs.h, rs.w);
    out.mask = rgb_mask(out.upsampled);
    out.refined = deform_(out.upsampled) + gate(out.mask, rgb);
    return out;
}

template class DeformConv2d<float>;
template class DeformConv2d<double>;
template class Mgrm<float>;
template class Mgrm<double>;

} // namespace pmf
