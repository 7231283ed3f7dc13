#include "pmf/mgfa.hpp"

namespace pmf {

template <typename Scalar>
DenseBlock<Scalar>::DenseBlock(const Scope<Scalar>& scope, int channels, DenseBlockConfig config)
{
    if (config.layers <= 0 || config.growth <= 0) {
        throw ConfigError("dense block needs positive depth and growth");
    }
    int width = channels;
    for (int i = 0; i < config.layers; ++i) {
        layers_.emplace_back(scope.child("layer" + std::to_string(i + 1)), width, config.growth, 3,
                             same_padding(3));
        width += config.growth;
    }
    projection_input_width_ = width;
    project_ = ConvBnRelu<Scalar>(scope.child("project"), width, channels, 1, ConvGeometry{});
}

template <typename Scalar>
Var<Scalar> DenseBlock<Scalar>::operator()(const Var<Scalar>& x, Mode mode) const
{
    std::vector<Var<Scalar>> features{x};
    for (const auto& layer : layers_) {
        features.push_back(layer(concat_channels(features), mode));
    }
    return project_(concat_channels(features), mode);
}

template <typename Scalar>
Mgfa<Scalar>::Mgfa(const Scope<Scalar>& scope, int channels, DenseBlockConfig dense)
    : mask_conv1_(scope.child("mask.conv1"), channels, channels, 3, same_padding(3)),
      mask_conv2_(scope.child("mask.conv2"), channels, channels, 3, same_padding(3)),
      mask_out_(scope.child("mask.out"), channels, 1, 1, ConvGeometry{}),
      dense_(scope.child("dense"), channels, dense),
      project_(scope.child("aggregate"), 3 * channels, channels, 1, ConvGeometry{}),
      channels_(channels)
{
}

template <typename Scalar>
Var<Scalar> Mgfa<Scalar>::depth_mask(const Var<Scalar>& stream) const
{
    return sigmoid(mask_out_(relu(mask_conv2_(relu(mask_conv1_(stream))))));
}

template <typename Scalar>
MgfaOutput<Scalar> Mgfa<Scalar>::aggregate(const Var<Scalar>& refined_rgb, const Var<Scalar>& gated_depth,
                                           const Var<Scalar>& dense, Mode mode) const
{
    for (const auto* v : {&refined_rgb, &gated_depth, &dense}) {
        if (v->shape().c != channels_ || !v->shape().same_spatial(refined_rgb.shape())) {
            throw ContractError("mgfa aggregate: expected " + std::to_string(channels_) +
                                " channels at a common size, got " + to_string(v->shape()));
        }
    }
    return {project_(concat_channels<Scalar>({refined_rgb, gated_depth, dense}), mode), Var<Scalar>()};
}

template <typename Scalar>
MgfaOutput<Scalar> Mgfa<Scalar>::operator()(const Var<Scalar>& stream, const Var<Scalar>& refined_rgb,
                                            const Var<Scalar>& depth, Mode mode) const
{
    if (!stream.shape().same_spatial(depth.shape())) {
        throw ContractError("mgfa: stream " + to_string(stream.shape()) + " and depth " + to_string(depth.shape()) +
                            " differ in size");
    }
    Var<Scalar> mask = depth_mask(stream);
    Var<Scalar> gated = gate_depth(mask, depth);
    Var<Scalar> dense = dense_block(stream, mode);
    MgfaOutput<Scalar> out = aggregate(refined_rgb, gated, dense, mode);
    out.mask = mask;
    return out;
}

template class DenseBlock<float>;
template class DenseBlock<double>;
template class Mgfa<float>;
template class Mgfa<double>;

} // namespace pmf
