#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "pmf/nn.hpp"

namespace pmf {

inline constexpr int kPyramidLevels = 5;

struct BackboneConfig {
    int common_channels = 64;
    /// Optional tensor file holding VGG19 weights under conv{stage}_{i}.* keys.
    std::filesystem::path pretrained;
    std::vector<int> aspp_rates{6, 12, 18};
};

/// Throws ConfigError unless width is positive and the ASPP rates are
/// distinct positive integers.
void validate(const BackboneConfig& config);

enum class Stream { rgb, depth };

/// Five feature maps, level i at input_size / 2^(i-1). Levels shallower
/// than the stream's first projected level stay undefined.
template <typename Scalar>
struct FeaturePyramid {
    std::array<Var<Scalar>, kPyramidLevels> levels;
    int input_size = 0;

    [[nodiscard]] const Var<Scalar>& level(int i) const { return levels.at(static_cast<std::size_t>(i - 1)); }
};

/// Spatial side of level i for input side s.
inline int level_size(int input_size, int level) { return input_size >> (level - 1); }

/// Converts an (n, 3|1, s, s) image in [0,1] to backbone input: single
/// channel maps are replicated to three channels, then ImageNet mean/std
/// normalization is applied.
template <typename Scalar>
Tensor<Scalar> prepare_backbone_input(const Tensor<Scalar>& image);

/// VGG19 convolutional trunk with one 1x1 lateral projection per tapped
/// stage. Taps are the ReLU outputs of conv1_2, conv2_2, conv3_4, conv4_4
/// and conv5_4; the classifier and the final pool are not built.
template <typename Scalar>
class Vgg19Stream {
public:
    static constexpr std::array<int, kPyramidLevels> kStageChannels{64, 128, 256, 512, 512};
    static constexpr std::array<int, kPyramidLevels> kStageDepth{2, 2, 4, 4, 4};

    Vgg19Stream() = default;
    /// Laterals are built for levels first_level..5 only.
    Vgg19Stream(const Scope<Scalar>& scope, int common_channels, int first_level = 1);

    /// image is (n, c, s, s) with c in {1, 3} and values in [0,1].
    /// Throws ConfigError when s is not divisible by 16.
    FeaturePyramid<Scalar> extract(const Tensor<Scalar>& image) const;

    /// Same as extract, on an already prepared 3-channel input.
    FeaturePyramid<Scalar> operator()(const Var<Scalar>& prepared) const;

    [[nodiscard]] const std::vector<NamedVar<Scalar>>& trunk_parameters() const { return trunk_params_; }
    [[nodiscard]] int first_level() const { return first_level_; }

private:
    std::vector<std::vector<Conv2d<Scalar>>> stages_;
    std::array<Conv2d<Scalar>, kPyramidLevels> laterals_;
    std::vector<NamedVar<Scalar>> trunk_params_;
    int first_level_ = 1;
};

/// Copies conv{stage}_{i}.{weight,bias} tensors from a tensor file into a
/// stream's trunk. Throws DataError on a missing key or shape mismatch.
template <typename Scalar>
void load_pretrained_vgg19(const Vgg19Stream<Scalar>& stream, const std::filesystem::path& path);

/// Atrous spatial pyramid pooling over the deepest RGB level: a 1x1
/// branch, one dilated 3x3 branch per rate, and a global-pool branch,
/// concatenated and projected back to the input width.
template <typename Scalar>
class Aspp {
public:
    Aspp() = default;
    Aspp(const Scope<Scalar>& scope, int channels, const std::vector<int>& rates);

    Var<Scalar> operator()(const Var<Scalar>& x, Mode mode) const;

    [[nodiscard]] const ConvBnRelu<Scalar>& pointwise_branch() const { return pointwise_; }
    [[nodiscard]] const std::vector<ConvBnRelu<Scalar>>& atrous_branches() const { return atrous_; }
    [[nodiscard]] const Conv2d<Scalar>& pool_branch() const { return pool_conv_; }
    [[nodiscard]] const ConvBnRelu<Scalar>& projection() const { return project_; }

private:
    ConvBnRelu<Scalar> pointwise_;
    std::vector<ConvBnRelu<Scalar>> atrous_;
    Conv2d<Scalar> pool_conv_;
    ConvBnRelu<Scalar> project_;
};

} // namespace pmf
