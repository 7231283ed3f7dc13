#include "pmf/backbone.hpp"

#include <set>

#include "pmf/tensor_file.hpp"

namespace pmf {

void validate(const BackboneConfig& config)
{
    if (config.common_channels <= 0) {
        throw ConfigError("common_channels must be positive");
    }
    std::set<int> seen;
    for (int r : config.aspp_rates) {
        if (r <= 0) {
            throw ConfigError("aspp_rates must be positive, got " + std::to_string(r));
        }
        if (!seen.insert(r).second) {
            throw ConfigError("aspp_rates must be distinct, " + std::to_string(r) + " repeats");
        }
    }
    if (config.aspp_rates.empty()) {
        throw ConfigError("aspp_rates must not be empty");
    }
}

template <typename Scalar>
Tensor<Scalar> prepare_backbone_input(const Tensor<Scalar>& image)
{
    constexpr std::array<double, 3> kMean{0.485, 0.456, 0.406};
    constexpr std::array<double, 3> kStd{0.229, 0.224, 0.225};
    const Shape& s = image.shape();
    if (s.c != 1 && s.c != 3) {
        throw ContractError("backbone input must have 1 or 3 channels, got " + to_string(s));
    }
    Tensor<Scalar> out(Shape{s.n, 3, s.h, s.w});
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < 3; ++c) {
            const int src = s.c == 1 ? 0 : c;
            out.plane(n, c) = ((image.plane(n, src).array() - Scalar(kMean[c])) / Scalar(kStd[c])).matrix();
        }
    }
    return out;
}

template <typename Scalar>
Vgg19Stream<Scalar>::Vgg19Stream(const Scope<Scalar>& scope, int common_channels, int first_level)
    : first_level_(first_level)
{
    if (first_level < 1 || first_level > kPyramidLevels) {
        throw ConfigError("first pyramid level must be in [1,5]");
    }
    int in = 3;
    for (int stage = 0; stage < kPyramidLevels; ++stage) {
        std::vector<Conv2d<Scalar>> convs;
        for (int i = 0; i < kStageDepth[stage]; ++i) {
            const std::string name = "conv" + std::to_string(stage + 1) + "_" + std::to_string(i + 1);
            convs.emplace_back(scope.child(name), in, kStageChannels[stage], 3, same_padding(3));
            trunk_params_.push_back({name + ".weight", convs.back().weight()});
            trunk_params_.push_back({name + ".bias", convs.back().bias()});
            in = kStageChannels[stage];
        }
        stages_.push_back(std::move(convs));
        if (stage + 1 >= first_level) {
            laterals_[stage] = Conv2d<Scalar>(scope.child("lateral" + std::to_string(stage + 1)), in,
                                              common_channels, 1, ConvGeometry{});
        }
    }
}

template <typename Scalar>
FeaturePyramid<Scalar> Vgg19Stream<Scalar>::extract(const Tensor<Scalar>& image) const
{
    const Shape& s = image.shape();
    if (s.h != s.w || s.h <= 0 || s.h % 16 != 0) {
        throw ConfigError("input size must be square and divisible by 16, got " + to_string(s));
    }
    return (*this)(Var<Scalar>(prepare_backbone_input(image)));
}

template <typename Scalar>
FeaturePyramid<Scalar> Vgg19Stream<Scalar>::operator()(const Var<Scalar>& prepared) const
{
    const Shape& s = prepared.shape();
    if (s.h != s.w || s.h % 16 != 0) {
        throw ConfigError("input size must be square and divisible by 16, got " + to_string(s));
    }
    FeaturePyramid<Scalar> pyramid;
    pyramid.input_size = s.h;
    Var<Scalar> x = prepared;
    for (int stage = 0; stage < kPyramidLevels; ++stage) {
        if (stage > 0) {
            x = max_pool2(x);
        }
        for (const auto& conv : stages_[static_cast<std::size_t>(stage)]) {
            x = relu(conv(x));
        }
        if (stage + 1 >= first_level_) {
            pyramid.levels[static_cast<std::size_t>(stage)] = laterals_[static_cast<std::size_t>(stage)](x);
        }
    }
    return pyramid;
}

template <typename Scalar>
void load_pretrained_vgg19(const Vgg19Stream<Scalar>& stream, const std::filesystem::path& path)
{
    const TensorFile file = read_tensor_file(path);
    for (const auto& p : stream.trunk_parameters()) {
        const Tensor<float>* src = file.find(p.name);
        if (src == nullptr) {
            throw DataError("pretrained file " + path.string() + " lacks " + p.name);
        }
        if (!(src->shape() == p.var.shape())) {
            throw DataError("pretrained tensor " + p.name + " has shape " + to_string(src->shape()) +
                            ", expected " + to_string(p.var.shape()));
        }
        Var<Scalar> target = p.var;
        target.mutable_value() = src->template cast<Scalar>();
    }
}

template <typename Scalar>
Aspp<Scalar>::Aspp(const Scope<Scalar>& scope, int channels, const std::vector<int>& rates)
    : pointwise_(scope.child("branch0"), channels, channels, 1, ConvGeometry{}),
      pool_conv_(scope.child("pool"), channels, channels, 1, ConvGeometry{})
{
    for (std::size_t i = 0; i < rates.size(); ++i) {
        atrous_.emplace_back(scope.child("branch" + std::to_string(i + 1)), channels, channels, 3,
                             same_padding(3, rates[i]));
    }
    const int concat_width = channels * static_cast<int>(rates.size() + 2);
    project_ = ConvBnRelu<Scalar>(scope.child("project"), concat_width, channels, 1, ConvGeometry{});
}

template <typename Scalar>
Var<Scalar> Aspp<Scalar>::operator()(const Var<Scalar>& x, Mode mode) const
{
    const Shape& s = x.shape();
    std::vector<Var<Scalar>> branches;
    branches.reserve(atrous_.size() + 2);
    branches.push_back(pointwise_(x, mode));
    for (const auto& b : atrous_) {
        branches.push_back(b(x, mode));
    }
    // No batch norm on the pooled branch: a 1x1 map has no spatial statistics.
    branches.push_back(resize_bilinear(relu(pool_conv_(global_avg_pool(x))), s.h, s.w));
    return project_(concat_channels(branches), mode);
}

template Tensor<float> prepare_backbone_input(const Tensor<float>&);
template Tensor<double> prepare_backbone_input(const Tensor<double>&);
template class Vgg19Stream<float>;
template class Vgg19Stream<double>;
template void load_pretrained_vgg19(const Vgg19Stream<float>&, const std::filesystem::path&);
template void load_pretrained_vgg19(const Vgg19Stream<double>&, const std::filesystem::path&);
template class Aspp<float>;
template class Aspp<double>;

} // namespace pmf
