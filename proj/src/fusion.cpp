#include "pmf/fusion.hpp"

namespace pmf {

std::string to_string(FusionMode mode)
{
    return mode == FusionMode::mgfa ? "mgfa" : "add";
}

FusionMode parse_fusion_mode(const std::string& text)
{
    if (text == "mgfa") {
        return FusionMode::mgfa;
    }
    if (text == "add") {
        return FusionMode::add;
    }
    throw ConfigError("fusion_mode must be 'mgfa' or 'add', got '" + text + "'");
}

void validate(const ModelConfig& config)
{
    if (config.num_scales < 3 || config.num_scales > 5) {
        throw ConfigError("num_scales must be 3, 4 or 5, got " + std::to_string(config.num_scales));
    }
    if (config.input_size <= 0 || config.input_size % 16 != 0) {
        throw ConfigError("input_size must be a positive multiple of 16, got " + std::to_string(config.input_size));
    }
    if (config.fusion_mode == FusionMode::mgfa && !config.use_depth) {
        throw ConfigError("fusion_mode 'mgfa' needs the depth stream");
    }
    if (config.dense.layers <= 0 || config.dense.growth <= 0) {
        throw ConfigError("dense block depth and growth must be positive");
    }
    validate(BackboneConfig{config.common_channels, config.pretrained, config.aspp_rates});
}

ModelConfig configure(int num_scales, FusionMode mode)
{
    ModelConfig config;
    config.num_scales = num_scales;
    config.fusion_mode = mode;
    validate(config);
    return config;
}

template <typename Scalar>
PmfNet<Scalar>::PmfNet(ModelConfig config, std::uint64_t seed)
    : config_(std::move(config)), registry_(std::make_unique<ParameterRegistry<Scalar>>())
{
    validate(config_);
    std::mt19937_64 rng(seed);
    const Scope<Scalar> root(*registry_, rng);
    const int c = config_.common_channels;
    const int first = shallowest_level();

    rgb_stream_ = Vgg19Stream<Scalar>(root.child("rgb_stream"), c, first);
    if (config_.use_depth) {
        depth_stream_ = Vgg19Stream<Scalar>(root.child("depth_stream"), c, first);
    }
    if (config_.use_aspp) {
        aspp_ = Aspp<Scalar>(root.child("aspp"), c, config_.aspp_rates);
    } else {
        seed_projection_ = ConvBnRelu<Scalar>(root.child("seed_projection"), c, c, 1, ConvGeometry{});
    }
    for (int level = kPyramidLevels; level >= first; --level) {
        const auto i = static_cast<std::size_t>(level - 1);
        const std::string suffix = ".s" + std::to_string(level);
        if (config_.use_mgrm) {
            mgrm_[i] = Mgrm<Scalar>(root.child("mgrm" + suffix), c);
        }
        if (config_.fusion_mode == FusionMode::mgfa) {
            mgfa_[i] = Mgfa<Scalar>(root.child("mgfa" + suffix), c, config_.dense);
        }
        head_hidden_[i] = Conv2d<Scalar>(root.child("head" + suffix + ".conv1"), c, c, 3, same_padding(3));
        head_out_[i] = Conv2d<Scalar>(root.child("head" + suffix + ".out"), c, 1, 1, ConvGeometry{});
    }

    if (!config_.pretrained.empty()) {
        load_pretrained_vgg19(rgb_stream_, config_.pretrained);
        if (config_.use_depth) {
            load_pretrained_vgg19(depth_stream_, config_.pretrained);
        }
    }
}

template <typename Scalar>
FeaturePyramid<Scalar> PmfNet<Scalar>::extract_depth(const Tensor<Scalar>& depth) const
{
    if (!config_.use_depth) {
        throw ContractError("model was built without a depth stream");
    }
    return depth_stream_.extract(depth);
}

template <typename Scalar>
std::map<std::string, Shape> PmfNet<Scalar>::parameter_shapes() const
{
    std::map<std::string, Shape> shapes;
    for (const auto& p : registry_->parameters()) {
        shapes.emplace(p.name, p.var.shape());
    }
    return shapes;
}

template <typename Scalar>
SaliencyOutput<Scalar> PmfNet<Scalar>::forward(const Tensor<Scalar>& rgb, const Tensor<Scalar>& depth,
                                               Mode mode) const
{
    const Shape& rs = rgb.shape();
    const Shape& ds = depth.shape();
    if (rs.c != 3 || ds.c != 1 || rs.n != ds.n || !rs.same_spatial(ds)) {
        throw ContractError("forward expects rgb (n,3,s,s) and depth (n,1,s,s), got " + to_string(rs) + " and " +
                            to_string(ds));
    }
    const FeaturePyramid<Scalar> rgb_pyr = extract_rgb(rgb);
    if (!config_.use_depth) {
        return decode(rgb_pyr, nullptr, mode);
    }
    const FeaturePyramid<Scalar> depth_pyr = extract_depth(depth);
    return decode(rgb_pyr, &depth_pyr, mode);
}

template <typename Scalar>
SaliencyOutput<Scalar> PmfNet<Scalar>::decode(const FeaturePyramid<Scalar>& rgb, const FeaturePyramid<Scalar>* depth,
                                              Mode mode) const
{
    const int first = shallowest_level();
    const int size = rgb.input_size;
    const int c = config_.common_channels;

    // Validate both pyramids before any compute.
    if (config_.use_depth && depth == nullptr) {
        throw ContractError("decode: depth pyramid required");
    }
    for (int level = kPyramidLevels; level >= first; --level) {
        const Var<Scalar>& fr = rgb.level(level);
        if (!fr.defined() || fr.shape().c != c || fr.shape().h != level_size(size, level)) {
            throw ContractError("decode: rgb level " + std::to_string(level) + " does not match width " +
                                std::to_string(c) + " and input size " + std::to_string(size));
        }
        if (depth != nullptr) {
            const Var<Scalar>& fd = depth->level(level);
            if (depth->input_size != size || !fd.defined() || !(fd.shape() == fr.shape())) {
                throw ContractError("decode: depth level " + std::to_string(level) + " mismatches rgb level");
            }
        }
    }

    SaliencyOutput<Scalar> result;
    Var<Scalar> stream = config_.use_aspp ? aspp_(rgb.level(kPyramidLevels), mode)
                                          : seed_projection_(rgb.level(kPyramidLevels), mode);

    for (int level = kPyramidLevels; level >= first; --level) {
        const auto i = static_cast<std::size_t>(level - 1);
        const Var<Scalar>& fr = rgb.level(level);
        ScaleOutput<Scalar> scale_out;
        scale_out.level = level;

        Var<Scalar> refined_rgb = fr;
        Var<Scalar> upsampled;
        if (config_.use_mgrm) {
            MgrmOutput<Scalar> m = mgrm_[i].refine(stream, fr);
            refined_rgb = m.refined;
            upsampled = m.upsampled;
            scale_out.rgb_mask = m.mask;
        } else {
            upsampled = resize_bilinear(stream, fr.shape().h, fr.shape().w);
        }
        notify(Stage::refine_rgb, level);

        Var<Scalar> fused;
        if (config_.fusion_mode == FusionMode::mgfa) {
            const Mgfa<Scalar>& mgfa = mgfa_[i];
            Var<Scalar> mask = mgfa.depth_mask(upsampled);
            Var<Scalar> gated = gate_depth(mask, depth->level(level));
            Var<Scalar> dense = mgfa.dense_block(upsampled, mode);
            scale_out.depth_mask = mask;
            notify(Stage::gate_depth, level);
            fused = mgfa.aggregate(refined_rgb, gated, dense, mode).fused;
        } else {
            notify(Stage::gate_depth, level);
            fused = depth != nullptr ? refined_rgb + depth->level(level) + upsampled : refined_rgb + upsampled;
        }
        scale_out.output = fused + refined_rgb;
        notify(Stage::aggregate, level);

        Var<Scalar> head = head_out_[i](relu(head_hidden_[i](scale_out.output)));
        scale_out.logits = resize_bilinear(head, size, size);
        stream = scale_out.output;
        result.scales.push_back(std::move(scale_out));
    }
    result.final = sigmoid(result.scales.back().logits);
    return result;
}

template class PmfNet<float>;
template class PmfNet<double>;

} // namespace pmf
