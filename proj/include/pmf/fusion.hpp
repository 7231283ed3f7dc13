#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "pmf/backbone.hpp"
#include "pmf/mgfa.hpp"
#include "pmf/mgrm.hpp"

namespace pmf {

enum class FusionMode {
    mgfa, ///< gated depth + dense stream + projected concatenation
    add,  ///< plain summation of refined RGB, raw depth and the stream
};

std::string to_string(FusionMode mode);
FusionMode parse_fusion_mode(const std::string& text);

struct ModelConfig {
    int num_scales = 5;
    FusionMode fusion_mode = FusionMode::mgfa;
    int common_channels = 64;
    int input_size = 256;
    bool use_aspp = true;
    bool use_mgrm = true;
    bool use_depth = true;
    std::vector<int> aspp_rates{6, 12, 18};
    DenseBlockConfig dense{};
    std::filesystem::path pretrained;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Throws ConfigError on out-of-range values or inconsistent toggles.
void validate(const ModelConfig& config);

/// Full model restricted to the deepest `num_scales` scales with the
/// given fusion mode. num_scales must be 3, 4 or 5.
ModelConfig configure(int num_scales, FusionMode mode);

/// Per-scale dataflow stages, reported to an optional observer.
enum class Stage {
    refine_rgb, ///< mask-guided refinement of the RGB level
    gate_depth, ///< depth mask, gating and dense enrichment
    aggregate,  ///< fusion and the residual sum with the refined RGB
};

using StageObserver = std::function<void(Stage, int level)>;

template <typename Scalar>
struct ScaleOutput {
    int level = 0;
    Var<Scalar> output;     ///< fused features carried to the next scale
    Var<Scalar> logits;     ///< prediction upsampled to the input size
    Var<Scalar> rgb_mask;   ///< undefined without refinement
    Var<Scalar> depth_mask; ///< undefined outside mgfa mode
};

template <typename Scalar>
struct SaliencyOutput {
    /// Deepest scale first; the last entry is the shallowest used scale.
    std::vector<ScaleOutput<Scalar>> scales;
    /// sigmoid of the shallowest scale's logits, in [0,1].
    Var<Scalar> final;

    [[nodiscard]] std::vector<Var<Scalar>> logits() const
    {
        std::vector<Var<Scalar>> out;
        for (const auto& s : scales) {
            out.push_back(s.logits);
        }
        return out;
    }
};

/// Two-stream progressive multi-scale fusion network.
///
/// RGB and depth images pass through independent VGG19 trunks. The deepest
/// RGB level seeds the semantic stream via ASPP (or a 1x1 unit when ASPP is
/// off). From the deepest used scale to the shallowest, each scale refines
/// its RGB level with the upsampled stream, gates its depth level with a
/// stream-predicted mask, fuses both with a dense enrichment of the stream,
/// adds the refined RGB back, predicts a deep-supervised saliency map, and
/// hands the result to the next finer scale.
template <typename Scalar>
class PmfNet {
public:
    explicit PmfNet(ModelConfig config, std::uint64_t seed = 0);

    /// rgb is (n,3,s,s), depth (n,1,s,s), both in [0,1].
    SaliencyOutput<Scalar> forward(const Tensor<Scalar>& rgb, const Tensor<Scalar>& depth, Mode mode) const;

    /// Runs the decoder on precomputed pyramids. depth may be null when the
    /// model has no depth stream. Throws ContractError on mismatched pyramids.
    SaliencyOutput<Scalar> decode(const FeaturePyramid<Scalar>& rgb, const FeaturePyramid<Scalar>* depth,
                                  Mode mode) const;

    FeaturePyramid<Scalar> extract_rgb(const Tensor<Scalar>& rgb) const { return rgb_stream_.extract(rgb); }
    FeaturePyramid<Scalar> extract_depth(const Tensor<Scalar>& depth) const;

    [[nodiscard]] const ModelConfig& config() const { return config_; }
    [[nodiscard]] ParameterRegistry<Scalar>& registry() { return *registry_; }
    [[nodiscard]] const ParameterRegistry<Scalar>& registry() const { return *registry_; }
    [[nodiscard]] std::size_t parameter_count() const { return registry_->parameter_count(); }
    [[nodiscard]] std::map<std::string, Shape> parameter_shapes() const;

    [[nodiscard]] int shallowest_level() const { return kPyramidLevels + 1 - config_.num_scales; }

    [[nodiscard]] const Vgg19Stream<Scalar>& rgb_stream() const { return rgb_stream_; }
    [[nodiscard]] const Vgg19Stream<Scalar>& depth_stream() const { return depth_stream_; }
    [[nodiscard]] const Mgfa<Scalar>& mgfa(int level) const { return mgfa_.at(static_cast<std::size_t>(level - 1)); }
    [[nodiscard]] const Mgrm<Scalar>& mgrm(int level) const { return mgrm_.at(static_cast<std::size_t>(level - 1)); }

    void set_observer(StageObserver observer) { observer_ = std::move(observer); }

private:
    void notify(Stage stage, int level) const
    {
        if (observer_) {
            observer_(stage, level);
        }
    }

    ModelConfig config_;
    std::unique_ptr<ParameterRegistry<Scalar>> registry_;
    Vgg19Stream<Scalar> rgb_stream_;
    Vgg19Stream<Scalar> depth_stream_;
    Aspp<Scalar> aspp_;
    ConvBnRelu<Scalar> seed_projection_;
    std::array<Mgrm<Scalar>, kPyramidLevels> mgrm_;
    std::array<Mgfa<Scalar>, kPyramidLevels> mgfa_;
    std::array<Conv2d<Scalar>, kPyramidLevels> head_hidden_;
    std::array<Conv2d<Scalar>, kPyramidLevels> head_out_;
    StageObserver observer_;
};

} // namespace pmf
