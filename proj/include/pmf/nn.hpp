#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "pmf/autograd.hpp"
#include "pmf/ops.hpp"

namespace pmf {

enum class Mode { train, eval };

template <typename Scalar>
struct NamedVar {
    std::string name;
    Var<Scalar> var;
};

/// Owns the ordered list of trainable parameters and persistent buffers
/// of a model under dotted, namespaced names.
template <typename Scalar>
class ParameterRegistry {
public:
    Var<Scalar> add_parameter(std::string name, Tensor<Scalar> init);
    Var<Scalar> add_buffer(std::string name, Tensor<Scalar> init);

    [[nodiscard]] const std::vector<NamedVar<Scalar>>& parameters() const { return parameters_; }
    [[nodiscard]] const std::vector<NamedVar<Scalar>>& buffers() const { return buffers_; }

    /// Parameters and buffers, in registration order.
    [[nodiscard]] std::vector<NamedVar<Scalar>> state() const;

    [[nodiscard]] std::size_t parameter_count() const;
    void zero_grad();

    /// Locates a parameter or buffer by name; returns an undefined Var when absent.
    [[nodiscard]] Var<Scalar> find(const std::string& name) const;

private:
    void check_unique(const std::string& name) const;

    std::vector<NamedVar<Scalar>> parameters_;
    std::vector<NamedVar<Scalar>> buffers_;
};

/// Registration context handed to module constructors: a registry, the
/// current name prefix, and the initialisation RNG.
template <typename Scalar>
class Scope {
public:
    Scope(ParameterRegistry<Scalar>& registry, std::mt19937_64& rng, std::string prefix = {})
        : registry_(&registry), rng_(&rng), prefix_(std::move(prefix))
    {
    }

    [[nodiscard]] Scope child(const std::string& name) const
    {
        return Scope(*registry_, *rng_, prefix_.empty() ? name : prefix_ + "." + name);
    }

    [[nodiscard]] std::string qualified(const std::string& name) const
    {
        return prefix_.empty() ? name : prefix_ + "." + name;
    }

    ParameterRegistry<Scalar>& registry() const { return *registry_; }
    std::mt19937_64& rng() const { return *rng_; }
    const std::string& prefix() const { return prefix_; }

private:
    ParameterRegistry<Scalar>* registry_;
    std::mt19937_64* rng_;
    std::string prefix_;
};

enum class WeightInit {
    he_normal, ///< N(0, 2 / fan_in)
    zeros,
};

template <typename Scalar>
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(const Scope<Scalar>& scope, int in_channels, int out_channels, int kernel, ConvGeometry geometry,
           WeightInit init = WeightInit::he_normal, bool with_bias = true);

    Var<Scalar> operator()(const Var<Scalar>& x) const { return conv2d(x, weight_, bias_, geometry_); }

    [[nodiscard]] const Var<Scalar>& weight() const { return weight_; }
    [[nodiscard]] const Var<Scalar>& bias() const { return bias_; }
    [[nodiscard]] ConvGeometry geometry() const { return geometry_; }
    [[nodiscard]] int out_channels() const { return weight_.shape().n; }

private:
    Var<Scalar> weight_;
    Var<Scalar> bias_;
    ConvGeometry geometry_{};
};

template <typename Scalar>
class BatchNorm2d {
public:
    BatchNorm2d() = default;
    BatchNorm2d(const Scope<Scalar>& scope, int channels);

    Var<Scalar> operator()(const Var<Scalar>& x, Mode mode) const;

private:
    Var<Scalar> gamma_;
    Var<Scalar> beta_;
    // Buffers are mutated through shared handles in training mode.
    mutable Var<Scalar> running_mean_;
    mutable Var<Scalar> running_var_;
};

/// conv -> batch norm -> ReLU, the decoder's standard unit.
template <typename Scalar>
class ConvBnRelu {
public:
    ConvBnRelu() = default;
    ConvBnRelu(const Scope<Scalar>& scope, int in_channels, int out_channels, int kernel,
               ConvGeometry geometry);

    Var<Scalar> operator()(const Var<Scalar>& x, Mode mode) const { return relu(bn_(conv_(x), mode)); }

    [[nodiscard]] const Conv2d<Scalar>& conv() const { return conv_; }

private:
    Conv2d<Scalar> conv_;
    BatchNorm2d<Scalar> bn_;
};

} // namespace pmf
