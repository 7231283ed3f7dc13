#include "pmf/nn.hpp"

#include <cmath>

namespace pmf {

template <typename Scalar>
void ParameterRegistry<Scalar>::check_unique(const std::string& name) const
{
    if (find(name).defined()) {
        throw ContractError("duplicate parameter name: " + name);
    }
}

template <typename Scalar>
Var<Scalar> ParameterRegistry<Scalar>::add_parameter(std::string name, Tensor<Scalar> init)
{
    check_unique(name);
    Var<Scalar> v(std::move(init), true);
    parameters_.push_back({std::move(name), v});
    return v;
}

template <typename Scalar>
Var<Scalar> ParameterRegistry<Scalar>::add_buffer(std::string name, Tensor<Scalar> init)
{
    check_unique(name);
    Var<Scalar> v(std::move(init), false);
    buffers_.push_back({std::move(name), v});
    return v;
}

template <typename Scalar>
std::vector<NamedVar<Scalar>> ParameterRegistry<Scalar>::state() const
{
    std::vector<NamedVar<Scalar>> all = parameters_;
    all.insert(all.end(), buffers_.begin(), buffers_.end());
    return all;
}

template <typename Scalar>
std::size_t ParameterRegistry<Scalar>::parameter_count() const
{
    std::size_t total = 0;
    for (const auto& p : parameters_) {
        total += static_cast<std::size_t>(p.var.value().numel());
    }
    return total;
}

template <typename Scalar>
void ParameterRegistry<Scalar>::zero_grad()
{
    for (auto& p : parameters_) {
        p.var.zero_grad();
    }
}

template <typename Scalar>
Var<Scalar> ParameterRegistry<Scalar>::find(const std::string& name) const
{
    for (const auto* list : {&parameters_, &buffers_}) {
        for (const auto& p : *list) {
            if (p.name == name) {
                return p.var;
            }
        }
    }
    return {};
}

template <typename Scalar>
Conv2d<Scalar>::Conv2d(const Scope<Scalar>& scope, int in_channels, int out_channels, int kernel,
                       ConvGeometry geometry, WeightInit init, bool with_bias)
    : geometry_(geometry)
{
    Tensor<Scalar> w(Shape{out_channels, in_channels, kernel, kernel});
    if (init == WeightInit::he_normal) {
        const double stddev = std::sqrt(2.0 / (static_cast<double>(in_channels) * kernel * kernel));
        std::normal_distribution<double> dist(0.0, stddev);
        for (std::ptrdiff_t i = 0; i < w.numel(); ++i) {
            w.array()[i] = static_cast<Scalar>(dist(scope.rng()));
        }
    }
    weight_ = scope.registry().add_parameter(scope.qualified("weight"), std::move(w));
    if (with_bias) {
        bias_ = scope.registry().add_parameter(scope.qualified("bias"), Tensor<Scalar>(Shape{1, out_channels, 1, 1}));
    }
}

template <typename Scalar>
BatchNorm2d<Scalar>::BatchNorm2d(const Scope<Scalar>& scope, int channels)
{
    const Shape s{1, channels, 1, 1};
    gamma_ = scope.registry().add_parameter(scope.qualified("weight"), Tensor<Scalar>(s, Scalar(1)));
    beta_ = scope.registry().add_parameter(scope.qualified("bias"), Tensor<Scalar>(s));
    running_mean_ = scope.registry().add_buffer(scope.qualified("running_mean"), Tensor<Scalar>(s));
    running_var_ = scope.registry().add_buffer(scope.qualified("running_var"), Tensor<Scalar>(s, Scalar(1)));
}

template <typename Scalar>
Var<Scalar> BatchNorm2d<Scalar>::operator()(const Var<Scalar>& x, Mode mode) const
{
    return batch_norm(x, gamma_, beta_, running_mean_, running_var_, mode == Mode::train, Scalar(0.1),
                      Scalar(1e-5));
}

template <typename Scalar>
ConvBnRelu<Scalar>::ConvBnRelu(const Scope<Scalar>& scope, int in_channels, int out_channels, int kernel,
                               ConvGeometry geometry)
    : conv_(scope.child("conv"), in_channels, out_channels, kernel, geometry),
      bn_(scope.child("bn"), out_channels)
{
}

template class ParameterRegistry<float>;
template class ParameterRegistry<double>;
template class Conv2d<float>;
template class Conv2d<double>;
template class BatchNorm2d<float>;
template class BatchNorm2d<double>;
template class ConvBnRelu<float>;
template class ConvBnRelu<double>;

} // namespace pmf
