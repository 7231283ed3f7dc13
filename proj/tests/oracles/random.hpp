#pragma once

#include <random>

#include "pmf/tensor.hpp"

namespace oracle {

template <typename Scalar>
pmf::Tensor<Scalar> uniform(pmf::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0)
{
    std::uniform_real_distribution<double> dist(lo, hi);
    pmf::Tensor<Scalar> t(shape);
    for (std::ptrdiff_t i = 0; i < t.numel(); ++i) {
        t.array()[i] = static_cast<Scalar>(dist(rng));
    }
    return t;
}

/// Entries in {0,1} with the given probability of 1.
template <typename Scalar>
pmf::Tensor<Scalar> bernoulli(pmf::Shape shape, std::mt19937_64& rng, double p = 0.5)
{
    std::bernoulli_distribution dist(p);
    pmf::Tensor<Scalar> t(shape);
    for (std::ptrdiff_t i = 0; i < t.numel(); ++i) {
        t.array()[i] = dist(rng) ? Scalar(1) : Scalar(0);
    }
    return t;
}

template <typename Scalar>
double max_abs_diff(const pmf::Tensor<Scalar>& a, const pmf::Tensor<Scalar>& b)
{
    if (!(a.shape() == b.shape())) {
        return 1e300;
    }
    return static_cast<double>((a.array() - b.array()).abs().maxCoeff());
}

} // namespace oracle
