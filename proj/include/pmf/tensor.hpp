#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <ostream>
#include <string>

#include "pmf/errors.hpp"

namespace pmf {

/// Extent of a 4-d NCHW tensor. Convolution weights reuse it as
/// (out_channels, in_channels, kernel_h, kernel_w).
struct Shape {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    [[nodiscard]] std::ptrdiff_t numel() const
    {
        return static_cast<std::ptrdiff_t>(n) * c * h * w;
    }
    [[nodiscard]] std::ptrdiff_t plane_size() const { return static_cast<std::ptrdiff_t>(h) * w; }
    [[nodiscard]] bool same_spatial(const Shape& o) const { return h == o.h && w == o.w; }

    friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::ostream& operator<<(std::ostream& os, const Shape& s)
{
    return os << '[' << s.n << ',' << s.c << ',' << s.h << ',' << s.w << ']';
}

inline std::string to_string(const Shape& s)
{
    return "[" + std::to_string(s.n) + "," + std::to_string(s.c) + "," + std::to_string(s.h) + "," +
           std::to_string(s.w) + "]";
}

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense NCHW tensor backed by a contiguous Eigen array.
template <typename Scalar>
class Tensor {
public:
    using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
    using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
    using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

    Tensor() = default;

    explicit Tensor(Shape shape) : shape_(shape), data_(Storage::Zero(shape.numel())) {}

    Tensor(Shape shape, Scalar fill) : shape_(shape), data_(Storage::Constant(shape.numel(), fill)) {}

    Tensor(Shape shape, Storage data) : shape_(shape), data_(std::move(data))
    {
        if (data_.size() != shape_.numel()) {
            throw ContractError("tensor storage size does not match shape " + to_string(shape_));
        }
    }

    [[nodiscard]] const Shape& shape() const { return shape_; }
    [[nodiscard]] std::ptrdiff_t numel() const { return data_.size(); }
    [[nodiscard]] bool empty() const { return data_.size() == 0; }

    Storage& array() { return data_; }
    const Storage& array() const { return data_; }
    Scalar* data() { return data_.data(); }
    const Scalar* data() const { return data_.data(); }

    Scalar& operator()(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
    Scalar operator()(int n, int c, int y, int x) const { return data_[index(n, c, y, x)]; }

    [[nodiscard]] std::ptrdiff_t index(int n, int c, int y, int x) const
    {
        return ((static_cast<std::ptrdiff_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
    }

    /// Sample n viewed as a channels x (h*w) matrix.
    MatrixMap matrix(int n)
    {
        return MatrixMap(data_.data() + static_cast<std::ptrdiff_t>(n) * shape_.c * shape_.plane_size(), shape_.c,
                         shape_.plane_size());
    }
    ConstMatrixMap matrix(int n) const
    {
        return ConstMatrixMap(data_.data() + static_cast<std::ptrdiff_t>(n) * shape_.c * shape_.plane_size(),
                              shape_.c, shape_.plane_size());
    }

    /// One channel of one sample viewed as an h x w matrix.
    MatrixMap plane(int n, int c) { return MatrixMap(data_.data() + index(n, c, 0, 0), shape_.h, shape_.w); }
    ConstMatrixMap plane(int n, int c) const
    {
        return ConstMatrixMap(data_.data() + index(n, c, 0, 0), shape_.h, shape_.w);
    }

    /// Weight tensors viewed as out x (in*kh*kw).
    MatrixMap as_weight_matrix()
    {
        return MatrixMap(data_.data(), shape_.n, static_cast<std::ptrdiff_t>(shape_.c) * shape_.h * shape_.w);
    }
    ConstMatrixMap as_weight_matrix() const
    {
        return ConstMatrixMap(data_.data(), shape_.n, static_cast<std::ptrdiff_t>(shape_.c) * shape_.h * shape_.w);
    }

    template <typename Other>
    [[nodiscard]] Tensor<Other> cast() const
    {
        return Tensor<Other>(shape_, data_.template cast<Other>());
    }

    [[nodiscard]] bool all_finite() const { return data_.isFinite().all(); }

private:
    Shape shape_{};
    Storage data_;
};

} // namespace pmf
