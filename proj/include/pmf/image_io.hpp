#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "pmf/tensor.hpp"

namespace pmf::io {

/// Reads an 8-bit color image as a (1,3,h,w) tensor in [0,1], RGB order.
Tensor<float> read_rgb(const std::filesystem::path& path);

/// Reads a single-channel 8- or 16-bit image (color inputs are converted
/// to gray) scaled to [0,1] by the type's maximum.
Eigen::ArrayXXd read_gray(const std::filesystem::path& path);

/// Reads any image as 8-bit grayscale, scaled by 1/255.
Eigen::ArrayXXd read_gray8(const std::filesystem::path& path);

/// Writes values in [0,1] as an 8-bit grayscale PNG (round(v*255), clamped).
void write_gray_png(const std::filesystem::path& path, const Eigen::ArrayXXd& values);

/// Writes an (1,3,h,w) tensor in [0,1] as an 8-bit color image.
void write_rgb(const std::filesystem::path& path, const Tensor<float>& rgb);

[[nodiscard]] bool is_image_file(const std::filesystem::path& path);

/// Image files directly inside dir, keyed by filename stem. Throws
/// DataError if dir is missing or two files share a stem.
std::map<std::string, std::filesystem::path> images_by_stem(const std::filesystem::path& dir);

/// Plane (0, c) of a tensor as a double array.
template <typename Scalar>
Eigen::ArrayXXd to_map(const Tensor<Scalar>& t, int c = 0)
{
    return t.plane(0, c).template cast<double>().array();
}

/// A single-channel (1,1,h,w) tensor holding the array's values.
template <typename Scalar>
Tensor<Scalar> from_map(const Eigen::ArrayXXd& values)
{
    Tensor<Scalar> t(Shape{1, 1, static_cast<int>(values.rows()), static_cast<int>(values.cols())});
    t.plane(0, 0) = values.matrix().template cast<Scalar>();
    return t;
}

} // namespace pmf::io
