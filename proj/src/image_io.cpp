#include "pmf/image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>

#include "pmf/errors.hpp"

namespace pmf::io {

namespace {

cv::Mat read_or_throw(const std::filesystem::path& path, int flags)
{
    if (!std::filesystem::is_regular_file(path)) {
        throw DataError("image not found: " + path.string());
    }
    cv::Mat img = cv::imread(path.string(), flags);
    if (img.empty()) {
        throw DataError("cannot decode image: " + path.string());
    }
    return img;
}

void ensure_parent(const std::filesystem::path& path)
{
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
}

} // namespace

Tensor<float> read_rgb(const std::filesystem::path& path)
{
    cv::Mat bgr = read_or_throw(path, cv::IMREAD_COLOR);
    Tensor<float> out(Shape{1, 3, bgr.rows, bgr.cols});
    for (int y = 0; y < bgr.rows; ++y) {
        const auto* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < bgr.cols; ++x) {
            for (int c = 0; c < 3; ++c) {
                out(0, c, y, x) = static_cast<float>(row[x][2 - c]) / 255.0f;
            }
        }
    }
    return out;
}

Eigen::ArrayXXd read_gray(const std::filesystem::path& path)
{
    cv::Mat img = read_or_throw(path, cv::IMREAD_ANYDEPTH | cv::IMREAD_ANYCOLOR);
    if (img.channels() == 3) {
        cv::cvtColor(img, img, cv::COLOR_BGR2GRAY);
    } else if (img.channels() == 4) {
        cv::cvtColor(img, img, cv::COLOR_BGRA2GRAY);
    }
    double scale = 1.0;
    switch (img.depth()) {
    case CV_8U:
        scale = 1.0 / 255.0;
        break;
    case CV_16U:
        scale = 1.0 / 65535.0;
        break;
    case CV_32F:
    case CV_64F:
        break;
    default:
        throw DataError("unsupported pixel depth in " + path.string());
    }
    cv::Mat as_double;
    img.convertTo(as_double, CV_64F, scale);
    Eigen::ArrayXXd out(as_double.rows, as_double.cols);
    for (int y = 0; y < as_double.rows; ++y) {
        const auto* row = as_double.ptr<double>(y);
        for (int x = 0; x < as_double.cols; ++x) {
            out(y, x) = row[x];
        }
    }
    if (!out.isFinite().all()) {
        throw DataError("non-finite pixel values in " + path.string());
    }
    return out;
}

Eigen::ArrayXXd read_gray8(const std::filesystem::path& path)
{
    cv::Mat img = read_or_throw(path, cv::IMREAD_GRAYSCALE);
    Eigen::ArrayXXd out(img.rows, img.cols);
    for (int y = 0; y < img.rows; ++y) {
        const auto* row = img.ptr<unsigned char>(y);
        for (int x = 0; x < img.cols; ++x) {
            out(y, x) = row[x] / 255.0;
        }
    }
    return out;
}

void write_gray_png(const std::filesystem::path& path, const Eigen::ArrayXXd& values)
{
    cv::Mat img(static_cast<int>(values.rows()), static_cast<int>(values.cols()), CV_8UC1);
    for (int y = 0; y < img.rows; ++y) {
        auto* row = img.ptr<unsigned char>(y);
        for (int x = 0; x < img.cols; ++x) {
            const double v = std::clamp(values(y, x), 0.0, 1.0);
            row[x] = static_cast<unsigned char>(std::lround(v * 255.0));
        }
    }
    ensure_parent(path);
    if (!cv::imwrite(path.string(), img)) {
        throw DataError("cannot write image: " + path.string());
    }
}

void write_rgb(const std::filesystem::path& path, const Tensor<float>& rgb)
{
    const Shape& s = rgb.shape();
    cv::Mat img(s.h, s.w, CV_8UC3);
    for (int y = 0; y < s.h; ++y) {
        auto* row = img.ptr<cv::Vec3b>(y);
        for (int x = 0; x < s.w; ++x) {
            for (int c = 0; c < 3; ++c) {
                const double v = std::clamp(static_cast<double>(rgb(0, c, y, x)), 0.0, 1.0);
                row[x][2 - c] = static_cast<unsigned char>(std::lround(v * 255.0));
            }
        }
    }
    ensure_parent(path);
    if (!cv::imwrite(path.string(), img)) {
        throw DataError("cannot write image: " + path.string());
    }
}

bool is_image_file(const std::filesystem::path& path)
{
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

std::map<std::string, std::filesystem::path> images_by_stem(const std::filesystem::path& dir)
{
    if (!std::filesystem::is_directory(dir)) {
        throw DataError("directory not found: " + dir.string());
    }
    std::map<std::string, std::filesystem::path> out;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file() || !is_image_file(entry.path())) {
            continue;
        }
        const std::string stem = entry.path().stem().string();
        if (!out.emplace(stem, entry.path()).second) {
            throw DataError("two images share the stem '" + stem + "' in " + dir.string());
        }
    }
    return out;
}

} // namespace pmf::io
