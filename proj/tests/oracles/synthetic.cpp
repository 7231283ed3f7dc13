#include "synthetic.hpp"

#include <random>
#include <string>

#include "pmf/image_io.hpp"

namespace oracle {

using pmf::SamplePair;
using pmf::Shape;
using pmf::Tensor;

namespace {

constexpr int kSides[4] = {16, 24, 32, 20};
constexpr int kLeft[4] = {8, 30, 16, 36};
constexpr int kTop[4] = {10, 20, 24, 6};
constexpr float kColours[4][3] = {{0.9F, 0.2F, 0.2F}, {0.2F, 0.8F, 0.3F}, {0.2F, 0.3F, 0.9F}, {0.9F, 0.9F, 0.2F}};

SamplePair make_sample(int k, int height, int width, std::mt19937_64& rng)
{
    std::uniform_real_distribution<float> noise(0.0F, 0.2F);
    const int j = k % 4;
    const double sy = height / 64.0;
    const double sx = width / 64.0;
    const int top = static_cast<int>(kTop[j] * sy);
    const int left = static_cast<int>(kLeft[j] * sx);
    const int bottom = static_cast<int>((kTop[j] + kSides[j]) * sy);
    const int right = static_cast<int>((kLeft[j] + kSides[j]) * sx);

    SamplePair s;
    s.id = "s" + std::to_string(k);
    s.rgb = Tensor<float>(Shape{1, 3, height, width});
    s.depth = Tensor<float>(Shape{1, 1, height, width});
    Tensor<float> gt(Shape{1, 1, height, width});
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const bool inside = y >= top && y < bottom && x >= left && x < right;
            for (int c = 0; c < 3; ++c) {
                s.rgb(0, c, y, x) = inside ? kColours[j][c] : 0.4F + noise(rng);
            }
            s.depth(0, 0, y, x) = inside ? 0.9F : 0.2F + 0.1F * static_cast<float>(y) / static_cast<float>(height);
            gt(0, 0, y, x) = inside ? 1.0F : 0.0F;
        }
    }
    s.gt = gt;
    s.original_height = height;
    s.original_width = width;
    return s;
}

} // namespace

std::vector<SamplePair> square_samples(int size, int count)
{
    std::mt19937_64 rng(7);
    std::vector<SamplePair> out;
    for (int k = 0; k < count; ++k) {
        out.push_back(make_sample(k, size, size, rng));
    }
    return out;
}

void write_square_dataset(const std::filesystem::path& root, int count, int height, int width)
{
    std::filesystem::create_directories(root / "RGB");
    std::filesystem::create_directories(root / "depth");
    std::filesystem::create_directories(root / "GT");
    std::mt19937_64 rng(11);
    for (int k = 0; k < count; ++k) {
        const SamplePair s = make_sample(k, height, width, rng);
        pmf::io::write_rgb(root / "RGB" / (s.id + ".png"), s.rgb);
        pmf::io::write_gray_png(root / "depth" / (s.id + ".png"), pmf::io::to_map(s.depth));
        pmf::io::write_gray_png(root / "GT" / (s.id + ".png"), pmf::io::to_map(*s.gt));
    }
}

} // namespace oracle
