#include "pmf/plot.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>

#include "pmf/errors.hpp"

namespace pmf {

namespace {

const std::array<cv::Scalar, 8> kPalette{
    cv::Scalar(180, 119, 31), cv::Scalar(14, 127, 255), cv::Scalar(44, 160, 44),  cv::Scalar(40, 39, 214),
    cv::Scalar(189, 103, 148), cv::Scalar(75, 86, 140), cv::Scalar(194, 119, 227), cv::Scalar(127, 127, 127),
};

struct Frame {
    int left;
    int top;
    int right;
    int bottom;

    [[nodiscard]] cv::Point to_pixel(double x, double y) const
    {
        x = std::clamp(x, 0.0, 1.0);
        y = std::clamp(y, 0.0, 1.0);
        return {left + static_cast<int>(std::lround(x * (right - left))),
                bottom - static_cast<int>(std::lround(y * (bottom - top)))};
    }
};

std::string tick_label(double v)
{
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.1f", v);
    return buf;
}

} // namespace

nlohmann::json render_pr_plot(const std::vector<PlotSeries>& series, const std::filesystem::path& path,
                              const PlotOptions& options)
{
    if (series.empty()) {
        throw ConfigError("plot needs at least one PR series");
    }
    if (options.width < 200 || options.height < 150) {
        throw ConfigError("plot size must be at least 200x150");
    }
    cv::Mat img(options.height, options.width, CV_8UC3, cv::Scalar(255, 255, 255));
    const Frame frame{60, 40, options.width - 20, options.height - 50};
    const cv::Scalar black(0, 0, 0);
    const cv::Scalar grid(225, 225, 225);
    const int font = cv::FONT_HERSHEY_SIMPLEX;

    for (int i = 0; i <= 10; ++i) {
        const double v = i / 10.0;
        cv::line(img, frame.to_pixel(v, 0.0), frame.to_pixel(v, 1.0), grid, 1);
        cv::line(img, frame.to_pixel(0.0, v), frame.to_pixel(1.0, v), grid, 1);
        if (i % 2 == 0) {
            const cv::Point xp = frame.to_pixel(v, 0.0);
            cv::putText(img, tick_label(v), {xp.x - 10, xp.y + 18}, font, 0.4, black, 1, cv::LINE_AA);
            const cv::Point yp = frame.to_pixel(0.0, v);
            cv::putText(img, tick_label(v), {yp.x - 32, yp.y + 4}, font, 0.4, black, 1, cv::LINE_AA);
        }
    }
    cv::rectangle(img, frame.to_pixel(0.0, 1.0), frame.to_pixel(1.0, 0.0), black, 1);
    cv::putText(img, "Recall", {(frame.left + frame.right) / 2 - 20, options.height - 12}, font, 0.5, black, 1,
                cv::LINE_AA);
    cv::putText(img, "Precision", {4, frame.top - 12}, font, 0.5, black, 1, cv::LINE_AA);
    cv::putText(img, options.title, {(frame.left + frame.right) / 2 - 60, 20}, font, 0.55, black, 1, cv::LINE_AA);

    nlohmann::json meta;
    meta["x_label"] = "recall";
    meta["y_label"] = "precision";
    meta["x_range"] = {0.0, 1.0};
    meta["y_range"] = {0.0, 1.0};
    meta["width"] = options.width;
    meta["height"] = options.height;
    meta["series"] = nlohmann::json::array();

    for (std::size_t s = 0; s < series.size(); ++s) {
        const auto& pr = series[s].pr;
        const cv::Scalar color = kPalette[s % kPalette.size()];
        const std::size_t n = std::min(pr.precision.size(), pr.recall.size());
        std::vector<cv::Point> points;
        points.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            points.push_back(frame.to_pixel(pr.recall[i], pr.precision[i]));
        }
        if (points.size() == 1) {
            cv::circle(img, points.front(), 2, color, cv::FILLED, cv::LINE_AA);
        } else if (!points.empty()) {
            cv::polylines(img, points, false, color, 2, cv::LINE_AA);
        }
        const int ly = frame.bottom - 12 - static_cast<int>(s) * 18;
        const int lx = frame.left + 12;
        cv::line(img, {lx, ly - 4}, {lx + 24, ly - 4}, color, 2, cv::LINE_AA);
        cv::putText(img, series[s].label, {lx + 30, ly}, font, 0.45, black, 1, cv::LINE_AA);
        meta["series"].push_back({{"label", series[s].label}, {"points", n}});
    }

    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    if (!cv::imwrite(path.string(), img)) {
        throw DataError("cannot write plot " + path.string());
    }
    return meta;
}

} // namespace pmf
