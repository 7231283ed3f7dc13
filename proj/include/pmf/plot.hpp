#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "pmf/metrics.hpp"

namespace pmf {

struct PlotSeries {
    std::string label;
    metrics::PrSeries pr;
};

struct PlotOptions {
    int width = 640;
    int height = 480;
    std::string title = "Precision-Recall";
};

/// Renders precision (y) against recall (x) for every series onto fixed
/// [0,1] x [0,1] axes and writes the raster image to path. Returns the
/// figure metadata: axis labels and ranges plus per-series point counts.
nlohmann::json render_pr_plot(const std::vector<PlotSeries>& series, const std::filesystem::path& path,
                              const PlotOptions& options = {});

} // namespace pmf
