#pragma once

#include <Eigen/Dense>

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace pmf::metrics {

/// Saliency maps and masks are h x w arrays; predictions lie in [0,1],
/// ground truth in {0,1}.
using Map = Eigen::ArrayXXd;

inline constexpr int kThresholds = 256;
inline constexpr double kDefaultBeta2 = 0.3;
inline constexpr double kEnhancedEps = 1e-8;

using Curve = std::array<double, kThresholds>;

struct Confusion {
    long long tp = 0;
    long long fp = 0;
    long long fn = 0;

    /// 1 when nothing is predicted positive.
    [[nodiscard]] double precision() const { return tp + fp == 0 ? 1.0 : static_cast<double>(tp) / (tp + fp); }
    [[nodiscard]] double recall() const { return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / (tp + fn); }
};

/// Pixels with pred >= threshold count as predicted positive.
Confusion confusion_at(const Map& pred, const Map& gt, double threshold);

struct PrCurve {
    Curve precision{};
    Curve recall{};
};

/// Precision and recall for thresholds t/255, t = 0..255. Returns nullopt
/// when gt has no positive pixel (recall undefined).
std::optional<PrCurve> pr_curve(const Map& pred, const Map& gt);

/// (1+b2) P R / (b2 P + R); 0 when P = R = 0.
double f_beta(double precision, double recall, double beta2 = kDefaultBeta2);

double mae(const Map& pred, const Map& gt);

/// Structure measure: alpha * object term + (1 - alpha) * region term,
/// with the empty- and full-mask special cases, clamped to [0,1].
double s_measure(const Map& pred, const Map& gt, double alpha = 0.5);

/// Enhanced-alignment measure of a binary prediction.
double e_measure(const Map& pred_bin, const Map& gt);

/// e_measure of pred binarized at t/255 for t = 0..255.
Curve e_curve(const Map& pred, const Map& gt);

struct ImageMetrics {
    std::optional<PrCurve> pr; ///< absent for empty ground truth
    Curve e{};
    double s = 0.0;
    double mae = 0.0;
};

ImageMetrics evaluate_image(const Map& pred, const Map& gt);

struct MetricReport {
    std::string name;
    double max_f = 0.0;
    double s_measure = 0.0;
    double max_e = 0.0;
    double mean_e = 0.0;
    double mae = 0.0;
    Curve precision{};
    Curve recall{};
    Curve f{};
    Curve e{};
    std::size_t images = 0;
    std::size_t skipped_pr = 0; ///< images with empty ground truth
};

/// Averages per-image curves per threshold, then takes maxima; S and MAE
/// are per-image means. Summation runs in insertion order.
class MetricAccumulator {
public:
    void add(const ImageMetrics& m);
    void add(const Map& pred, const Map& gt) { add(evaluate_image(pred, gt)); }

    [[nodiscard]] MetricReport report(std::string name = {}) const;

private:
    Curve precision_sum_{};
    Curve recall_sum_{};
    Curve e_sum_{};
    double s_sum_ = 0.0;
    double mae_sum_ = 0.0;
    std::size_t images_ = 0;
    std::size_t pr_images_ = 0;
};

/// Evaluates every prediction in pred_dir against the same-stem mask in
/// gt_dir. Predictions are read as 8-bit grayscale scaled to [0,1]; masks
/// are binarized at 128. A prediction whose size differs from its mask is
/// bilinearly resized with a warning. Throws DataError when either
/// directory is empty or stems do not pair up.
MetricReport evaluate_dataset(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                              std::string name = {});

/// `name  maxF  S  maxE  MAE` with three decimals.
std::string format_row(const MetricReport& report);

void write_report_json(const MetricReport& report, const std::filesystem::path& path);

/// CSV with header `threshold,precision,recall`, one row per threshold.
void write_pr_csv(const MetricReport& report, const std::filesystem::path& path);

struct PrSeries {
    std::vector<double> threshold;
    std::vector<double> precision;
    std::vector<double> recall;
};

/// Reads a CSV produced by write_pr_csv. Throws DataError on bad input.
PrSeries read_pr_csv(const std::filesystem::path& path);

} // namespace pmf::metrics
