#include "pmf/metrics.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "json.hpp"
#include "pmf/errors.hpp"
#include "pmf/image_io.hpp"
#include "pmf/ops.hpp"

namespace pmf::metrics {

namespace {

void check_same_shape(const Map& pred, const Map& gt, const char* what)
{
    if (pred.rows() != gt.rows() || pred.cols() != gt.cols()) {
        throw ContractError(std::string(what) + ": prediction and ground truth differ in size");
    }
}

// Largest t in [-1, 255] with value >= t/255, matching the exact
// comparison used when binarizing.
int threshold_bin(double value)
{
    int t = std::clamp(static_cast<int>(std::floor(value * 255.0)), -1, kThresholds - 1);
    while (t < kThresholds - 1 && value >= (t + 1) / 255.0) {
        ++t;
    }
    while (t >= 0 && value < t / 255.0) {
        --t;
    }
    return t;
}

// Positives at each threshold: pos[t] = #pixels predicted >= t/255,
// split by ground-truth label.
struct ThresholdCounts {
    std::array<long long, kThresholds> pos_fg{};
    std::array<long long, kThresholds> pos_bg{};
    long long fg = 0;
    long long bg = 0;
};

ThresholdCounts threshold_counts(const Map& pred, const Map& gt)
{
    std::array<long long, kThresholds + 1> hist_fg{};
    std::array<long long, kThresholds + 1> hist_bg{};
    ThresholdCounts counts;
    for (Eigen::Index j = 0; j < pred.cols(); ++j) {
        for (Eigen::Index i = 0; i < pred.rows(); ++i) {
            const int bin = threshold_bin(pred(i, j)) + 1;
            if (gt(i, j) > 0.5) {
                ++hist_fg[static_cast<std::size_t>(bin)];
                ++counts.fg;
            } else {
                ++hist_bg[static_cast<std::size_t>(bin)];
                ++counts.bg;
            }
        }
    }
    long long run_fg = 0;
    long long run_bg = 0;
    for (int t = kThresholds - 1; t >= 0; --t) {
        run_fg += hist_fg[static_cast<std::size_t>(t + 1)];
        run_bg += hist_bg[static_cast<std::size_t>(t + 1)];
        counts.pos_fg[static_cast<std::size_t>(t)] = run_fg;
        counts.pos_bg[static_cast<std::size_t>(t)] = run_bg;
    }
    return counts;
}

// Mean enhanced-alignment score of a binary map described only by its
// confusion counts: each (pred, gt) pixel class has a constant score.
double enhanced_from_counts(long long tp, long long fp, long long fn, long long tn)
{
    const double n = static_cast<double>(tp + fp + fn + tn);
    const long long fg = tp + fn;
    const long long predicted = tp + fp;
    if (fg == 0) {
        return 1.0 - predicted / n;
    }
    if (fg == tp + fp + fn + tn) {
        return predicted / n;
    }
    const double mu_pred = predicted / n;
    const double mu_gt = fg / n;
    const auto theta = [](double a_pred, double a_gt) {
        const double xi = 2.0 * a_gt * a_pred / (a_gt * a_gt + a_pred * a_pred + kEnhancedEps);
        return (xi + 1.0) * (xi + 1.0) / 4.0;
    };
    const double sum = tp * theta(1.0 - mu_pred, 1.0 - mu_gt) + fp * theta(1.0 - mu_pred, -mu_gt) +
                       fn * theta(-mu_pred, 1.0 - mu_gt) + tn * theta(-mu_pred, -mu_gt);
    return sum / n;
}

double object_score(const Map& values, const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& region)
{
    const Eigen::Index count = region.count();
    if (count == 0) {
        return 0.0;
    }
    const double mean = region.select(values, 0.0).sum() / static_cast<double>(count);
    double sigma = 0.0;
    if (count > 1) {
        const double ss = region.select(values - mean, 0.0).square().sum();
        sigma = std::sqrt(ss / static_cast<double>(count - 1));
    }
    return 2.0 * mean / (mean * mean + 1.0 + sigma + DBL_EPSILON);
}

double s_object(const Map& pred, const Map& gt)
{
    const auto fg = (gt > 0.5).eval();
    const auto bg = (!fg).eval();
    const double o_fg = object_score(pred, fg);
    const double o_bg = object_score(1.0 - pred, bg);
    const double u = gt.mean();
    return u * o_fg + (1.0 - u) * o_bg;
}

double block_ssim(const Map& pred, const Map& gt)
{
    const double n = static_cast<double>(pred.size());
    const double x = pred.mean();
    const double y = gt.mean();
    const double denom = n - 1.0 + DBL_EPSILON;
    const double sigma_x2 = (pred - x).square().sum() / denom;
    const double sigma_y2 = (gt - y).square().sum() / denom;
    const double sigma_xy = ((pred - x) * (gt - y)).sum() / denom;
    const double alpha = 4.0 * x * y * sigma_xy;
    const double beta = (x * x + y * y) * (sigma_x2 + sigma_y2);
    if (alpha != 0.0) {
        return alpha / (beta + DBL_EPSILON);
    }
    return beta == 0.0 ? 1.0 : 0.0;
}

double s_region(const Map& pred, const Map& gt)
{
    const Eigen::Index rows = gt.rows();
    const Eigen::Index cols = gt.cols();
    const double total = gt.sum();
    Eigen::Index cx = 0;
    Eigen::Index cy = 0;
    // 1-based centroid, rounded; the split sits after column cx / row cy.
    if (total == 0.0) {
        cx = static_cast<Eigen::Index>(std::round(cols / 2.0));
        cy = static_cast<Eigen::Index>(std::round(rows / 2.0));
    } else {
        const Eigen::ArrayXd col_idx = Eigen::ArrayXd::LinSpaced(cols, 1.0, static_cast<double>(cols));
        const Eigen::ArrayXd row_idx = Eigen::ArrayXd::LinSpaced(rows, 1.0, static_cast<double>(rows));
        cx = static_cast<Eigen::Index>(std::round((gt.colwise().sum().transpose() * col_idx).sum() / total));
        cy = static_cast<Eigen::Index>(std::round((gt.rowwise().sum() * row_idx).sum() / total));
    }
    const double area = static_cast<double>(rows * cols);
    const double w1 = static_cast<double>(cx * cy) / area;
    const double w2 = static_cast<double>((cols - cx) * cy) / area;
    const double w3 = static_cast<double>(cx * (rows - cy)) / area;
    const double w4 = 1.0 - w1 - w2 - w3;

    const auto quadrant = [&](Eigen::Index r0, Eigen::Index c0, Eigen::Index nr, Eigen::Index nc) {
        if (nr <= 0 || nc <= 0) {
            return 0.0;
        }
        return block_ssim(pred.block(r0, c0, nr, nc), gt.block(r0, c0, nr, nc));
    };
    return w1 * quadrant(0, 0, cy, cx) + w2 * quadrant(0, cx, cy, cols - cx) +
           w3 * quadrant(cy, 0, rows - cy, cx) + w4 * quadrant(cy, cx, rows - cy, cols - cx);
}

} // namespace

Confusion confusion_at(const Map& pred, const Map& gt, double threshold)
{
    check_same_shape(pred, gt, "confusion_at");
    const auto predicted = (pred >= threshold).eval();
    const auto positive = (gt > 0.5).eval();
    Confusion c;
    c.tp = (predicted && positive).count();
    c.fp = (predicted && !positive).count();
    c.fn = (!predicted && positive).count();
    return c;
}

std::optional<PrCurve> pr_curve(const Map& pred, const Map& gt)
{
    check_same_shape(pred, gt, "pr_curve");
    const ThresholdCounts counts = threshold_counts(pred, gt);
    if (counts.fg == 0) {
        return std::nullopt;
    }
    PrCurve curve;
    for (std::size_t t = 0; t < kThresholds; ++t) {
        Confusion c{counts.pos_fg[t], counts.pos_bg[t], counts.fg - counts.pos_fg[t]};
        curve.precision[t] = c.precision();
        curve.recall[t] = c.recall();
    }
    return curve;
}

double f_beta(double precision, double recall, double beta2)
{
    const double denom = beta2 * precision + recall;
    if (denom <= 0.0) {
        return 0.0;
    }
    return (1.0 + beta2) * precision * recall / denom;
}

double mae(const Map& pred, const Map& gt)
{
    check_same_shape(pred, gt, "mae");
    return (pred - gt).abs().mean();
}

double s_measure(const Map& pred, const Map& gt, double alpha)
{
    check_same_shape(pred, gt, "s_measure");
    const double y = gt.mean();
    double q = 0.0;
    if (y == 0.0) {
        q = 1.0 - pred.mean();
    } else if (y == 1.0) {
        q = pred.mean();
    } else {
        q = alpha * s_object(pred, gt) + (1.0 - alpha) * s_region(pred, gt);
    }
    return std::clamp(q, 0.0, 1.0);
}

double e_measure(const Map& pred_bin, const Map& gt)
{
    check_same_shape(pred_bin, gt, "e_measure");
    const double fg = gt.sum();
    if (fg == 0.0) {
        return (1.0 - pred_bin).mean();
    }
    if (fg == static_cast<double>(gt.size())) {
        return pred_bin.mean();
    }
    const Map align_pred = pred_bin - pred_bin.mean();
    const Map align_gt = gt - gt.mean();
    const Map xi = 2.0 * align_gt * align_pred / (align_gt.square() + align_pred.square() + kEnhancedEps);
    return ((xi + 1.0).square() / 4.0).mean();
}

Curve e_curve(const Map& pred, const Map& gt)
{
    check_same_shape(pred, gt, "e_curve");
    const ThresholdCounts counts = threshold_counts(pred, gt);
    Curve curve{};
    for (std::size_t t = 0; t < kThresholds; ++t) {
        const long long tp = counts.pos_fg[t];
        const long long fp = counts.pos_bg[t];
        curve[t] = enhanced_from_counts(tp, fp, counts.fg - tp, counts.bg - fp);
    }
    return curve;
}

ImageMetrics evaluate_image(const Map& pred, const Map& gt)
{
    ImageMetrics m;
    m.pr = pr_curve(pred, gt);
    m.e = e_curve(pred, gt);
    m.s = s_measure(pred, gt);
    m.mae = mae(pred, gt);
    return m;
}

void MetricAccumulator::add(const ImageMetrics& m)
{
    for (std::size_t t = 0; t < kThresholds; ++t) {
        e_sum_[t] += m.e[t];
        if (m.pr) {
            precision_sum_[t] += m.pr->precision[t];
            recall_sum_[t] += m.pr->recall[t];
        }
    }
    if (m.pr) {
        ++pr_images_;
    }
    s_sum_ += m.s;
    mae_sum_ += m.mae;
    ++images_;
}

MetricReport MetricAccumulator::report(std::string name) const
{
    MetricReport r;
    r.name = std::move(name);
    r.images = images_;
    r.skipped_pr = images_ - pr_images_;
    if (images_ == 0) {
        return r;
    }
    const double n = static_cast<double>(images_);
    double e_total = 0.0;
    for (std::size_t t = 0; t < kThresholds; ++t) {
        if (pr_images_ > 0) {
            r.precision[t] = precision_sum_[t] / static_cast<double>(pr_images_);
            r.recall[t] = recall_sum_[t] / static_cast<double>(pr_images_);
        }
        r.f[t] = f_beta(r.precision[t], r.recall[t]);
        r.e[t] = e_sum_[t] / n;
        r.max_f = std::max(r.max_f, r.f[t]);
        r.max_e = std::max(r.max_e, r.e[t]);
        e_total += r.e[t];
    }
    r.mean_e = e_total / kThresholds;
    r.s_measure = s_sum_ / n;
    r.mae = mae_sum_ / n;
    return r;
}

MetricReport evaluate_dataset(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                              std::string name)
{
    const auto preds = io::images_by_stem(pred_dir);
    const auto gts = io::images_by_stem(gt_dir);
    if (preds.empty()) {
        throw DataError("no prediction images in " + pred_dir.string());
    }
    if (gts.empty()) {
        throw DataError("no ground-truth images in " + gt_dir.string());
    }
    std::vector<std::string> unmatched;
    for (const auto& [stem, path] : preds) {
        if (!gts.contains(stem)) {
            unmatched.push_back(stem + " (no ground truth)");
        }
    }
    for (const auto& [stem, path] : gts) {
        if (!preds.contains(stem)) {
            unmatched.push_back(stem + " (no prediction)");
        }
    }
    if (!unmatched.empty()) {
        std::string msg = "unpaired files:";
        for (const auto& u : unmatched) {
            msg += " " + u;
        }
        throw DataError(msg);
    }

    // std::map iteration is stem-sorted, so the reduction order does not
    // depend on directory enumeration order.
    MetricAccumulator acc;
    for (const auto& [stem, pred_path] : preds) {
        Map pred = io::read_gray8(pred_path);
        const Map gt = (io::read_gray8(gts.at(stem)) >= 128.0 / 255.0).cast<double>();
        if (pred.rows() != gt.rows() || pred.cols() != gt.cols()) {
            std::cerr << "warning: resizing prediction " << stem << " from " << pred.cols() << "x" << pred.rows()
                      << " to " << gt.cols() << "x" << gt.rows() << '\n';
            pred = io::to_map(resize_bilinear(io::from_map<double>(pred), static_cast<int>(gt.rows()),
                                              static_cast<int>(gt.cols())));
        }
        const ImageMetrics m = evaluate_image(pred, gt);
        if (!m.pr) {
            std::cerr << "warning: " << stem << " has an empty ground truth; skipped for PR/F\n";
        }
        acc.add(m);
    }
    return acc.report(std::move(name));
}

std::string format_row(const MetricReport& report)
{
    std::ostringstream os;
    os << std::fixed << std::setprecision(3);
    os << (report.name.empty() ? std::string("dataset") : report.name) << "  " << report.max_f << "  "
       << report.s_measure << "  " << report.max_e << "  " << report.mae;
    return os.str();
}

void write_report_json(const MetricReport& report, const std::filesystem::path& path)
{
    nlohmann::json j;
    j["name"] = report.name;
    j["images"] = report.images;
    j["skipped_pr"] = report.skipped_pr;
    j["max_f"] = report.max_f;
    j["s_measure"] = report.s_measure;
    j["max_e"] = report.max_e;
    j["mean_e"] = report.mean_e;
    j["mae"] = report.mae;
    j["precision"] = report.precision;
    j["recall"] = report.recall;
    j["f"] = report.f;
    j["e"] = report.e;
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    out << j.dump(2) << '\n';
}

void write_pr_csv(const MetricReport& report, const std::filesystem::path& path)
{
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    out << "threshold,precision,recall\n" << std::setprecision(17);
    for (int t = 0; t < kThresholds; ++t) {
        out << t << ',' << report.precision[static_cast<std::size_t>(t)] << ','
            << report.recall[static_cast<std::size_t>(t)] << '\n';
    }
}

PrSeries read_pr_csv(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    std::string line;
    if (!std::getline(in, line) || line.rfind("threshold,precision,recall", 0) != 0) {
        throw DataError("missing 'threshold,precision,recall' header in " + path.string());
    }
    PrSeries s;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        std::istringstream row(line);
        double t = 0;
        double p = 0;
        double r = 0;
        char c1 = 0;
        char c2 = 0;
        if (!(row >> t >> c1 >> p >> c2 >> r) || c1 != ',' || c2 != ',') {
            throw DataError("malformed row " + std::to_string(lineno) + " in " + path.string());
        }
        s.threshold.push_back(t);
        s.precision.push_back(p);
        s.recall.push_back(r);
    }
    if (s.threshold.empty()) {
        throw DataError("no rows in " + path.string());
    }
    return s;
}

} // namespace pmf::metrics
