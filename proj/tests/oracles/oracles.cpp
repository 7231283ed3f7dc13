#include "oracles.hpp"

#include <cfloat>
#include <cmath>

namespace oracle {

using pmf::Shape;
using pmf::Tensor;

Tensor<double> conv2d(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>* b, int padding,
                      int dilation)
{
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    const int ho = xs.h + 2 * padding - dilation * (ws.h - 1);
    const int wo = xs.w + 2 * padding - dilation * (ws.w - 1);
    Tensor<double> out(Shape{xs.n, ws.n, ho, wo});
    for (int n = 0; n < xs.n; ++n) {
        for (int o = 0; o < ws.n; ++o) {
            for (int y = 0; y < ho; ++y) {
                for (int xx = 0; xx < wo; ++xx) {
                    double acc = b != nullptr ? (*b)(0, o, 0, 0) : 0.0;
                    for (int i = 0; i < ws.c; ++i) {
                        for (int ky = 0; ky < ws.h; ++ky) {
                            for (int kx = 0; kx < ws.w; ++kx) {
                                const int sy = y - padding + ky * dilation;
                                const int sx = xx - padding + kx * dilation;
                                if (sy >= 0 && sy < xs.h && sx >= 0 && sx < xs.w) {
                                    acc += w(o, i, ky, kx) * x(n, i, sy, sx);
                                }
                            }
                        }
                    }
                    out(n, o, y, xx) = acc;
                }
            }
        }
    }
    return out;
}

double bilinear_at(const Tensor<double>& x, int n, int c, double y, double xx)
{
    const Shape& s = x.shape();
    const int y0 = static_cast<int>(std::floor(y));
    const int x0 = static_cast<int>(std::floor(xx));
    double acc = 0.0;
    for (int dy = 0; dy <= 1; ++dy) {
        for (int dx = 0; dx <= 1; ++dx) {
            const int yy = y0 + dy;
            const int xi = x0 + dx;
            if (yy < 0 || yy >= s.h || xi < 0 || xi >= s.w) {
                continue;
            }
            const double wy = 1.0 - std::abs(y - yy);
            const double wx = 1.0 - std::abs(xx - xi);
            acc += wy * wx * x(n, c, yy, xi);
        }
    }
    return acc;
}

Tensor<double> deform_conv2d(const Tensor<double>& x, const Tensor<double>& offsets, const Tensor<double>& w,
                             const Tensor<double>* b, int padding, int dilation)
{
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    const int ho = xs.h + 2 * padding - dilation * (ws.h - 1);
    const int wo = xs.w + 2 * padding - dilation * (ws.w - 1);
    Tensor<double> out(Shape{xs.n, ws.n, ho, wo});
    for (int n = 0; n < xs.n; ++n) {
        for (int o = 0; o < ws.n; ++o) {
            for (int y = 0; y < ho; ++y) {
                for (int xx = 0; xx < wo; ++xx) {
                    double acc = b != nullptr ? (*b)(0, o, 0, 0) : 0.0;
                    for (int ky = 0; ky < ws.h; ++ky) {
                        for (int kx = 0; kx < ws.w; ++kx) {
                            const int tap = ky * ws.w + kx;
                            const double py = y - padding + ky * dilation + offsets(n, 2 * tap, y, xx);
                            const double px = xx - padding + kx * dilation + offsets(n, 2 * tap + 1, y, xx);
                            for (int i = 0; i < ws.c; ++i) {
                                acc += w(o, i, ky, kx) * bilinear_at(x, n, i, py, px);
                            }
                        }
                    }
                    out(n, o, y, xx) = acc;
                }
            }
        }
    }
    return out;
}

Counts count(const Map& pred, const Map& gt, double threshold)
{
    Counts c;
    for (Eigen::Index i = 0; i < pred.rows(); ++i) {
        for (Eigen::Index j = 0; j < pred.cols(); ++j) {
            const bool p = pred(i, j) >= threshold;
            const bool g = gt(i, j) > 0.5;
            if (p && g) {
                ++c.tp;
            } else if (p) {
                ++c.fp;
            } else if (g) {
                ++c.fn;
            } else {
                ++c.tn;
            }
        }
    }
    return c;
}

std::pair<std::array<double, 256>, std::array<double, 256>> pr_curve(const Map& pred, const Map& gt)
{
    std::array<double, 256> p{};
    std::array<double, 256> r{};
    for (int t = 0; t < 256; ++t) {
        const Counts c = count(pred, gt, t / 255.0);
        p[t] = c.tp + c.fp == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
        r[t] = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
    }
    return {p, r};
}

double f_beta(double p, double r, double beta2)
{
    if (p == 0.0 && r == 0.0) {
        return 0.0;
    }
    return (1.0 + beta2) * p * r / (beta2 * p + r);
}

double mae(const Map& pred, const Map& gt)
{
    double acc = 0.0;
    for (Eigen::Index i = 0; i < pred.rows(); ++i) {
        for (Eigen::Index j = 0; j < pred.cols(); ++j) {
            acc += std::abs(pred(i, j) - gt(i, j));
        }
    }
    return acc / static_cast<double>(pred.size());
}

double e_measure(const Map& fm, const Map& gt)
{
    const auto n = static_cast<double>(fm.size());
    double sum_fm = 0.0;
    double sum_gt = 0.0;
    for (Eigen::Index i = 0; i < fm.rows(); ++i) {
        for (Eigen::Index j = 0; j < fm.cols(); ++j) {
            sum_fm += fm(i, j);
            sum_gt += gt(i, j);
        }
    }
    double total = 0.0;
    for (Eigen::Index i = 0; i < fm.rows(); ++i) {
        for (Eigen::Index j = 0; j < fm.cols(); ++j) {
            double theta = 0.0;
            if (sum_gt == 0.0) {
                theta = 1.0 - fm(i, j);
            } else if (sum_gt == n) {
                theta = fm(i, j);
            } else {
                const double a = fm(i, j) - sum_fm / n;
                const double g = gt(i, j) - sum_gt / n;
                const double xi = 2.0 * g * a / (g * g + a * a + 1e-8);
                theta = (1.0 + xi) * (1.0 + xi) / 4.0;
            }
            total += theta;
        }
    }
    return total / n;
}

namespace {

double mean_of(const std::vector<double>& v)
{
    double s = 0.0;
    for (double x : v) {
        s += x;
    }
    return s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v)
{
    if (v.size() < 2) {
        return 0.0;
    }
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) {
        s += (x - m) * (x - m);
    }
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

double object(const std::vector<double>& values)
{
    if (values.empty()) {
        return 0.0;
    }
    const double x = mean_of(values);
    const double sigma_x = std_of(values);
    return 2.0 * x / (x * x + 1.0 + sigma_x + DBL_EPSILON);
}

double s_object(const Map& pred, const Map& gt)
{
    std::vector<double> fg;
    std::vector<double> bg;
    double u = 0.0;
    for (Eigen::Index j = 0; j < gt.cols(); ++j) {
        for (Eigen::Index i = 0; i < gt.rows(); ++i) {
            if (gt(i, j) > 0.5) {
                fg.push_back(pred(i, j));
                u += 1.0;
            } else {
                bg.push_back(1.0 - pred(i, j));
            }
        }
    }
    u /= static_cast<double>(gt.size());
    return u * object(fg) + (1.0 - u) * object(bg);
}

double ssim(const Map& pred, const Map& gt, int r0, int r1, int c0, int c1)
{
    const int hei = r1 - r0;
    const int wid = c1 - c0;
    if (hei <= 0 || wid <= 0) {
        return 0.0;
    }
    const double n = static_cast<double>(hei) * wid;
    double x = 0.0;
    double y = 0.0;
    for (int i = r0; i < r1; ++i) {
        for (int j = c0; j < c1; ++j) {
            x += pred(i, j);
            y += gt(i, j);
        }
    }
    x /= n;
    y /= n;
    double sx2 = 0.0;
    double sy2 = 0.0;
    double sxy = 0.0;
    for (int i = r0; i < r1; ++i) {
        for (int j = c0; j < c1; ++j) {
            sx2 += (pred(i, j) - x) * (pred(i, j) - x);
            sy2 += (gt(i, j) - y) * (gt(i, j) - y);
            sxy += (pred(i, j) - x) * (gt(i, j) - y);
        }
    }
    sx2 /= (n - 1 + DBL_EPSILON);
    sy2 /= (n - 1 + DBL_EPSILON);
    sxy /= (n - 1 + DBL_EPSILON);
    const double alpha = 4 * x * y * sxy;
    const double beta = (x * x + y * y) * (sx2 + sy2);
    if (alpha != 0) {
        return alpha / (beta + DBL_EPSILON);
    }
    if (alpha == 0 && beta == 0) {
        return 1.0;
    }
    return 0.0;
}

double s_region(const Map& pred, const Map& gt)
{
    const auto rows = static_cast<int>(gt.rows());
    const auto cols = static_cast<int>(gt.cols());
    double total = 0.0;
    double sx = 0.0;
    double sy = 0.0;
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) {
            total += gt(i, j);
            sx += gt(i, j) * (j + 1);
            sy += gt(i, j) * (i + 1);
        }
    }
    int X = 0;
    int Y = 0;
    if (total == 0.0) {
        X = static_cast<int>(std::round(cols / 2.0));
        Y = static_cast<int>(std::round(rows / 2.0));
    } else {
        X = static_cast<int>(std::round(sx / total));
        Y = static_cast<int>(std::round(sy / total));
    }
    const double area = static_cast<double>(rows) * cols;
    const double w1 = X * Y / area;
    const double w2 = (cols - X) * Y / area;
    const double w3 = X * (rows - Y) / area;
    const double w4 = 1.0 - w1 - w2 - w3;
    return w1 * ssim(pred, gt, 0, Y, 0, X) + w2 * ssim(pred, gt, 0, Y, X, cols) +
           w3 * ssim(pred, gt, Y, rows, 0, X) + w4 * ssim(pred, gt, Y, rows, X, cols);
}

} // namespace

double s_measure(const Map& pred, const Map& gt)
{
    double y = 0.0;
    for (Eigen::Index i = 0; i < gt.size(); ++i) {
        y += gt.data()[i];
    }
    y /= static_cast<double>(gt.size());
    double q = 0.0;
    if (y == 0) {
        double x = 0.0;
        for (Eigen::Index i = 0; i < pred.size(); ++i) {
            x += pred.data()[i];
        }
        q = 1.0 - x / static_cast<double>(pred.size());
    } else if (y == 1) {
        double x = 0.0;
        for (Eigen::Index i = 0; i < pred.size(); ++i) {
            x += pred.data()[i];
        }
        q = x / static_cast<double>(pred.size());
    } else {
        const double alpha = 0.5;
        q = alpha * s_object(pred, gt) + (1 - alpha) * s_region(pred, gt);
        if (q < 0) {
            q = 0;
        }
    }
    return q;
}

std::pair<int, int> augmented_position(int r, int c, int h, int w, bool flip, int k)
{
    // Pixel centre relative to the image centre, x to the right, y up.
    double x = c - (w - 1) / 2.0;
    double y = (h - 1) / 2.0 - r;
    if (flip) {
        x = -x;
    }
    int out_h = h;
    int out_w = w;
    for (int t = 0; t < ((k % 4) + 4) % 4; ++t) {
        // Counter-clockwise quarter turn: (x, y) -> (-y, x).
        const double nx = -y;
        const double ny = x;
        x = nx;
        y = ny;
        std::swap(out_h, out_w);
    }
    const int out_c = static_cast<int>(std::lround(x + (out_w - 1) / 2.0));
    const int out_r = static_cast<int>(std::lround((out_h - 1) / 2.0 - y));
    return {out_r, out_c};
}

} // namespace oracle
