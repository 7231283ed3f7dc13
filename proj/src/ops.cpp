#include "pmf/ops.hpp"

#include <algorithm>
#include <cmath>

namespace pmf {

namespace {

template <typename Scalar>
using Matrix = RowMatrix<Scalar>;

int conv_output_size(int in, int kernel, ConvGeometry g)
{
    return in + 2 * g.padding - g.dilation * (kernel - 1);
}

// Column layout: row (c*k + ki)*k + kj, column y*w_out + x.
template <typename Scalar>
void im2col(const Scalar* img, int channels, int h, int w, int k, ConvGeometry g, int h_out, int w_out,
            Scalar* cols)
{
    for (int c = 0; c < channels; ++c) {
        const Scalar* plane = img + static_cast<std::ptrdiff_t>(c) * h * w;
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                Scalar* row = cols + (static_cast<std::ptrdiff_t>(c * k + ki) * k + kj) * h_out * w_out;
                const int dx = kj * g.dilation - g.padding;
                const int x_lo = std::clamp(-dx, 0, w_out);
                const int x_hi = std::clamp(w - dx, x_lo, w_out);
                for (int y = 0; y < h_out; ++y) {
                    Scalar* out = row + static_cast<std::ptrdiff_t>(y) * w_out;
                    const int iy = y - g.padding + ki * g.dilation;
                    if (iy < 0 || iy >= h) {
                        std::fill(out, out + w_out, Scalar(0));
                        continue;
                    }
                    std::fill(out, out + x_lo, Scalar(0));
                    const Scalar* src = plane + static_cast<std::ptrdiff_t>(iy) * w + dx;
                    std::copy(src + x_lo, src + x_hi, out + x_lo);
                    std::fill(out + x_hi, out + w_out, Scalar(0));
                }
            }
        }
    }
}

template <typename Scalar>
void col2im_add(const Scalar* cols, int channels, int h, int w, int k, ConvGeometry g, int h_out, int w_out,
                Scalar* img)
{
    for (int c = 0; c < channels; ++c) {
        Scalar* plane = img + static_cast<std::ptrdiff_t>(c) * h * w;
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                const Scalar* row = cols + (static_cast<std::ptrdiff_t>(c * k + ki) * k + kj) * h_out * w_out;
                const int dx = kj * g.dilation - g.padding;
                const int x_lo = std::clamp(-dx, 0, w_out);
                const int x_hi = std::clamp(w - dx, x_lo, w_out);
                for (int y = 0; y < h_out; ++y) {
                    const int iy = y - g.padding + ki * g.dilation;
                    if (iy < 0 || iy >= h) {
                        continue;
                    }
                    const Scalar* src = row + static_cast<std::ptrdiff_t>(y) * w_out;
                    Scalar* dst = plane + static_cast<std::ptrdiff_t>(iy) * w + dx;
                    for (int x = x_lo; x < x_hi; ++x) {
                        dst[x] += src[x];
                    }
                }
            }
        }
    }
}

void check_conv_args(const Shape& xs, const Shape& ws, const Shape* bs)
{
    if (ws.c != xs.c) {
        throw ContractError("conv2d: input has " + std::to_string(xs.c) + " channels, weight expects " +
                            std::to_string(ws.c));
    }
    if (ws.h != ws.w) {
        throw ContractError("conv2d: only square kernels are supported");
    }
    if (bs != nullptr && bs->numel() != ws.n) {
        throw ContractError("conv2d: bias size does not match output channels");
    }
}

// Bilinear tap used by deformable sampling: four integer corners with
// weights; corners outside the image contribute zero.
template <typename Scalar>
struct BilinearTap {
    int y0 = 0;
    int x0 = 0;
    Scalar ly = 0;
    Scalar lx = 0;
    bool inside = false;
};

template <typename Scalar>
BilinearTap<Scalar> make_tap(Scalar py, Scalar px, int h, int w)
{
    BilinearTap<Scalar> t;
    if (py <= Scalar(-1) || py >= Scalar(h) || px <= Scalar(-1) || px >= Scalar(w)) {
        return t;
    }
    t.inside = true;
    t.y0 = static_cast<int>(std::floor(py));
    t.x0 = static_cast<int>(std::floor(px));
    t.ly = py - Scalar(t.y0);
    t.lx = px - Scalar(t.x0);
    return t;
}

template <typename Scalar>
Scalar corner(const Scalar* plane, int h, int w, int y, int x)
{
    return (y >= 0 && y < h && x >= 0 && x < w) ? plane[static_cast<std::ptrdiff_t>(y) * w + x] : Scalar(0);
}

template <typename Scalar>
Scalar sample(const Scalar* plane, int h, int w, const BilinearTap<Scalar>& t)
{
    if (!t.inside) {
        return Scalar(0);
    }
    const Scalar hy = Scalar(1) - t.ly;
    const Scalar hx = Scalar(1) - t.lx;
    return hy * hx * corner(plane, h, w, t.y0, t.x0) + hy * t.lx * corner(plane, h, w, t.y0, t.x0 + 1) +
           t.ly * hx * corner(plane, h, w, t.y0 + 1, t.x0) + t.ly * t.lx * corner(plane, h, w, t.y0 + 1, t.x0 + 1);
}

template <typename Scalar>
void deform_im2col(const Scalar* img, const Scalar* offsets, int channels, int h, int w, int k, ConvGeometry g,
                   int h_out, int w_out, Scalar* cols)
{
    const std::ptrdiff_t positions = static_cast<std::ptrdiff_t>(h_out) * w_out;
    const std::ptrdiff_t plane_size = static_cast<std::ptrdiff_t>(h) * w;
    for (int ki = 0; ki < k; ++ki) {
        for (int kj = 0; kj < k; ++kj) {
            const int tap = ki * k + kj;
            const Scalar* off_y = offsets + (2 * tap) * positions;
            const Scalar* off_x = offsets + (2 * tap + 1) * positions;
            for (int y = 0; y < h_out; ++y) {
                for (int x = 0; x < w_out; ++x) {
                    const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(y) * w_out + x;
                    const Scalar py = Scalar(y - g.padding + ki * g.dilation) + off_y[p];
                    const Scalar px = Scalar(x - g.padding + kj * g.dilation) + off_x[p];
                    const auto t = make_tap(py, px, h, w);
                    for (int c = 0; c < channels; ++c) {
                        cols[(static_cast<std::ptrdiff_t>(c) * k * k + tap) * positions + p] =
                            sample(img + c * plane_size, h, w, t);
                    }
                }
            }
        }
    }
}

struct ResizeAxis {
    std::vector<int> lo;
    std::vector<int> hi;
    std::vector<double> frac;
};

ResizeAxis bilinear_axis(int in, int out)
{
    ResizeAxis a;
    a.lo.resize(out);
    a.hi.resize(out);
    a.frac.resize(out);
    const double ratio = static_cast<double>(in) / out;
    for (int d = 0; d < out; ++d) {
        double src = (d + 0.5) * ratio - 0.5;
        src = std::max(src, 0.0);
        int lo = std::min(static_cast<int>(src), in - 1);
        a.lo[d] = lo;
        a.hi[d] = std::min(lo + 1, in - 1);
        a.frac[d] = src - lo;
    }
    return a;
}

template <typename Scalar>
void resize_bilinear_forward(const Tensor<Scalar>& in, Tensor<Scalar>& out)
{
    const Shape& is = in.shape();
    const Shape& os = out.shape();
    const auto ay = bilinear_axis(is.h, os.h);
    const auto ax = bilinear_axis(is.w, os.w);
    for (int n = 0; n < is.n; ++n) {
        for (int c = 0; c < is.c; ++c) {
            const auto src = in.plane(n, c);
            auto dst = out.plane(n, c);
            for (int y = 0; y < os.h; ++y) {
                const Scalar fy = static_cast<Scalar>(ay.frac[y]);
                for (int x = 0; x < os.w; ++x) {
                    const Scalar fx = static_cast<Scalar>(ax.frac[x]);
                    const Scalar top = (Scalar(1) - fx) * src(ay.lo[y], ax.lo[x]) + fx * src(ay.lo[y], ax.hi[x]);
                    const Scalar bottom = (Scalar(1) - fx) * src(ay.hi[y], ax.lo[x]) + fx * src(ay.hi[y], ax.hi[x]);
                    dst(y, x) = (Scalar(1) - fy) * top + fy * bottom;
                }
            }
        }
    }
}

template <typename Scalar>
void resize_bilinear_backward(const Tensor<Scalar>& grad_out, Tensor<Scalar>& grad_in)
{
    const Shape& is = grad_in.shape();
    const Shape& os = grad_out.shape();
    const auto ay = bilinear_axis(is.h, os.h);
    const auto ax = bilinear_axis(is.w, os.w);
    for (int n = 0; n < is.n; ++n) {
        for (int c = 0; c < is.c; ++c) {
            const auto g = grad_out.plane(n, c);
            auto dst = grad_in.plane(n, c);
            for (int y = 0; y < os.h; ++y) {
                const Scalar fy = static_cast<Scalar>(ay.frac[y]);
                for (int x = 0; x < os.w; ++x) {
                    const Scalar fx = static_cast<Scalar>(ax.frac[x]);
                    const Scalar v = g(y, x);
                    dst(ay.lo[y], ax.lo[x]) += (Scalar(1) - fy) * (Scalar(1) - fx) * v;
                    dst(ay.lo[y], ax.hi[x]) += (Scalar(1) - fy) * fx * v;
                    dst(ay.hi[y], ax.lo[x]) += fy * (Scalar(1) - fx) * v;
                    dst(ay.hi[y], ax.hi[x]) += fy * fx * v;
                }
            }
        }
    }
}

} // namespace

template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias, ConvGeometry g)
{
    const Shape xs = x.shape();
    const Shape ws = weight.shape();
    check_conv_args(xs, ws, bias.defined() ? &bias.shape() : nullptr);
    const int k = ws.h;
    const int h_out = conv_output_size(xs.h, k, g);
    const int w_out = conv_output_size(xs.w, k, g);
    if (h_out <= 0 || w_out <= 0) {
        throw ContractError("conv2d: empty output for input " + to_string(xs));
    }
    const bool pointwise = (k == 1 && g.padding == 0);

    Tensor<Scalar> out(Shape{xs.n, ws.n, h_out, w_out});
    const auto wm = weight.value().as_weight_matrix();
    Matrix<Scalar> cols;
    for (int n = 0; n < xs.n; ++n) {
        auto y = out.matrix(n);
        if (pointwise) {
            y.noalias() = wm * x.value().matrix(n);
        } else {
            cols.resize(wm.cols(), static_cast<std::ptrdiff_t>(h_out) * w_out);
            im2col(x.value().data() + x.value().index(n, 0, 0, 0), xs.c, xs.h, xs.w, k, g, h_out, w_out,
                   cols.data());
            y.noalias() = wm * cols;
        }
        if (bias.defined()) {
            y.colwise() += Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(bias.value().data(), ws.n);
        }
    }

    return Var<Scalar>::from_op(
        std::move(out), {x, weight, bias}, [xs, ws, k, g, h_out, w_out, pointwise](Node<Scalar>& self) {
            auto& xn = *self.inputs[0];
            auto& wn = *self.inputs[1];
            Node<Scalar>* bn = self.inputs[2] ? self.inputs[2].get() : nullptr;
            const auto wmat = wn.value.as_weight_matrix();
            Matrix<Scalar> cols;
            Matrix<Scalar> dcols;
            for (int n = 0; n < xs.n; ++n) {
                const auto dy = self.grad.matrix(n);
                if (bn != nullptr && bn->requires_grad) {
                    Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(bn->grad_buffer().data(), ws.n) +=
                        dy.rowwise().sum();
                }
                if (wn.requires_grad) {
                    auto dw = wn.grad_buffer().as_weight_matrix();
                    if (pointwise) {
                        dw.noalias() += dy * xn.value.matrix(n).transpose();
                    } else {
                        cols.resize(wmat.cols(), static_cast<std::ptrdiff_t>(h_out) * w_out);
                        im2col(xn.value.data() + xn.value.index(n, 0, 0, 0), xs.c, xs.h, xs.w, k, g, h_out, w_out,
                               cols.data());
                        dw.noalias() += dy * cols.transpose();
                    }
                }
                if (xn.requires_grad) {
                    auto& gx = xn.grad_buffer();
                    if (pointwise) {
                        gx.matrix(n).noalias() += wmat.transpose() * dy;
                    } else {
                        dcols.noalias() = wmat.transpose() * dy;
                        col2im_add(dcols.data(), xs.c, xs.h, xs.w, k, g, h_out, w_out,
                                   gx.data() + gx.index(n, 0, 0, 0));
                    }
                }
            }
        });
}

template <typename Scalar>
Var<Scalar> deform_conv2d(const Var<Scalar>& x, const Var<Scalar>& offsets, const Var<Scalar>& weight,
                          const Var<Scalar>& bias, ConvGeometry g)
{
    const Shape xs = x.shape();
    const Shape ws = weight.shape();
    check_conv_args(xs, ws, bias.defined() ? &bias.shape() : nullptr);
    const int k = ws.h;
    const int h_out = conv_output_size(xs.h, k, g);
    const int w_out = conv_output_size(xs.w, k, g);
    const Shape os = offsets.shape();
    if (os.n != xs.n || os.c != 2 * k * k || os.h != h_out || os.w != w_out) {
        throw ContractError("deform_conv2d: offsets " + to_string(os) + " do not match input " + to_string(xs));
    }
    const std::ptrdiff_t positions = static_cast<std::ptrdiff_t>(h_out) * w_out;

    Tensor<Scalar> out(Shape{xs.n, ws.n, h_out, w_out});
    const auto wm = weight.value().as_weight_matrix();
    Matrix<Scalar> cols(wm.cols(), positions);
    for (int n = 0; n < xs.n; ++n) {
        deform_im2col(x.value().data() + x.value().index(n, 0, 0, 0),
                      offsets.value().data() + offsets.value().index(n, 0, 0, 0), xs.c, xs.h, xs.w, k, g, h_out,
                      w_out, cols.data());
        auto y = out.matrix(n);
        y.noalias() = wm * cols;
        if (bias.defined()) {
            y.colwise() += Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(bias.value().data(), ws.n);
        }
    }

    return Var<Scalar>::from_op(
        std::move(out), {x, offsets, weight, bias}, [xs, ws, k, g, h_out, w_out, positions](Node<Scalar>& self) {
            auto& xn = *self.inputs[0];
            auto& on = *self.inputs[1];
            auto& wn = *self.inputs[2];
            Node<Scalar>* bn = self.inputs[3] ? self.inputs[3].get() : nullptr;
            const auto wmat = wn.value.as_weight_matrix();
            const std::ptrdiff_t plane_size = static_cast<std::ptrdiff_t>(xs.h) * xs.w;
            Matrix<Scalar> cols(wmat.cols(), positions);
            Matrix<Scalar> dcols;
            for (int n = 0; n < xs.n; ++n) {
                const auto dy = self.grad.matrix(n);
                const Scalar* img = xn.value.data() + xn.value.index(n, 0, 0, 0);
                const Scalar* off = on.value.data() + on.value.index(n, 0, 0, 0);
                if (bn != nullptr && bn->requires_grad) {
                    Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(bn->grad_buffer().data(), ws.n) +=
                        dy.rowwise().sum();
                }
                if (wn.requires_grad) {
                    deform_im2col(img, off, xs.c, xs.h, xs.w, k, g, h_out, w_out, cols.data());
                    wn.grad_buffer().as_weight_matrix().noalias() += dy * cols.transpose();
                }
                if (!xn.requires_grad && !on.requires_grad) {
                    continue;
                }
                dcols.noalias() = wmat.transpose() * dy;
                Scalar* gx = xn.requires_grad ? xn.grad_buffer().data() + xn.grad.index(n, 0, 0, 0) : nullptr;
                Scalar* goff = on.requires_grad ? on.grad_buffer().data() + on.grad.index(n, 0, 0, 0) : nullptr;
                for (int ki = 0; ki < k; ++ki) {
                    for (int kj = 0; kj < k; ++kj) {
                        const int tap = ki * k + kj;
                        for (int y = 0; y < h_out; ++y) {
                            for (int xx = 0; xx < w_out; ++xx) {
                                const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(y) * w_out + xx;
                                const Scalar py = Scalar(y - g.padding + ki * g.dilation) + off[(2 * tap) * positions + p];
                                const Scalar px =
                                    Scalar(xx - g.padding + kj * g.dilation) + off[(2 * tap + 1) * positions + p];
                                const auto t = make_tap(py, px, xs.h, xs.w);
                                if (!t.inside) {
                                    continue;
                                }
                                const Scalar hy = Scalar(1) - t.ly;
                                const Scalar hx = Scalar(1) - t.lx;
                                Scalar d_py = 0;
                                Scalar d_px = 0;
                                for (int c = 0; c < xs.c; ++c) {
                                    const Scalar d = dcols(static_cast<std::ptrdiff_t>(c) * k * k + tap, p);
                                    const Scalar* plane = img + c * plane_size;
                                    if (goff != nullptr) {
                                        const Scalar v00 = corner(plane, xs.h, xs.w, t.y0, t.x0);
                                        const Scalar v01 = corner(plane, xs.h, xs.w, t.y0, t.x0 + 1);
                                        const Scalar v10 = corner(plane, xs.h, xs.w, t.y0 + 1, t.x0);
                                        const Scalar v11 = corner(plane, xs.h, xs.w, t.y0 + 1, t.x0 + 1);
                                        d_py += d * (hx * (v10 - v00) + t.lx * (v11 - v01));
                                        d_px += d * (hy * (v01 - v00) + t.ly * (v11 - v10));
                                    }
                                    if (gx != nullptr) {
                                        Scalar* gplane = gx + c * plane_size;
                                        const auto scatter = [&](int cy, int cx, Scalar wgt) {
                                            if (cy >= 0 && cy < xs.h && cx >= 0 && cx < xs.w) {
                                                gplane[static_cast<std::ptrdiff_t>(cy) * xs.w + cx] += wgt * d;
                                            }
                                        };
                                        scatter(t.y0, t.x0, hy * hx);
                                        scatter(t.y0, t.x0 + 1, hy * t.lx);
                                        scatter(t.y0 + 1, t.x0, t.ly * hx);
                                        scatter(t.y0 + 1, t.x0 + 1, t.ly * t.lx);
                                    }
                                }
                                if (goff != nullptr) {
                                    goff[(2 * tap) * positions + p] += d_py;
                                    goff[(2 * tap + 1) * positions + p] += d_px;
                                }
                            }
                        }
                    }
                }
            }
        });
}

template <typename Scalar>
Var<Scalar> max_pool2(const Var<Scalar>& x)
{
    const Shape xs = x.shape();
    if (xs.h % 2 != 0 || xs.w % 2 != 0) {
        throw ContractError("max_pool2: spatial size must be even, got " + to_string(xs));
    }
    const Shape os{xs.n, xs.c, xs.h / 2, xs.w / 2};
    Tensor<Scalar> out(os);
    std::vector<std::ptrdiff_t> argmax(static_cast<std::size_t>(os.numel()));
    const auto& in = x.value();
    std::ptrdiff_t o = 0;
    for (int n = 0; n < xs.n; ++n) {
        for (int c = 0; c < xs.c; ++c) {
            for (int y = 0; y < os.h; ++y) {
                for (int xx = 0; xx < os.w; ++xx, ++o) {
                    std::ptrdiff_t best = in.index(n, c, 2 * y, 2 * xx);
                    for (int dy = 0; dy < 2; ++dy) {
                        for (int dx = 0; dx < 2; ++dx) {
                            const std::ptrdiff_t i = in.index(n, c, 2 * y + dy, 2 * xx + dx);
                            if (in.array()[i] > in.array()[best]) {
                                best = i;
                            }
                        }
                    }
                    argmax[static_cast<std::size_t>(o)] = best;
                    out.array()[o] = in.array()[best];
                }
            }
        }
    }
    return Var<Scalar>::from_op(std::move(out), {x}, [argmax = std::move(argmax)](Node<Scalar>& self) {
        auto& g = self.inputs[0]->grad_buffer().array();
        for (std::size_t i = 0; i < argmax.size(); ++i) {
            g[argmax[i]] += self.grad.array()[static_cast<std::ptrdiff_t>(i)];
        }
    });
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& x)
{
    Tensor<Scalar> out(x.shape(), x.value().array().max(Scalar(0)));
    return Var<Scalar>::from_op(std::move(out), {x}, [](Node<Scalar>& self) {
        auto& in = *self.inputs[0];
        in.grad_buffer().array() += (in.value.array() > Scalar(0)).select(self.grad.array(), Scalar(0));
    });
}

template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& x)
{
    Tensor<Scalar> out(x.shape(), Scalar(1) / (Scalar(1) + (-x.value().array()).exp()));
    return Var<Scalar>::from_op(std::move(out), {x}, [](Node<Scalar>& self) {
        const auto& s = self.value.array();
        self.inputs[0]->grad_buffer().array() += self.grad.array() * s * (Scalar(1) - s);
    });
}

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b)
{
    if (!(a.shape() == b.shape())) {
        throw ContractError("add: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    }
    Tensor<Scalar> out(a.shape(), a.value().array() + b.value().array());
    return Var<Scalar>::from_op(std::move(out), {a, b}, [](Node<Scalar>& self) {
        for (auto& in : self.inputs) {
            if (in != nullptr && in->requires_grad) {
                in->grad_buffer().array() += self.grad.array();
            }
        }
    });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& x, Scalar factor)
{
    Tensor<Scalar> out(x.shape(), x.value().array() * factor);
    return Var<Scalar>::from_op(std::move(out), {x}, [factor](Node<Scalar>& self) {
        self.inputs[0]->grad_buffer().array() += self.grad.array() * factor;
    });
}

template <typename Scalar>
Var<Scalar> gate(const Var<Scalar>& mask, const Var<Scalar>& x)
{
    const Shape ms = mask.shape();
    const Shape xs = x.shape();
    if (ms.c != 1 || ms.n != xs.n || !ms.same_spatial(xs)) {
        throw ContractError("gate: mask " + to_string(ms) + " cannot gate features " + to_string(xs));
    }
    Tensor<Scalar> out(xs);
    for (int n = 0; n < xs.n; ++n) {
        out.matrix(n) = x.value().matrix(n).array().rowwise() * mask.value().matrix(n).array().row(0);
    }
    return Var<Scalar>::from_op(std::move(out), {mask, x}, [xs](Node<Scalar>& self) {
        auto& mn = *self.inputs[0];
        auto& xn = *self.inputs[1];
        for (int n = 0; n < xs.n; ++n) {
            const auto g = self.grad.matrix(n).array();
            if (mn.requires_grad) {
                mn.grad_buffer().matrix(n).array().row(0) += (g * xn.value.matrix(n).array()).colwise().sum();
            }
            if (xn.requires_grad) {
                xn.grad_buffer().matrix(n).array() += g.rowwise() * mn.value.matrix(n).array().row(0);
            }
        }
    });
}

template <typename Scalar>
Var<Scalar> concat_channels(const std::vector<Var<Scalar>>& parts)
{
    if (parts.empty()) {
        throw ContractError("concat_channels: no inputs");
    }
    Shape os = parts.front().shape();
    os.c = 0;
    std::vector<int> widths;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.n != os.n || !s.same_spatial(os)) {
            throw ContractError("concat_channels: incompatible input " + to_string(s));
        }
        widths.push_back(s.c);
        os.c += s.c;
    }
    Tensor<Scalar> out(os);
    for (int n = 0; n < os.n; ++n) {
        int row = 0;
        for (const auto& p : parts) {
            out.matrix(n).middleRows(row, p.shape().c) = p.value().matrix(n);
            row += p.shape().c;
        }
    }
    return Var<Scalar>::from_op(std::move(out), parts, [widths, os](Node<Scalar>& self) {
        for (int n = 0; n < os.n; ++n) {
            int row = 0;
            for (std::size_t i = 0; i < widths.size(); ++i) {
                auto& in = *self.inputs[i];
                if (in.requires_grad) {
                    in.grad_buffer().matrix(n) += self.grad.matrix(n).middleRows(row, widths[i]);
                }
                row += widths[i];
            }
        }
    });
}

template <typename Scalar>
Tensor<Scalar> resize_bilinear(const Tensor<Scalar>& x, int height, int width)
{
    if (height <= 0 || width <= 0) {
        throw ContractError("resize_bilinear: target size must be positive");
    }
    const Shape& s = x.shape();
    if (s.h == height && s.w == width) {
        return x;
    }
    Tensor<Scalar> out(Shape{s.n, s.c, height, width});
    resize_bilinear_forward(x, out);
    return out;
}

template <typename Scalar>
Tensor<Scalar> resize_nearest(const Tensor<Scalar>& x, int height, int width)
{
    if (height <= 0 || width <= 0) {
        throw ContractError("resize_nearest: target size must be positive");
    }
    const Shape& s = x.shape();
    Tensor<Scalar> out(Shape{s.n, s.c, height, width});
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            for (int y = 0; y < height; ++y) {
                const int sy = std::min(static_cast<int>(static_cast<long long>(y) * s.h / height), s.h - 1);
                for (int xx = 0; xx < width; ++xx) {
                    const int sx = std::min(static_cast<int>(static_cast<long long>(xx) * s.w / width), s.w - 1);
                    out(n, c, y, xx) = x(n, c, sy, sx);
                }
            }
        }
    }
    return out;
}

template <typename Scalar>
Var<Scalar> resize_bilinear(const Var<Scalar>& x, int height, int width)
{
    const Shape xs = x.shape();
    if (xs.h == height && xs.w == width) {
        return x;
    }
    Tensor<Scalar> out = resize_bilinear(x.value(), height, width);
    return Var<Scalar>::from_op(std::move(out), {x}, [](Node<Scalar>& self) {
        resize_bilinear_backward(self.grad, self.inputs[0]->grad_buffer());
    });
}

template <typename Scalar>
Var<Scalar> global_avg_pool(const Var<Scalar>& x)
{
    const Shape xs = x.shape();
    Tensor<Scalar> out(Shape{xs.n, xs.c, 1, 1});
    for (int n = 0; n < xs.n; ++n) {
        out.matrix(n) = x.value().matrix(n).rowwise().mean();
    }
    return Var<Scalar>::from_op(std::move(out), {x}, [xs](Node<Scalar>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        const Scalar inv = Scalar(1) / static_cast<Scalar>(xs.plane_size());
        for (int n = 0; n < xs.n; ++n) {
            g.matrix(n).colwise() += self.grad.matrix(n).col(0) * inv;
        }
    });
}

template <typename Scalar>
Var<Scalar> batch_norm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                       Var<Scalar>& running_mean, Var<Scalar>& running_var, bool training, Scalar momentum,
                       Scalar eps)
{
    using Vector = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
    const Shape xs = x.shape();
    const int channels = xs.c;
    if (gamma.value().numel() != channels || beta.value().numel() != channels) {
        throw ContractError("batch_norm: affine parameters do not match " + std::to_string(channels) + " channels");
    }
    const std::ptrdiff_t count = static_cast<std::ptrdiff_t>(xs.n) * xs.plane_size();

    Vector mu(channels);
    Vector var(channels);
    if (training) {
        mu.setZero();
        for (int n = 0; n < xs.n; ++n) {
            mu += x.value().matrix(n).array().rowwise().sum();
        }
        mu /= static_cast<Scalar>(count);
        var.setZero();
        for (int n = 0; n < xs.n; ++n) {
            var += (x.value().matrix(n).array().colwise() - mu).square().rowwise().sum();
        }
        var /= static_cast<Scalar>(count);
        auto& rm = running_mean.mutable_value().array();
        auto& rv = running_var.mutable_value().array();
        const Scalar unbias = count > 1 ? static_cast<Scalar>(count) / static_cast<Scalar>(count - 1) : Scalar(1);
        rm = (Scalar(1) - momentum) * rm + momentum * mu;
        rv = (Scalar(1) - momentum) * rv + momentum * var * unbias;
    } else {
        mu = running_mean.value().array();
        var = running_var.value().array();
    }
    const Vector inv_std = (var + eps).rsqrt();
    const Vector g = gamma.value().array();
    const Vector b = beta.value().array();

    Tensor<Scalar> out(xs);
    Tensor<Scalar> normalized(xs);
    for (int n = 0; n < xs.n; ++n) {
        normalized.matrix(n) = ((x.value().matrix(n).array().colwise() - mu).colwise() * inv_std).matrix();
        out.matrix(n) = ((normalized.matrix(n).array().colwise() * g).colwise() + b).matrix();
    }

    return Var<Scalar>::from_op(
        std::move(out), {x, gamma, beta},
        [xs, count, training, inv_std, g, normalized = std::move(normalized)](Node<Scalar>& self) {
            auto& xn = *self.inputs[0];
            auto& gn = *self.inputs[1];
            auto& bn = *self.inputs[2];
            Vector sum_dy = Vector::Zero(xs.c);
            Vector sum_dy_xhat = Vector::Zero(xs.c);
            for (int n = 0; n < xs.n; ++n) {
                const auto dy = self.grad.matrix(n).array();
                sum_dy += dy.rowwise().sum();
                sum_dy_xhat += (dy * normalized.matrix(n).array()).rowwise().sum();
            }
            if (gn.requires_grad) {
                gn.grad_buffer().array() += sum_dy_xhat;
            }
            if (bn.requires_grad) {
                bn.grad_buffer().array() += sum_dy;
            }
            if (!xn.requires_grad) {
                return;
            }
            auto& gx = xn.grad_buffer();
            const Scalar m = static_cast<Scalar>(count);
            for (int n = 0; n < xs.n; ++n) {
                const auto dy = self.grad.matrix(n).array();
                if (training) {
                    // dx = g*inv_std/m * (m*dy - sum(dy) - xhat*sum(dy*xhat))
                    auto centred = ((dy * m).colwise() - sum_dy) -
                                   normalized.matrix(n).array().colwise() * sum_dy_xhat;
                    gx.matrix(n).array() += centred.colwise() * (g * inv_std / m);
                } else {
                    gx.matrix(n).array() += dy.colwise() * (g * inv_std);
                }
            }
        });
}

template <typename Scalar>
Var<Scalar> bce_with_logits(const Var<Scalar>& logits, const Tensor<Scalar>& target)
{
    if (!(logits.shape() == target.shape())) {
        throw ContractError("bce_with_logits: logits " + to_string(logits.shape()) + " vs target " +
                            to_string(target.shape()));
    }
    const auto& z = logits.value().array();
    const auto& t = target.array();
    const Scalar count = static_cast<Scalar>(z.size());
    // max(z,0) - z*t + log(1 + exp(-|z|)) is the overflow-safe form.
    const Scalar loss = (z.max(Scalar(0)) - z * t + (-z.abs()).exp().log1p()).sum() / count;
    Tensor<Scalar> out(Shape{1, 1, 1, 1}, loss);
    return Var<Scalar>::from_op(std::move(out), {logits}, [target, count](Node<Scalar>& self) {
        auto& in = *self.inputs[0];
        const Scalar g = self.grad.array()[0];
        const auto p = Scalar(1) / (Scalar(1) + (-in.value.array()).exp());
        in.grad_buffer().array() += (p - target.array()) * (g / count);
    });
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& x)
{
    Tensor<Scalar> out(Shape{1, 1, 1, 1}, x.value().array().sum());
    return Var<Scalar>::from_op(std::move(out), {x}, [](Node<Scalar>& self) {
        self.inputs[0]->grad_buffer().array() += self.grad.array()[0];
    });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& x)
{
    return scale(sum(x), Scalar(1) / static_cast<Scalar>(x.value().numel()));
}

template <typename Scalar>
Var<Scalar> weighted_sum(const Var<Scalar>& x, const Tensor<Scalar>& weights)
{
    if (!(x.shape() == weights.shape())) {
        throw ContractError("weighted_sum: shape mismatch");
    }
    Tensor<Scalar> out(Shape{1, 1, 1, 1}, (x.value().array() * weights.array()).sum());
    return Var<Scalar>::from_op(std::move(out), {x}, [weights](Node<Scalar>& self) {
        self.inputs[0]->grad_buffer().array() += weights.array() * self.grad.array()[0];
    });
}

#define PMF_INSTANTIATE_OPS(S)                                                                                     \
    template Var<S> conv2d(const Var<S>&, const Var<S>&, const Var<S>&, ConvGeometry);                            \
    template Var<S> deform_conv2d(const Var<S>&, const Var<S>&, const Var<S>&, const Var<S>&, ConvGeometry);      \
    template Var<S> max_pool2(const Var<S>&);                                                                      \
    template Var<S> relu(const Var<S>&);                                                                           \
    template Var<S> sigmoid(const Var<S>&);                                                                        \
    template Var<S> operator+(const Var<S>&, const Var<S>&);                                                       \
    template Var<S> scale(const Var<S>&, S);                                                                       \
    template Var<S> gate(const Var<S>&, const Var<S>&);                                                            \
    template Var<S> concat_channels(const std::vector<Var<S>>&);                                                   \
    template Var<S> resize_bilinear(const Var<S>&, int, int);                                                      \
    template Var<S> global_avg_pool(const Var<S>&);                                                                \
    template Var<S> batch_norm(const Var<S>&, const Var<S>&, const Var<S>&, Var<S>&, Var<S>&, bool, S, S);        \
    template Var<S> bce_with_logits(const Var<S>&, const Tensor<S>&);                                              \
    template Var<S> sum(const Var<S>&);                                                                            \
    template Var<S> mean(const Var<S>&);                                                                           \
    template Var<S> weighted_sum(const Var<S>&, const Tensor<S>&);                                                 \
    template Tensor<S> resize_bilinear(const Tensor<S>&, int, int);                                                \
    template Tensor<S> resize_nearest(const Tensor<S>&, int, int);

PMF_INSTANTIATE_OPS(float)
PMF_INSTANTIATE_OPS(double)

#undef PMF_INSTANTIATE_OPS

} // namespace pmf
