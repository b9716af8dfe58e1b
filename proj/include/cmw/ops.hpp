#pragma once

#include "cmw/tensor.hpp"

#include <Eigen/Core>

#include <optional>
#include <span>

namespace cmw {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowMap = Eigen::Map<RowMatrix<Scalar>>;

template <typename Scalar>
using ConstRowMap = Eigen::Map<const RowMatrix<Scalar>>;

namespace detail {

inline void require_rank4(const Shape& s, const char* op, const char* what)
{
    if (s.size() != 4) {
        throw std::invalid_argument(std::string(op) + ": " + what + " must be rank 4, got " + shape_string(s));
    }
}

struct ConvGeometry {
    Index channels, height, width; // the "image" side
    Index kernel, stride, pad;
    Index out_height, out_width;   // the "patch grid" side

    Index patch_rows() const { return channels * kernel * kernel; }
    Index patch_cols() const { return out_height * out_width; }
};

// Unrolls a C x H x W image into (C*K*K) x (Hout*Wout) patches.
template <typename Scalar>
void im2col(const Scalar* image, const ConvGeometry& g, RowMatrix<Scalar>& cols)
{
    cols.resize(g.patch_rows(), g.patch_cols());
    for (Index c = 0; c < g.channels; ++c) {
        const Scalar* plane = image + c * g.height * g.width;
        for (Index ky = 0; ky < g.kernel; ++ky) {
            for (Index kx = 0; kx < g.kernel; ++kx) {
                Scalar* row = cols.row((c * g.kernel + ky) * g.kernel + kx).data();
                for (Index oy = 0; oy < g.out_height; ++oy) {
                    const Index iy = oy * g.stride - g.pad + ky;
                    Scalar* dst = row + oy * g.out_width;
                    if (iy < 0 || iy >= g.height) {
                        std::fill(dst, dst + g.out_width, Scalar(0));
                        continue;
                    }
                    const Scalar* src = plane + iy * g.width;
                    for (Index ox = 0; ox < g.out_width; ++ox) {
                        const Index ix = ox * g.stride - g.pad + kx;
                        dst[ox] = (ix >= 0 && ix < g.width) ? src[ix] : Scalar(0);
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatters patches back, accumulating into `image`.
template <typename Scalar>
void col2im_add(const RowMatrix<Scalar>& cols, const ConvGeometry& g, Scalar* image)
{
    for (Index c = 0; c < g.channels; ++c) {
        Scalar* plane = image + c * g.height * g.width;
        for (Index ky = 0; ky < g.kernel; ++ky) {
            for (Index kx = 0; kx < g.kernel; ++kx) {
                const Scalar* row = cols.row((c * g.kernel + ky) * g.kernel + kx).data();
                for (Index oy = 0; oy < g.out_height; ++oy) {
                    const Index iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= g.height) continue;
                    const Scalar* src = row + oy * g.out_width;
                    Scalar* dst = plane + iy * g.width;
                    for (Index ox = 0; ox < g.out_width; ++ox) {
                        const Index ix = ox * g.stride - g.pad + kx;
                        if (ix >= 0 && ix < g.width) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

inline void check_conv_args(const char* op, Index kernel, Index stride, Index pad)
{
    if (kernel < 1 || stride < 1 || pad < 0) {
        throw std::invalid_argument(std::string(op) + ": kernel and stride must be >= 1 and pad >= 0");
    }
}

} // namespace detail

/// 2-D cross-correlation over an NCHW batch.
///
/// weight is OutC x InC x K x K (square kernel), bias has OutC entries.
/// Output spatial size is floor((H + 2*pad - K) / stride) + 1 per axis.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias,
                      Index stride, Index pad)
{
    detail::require_rank4(input.shape(), "conv2d", "input");
    detail::require_rank4(weight.shape(), "conv2d", "weight");
    const Index n = input.dim(0), in_c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const Index out_c = weight.dim(0), k = weight.dim(2);
    detail::check_conv_args("conv2d", k, stride, pad);
    if (weight.dim(1) != in_c || weight.dim(3) != k) {
        throw std::invalid_argument("conv2d: channel mismatch, input " + shape_string(input.shape()) + " weight "
                                    + shape_string(weight.shape()));
    }
    if (bias.numel() != out_c) throw std::invalid_argument("conv2d: bias size must equal output channels");
    if (h + 2 * pad - k < 0 || w + 2 * pad - k < 0) {
        throw std::invalid_argument("conv2d: non-positive output size for input " + shape_string(input.shape()));
    }
    const detail::ConvGeometry g{in_c, h, w, k, stride, pad, (h + 2 * pad - k) / stride + 1,
                                 (w + 2 * pad - k) / stride + 1};
    const Index in_plane = in_c * h * w;
    const Index out_plane = out_c * g.patch_cols();

    ArrayX<Scalar> out(n * out_plane);
    ConstRowMap<Scalar> wmat(weight.data().data(), out_c, g.patch_rows());
    Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> bvec(bias.data().data(), out_c);
    RowMatrix<Scalar> cols;
    for (Index b = 0; b < n; ++b) {
        detail::im2col(input.data().data() + b * in_plane, g, cols);
        RowMap<Scalar> omat(out.data() + b * out_plane, out_c, g.patch_cols());
        omat.noalias() = wmat * cols;
        omat.colwise() += bvec;
    }

    return Tensor<Scalar>::make_result(
        {n, out_c, g.out_height, g.out_width}, std::move(out), {input, weight, bias},
        [g, n, in_plane, out_plane, out_c](typename Tensor<Scalar>::Node& self) {
            auto& in = *self.parents[0];
            auto& wt = *self.parents[1];
            auto& bs = *self.parents[2];
            ConstRowMap<Scalar> wmat(wt.data.data(), out_c, g.patch_rows());
            RowMatrix<Scalar> cols;
            RowMatrix<Scalar> dcols;
            for (Index b = 0; b < n; ++b) {
                ConstRowMap<Scalar> dout(self.grad.data() + b * out_plane, out_c, g.patch_cols());
                if (bs.requires_grad) bs.grad_buffer().matrix() += dout.rowwise().sum();
                if (wt.requires_grad) {
                    detail::im2col(in.data.data() + b * in_plane, g, cols);
                    RowMap<Scalar> dw(wt.grad_buffer().data(), out_c, g.patch_rows());
                    dw.noalias() += dout * cols.transpose();
                }
                if (in.requires_grad) {
                    dcols.noalias() = wmat.transpose() * dout;
                    detail::col2im_add(dcols, g, in.grad_buffer().data() + b * in_plane);
                }
            }
        });
}

/// Transposed convolution (the adjoint of conv2d with the same geometry).
///
/// weight is InC x OutC x K x K. Output spatial size is
/// (H - 1) * stride - 2 * pad + K per axis.
template <typename Scalar>
Tensor<Scalar> conv_transpose2d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                                const Tensor<Scalar>& bias, Index stride, Index pad)
{
    detail::require_rank4(input.shape(), "conv_transpose2d", "input");
    detail::require_rank4(weight.shape(), "conv_transpose2d", "weight");
    const Index n = input.dim(0), in_c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const Index out_c = weight.dim(1), k = weight.dim(2);
    detail::check_conv_args("conv_transpose2d", k, stride, pad);
    if (weight.dim(0) != in_c || weight.dim(3) != k) {
        throw std::invalid_argument("conv_transpose2d: channel mismatch, input " + shape_string(input.shape())
                                    + " weight " + shape_string(weight.shape()));
    }
    if (bias.numel() != out_c) throw std::invalid_argument("conv_transpose2d: bias size must equal output channels");
    const Index out_h = (h - 1) * stride - 2 * pad + k;
    const Index out_w = (w - 1) * stride - 2 * pad + k;
    if (out_h < 1 || out_w < 1) {
        throw std::invalid_argument("conv_transpose2d: non-positive output size for input "
                                    + shape_string(input.shape()));
    }
    // The output plays the role of the conv2d input; the input is its patch grid.
    const detail::ConvGeometry g{out_c, out_h, out_w, k, stride, pad, h, w};
    const Index in_plane = in_c * h * w;
    const Index out_plane = out_c * out_h * out_w;

    ArrayX<Scalar> out = ArrayX<Scalar>::Zero(n * out_plane);
    ConstRowMap<Scalar> wmat(weight.data().data(), in_c, g.patch_rows());
    RowMatrix<Scalar> cols;
    for (Index b = 0; b < n; ++b) {
        ConstRowMap<Scalar> x(input.data().data() + b * in_plane, in_c, h * w);
        cols.noalias() = wmat.transpose() * x;
        Scalar* dst = out.data() + b * out_plane;
        detail::col2im_add(cols, g, dst);
        for (Index c = 0; c < out_c; ++c) {
            Eigen::Map<ArrayX<Scalar>>(dst + c * out_h * out_w, out_h * out_w) += bias.data()[c];
        }
    }

    return Tensor<Scalar>::make_result(
        {n, out_c, out_h, out_w}, std::move(out), {input, weight, bias},
        [g, n, in_c, in_plane, out_plane](typename Tensor<Scalar>::Node& self) {
            auto& in = *self.parents[0];
            auto& wt = *self.parents[1];
            auto& bs = *self.parents[2];
            ConstRowMap<Scalar> wmat(wt.data.data(), in_c, g.patch_rows());
            const Index spatial = g.height * g.width;
            RowMatrix<Scalar> dcols;
            for (Index b = 0; b < n; ++b) {
                const Scalar* dout = self.grad.data() + b * out_plane;
                if (bs.requires_grad) {
                    auto& db = bs.grad_buffer();
                    for (Index c = 0; c < g.channels; ++c) {
                        db[c] += Eigen::Map<const ArrayX<Scalar>>(dout + c * spatial, spatial).sum();
                    }
                }
                if (!in.requires_grad && !wt.requires_grad) continue;
                detail::im2col(dout, g, dcols);
                if (in.requires_grad) {
                    RowMap<Scalar> dx(in.grad_buffer().data() + b * in_plane, in_c, g.patch_cols());
                    dx.noalias() += wmat * dcols;
                }
                if (wt.requires_grad) {
                    ConstRowMap<Scalar> x(in.data.data() + b * in_plane, in_c, g.patch_cols());
                    RowMap<Scalar> dw(wt.grad_buffer().data(), in_c, g.patch_rows());
                    dw.noalias() += x * dcols.transpose();
                }
            }
        });
}

/// Elementwise x for x > 0, slope * x otherwise.
template <typename Scalar>
Tensor<Scalar> leaky_relu(const Tensor<Scalar>& input, Scalar slope)
{
    if (!(slope >= Scalar(0) && slope < Scalar(1))) throw std::invalid_argument("leaky_relu: slope must be in [0, 1)");
    ArrayX<Scalar> out = (input.data() > Scalar(0)).select(input.data(), slope * input.data());
    return Tensor<Scalar>::make_result(input.shape(), std::move(out), {input},
                                       [slope](typename Tensor<Scalar>::Node& self) {
                                           auto& in = *self.parents[0];
                                           in.grad_buffer() += (in.data > Scalar(0)).select(self.grad, slope * self.grad);
                                       });
}

/// Concatenates NCHW tensors along the channel axis.
template <typename Scalar>
Tensor<Scalar> concat_channels(std::span<const Tensor<Scalar>> parts)
{
    if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
    for (const auto& p : parts) detail::require_rank4(p.shape(), "concat_channels", "input");
    const Index n = parts[0].dim(0), h = parts[0].dim(2), w = parts[0].dim(3);
    Index channels = 0;
    std::vector<Index> offsets;
    for (const auto& p : parts) {
        if (p.dim(0) != n || p.dim(2) != h || p.dim(3) != w) {
            throw std::invalid_argument("concat_channels: spatial mismatch " + shape_string(parts[0].shape()) + " vs "
                                        + shape_string(p.shape()));
        }
        offsets.push_back(channels);
        channels += p.dim(1);
    }
    const Index plane = h * w;
    ArrayX<Scalar> out(n * channels * plane);
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const Index c = parts[i].dim(1);
        for (Index b = 0; b < n; ++b) {
            out.segment((b * channels + offsets[i]) * plane, c * plane) = parts[i].data().segment(b * c * plane, c * plane);
        }
    }
    std::vector<Tensor<Scalar>> parents(parts.begin(), parts.end());
    return Tensor<Scalar>::make_result(
        {n, channels, h, w}, std::move(out), std::move(parents),
        [n, channels, plane, offsets](typename Tensor<Scalar>::Node& self) {
            for (std::size_t i = 0; i < self.parents.size(); ++i) {
                auto& p = *self.parents[i];
                if (!p.requires_grad) continue;
                const Index c = p.shape[1];
                auto& g = p.grad_buffer();
                for (Index b = 0; b < n; ++b) {
                    g.segment(b * c * plane, c * plane) += self.grad.segment((b * channels + offsets[i]) * plane, c * plane);
                }
            }
        });
}

template <typename Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b,
                               const std::optional<Tensor<Scalar>>& c = std::nullopt)
{
    std::vector<Tensor<Scalar>> parts{a, b};
    if (c) parts.push_back(*c);
    return concat_channels<Scalar>(std::span<const Tensor<Scalar>>(parts));
}

/// Non-overlapping k x k mean pooling. H and W must be divisible by k.
template <typename Scalar>
Tensor<Scalar> avg_pool2d(const Tensor<Scalar>& input, Index k)
{
    detail::require_rank4(input.shape(), "avg_pool2d", "input");
    const Index n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (k < 1 || h % k != 0 || w % k != 0) {
        throw std::invalid_argument("avg_pool2d: " + shape_string(input.shape()) + " not divisible by "
                                    + std::to_string(k));
    }
    const Index oh = h / k, ow = w / k, planes = n * c;
    const Scalar inv = Scalar(1) / static_cast<Scalar>(k * k);
    ArrayX<Scalar> out = ArrayX<Scalar>::Zero(planes * oh * ow);
    const Scalar* src = input.data().data();
    for (Index p = 0; p < planes; ++p) {
        for (Index y = 0; y < h; ++y) {
            for (Index x = 0; x < w; ++x) out[(p * oh + y / k) * ow + x / k] += src[(p * h + y) * w + x];
        }
    }
    out *= inv;
    return Tensor<Scalar>::make_result({n, c, oh, ow}, std::move(out), {input},
                                       [planes, h, w, k, oh, ow, inv](typename Tensor<Scalar>::Node& self) {
                                           auto& g = self.parents[0]->grad_buffer();
                                           for (Index p = 0; p < planes; ++p) {
                                               for (Index y = 0; y < h; ++y) {
                                                   for (Index x = 0; x < w; ++x) {
                                                       g[(p * h + y) * w + x] += inv * self.grad[(p * oh + y / k) * ow + x / k];
                                                   }
                                               }
                                           }
                                       });
}

namespace detail {

template <typename Scalar>
void check_binary(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* op)
{
    if (a.shape() != b.shape() && a.numel() != 1 && b.numel() != 1) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs "
                                    + shape_string(b.shape()));
    }
}

// Sums a broadcast gradient back down to a parent of size 1 when needed.
template <typename Scalar>
void accumulate(TensorNode<Scalar>& parent, const ArrayX<Scalar>& g)
{
    if (!parent.requires_grad) return;
    auto& buf = parent.grad_buffer();
    if (buf.size() == g.size()) {
        buf += g;
    } else {
        buf[0] += g.sum();
    }
}

template <typename Scalar>
ArrayX<Scalar> broadcast(const ArrayX<Scalar>& a, Index n)
{
    return a.size() == n ? a : ArrayX<Scalar>::Constant(n, a[0]);
}

template <typename Scalar>
Shape result_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b)
{
    return a.numel() >= b.numel() ? a.shape() : b.shape();
}

} // namespace detail

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b)
{
    detail::check_binary(a, b, "add");
    Shape shape = detail::result_shape(a, b);
    const Index n = shape_numel(shape);
    ArrayX<Scalar> out = detail::broadcast(a.data(), n) + detail::broadcast(b.data(), n);
    return Tensor<Scalar>::make_result(std::move(shape), std::move(out), {a, b}, [](typename Tensor<Scalar>::Node& self) {
        detail::accumulate(*self.parents[0], self.grad);
        detail::accumulate(*self.parents[1], self.grad);
    });
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b)
{
    detail::check_binary(a, b, "sub");
    Shape shape = detail::result_shape(a, b);
    const Index n = shape_numel(shape);
    ArrayX<Scalar> out = detail::broadcast(a.data(), n) - detail::broadcast(b.data(), n);
    return Tensor<Scalar>::make_result(std::move(shape), std::move(out), {a, b}, [](typename Tensor<Scalar>::Node& self) {
        detail::accumulate(*self.parents[0], self.grad);
        detail::accumulate<Scalar>(*self.parents[1], -self.grad);
    });
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b)
{
    detail::check_binary(a, b, "mul");
    Shape shape = detail::result_shape(a, b);
    const Index n = shape_numel(shape);
    ArrayX<Scalar> out = detail::broadcast(a.data(), n) * detail::broadcast(b.data(), n);
    return Tensor<Scalar>::make_result(std::move(shape), std::move(out), {a, b}, [n](typename Tensor<Scalar>::Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) detail::accumulate<Scalar>(pa, self.grad * detail::broadcast(pb.data, n));
        if (pb.requires_grad) detail::accumulate<Scalar>(pb, self.grad * detail::broadcast(pa.data, n));
    });
}

template <typename Scalar>
Tensor<Scalar> scalar_mul(const Tensor<Scalar>& a, Scalar s)
{
    return Tensor<Scalar>::make_result(a.shape(), a.data() * s, {a}, [s](typename Tensor<Scalar>::Node& self) {
        self.parents[0]->grad_buffer() += s * self.grad;
    });
}

/// sqrt(x + eps); eps keeps the derivative bounded at zero.
template <typename Scalar>
Tensor<Scalar> sqrt(const Tensor<Scalar>& a, Scalar eps = Scalar(0))
{
    ArrayX<Scalar> out = (a.data() + eps).sqrt();
    return Tensor<Scalar>::make_result(a.shape(), out, {a}, [out](typename Tensor<Scalar>::Node& self) {
        self.parents[0]->grad_buffer() += self.grad / (Scalar(2) * out);
    });
}

template <typename Scalar>
Tensor<Scalar> square(const Tensor<Scalar>& a)
{
    return Tensor<Scalar>::make_result(a.shape(), a.data().square(), {a}, [](typename Tensor<Scalar>::Node& self) {
        auto& p = *self.parents[0];
        p.grad_buffer() += Scalar(2) * p.data * self.grad;
    });
}

template <typename Scalar>
Tensor<Scalar> reduce_sum(const Tensor<Scalar>& a)
{
    return Tensor<Scalar>::make_result(Shape{1}, ArrayX<Scalar>::Constant(1, a.data().sum()), {a},
                                       [](typename Tensor<Scalar>::Node& self) {
                                           self.parents[0]->grad_buffer() += self.grad[0];
                                       });
}

template <typename Scalar>
Tensor<Scalar> reduce_mean(const Tensor<Scalar>& a)
{
    if (a.numel() == 0) throw std::invalid_argument("reduce_mean: empty tensor");
    const Scalar inv = Scalar(1) / static_cast<Scalar>(a.numel());
    return Tensor<Scalar>::make_result(Shape{1}, ArrayX<Scalar>::Constant(1, a.data().sum() * inv), {a},
                                       [inv](typename Tensor<Scalar>::Node& self) {
                                           self.parents[0]->grad_buffer() += self.grad[0] * inv;
                                       });
}

/// Sums an NCHW tensor over its channel axis, giving N x 1 x H x W.
template <typename Scalar>
Tensor<Scalar> sum_channels(const Tensor<Scalar>& a)
{
    detail::require_rank4(a.shape(), "sum_channels", "input");
    const Index n = a.dim(0), c = a.dim(1), plane = a.dim(2) * a.dim(3);
    ArrayX<Scalar> out = ArrayX<Scalar>::Zero(n * plane);
    for (Index b = 0; b < n; ++b) {
        for (Index ch = 0; ch < c; ++ch) out.segment(b * plane, plane) += a.data().segment((b * c + ch) * plane, plane);
    }
    return Tensor<Scalar>::make_result({n, 1, a.dim(2), a.dim(3)}, std::move(out), {a},
                                       [n, c, plane](typename Tensor<Scalar>::Node& self) {
                                           auto& g = self.parents[0]->grad_buffer();
                                           for (Index b = 0; b < n; ++b) {
                                               for (Index ch = 0; ch < c; ++ch) {
                                                   g.segment((b * c + ch) * plane, plane) += self.grad.segment(b * plane, plane);
                                               }
                                           }
                                       });
}

template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return add(a, b); }

template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return sub(a, b); }

template <typename Scalar>
Tensor<Scalar> operator*(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return mul(a, b); }

template <typename Scalar>
Tensor<Scalar> operator*(const Tensor<Scalar>& a, Scalar s) { return scalar_mul(a, s); }

template <typename Scalar>
Tensor<Scalar> operator*(Scalar s, const Tensor<Scalar>& a) { return scalar_mul(a, s); }

} // namespace cmw
