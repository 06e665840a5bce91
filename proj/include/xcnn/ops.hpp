#pragma once

// Convolution, pooling and dense kernels shared by the forward pass, the
// trainer and the deconvolution. Convolutions are lowered to matrix products
// via im2col; the products themselves run on Eigen.

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "xcnn/tensor.hpp"

namespace xcnn::ops {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMatrix>;
using ConstRowMap = Eigen::Map<const RowMatrix>;
using VecMap = Eigen::Map<Eigen::VectorXf>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXf>;

struct ConvGeometry {
    std::size_t in_channels, in_h, in_w;
    std::size_t kernel_h, kernel_w, stride, pad;

    std::size_t out_h() const { return (in_h + 2 * pad - kernel_h) / stride + 1; }
    std::size_t out_w() const { return (in_w + 2 * pad - kernel_w) / stride + 1; }
    std::size_t patch_size() const { return in_channels * kernel_h * kernel_w; }
    std::size_t positions() const { return out_h() * out_w(); }
    bool valid() const {
        return stride >= 1 && kernel_h >= 1 && kernel_w >= 1 && in_h + 2 * pad >= kernel_h &&
               in_w + 2 * pad >= kernel_w;
    }
};

/// Output spatial extent of a convolution or pooling window.
inline std::size_t conv_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
    return (in + 2 * pad - kernel) / stride + 1;
}

/// Unfold [C,H,W] into a (C*KH*KW) x (OH*OW) row-major matrix; padding reads as zero.
inline void im2col(const float* input, const ConvGeometry& g, FloatBuffer& col) {
    const std::size_t oh = g.out_h(), ow = g.out_w(), p = oh * ow;
    col.assign(g.patch_size() * p, 0.0f);
    std::size_t row = 0;
    for (std::size_t c = 0; c < g.in_channels; ++c)
        for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
            for (std::size_t kx = 0; kx < g.kernel_w; ++kx, ++row) {
                float* dst = col.data() + row * p;
                for (std::size_t y = 0; y < oh; ++y) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
                    const float* src = input + (c * g.in_h + static_cast<std::size_t>(iy)) * g.in_w;
                    for (std::size_t x = 0; x < ow; ++x) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                        if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.in_w)) dst[y * ow + x] = src[ix];
                    }
                }
            }
}

/// Fold a column matrix back onto [C,H,W], accumulating overlaps. Adjoint of im2col.
inline void col2im(const float* col, const ConvGeometry& g, float* output) {
    const std::size_t oh = g.out_h(), ow = g.out_w(), p = oh * ow;
    std::fill(output, output + g.in_channels * g.in_h * g.in_w, 0.0f);
    std::size_t row = 0;
    for (std::size_t c = 0; c < g.in_channels; ++c)
        for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
            for (std::size_t kx = 0; kx < g.kernel_w; ++kx, ++row) {
                const float* src = col + row * p;
                for (std::size_t y = 0; y < oh; ++y) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
                    float* dst = output + (c * g.in_h + static_cast<std::size_t>(iy)) * g.in_w;
                    for (std::size_t x = 0; x < ow; ++x) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                        if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.in_w)) dst[ix] += src[y * ow + x];
                    }
                }
            }
}

inline ConvGeometry geometry(const Shape& input, const Tensor& weights, std::size_t stride, std::size_t pad) {
    return ConvGeometry{input.at(0), input.at(1), input.at(2), weights.dim(2), weights.dim(3), stride, pad};
}

/// out[o] = sum_c w[o,c] (*) in[c] + b[o]; `col` receives the unfolded input.
inline Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor* bias, std::size_t stride,
                     std::size_t pad, FloatBuffer& col) {
    const ConvGeometry g = geometry(input.shape(), weights, stride, pad);
    if (weights.dim(1) != g.in_channels)
        throw ShapeError("conv2d: weight in-channels " + std::to_string(weights.dim(1)) + " vs input " +
                         shape_str(input.shape()));
    const std::size_t out_c = weights.dim(0), k = g.patch_size(), p = g.positions();
    im2col(input.data(), g, col);
    Tensor out({out_c, g.out_h(), g.out_w()});
    RowMap o(out.data(), static_cast<Eigen::Index>(out_c), static_cast<Eigen::Index>(p));
    o.noalias() = ConstRowMap(weights.data(), static_cast<Eigen::Index>(out_c), static_cast<Eigen::Index>(k)) *
                  ConstRowMap(col.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(p));
    if (bias)
        for (std::size_t oc = 0; oc < out_c; ++oc) o.row(static_cast<Eigen::Index>(oc)).array() += (*bias)[oc];
    return out;
}

inline Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor* bias, std::size_t stride, std::size_t pad) {
    FloatBuffer col;
    return conv2d(input, weights, bias, stride, pad, col);
}

/// Adjoint (transpose) of the bias-free convolution: maps an output-shaped
/// signal back onto the input shape using the same kernels, flipped.
inline Tensor conv2d_adjoint(const Tensor& signal, const Tensor& weights, const Shape& input_shape, std::size_t stride,
                             std::size_t pad) {
    const ConvGeometry g = geometry(input_shape, weights, stride, pad);
    const std::size_t out_c = weights.dim(0), k = g.patch_size(), p = g.positions();
    if (signal.shape() != Shape{out_c, g.out_h(), g.out_w()})
        throw ShapeError("conv2d_adjoint: signal " + shape_str(signal.shape()) + " does not match layer output");
    FloatBuffer dcol(k * p);
    RowMap(dcol.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(p)).noalias() =
        ConstRowMap(weights.data(), static_cast<Eigen::Index>(out_c), static_cast<Eigen::Index>(k)).transpose() *
        ConstRowMap(signal.data(), static_cast<Eigen::Index>(out_c), static_cast<Eigen::Index>(p));
    Tensor out(input_shape);
    col2im(dcol.data(), g, out.data());
    return out;
}

/// Max-pool switches: for each pooled cell, the flat index of its argmax in the pre-pool tensor.
struct Switches {
    Shape input_shape;
    std::vector<std::uint32_t> index;

    bool empty() const noexcept { return index.empty(); }
    friend bool operator==(const Switches&, const Switches&) = default;
};

/// Ties resolve to the first cell in row-major scan order.
inline Tensor maxpool(const Tensor& input, std::size_t window, std::size_t stride, Switches& switches) {
    const std::size_t c_n = input.dim(0), h = input.dim(1), w = input.dim(2);
    const std::size_t oh = conv_extent(h, window, stride, 0), ow = conv_extent(w, window, stride, 0);
    Tensor out({c_n, oh, ow});
    switches.input_shape = input.shape();
    switches.index.resize(out.size());
    std::size_t cell = 0;
    for (std::size_t c = 0; c < c_n; ++c)
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t x = 0; x < ow; ++x, ++cell) {
                std::size_t best = (c * h + y * stride) * w + x * stride;
                float best_v = input[best];
                for (std::size_t dy = 0; dy < window; ++dy)
                    for (std::size_t dx = 0; dx < window; ++dx) {
                        const std::size_t idx = (c * h + y * stride + dy) * w + x * stride + dx;
                        if (input[idx] > best_v) {
                            best_v = input[idx];
                            best = idx;
                        }
                    }
                out[cell] = best_v;
                switches.index[cell] = static_cast<std::uint32_t>(best);
            }
    return out;
}

/// Place each pooled value at its recorded switch location; zeros elsewhere.
inline Tensor unpool(const Tensor& pooled, const Switches& switches) {
    if (switches.index.size() != pooled.size())
        throw ShapeError("unpool: " + std::to_string(switches.index.size()) + " switches for " +
                         std::to_string(pooled.size()) + " pooled cells");
    Tensor out(switches.input_shape);
    for (std::size_t i = 0; i < pooled.size(); ++i) {
        const auto target = switches.index[i];
        if (target >= out.size()) throw ShapeError("unpool: switch index out of bounds");
        out[target] = pooled[i];
    }
    return out;
}

/// Route a pooled-shape gradient back to the switch locations (accumulating).
inline Tensor maxpool_backward(const Tensor& grad, const Switches& switches) {
    Tensor out(switches.input_shape);
    for (std::size_t i = 0; i < grad.size(); ++i) out[switches.index[i]] += grad[i];
    return out;
}

inline Tensor relu(Tensor t) {
    for (auto& v : t.values()) v = v > 0.0f ? v : 0.0f;
    return t;
}

inline Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias) {
    const std::size_t out_n = weights.dim(0), in_n = weights.dim(1);
    if (input.size() != in_n)
        throw ShapeError("dense: input of " + std::to_string(input.size()) + " values, weights expect " +
                         std::to_string(in_n));
    Tensor out({out_n});
    VecMap(out.data(), static_cast<Eigen::Index>(out_n)).noalias() =
        ConstRowMap(weights.data(), static_cast<Eigen::Index>(out_n), static_cast<Eigen::Index>(in_n)) *
            ConstVecMap(input.data(), static_cast<Eigen::Index>(in_n)) +
        ConstVecMap(bias.data(), static_cast<Eigen::Index>(out_n));
    return out;
}

/// Numerically stable softmax; accumulation in double.
inline Tensor softmax(const Tensor& logits) {
    const auto v = logits.values();
    const float m = *std::max_element(v.begin(), v.end());
    std::vector<double> e(v.size());
    double total = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) total += (e[i] = std::exp(static_cast<double>(v[i]) - m));
    Tensor out(logits.shape());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(e[i] / total);
    return out;
}

} // namespace xcnn::ops
