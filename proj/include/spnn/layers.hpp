#pragma once

#include <optional>
#include <variant>
#include <vector>

#include "spnn/csr.hpp"
#include "spnn/mask.hpp"
#include "spnn/matrix.hpp"
#include "spnn/tensor.hpp"

namespace spnn {

enum class FcKernel { DenseMasked, Csr };

// Fully-connected layer. The weight matrix is (in, out); when a mask is
// present every masked-out weight is exactly zero at all times.
template <typename T>
struct DenseLayer {
    Matrix<T> w;
    std::vector<T> b;
    std::optional<SparsityPattern> mask;
    FcKernel kernel = FcKernel::DenseMasked;

    // cached sparse form of w for the CSR execution path
    mutable CsrMatrix<T> csr;
    mutable bool csr_stale = true;

    DenseLayer() = default;
    DenseLayer(Matrix<T> weights, std::vector<T> bias) : w(std::move(weights)), b(std::move(bias)) {
        require(static_cast<index_t>(b.size()) == w.cols, "dense layer: bias size must equal output width");
    }

    index_t in_features() const { return w.rows; }
    index_t out_features() const { return w.cols; }

    void set_mask(SparsityPattern m) {
        require(m.shape == std::vector<index_t>({w.rows, w.cols}),
                "dense layer: mask shape " + shape_str(m.shape) + " vs weights (" + std::to_string(w.rows) +
                    "," + std::to_string(w.cols) + ")");
        mask = std::move(m);
        apply_mask(w, *mask);
        csr_stale = true;
    }

    const CsrMatrix<T>& csr_weights() const {
        if (csr_stale) {
            csr = csr_from_dense(w, T{0});
            csr_stale = false;
        }
        return csr;
    }
};

// Valid-padding 2-D convolution, kernels (out, in, kh, kw).
template <typename T>
struct Conv2dLayer {
    Tensor<T> k;
    std::vector<T> b;
    std::optional<SparsityPattern> mask;
    index_t stride = 1;

    Conv2dLayer() = default;
    Conv2dLayer(Tensor<T> kernels, std::vector<T> bias, index_t stride_ = 1)
        : k(std::move(kernels)), b(std::move(bias)), stride(stride_) {
        require(k.rank() == 4, "conv layer: kernels must be 4-D");
        require(static_cast<index_t>(b.size()) == k.dim(0), "conv layer: bias size must equal filter count");
        require(stride >= 1, "conv layer: stride must be >= 1");
    }

    index_t out_channels() const { return k.dim(0); }
    index_t in_channels() const { return k.dim(1); }

    void set_mask(SparsityPattern m) {
        require(m.shape == k.dims, "conv layer: mask shape mismatch");
        mask = std::move(m);
        apply_mask(k, *mask);
    }
};

struct MaxPoolLayer {
    index_t window = 2;
};

struct ReluLayer {};
struct FlattenLayer {};

template <typename T>
using Layer = std::variant<DenseLayer<T>, Conv2dLayer<T>, MaxPoolLayer, ReluLayer, FlattenLayer>;

template <typename T>
struct DenseGrads {
    Matrix<T> w;
    std::vector<T> b;
};

template <typename T>
struct ConvGrads {
    Tensor<T> k;
    std::vector<T> b;
};

template <typename T>
using LayerGrads = std::variant<std::monostate, DenseGrads<T>, ConvGrads<T>>;

// ---- fully connected ----

template <typename T>
Tensor<T> dense_forward(const DenseLayer<T>& layer, const Tensor<T>& x) {
    require(x.rank() == 2, "dense forward: input must be (batch, features)");
    require(x.dim(1) == layer.in_features(), "dense forward: input width " + std::to_string(x.dim(1)) +
                                                 " vs layer " + std::to_string(layer.in_features()));
    const index_t batch = x.dim(0);
    const index_t out = layer.out_features();
    Tensor<T> y({batch, out});
    if (layer.kernel == FcKernel::Csr)
        matmul_dense_csr_accum(x.data(), batch, x.dim(1), layer.csr_weights(), y.data());
    else
        matmul_accum(x.data(), batch, x.dim(1), layer.w.data(), out, y.data());
    for (index_t i = 0; i < batch; ++i) {
        T* row = y.data() + i * out;
        for (index_t j = 0; j < out; ++j) row[j] += layer.b[static_cast<std::size_t>(j)];
    }
    return y;
}

template <typename T>
Tensor<T> dense_backward(const DenseLayer<T>& layer, const Tensor<T>& x, const Tensor<T>& dy,
                         DenseGrads<T>& grads) {
    const index_t batch = x.dim(0);
    const index_t in = layer.in_features();
    const index_t out = layer.out_features();
    grads.w = Matrix<T>(in, out);
    grads.b.assign(static_cast<std::size_t>(out), T{0});
    matmul_at_accum(x.data(), batch, in, dy.data(), out, grads.w.data());
    for (index_t i = 0; i < batch; ++i)
        for (index_t j = 0; j < out; ++j) grads.b[static_cast<std::size_t>(j)] += dy.data()[i * out + j];
    if (layer.mask) apply_mask(grads.w, *layer.mask);
    Tensor<T> dx({batch, in});
    matmul_bt_accum(dy.data(), batch, out, layer.w.data(), in, dx.data());
    return dx;
}

// ---- convolution ----

namespace detail {

struct ConvDims {
    index_t batch, in_c, in_h, in_w;
    index_t out_c, kh, kw, stride;
    index_t out_h, out_w;
    index_t patch() const { return in_c * kh * kw; }
    index_t rows() const { return batch * out_h * out_w; }
};

template <typename T>
ConvDims conv_dims(const Conv2dLayer<T>& layer, const Tensor<T>& x) {
    require(x.rank() == 4, "conv forward: input must be (batch, channels, h, w)");
    require(x.dim(1) == layer.in_channels(), "conv forward: channel count " + std::to_string(x.dim(1)) +
                                                 " vs kernels " + std::to_string(layer.in_channels()));
    ConvDims d{x.dim(0), x.dim(1), x.dim(2), x.dim(3),
               layer.out_channels(), layer.k.dim(2), layer.k.dim(3), layer.stride, 0, 0};
    require(d.in_h >= d.kh && d.in_w >= d.kw, "conv forward: input smaller than kernel");
    d.out_h = (d.in_h - d.kh) / d.stride + 1;
    d.out_w = (d.in_w - d.kw) / d.stride + 1;
    return d;
}

template <typename T>
std::vector<T> im2col(const T* x, const ConvDims& d) {
    std::vector<T> cols(static_cast<std::size_t>(d.rows() * d.patch()));
    T* dst = cols.data();
    for (index_t b = 0; b < d.batch; ++b) {
        const T* img = x + b * d.in_c * d.in_h * d.in_w;
        for (index_t oy = 0; oy < d.out_h; ++oy) {
            for (index_t ox = 0; ox < d.out_w; ++ox) {
                for (index_t c = 0; c < d.in_c; ++c) {
                    const T* plane = img + c * d.in_h * d.in_w;
                    for (index_t ky = 0; ky < d.kh; ++ky) {
                        const T* src = plane + (oy * d.stride + ky) * d.in_w + ox * d.stride;
                        for (index_t kx = 0; kx < d.kw; ++kx) *dst++ = src[kx];
                    }
                }
            }
        }
    }
    return cols;
}

template <typename T>
void col2im_accum(const std::vector<T>& dcols, const ConvDims& d, T* dx) {
    const T* src = dcols.data();
    for (index_t b = 0; b < d.batch; ++b) {
        T* img = dx + b * d.in_c * d.in_h * d.in_w;
        for (index_t oy = 0; oy < d.out_h; ++oy) {
            for (index_t ox = 0; ox < d.out_w; ++ox) {
                for (index_t c = 0; c < d.in_c; ++c) {
                    T* plane = img + c * d.in_h * d.in_w;
                    for (index_t ky = 0; ky < d.kh; ++ky) {
                        T* dst = plane + (oy * d.stride + ky) * d.in_w + ox * d.stride;
                        for (index_t kx = 0; kx < d.kw; ++kx) dst[kx] += src[kx];
                        src += d.kw;
                    }
                }
            }
        }
    }
}

}  // namespace detail

template <typename T>
Tensor<T> conv_forward(const Conv2dLayer<T>& layer, const Tensor<T>& x) {
    const auto d = detail::conv_dims(layer, x);
    const auto cols = detail::im2col(x.data(), d);
    // y2 (rows, out_c) = cols * kernel^T; kernel viewed as (out_c, patch)
    std::vector<T> y2(static_cast<std::size_t>(d.rows() * d.out_c));
    matmul_bt_accum(cols.data(), d.rows(), d.patch(), layer.k.data(), d.out_c, y2.data());
    Tensor<T> y({d.batch, d.out_c, d.out_h, d.out_w});
    const index_t plane = d.out_h * d.out_w;
    for (index_t b = 0; b < d.batch; ++b)
        for (index_t o = 0; o < d.out_c; ++o) {
            const T bias = layer.b[static_cast<std::size_t>(o)];
            T* dst = y.data() + (b * d.out_c + o) * plane;
            for (index_t p = 0; p < plane; ++p) dst[p] = y2[static_cast<std::size_t>((b * plane + p) * d.out_c + o)] + bias;
        }
    return y;
}

template <typename T>
Tensor<T> conv_backward(const Conv2dLayer<T>& layer, const Tensor<T>& x, const Tensor<T>& dy,
                        ConvGrads<T>& grads) {
    const auto d = detail::conv_dims(layer, x);
    const auto cols = detail::im2col(x.data(), d);
    const index_t plane = d.out_h * d.out_w;

    // regroup dy to (rows, out_c)
    std::vector<T> dy2(static_cast<std::size_t>(d.rows() * d.out_c));
    for (index_t b = 0; b < d.batch; ++b)
        for (index_t o = 0; o < d.out_c; ++o) {
            const T* src = dy.data() + (b * d.out_c + o) * plane;
            for (index_t p = 0; p < plane; ++p) dy2[static_cast<std::size_t>((b * plane + p) * d.out_c + o)] = src[p];
        }

    grads.b.assign(static_cast<std::size_t>(d.out_c), T{0});
    for (index_t r = 0; r < d.rows(); ++r)
        for (index_t o = 0; o < d.out_c; ++o) grads.b[static_cast<std::size_t>(o)] += dy2[static_cast<std::size_t>(r * d.out_c + o)];

    // dk^T (patch, out_c) = cols^T * dy2, then transpose into kernel layout
    std::vector<T> dkt(static_cast<std::size_t>(d.patch() * d.out_c));
    matmul_at_accum(cols.data(), d.rows(), d.patch(), dy2.data(), d.out_c, dkt.data());
    grads.k = Tensor<T>(layer.k.dims);
    for (index_t o = 0; o < d.out_c; ++o)
        for (index_t ck = 0; ck < d.patch(); ++ck)
            grads.k.v[static_cast<std::size_t>(o * d.patch() + ck)] = dkt[static_cast<std::size_t>(ck * d.out_c + o)];
    if (layer.mask) apply_mask(grads.k, *layer.mask);

    // dcols (rows, patch) = dy2 * kernel viewed as (out_c, patch)
    std::vector<T> dcols(static_cast<std::size_t>(d.rows() * d.patch()));
    matmul_accum(dy2.data(), d.rows(), d.out_c, layer.k.data(), d.patch(), dcols.data());
    Tensor<T> dx(x.dims);
    detail::col2im_accum(dcols, d, dx.data());
    return dx;
}

// ---- pooling / relu / flatten ----

template <typename T>
Tensor<T> maxpool_forward(const MaxPoolLayer& layer, const Tensor<T>& x, std::vector<index_t>& argmax) {
    require(x.rank() == 4, "max pool: input must be (batch, channels, h, w)");
    const index_t w = layer.window;
    require(w >= 1, "max pool: window must be >= 1");
    const index_t batch = x.dim(0), chans = x.dim(1), in_h = x.dim(2), in_w = x.dim(3);
    require(in_h >= w && in_w >= w, "max pool: input smaller than window");
    const index_t out_h = in_h / w, out_w = in_w / w;
    Tensor<T> y({batch, chans, out_h, out_w});
    argmax.assign(static_cast<std::size_t>(y.size()), 0);
    index_t oi = 0;
    for (index_t b = 0; b < batch; ++b)
        for (index_t c = 0; c < chans; ++c) {
            const index_t base = (b * chans + c) * in_h * in_w;
            for (index_t oy = 0; oy < out_h; ++oy)
                for (index_t ox = 0; ox < out_w; ++ox) {
                    index_t best = base + (oy * w) * in_w + ox * w;
                    T best_v = x.v[static_cast<std::size_t>(best)];
                    for (index_t ky = 0; ky < w; ++ky)
                        for (index_t kx = 0; kx < w; ++kx) {
                            const index_t idx = base + (oy * w + ky) * in_w + (ox * w + kx);
                            const T val = x.v[static_cast<std::size_t>(idx)];
                            if (val > best_v) {  // first max wins on ties
                                best_v = val;
                                best = idx;
                            }
                        }
                    y.v[static_cast<std::size_t>(oi)] = best_v;
                    argmax[static_cast<std::size_t>(oi)] = best;
                    ++oi;
                }
        }
    return y;
}

template <typename T>
Tensor<T> maxpool_backward(const Tensor<T>& x, const Tensor<T>& dy, const std::vector<index_t>& argmax) {
    Tensor<T> dx(x.dims);
    for (std::size_t i = 0; i < argmax.size(); ++i) dx.v[static_cast<std::size_t>(argmax[i])] += dy.v[i];
    return dx;
}

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x) {
    Tensor<T> y = x;
    for (auto& v : y.v)
        if (v < T{0}) v = T{0};
    return y;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
    Tensor<T> dx = dy;
    for (std::size_t i = 0; i < dx.v.size(); ++i)
        if (x.v[i] <= T{0}) dx.v[i] = T{0};
    return dx;
}

template <typename T>
Tensor<T> flatten_forward(const Tensor<T>& x) {
    require(x.rank() >= 2, "flatten: input must have a batch dimension");
    index_t feat = 1;
    for (index_t i = 1; i < x.rank(); ++i) feat *= x.dim(i);
    return x.reshaped({x.dim(0), feat});
}

}  // namespace spnn
