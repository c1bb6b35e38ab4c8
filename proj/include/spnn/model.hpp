#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "spnn/init.hpp"
#include "spnn/layers.hpp"
#include "spnn/rng.hpp"

namespace spnn {

struct ModelMeta {
    std::string name;
    std::uint64_t seed = 0;
    std::string config_echo;  // JSON text of the creating config, may be empty
};

template <typename T>
struct Model {
    std::vector<Layer<T>> layers;
    ModelMeta meta;

    index_t layer_count() const { return static_cast<index_t>(layers.size()); }

    // Layers that carry weights eligible for masking/pruning.
    std::vector<index_t> prunable_layers() const {
        std::vector<index_t> out;
        for (index_t i = 0; i < layer_count(); ++i)
            if (std::holds_alternative<DenseLayer<T>>(layers[i]) || std::holds_alternative<Conv2dLayer<T>>(layers[i]))
                out.push_back(i);
        return out;
    }

    index_t weight_count() const {
        index_t n = 0;
        for (const auto& layer : layers) {
            if (const auto* d = std::get_if<DenseLayer<T>>(&layer)) n += d->w.size();
            if (const auto* c = std::get_if<Conv2dLayer<T>>(&layer)) n += c->k.size();
        }
        return n;
    }

    // Sparsity of each prunable layer's weight tensor, by mask (unmasked = 0).
    std::vector<double> layer_sparsities() const {
        std::vector<double> out;
        for (index_t i : prunable_layers()) {
            if (const auto* d = std::get_if<DenseLayer<T>>(&layers[i]))
                out.push_back(d->mask ? d->mask->sparsity() : 0.0);
            else if (const auto* c = std::get_if<Conv2dLayer<T>>(&layers[i]))
                out.push_back(c->mask ? c->mask->sparsity() : 0.0);
        }
        return out;
    }

    double overall_sparsity() const {
        index_t zero = 0, total = 0;
        for (index_t i : prunable_layers()) {
            if (const auto* d = std::get_if<DenseLayer<T>>(&layers[i])) {
                total += d->w.size();
                zero += d->mask ? d->w.size() - d->mask->nnz() : 0;
            } else if (const auto* c = std::get_if<Conv2dLayer<T>>(&layers[i])) {
                total += c->k.size();
                zero += c->mask ? c->k.size() - c->mask->nnz() : 0;
            }
        }
        return total == 0 ? 0.0 : static_cast<double>(zero) / static_cast<double>(total);
    }
};

template <typename T>
struct ForwardCache {
    std::vector<Tensor<T>> inputs;                 // input seen by each layer
    std::vector<std::vector<index_t>> pool_argmax; // per layer; empty unless max pool
    Tensor<T> logits;
};

template <typename T>
Tensor<T> forward(const Model<T>& m, const Tensor<T>& x, ForwardCache<T>* cache = nullptr) {
    Tensor<T> cur = x;
    if (cache) {
        cache->inputs.clear();
        cache->pool_argmax.assign(m.layers.size(), {});
    }
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        if (cache) cache->inputs.push_back(cur);
        cur = std::visit(
            [&](const auto& layer) -> Tensor<T> {
                using L = std::decay_t<decltype(layer)>;
                if constexpr (std::is_same_v<L, DenseLayer<T>>) {
                    return dense_forward(layer, cur);
                } else if constexpr (std::is_same_v<L, Conv2dLayer<T>>) {
                    return conv_forward(layer, cur);
                } else if constexpr (std::is_same_v<L, MaxPoolLayer>) {
                    std::vector<index_t> argmax;
                    Tensor<T> y = maxpool_forward(layer, cur, argmax);
                    if (cache) cache->pool_argmax[i] = std::move(argmax);
                    return y;
                } else if constexpr (std::is_same_v<L, ReluLayer>) {
                    return relu_forward(cur);
                } else {
                    return flatten_forward(cur);
                }
            },
            m.layers[i]);
    }
    if (cache) cache->logits = cur;
    return cur;
}

// Mean softmax cross-entropy over the batch; fills dlogits when given.
template <typename T>
double softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels,
                             Tensor<T>* dlogits = nullptr) {
    require(logits.rank() == 2, "loss: logits must be (batch, classes)");
    const index_t batch = logits.dim(0), classes = logits.dim(1);
    require(static_cast<index_t>(labels.size()) == batch, "loss: batch size " + std::to_string(batch) +
                                                              " vs " + std::to_string(labels.size()) + " labels");
    if (dlogits) *dlogits = Tensor<T>(logits.dims);
    double loss = 0.0;
    for (index_t i = 0; i < batch; ++i) {
        const T* row = logits.data() + i * classes;
        const int y = labels[static_cast<std::size_t>(i)];
        require(y >= 0 && y < classes, "loss: label out of range");
        double mx = static_cast<double>(row[0]);
        for (index_t j = 1; j < classes; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double denom = 0.0;
        for (index_t j = 0; j < classes; ++j) denom += std::exp(static_cast<double>(row[j]) - mx);
        loss += std::log(denom) - (static_cast<double>(row[y]) - mx);
        if (dlogits) {
            T* drow = dlogits->data() + i * classes;
            for (index_t j = 0; j < classes; ++j) {
                const double p = std::exp(static_cast<double>(row[j]) - mx) / denom;
                drow[j] = static_cast<T>((p - (j == y ? 1.0 : 0.0)) / static_cast<double>(batch));
            }
        }
    }
    return loss / static_cast<double>(batch);
}

template <typename T>
struct BackwardResult {
    double loss = 0.0;
    std::vector<LayerGrads<T>> grads;  // aligned with model layers
};

// Gradients of the mean cross-entropy w.r.t. every parameter; gradients of
// masked-out weights are forced to zero inside the layer backward.
template <typename T>
BackwardResult<T> backward(const Model<T>& m, const ForwardCache<T>& cache, const std::vector<int>& labels) {
    require(cache.inputs.size() == m.layers.size(), "backward: cache does not match model");
    BackwardResult<T> result;
    result.grads.assign(m.layers.size(), std::monostate{});
    Tensor<T> delta;
    result.loss = softmax_cross_entropy(cache.logits, labels, &delta);
    for (index_t i = m.layer_count() - 1; i >= 0; --i) {
        const auto& input = cache.inputs[static_cast<std::size_t>(i)];
        delta = std::visit(
            [&](const auto& layer) -> Tensor<T> {
                using L = std::decay_t<decltype(layer)>;
                if constexpr (std::is_same_v<L, DenseLayer<T>>) {
                    DenseGrads<T> g;
                    Tensor<T> dx = dense_backward(layer, input, delta, g);
                    result.grads[static_cast<std::size_t>(i)] = std::move(g);
                    return dx;
                } else if constexpr (std::is_same_v<L, Conv2dLayer<T>>) {
                    ConvGrads<T> g;
                    Tensor<T> dx = conv_backward(layer, input, delta, g);
                    result.grads[static_cast<std::size_t>(i)] = std::move(g);
                    return dx;
                } else if constexpr (std::is_same_v<L, MaxPoolLayer>) {
                    return maxpool_backward(input, delta, cache.pool_argmax[static_cast<std::size_t>(i)]);
                } else if constexpr (std::is_same_v<L, ReluLayer>) {
                    return relu_backward(input, delta);
                } else {
                    return delta.reshaped(input.dims);
                }
            },
            m.layers[static_cast<std::size_t>(i)]);
    }
    return result;
}

// ---- reference models ----

// Classifier heads start near zero so the initial loss sits at ln(classes);
// hidden layers use plain he-normal.
inline constexpr double kClassifierInitScale = 0.1;

template <typename T>
DenseLayer<T> make_dense(index_t in, index_t out, Rng& rng, std::optional<SparsityPattern> mask = {},
                         double scale = 1.0) {
    Tensor<T> w = init_weights<T>({in, out}, rng, InitScheme::HeNormal);
    if (scale != 1.0)
        for (auto& x : w.v) x = static_cast<T>(static_cast<double>(x) * scale);
    DenseLayer<T> layer(Matrix<T>(in, out, std::move(w.v)), std::vector<T>(static_cast<std::size_t>(out), T{0}));
    if (mask) layer.set_mask(std::move(*mask));
    return layer;
}

template <typename T>
Conv2dLayer<T> make_conv(index_t out_c, index_t in_c, index_t kh, index_t kw, Rng& rng,
                         std::optional<SparsityPattern> mask = {}) {
    Tensor<T> k = init_weights<T>({out_c, in_c, kh, kw}, rng, InitScheme::HeNormal);
    Conv2dLayer<T> layer(std::move(k), std::vector<T>(static_cast<std::size_t>(out_c), T{0}));
    if (mask) layer.set_mask(std::move(*mask));
    return layer;
}

// 784 -> 300 -> 100 -> 10 multilayer perceptron; masks, when given, cover the
// three weight matrices in order (use an all-ones pattern to keep one dense).
template <typename T>
Model<T> build_lenet300(std::vector<std::optional<SparsityPattern>> masks, Rng& rng) {
    require(masks.empty() || masks.size() == 3, "lenet300: expected 3 optional masks");
    masks.resize(3);
    const std::vector<std::pair<index_t, index_t>> dims{{784, 300}, {300, 100}, {100, 10}};
    for (std::size_t i = 0; i < 3; ++i)
        if (masks[i])
            require(masks[i]->shape == std::vector<index_t>({dims[i].first, dims[i].second}),
                    "lenet300: mask " + std::to_string(i) + " shape " + shape_str(masks[i]->shape));
    Model<T> m;
    m.meta.name = "lenet300";
    m.layers.push_back(FlattenLayer{});
    m.layers.push_back(make_dense<T>(784, 300, rng, std::move(masks[0])));
    m.layers.push_back(ReluLayer{});
    m.layers.push_back(make_dense<T>(300, 100, rng, std::move(masks[1])));
    m.layers.push_back(ReluLayer{});
    m.layers.push_back(make_dense<T>(100, 10, rng, std::move(masks[2]), kClassifierInitScale));
    return m;
}

template <typename T>
Model<T> build_lenet300(Rng& rng) {
    return build_lenet300<T>(std::vector<std::optional<SparsityPattern>>{}, rng);
}

// conv(20@5x5) -> pool2 -> conv(50@5x5) -> pool2 -> fc(500) -> relu -> fc(10).
// Input geometry (channels, height, width) defaults to MNIST; masks, when
// given, cover the four weight tensors in order conv1, conv2, fc1, fc2.
template <typename T>
Model<T> build_lenet5(std::vector<std::optional<SparsityPattern>> masks, Rng& rng,
                      std::vector<index_t> input_dims = {1, 28, 28}) {
    require(masks.empty() || masks.size() == 4, "lenet5: expected 4 optional masks");
    masks.resize(4);
    require(input_dims.size() == 3, "lenet5: input dims must be (channels, h, w)");
    const index_t c = input_dims[0];
    const index_t h1 = (input_dims[1] - 5) + 1, w1 = (input_dims[2] - 5) + 1;
    const index_t h2 = h1 / 2, w2 = w1 / 2;
    const index_t h3 = (h2 - 5) + 1, w3 = (w2 - 5) + 1;
    const index_t flat = 50 * (h3 / 2) * (w3 / 2);
    require(flat > 0, "lenet5: input too small");

    Model<T> m;
    m.meta.name = "lenet5";
    m.layers.push_back(make_conv<T>(20, c, 5, 5, rng, std::move(masks[0])));
    m.layers.push_back(MaxPoolLayer{2});
    m.layers.push_back(make_conv<T>(50, 20, 5, 5, rng, std::move(masks[1])));
    m.layers.push_back(MaxPoolLayer{2});
    m.layers.push_back(FlattenLayer{});
    m.layers.push_back(make_dense<T>(flat, 500, rng, std::move(masks[2])));
    m.layers.push_back(ReluLayer{});
    m.layers.push_back(make_dense<T>(500, 10, rng, std::move(masks[3]), kClassifierInitScale));
    return m;
}

template <typename T>
Model<T> build_lenet5(Rng& rng, std::vector<index_t> input_dims = {1, 28, 28}) {
    return build_lenet5<T>(std::vector<std::optional<SparsityPattern>>{}, rng, std::move(input_dims));
}

// True when every masked-out weight is exactly zero (the freeze contract).
template <typename T>
bool masks_respected(const Model<T>& m) {
    for (const auto& layer : m.layers) {
        if (const auto* d = std::get_if<DenseLayer<T>>(&layer)) {
            if (!d->mask) continue;
            for (std::size_t i = 0; i < d->mask->bits.size(); ++i)
                if (!d->mask->bits[i] && d->w.v[i] != T{0}) return false;
        } else if (const auto* cv = std::get_if<Conv2dLayer<T>>(&layer)) {
            if (!cv->mask) continue;
            for (std::size_t i = 0; i < cv->mask->bits.size(); ++i)
                if (!cv->mask->bits[i] && cv->k.v[i] != T{0}) return false;
        }
    }
    return true;
}

}  // namespace spnn
