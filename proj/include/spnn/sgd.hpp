#pragma once

#include <string>
#include <variant>
#include <vector>

#include "spnn/model.hpp"

namespace spnn {

struct TrainConfig {
    double learning_rate = 0.01;
    double momentum = 0.9;
    index_t batch_size = 100;
    index_t steps = 0;   // total optimizer steps; 0 means derive from epochs
    index_t epochs = 0;
    std::uint64_t seed = 1;
    index_t eval_every = 100;

    void validate() const {
        if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
        if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0,1)");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (steps < 0 || epochs < 0) throw ConfigError("steps/epochs must be non-negative");
        if (steps > 0 && epochs > 0) throw ConfigError("give steps or epochs, not both");
        if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
    }

    index_t total_steps(index_t dataset_size) const {
        if (steps > 0 || epochs == 0) return steps;
        const index_t per_epoch = (dataset_size + batch_size - 1) / batch_size;
        return epochs * per_epoch;
    }
};

// Plain SGD with momentum: v <- mu*v + g, w <- w - lr*v. Masked weights are
// re-zeroed after every update so frozen connections stay exactly zero.
template <typename T>
class SgdOptimizer {
public:
    SgdOptimizer(double learning_rate, double momentum) : lr_(learning_rate), mu_(momentum) {}

    void step(Model<T>& m, const std::vector<LayerGrads<T>>& grads) {
        require(grads.size() == m.layers.size(), "sgd: gradient list does not match model");
        if (velocity_.empty()) velocity_.assign(m.layers.size(), std::monostate{});
        for (std::size_t i = 0; i < m.layers.size(); ++i) {
            if (auto* d = std::get_if<DenseLayer<T>>(&m.layers[i])) {
                const auto* g = std::get_if<DenseGrads<T>>(&grads[i]);
                require(g != nullptr, "sgd: missing dense gradients for layer " + std::to_string(i));
                check_finite(*g, i);
                if (!std::holds_alternative<DenseGrads<T>>(velocity_[i]))
                    velocity_[i] = DenseGrads<T>{Matrix<T>(d->w.rows, d->w.cols),
                                                 std::vector<T>(g->b.size(), T{0})};
                auto& v = std::get<DenseGrads<T>>(velocity_[i]);
                update(d->w.v, g->w.v, v.w.v);
                update(d->b, g->b, v.b);
                if (d->mask) apply_mask(d->w, *d->mask);
                d->csr_stale = true;
            } else if (auto* c = std::get_if<Conv2dLayer<T>>(&m.layers[i])) {
                const auto* g = std::get_if<ConvGrads<T>>(&grads[i]);
                require(g != nullptr, "sgd: missing conv gradients for layer " + std::to_string(i));
                check_finite(*g, i);
                if (!std::holds_alternative<ConvGrads<T>>(velocity_[i]))
                    velocity_[i] = ConvGrads<T>{Tensor<T>(c->k.dims), std::vector<T>(g->b.size(), T{0})};
                auto& v = std::get<ConvGrads<T>>(velocity_[i]);
                update(c->k.v, g->k.v, v.k.v);
                update(c->b, g->b, v.b);
                if (c->mask) apply_mask(c->k, *c->mask);
            }
        }
    }

private:
    void update(std::vector<T>& w, const std::vector<T>& g, std::vector<T>& v) {
        require(w.size() == g.size() && w.size() == v.size(), "sgd: parameter size mismatch");
        const T lr = static_cast<T>(lr_);
        const T mu = static_cast<T>(mu_);
        for (std::size_t i = 0; i < w.size(); ++i) {
            v[i] = mu * v[i] + g[i];
            w[i] -= lr * v[i];
        }
    }

    template <typename G>
    void check_finite(const G& g, std::size_t layer) const {
        auto bad = [&] { throw NumericError("non-finite gradient in layer " + std::to_string(layer)); };
        if constexpr (std::is_same_v<G, DenseGrads<T>>) {
            for (T x : g.w.v)
                if (!is_finite(x)) bad();
        } else {
            for (T x : g.k.v)
                if (!is_finite(x)) bad();
        }
        for (T x : g.b)
            if (!is_finite(x)) bad();
    }

    double lr_;
    double mu_;
    std::vector<LayerGrads<T>> velocity_;
};

}  // namespace spnn
