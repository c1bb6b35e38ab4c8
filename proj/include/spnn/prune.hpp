#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "spnn/mask.hpp"
#include "spnn/model.hpp"
#include "spnn/train.hpp"

namespace spnn {

// Sparsity ramp: zero at start_step, target from end_step on, polynomial in
// between. Pruning fires every `interval` steps while the ramp is active.
struct PruneSchedule {
    double target_sparsity = 0.0;
    index_t start_step = 0;
    index_t end_step = 0;
    index_t interval = 200;
    double exponent = 3.0;

    void validate() const {
        if (target_sparsity < 0.0 || target_sparsity > 1.0)
            throw ConfigError("prune schedule: target_sparsity must be in [0,1]");
        if (end_step <= start_step) throw ConfigError("prune schedule: end_step must exceed start_step");
        if (start_step < 0) throw ConfigError("prune schedule: start_step must be >= 0");
        if (interval < 1) throw ConfigError("prune schedule: interval must be >= 1");
        if (exponent <= 0.0) throw ConfigError("prune schedule: exponent must be positive");
    }

    // Last step at which a prune event fires (first event boundary at or
    // after end_step, so the final target is always reached).
    index_t last_event() const {
        const index_t span = end_step - start_step;
        const index_t events = (span + interval - 1) / interval;
        return start_step + events * interval;
    }

    bool is_event(index_t t) const { return t > start_step && t <= last_event() && (t - start_step) % interval == 0; }
};

inline double schedule_sparsity(const PruneSchedule& sched, index_t t) {
    sched.validate();
    require(t >= 0, "schedule_sparsity: t must be >= 0");
    const double span = static_cast<double>(sched.end_step - sched.start_step);
    double p = (static_cast<double>(t) - static_cast<double>(sched.start_step)) / span;
    p = std::clamp(p, 0.0, 1.0);
    return sched.target_sparsity * (1.0 - std::pow(1.0 - p, sched.exponent));
}

// Zeroes the smallest-magnitude unmasked weights until ceil(target_s * total)
// entries are masked out. Ties prune the lower flat index first; already
// masked entries are never revived. Requesting less sparsity than the mask
// already has (beyond the one-element quantum) is an error.
template <typename T>
SparsityPattern magnitude_prune(std::span<const T> weights, const SparsityPattern& current, double target_s) {
    require(weights.size() == current.bits.size(), "magnitude_prune: weight/mask size mismatch");
    if (target_s < 0.0 || target_s > 1.0) throw ConfigError("magnitude_prune: target sparsity outside [0,1]");
    const index_t total = current.size();
    const index_t target_zeros = static_cast<index_t>(std::ceil(target_s * static_cast<double>(total)));
    const index_t current_zeros = total - current.nnz();
    if (target_zeros < current_zeros)
        throw ConfigError("magnitude_prune: target sparsity " + std::to_string(target_s) +
                          " below current " + std::to_string(current.sparsity()));
    if (target_zeros == current_zeros) return current;

    std::vector<index_t> alive;
    alive.reserve(static_cast<std::size_t>(current.nnz()));
    for (index_t i = 0; i < total; ++i)
        if (current.bits[static_cast<std::size_t>(i)]) alive.push_back(i);
    const index_t to_prune = target_zeros - current_zeros;
    std::sort(alive.begin(), alive.end(), [&](index_t a, index_t b) {
        const double ma = std::abs(static_cast<double>(weights[static_cast<std::size_t>(a)]));
        const double mb = std::abs(static_cast<double>(weights[static_cast<std::size_t>(b)]));
        if (ma != mb) return ma < mb;
        return a < b;
    });
    SparsityPattern next = current;
    for (index_t i = 0; i < to_prune; ++i) next.bits[static_cast<std::size_t>(alive[static_cast<std::size_t>(i)])] = 0;
    return next;
}

namespace detail {

template <typename T>
void prune_layer_to(Model<T>& m, index_t layer, double target_s) {
    if (auto* d = std::get_if<DenseLayer<T>>(&m.layers[static_cast<std::size_t>(layer)])) {
        const SparsityPattern cur = d->mask ? *d->mask : SparsityPattern::ones({d->w.rows, d->w.cols});
        d->set_mask(magnitude_prune(std::span<const T>(d->w.v), cur, target_s));
    } else if (auto* c = std::get_if<Conv2dLayer<T>>(&m.layers[static_cast<std::size_t>(layer)])) {
        const SparsityPattern cur = c->mask ? *c->mask : SparsityPattern::ones(c->k.dims);
        c->set_mask(magnitude_prune(std::span<const T>(c->k.v), cur, target_s));
    } else {
        throw ShapeError("prune: layer " + std::to_string(layer) + " has no weights");
    }
}

inline bool contains(const std::vector<index_t>& v, index_t x) {
    return std::find(v.begin(), v.end(), x) != v.end();
}

}  // namespace detail

// Layers to drive to the shared target, identified by prunable ordinal
// (0 = first weight-bearing layer). keep_dense ordinals are skipped.
template <typename T>
std::vector<index_t> prune_targets(const Model<T>& m, const std::vector<index_t>& keep_dense) {
    std::vector<index_t> out;
    const auto prunable = m.prunable_layers();
    for (std::size_t ord = 0; ord < prunable.size(); ++ord)
        if (!detail::contains(keep_dense, static_cast<index_t>(ord))) out.push_back(prunable[ord]);
    return out;
}

// Single magnitude-pruning pass at sparsity s on every prunable layer; no
// training happens here.
template <typename T>
void one_time_prune(Model<T>& m, double s, const std::vector<index_t>& keep_dense = {}) {
    if (s < 0.0 || s > 1.0) throw ConfigError("one_time_prune: sparsity outside [0,1]");
    for (index_t layer : prune_targets(m, keep_dense)) detail::prune_layer_to(m, layer, s);
}

template <typename T>
StepHook<T> make_prune_hook(const PruneSchedule& sched, std::vector<index_t> keep_dense = {}) {
    sched.validate();
    return [sched, keep_dense = std::move(keep_dense)](index_t step, Model<T>& m) {
        if (!sched.is_event(step)) return;
        const double s = schedule_sparsity(sched, step);
        for (index_t layer : prune_targets(m, keep_dense)) detail::prune_layer_to(m, layer, s);
    };
}

// Trains with periodic pruning along the schedule, then keeps training with
// frozen masks once the ramp is done (the caller's step budget covers both
// phases). Masks only ever shrink.
template <typename T>
std::vector<MetricsRecord> iterative_prune(Model<T>& m, const Dataset<T>& train_data, const Dataset<T>& test_data,
                                           const TrainConfig& cfg, const PruneSchedule& sched,
                                           std::vector<index_t> keep_dense = {}, RecordSink sink = {}) {
    return train(m, train_data, test_data, cfg, make_prune_hook<T>(sched, std::move(keep_dense)), std::move(sink));
}

// Same architecture and masks, fresh weights (masked immediately), biases
// reset to zero. Follows the builder convention of a near-zero classifier
// head on the final dense layer. The rng must carry a different seed than the
// original build.
template <typename T>
void reinitialize_with_masks(Model<T>& m, Rng& rng) {
    index_t last_dense = -1;
    for (index_t i = 0; i < m.layer_count(); ++i)
        if (std::holds_alternative<DenseLayer<T>>(m.layers[static_cast<std::size_t>(i)])) last_dense = i;
    for (index_t i = 0; i < m.layer_count(); ++i) {
        auto& layer = m.layers[static_cast<std::size_t>(i)];
        if (auto* d = std::get_if<DenseLayer<T>>(&layer)) {
            Tensor<T> w = init_weights<T>({d->w.rows, d->w.cols}, rng, InitScheme::HeNormal);
            if (i == last_dense)
                for (auto& x : w.v) x = static_cast<T>(static_cast<double>(x) * kClassifierInitScale);
            d->w.v = std::move(w.v);
            std::fill(d->b.begin(), d->b.end(), T{0});
            if (d->mask) apply_mask(d->w, *d->mask);
            d->csr_stale = true;
        } else if (auto* c = std::get_if<Conv2dLayer<T>>(&layer)) {
            Tensor<T> k = init_weights<T>(c->k.dims, rng, InitScheme::HeNormal);
            c->k.v = std::move(k.v);
            std::fill(c->b.begin(), c->b.end(), T{0});
            if (c->mask) apply_mask(c->k, *c->mask);
        }
    }
}

}  // namespace spnn
