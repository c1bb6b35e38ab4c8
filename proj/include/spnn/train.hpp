#pragma once

#include <chrono>
#include <functional>
#include <vector>

#include "spnn/dataset.hpp"
#include "spnn/model.hpp"
#include "spnn/sgd.hpp"

namespace spnn {

struct MetricsRecord {
    index_t step = 0;
    double train_loss = 0.0;
    double test_accuracy = 0.0;
    double overall_sparsity = 0.0;
    std::vector<double> layer_sparsities;
    double wall_ms = 0.0;
};

// Everything except wall time, which is inherently nondeterministic.
inline bool metrics_equal_ignoring_time(const MetricsRecord& a, const MetricsRecord& b) {
    return a.step == b.step && a.train_loss == b.train_loss && a.test_accuracy == b.test_accuracy &&
           a.overall_sparsity == b.overall_sparsity && a.layer_sparsities == b.layer_sparsities;
}

struct EvalResult {
    double accuracy = 0.0;
    double mean_loss = 0.0;
};

// Deterministic: batches in dataset order, argmax ties resolved to the lowest
// class index.
template <typename T>
EvalResult evaluate(const Model<T>& m, const Dataset<T>& data, index_t batch_size = 500) {
    require(data.size() > 0, "evaluate: empty dataset");
    EvalResult r;
    double loss_sum = 0.0;
    index_t correct = 0;
    std::vector<index_t> idx;
    for (index_t lo = 0; lo < data.size(); lo += batch_size) {
        const index_t hi = std::min(data.size(), lo + batch_size);
        idx.resize(static_cast<std::size_t>(hi - lo));
        for (index_t i = lo; i < hi; ++i) idx[static_cast<std::size_t>(i - lo)] = i;
        auto [x, y] = data.gather(idx);
        const Tensor<T> logits = forward(m, x);
        loss_sum += softmax_cross_entropy(logits, y) * static_cast<double>(hi - lo);
        const index_t classes = logits.dim(1);
        for (index_t i = 0; i < hi - lo; ++i) {
            const T* row = logits.data() + i * classes;
            index_t best = 0;
            for (index_t j = 1; j < classes; ++j)
                if (row[j] > row[best]) best = j;
            if (best == y[static_cast<std::size_t>(i)]) ++correct;
        }
    }
    r.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    r.mean_loss = loss_sum / static_cast<double>(data.size());
    return r;
}

template <typename T>
using StepHook = std::function<void(index_t step, Model<T>&)>;

using RecordSink = std::function<void(const MetricsRecord&)>;

// Minibatch SGD with seeded shuffling. The hook (used by pruning) runs after
// every optimizer step; metrics are emitted every eval_every steps and at the
// final step. Non-finite losses abort with the failing step index.
template <typename T>
std::vector<MetricsRecord> train(Model<T>& m, const Dataset<T>& train_data, const Dataset<T>& test_data,
                                 const TrainConfig& cfg, StepHook<T> hook = {}, RecordSink sink = {}) {
    cfg.validate();
    require(train_data.size() > 0, "train: empty dataset");
    const index_t total = cfg.total_steps(train_data.size());
    std::vector<MetricsRecord> metrics;
    if (total == 0) return metrics;

    const auto t0 = std::chrono::steady_clock::now();
    BatchPlan plan(train_data.size(), cfg.batch_size, derive_seed(cfg.seed, 0x5u));
    SgdOptimizer<T> opt(cfg.learning_rate, cfg.momentum);
    ForwardCache<T> cache;

    double interval_loss = 0.0;
    index_t interval_batches = 0;
    index_t batch_in_epoch = 0;

    for (index_t step = 1; step <= total; ++step) {
        if (batch_in_epoch == plan.batches_per_epoch()) {
            plan.next_epoch();
            batch_in_epoch = 0;
        }
        auto [x, y] = train_data.gather(plan.batch(batch_in_epoch));
        ++batch_in_epoch;

        forward(m, x, &cache);
        BackwardResult<T> back = backward(m, cache, y);
        if (!is_finite(back.loss)) throw NumericError("non-finite loss at step " + std::to_string(step));
        opt.step(m, back.grads);
        if (hook) hook(step, m);

        interval_loss += back.loss;
        ++interval_batches;

        if (step % cfg.eval_every == 0 || step == total) {
            MetricsRecord rec;
            rec.step = step;
            rec.train_loss = interval_loss / static_cast<double>(interval_batches);
            rec.test_accuracy = test_data.size() > 0 ? evaluate(m, test_data, cfg.batch_size).accuracy : 0.0;
            rec.overall_sparsity = m.overall_sparsity();
            rec.layer_sparsities = m.layer_sparsities();
            rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
            interval_loss = 0.0;
            interval_batches = 0;
            if (sink) sink(rec);
            metrics.push_back(std::move(rec));
        }
    }
    return metrics;
}

}  // namespace spnn
