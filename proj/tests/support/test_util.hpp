#pragma once

// Shared helpers for the test suites: temp directories, independent oracles,
// and the property checks exercised by both the property suite and the
// acceptance harness.

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "spnn/experiment.hpp"

namespace spnn_test {

using namespace spnn;
namespace fs = std::filesystem;

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path_ = fs::temp_directory_path() /
                ("spnn_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter.fetch_add(1)));
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

// ---- independent oracles ----

// Path counting by depth-first enumeration over adjacency lists; shares no
// code with path_count_matrix.
inline std::int64_t count_paths_dfs(const LayeredTopology& topo, index_t input, index_t output) {
    std::function<std::int64_t(std::size_t, index_t)> walk = [&](std::size_t level, index_t node) -> std::int64_t {
        if (level == topo.masks.size()) return node == output ? 1 : 0;
        const auto& m = topo.masks[level];
        const index_t cols = m.shape[1];
        std::int64_t total = 0;
        for (index_t next = 0; next < cols; ++next)
            if (m.bits[static_cast<std::size_t>(node * cols + next)]) total += walk(level + 1, next);
        return total;
    };
    return walk(0, input);
}

// Central finite differences of the batch loss against analytic gradients.
// Masked-out weights are excluded (their analytic gradient is pinned to zero
// by contract and checked exactly), everything else must agree to rel_tol.
struct FdReport {
    double max_rel_err = 0.0;
    bool masked_grads_zero = true;
    index_t checked = 0;
};

inline FdReport finite_difference_check(Model<double>& model, const Tensor<double>& x, const std::vector<int>& labels,
                                        double h = 1e-5) {
    ForwardCache<double> cache;
    forward(model, x, &cache);
    const auto back = backward(model, cache, labels);

    auto loss_at = [&]() {
        const Tensor<double> logits = forward(model, x);
        return softmax_cross_entropy(logits, labels);
    };

    FdReport report;
    auto check_span = [&](std::vector<double>& w, const std::vector<double>& g, const std::uint8_t* mask_bits) {
        for (std::size_t i = 0; i < w.size(); ++i) {
            if (mask_bits && !mask_bits[i]) {
                if (g[i] != 0.0) report.masked_grads_zero = false;
                continue;
            }
            const double orig = w[i];
            w[i] = orig + h;
            const double up = loss_at();
            w[i] = orig - h;
            const double down = loss_at();
            w[i] = orig;
            const double fd = (up - down) / (2 * h);
            const double denom = std::max({std::abs(fd), std::abs(g[i]), 1e-8});
            report.max_rel_err = std::max(report.max_rel_err, std::abs(fd - g[i]) / denom);
            ++report.checked;
        }
    };

    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        if (auto* d = std::get_if<DenseLayer<double>>(&model.layers[i])) {
            const auto& g = std::get<DenseGrads<double>>(back.grads[i]);
            check_span(d->w.v, g.w.v, d->mask ? d->mask->bits.data() : nullptr);
            check_span(d->b, g.b, nullptr);
            d->csr_stale = true;
        } else if (auto* c = std::get_if<Conv2dLayer<double>>(&model.layers[i])) {
            const auto& g = std::get<ConvGrads<double>>(back.grads[i]);
            check_span(c->k.v, g.k.v, c->mask ? c->mask->bits.data() : nullptr);
            check_span(c->b, g.b, nullptr);
        }
    }
    return report;
}

// ---- property checks (criterion-level, shared with acceptance) ----

struct PropertyResult {
    bool pass = true;
    std::string detail;

    void fail(const std::string& msg) {
        pass = false;
        if (!detail.empty()) detail += "; ";
        detail += msg;
    }
};

// Masked weights stay exactly zero through a long run of SGD steps.
inline PropertyResult check_mask_freeze(std::uint64_t seed, index_t steps = 1000) {
    PropertyResult r;
    Rng rng(seed);
    Model<float> m;
    m.layers.push_back(make_dense<float>(12, 16, rng));
    m.layers.push_back(ReluLayer{});
    m.layers.push_back(make_dense<float>(16, 10, rng));
    Rng mask_rng(derive_seed(seed, 7));
    std::get<DenseLayer<float>>(m.layers[0]).set_mask(random_mask(12, 16, 0.6, mask_rng));
    std::get<DenseLayer<float>>(m.layers[2]).set_mask(random_mask(16, 10, 0.8, mask_rng));
    const auto mask0 = *std::get<DenseLayer<float>>(m.layers[0]).mask;
    const auto mask2 = *std::get<DenseLayer<float>>(m.layers[2]).mask;

    Rng data_rng(derive_seed(seed, 9));
    Dataset<float> data = synthetic_separable<float>(200, 12, 10, data_rng);
    TrainConfig cfg;
    cfg.learning_rate = 0.05;
    cfg.batch_size = 20;
    cfg.steps = steps;
    cfg.eval_every = steps;
    cfg.seed = seed;
    train(m, data, data, cfg);

    if (!masks_respected(m)) r.fail("masked-out weights drifted from zero");
    if (*std::get<DenseLayer<float>>(m.layers[0]).mask != mask0 ||
        *std::get<DenseLayer<float>>(m.layers[2]).mask != mask2)
        r.fail("masks mutated during plain training");
    return r;
}

inline PropertyResult check_gradients_all_layer_kinds() {
    PropertyResult r;
    for (const bool masked : {false, true}) {
        Rng rng(masked ? 11u : 10u);
        Model<double> m;
        m.layers.push_back(make_conv<double>(3, 1, 3, 3, rng));
        m.layers.push_back(ReluLayer{});
        m.layers.push_back(MaxPoolLayer{2});
        m.layers.push_back(FlattenLayer{});
        m.layers.push_back(make_dense<double>(12, 10, rng));
        if (masked) {
            Rng mask_rng(21);
            SparsityPattern conv_mask = random_mask(3, 9, 0.4, mask_rng);
            std::get<Conv2dLayer<double>>(m.layers[0]).set_mask(SparsityPattern({3, 1, 3, 3}, std::move(conv_mask.bits)));
            std::get<DenseLayer<double>>(m.layers[4]).set_mask(random_mask(12, 10, 0.5, mask_rng));
        }
        Rng data_rng(33);
        Tensor<double> x({4, 1, 6, 6});
        for (auto& v : x.v) v = data_rng.normal();
        const std::vector<int> labels{0, 3, 7, 9};
        const auto report = finite_difference_check(m, x, labels);
        if (report.max_rel_err >= 1e-4)
            r.fail("fd mismatch " + std::to_string(report.max_rel_err) + (masked ? " (masked)" : " (dense)"));
        if (!report.masked_grads_zero) r.fail("masked gradient not exactly zero");
    }
    return r;
}

inline PropertyResult check_csr_dense_agreement() {
    PropertyResult r;
    Rng rng(77);
    for (const double s : {0.5, 0.9, 0.99}) {
        DenseLayer<float> layer = make_dense<float>(128, 64, rng);
        layer.set_mask(random_mask(128, 64, s, rng));
        Tensor<float> x({32, 128});
        for (auto& v : x.v) v = static_cast<float>(rng.normal());
        const Tensor<float> dense_y = dense_forward(layer, x);
        layer.kernel = FcKernel::Csr;
        const Tensor<float> csr_y = dense_forward(layer, x);
        const double err = max_rel_error<float>(dense_y.v, csr_y.v);
        if (err >= 1e-5) r.fail("csr/dense disagree at s=" + std::to_string(s) + ": " + std::to_string(err));
    }
    return r;
}

inline PropertyResult check_schedule_properties(index_t count = 1000) {
    PropertyResult r;
    Rng rng(123);
    for (index_t i = 0; i < count; ++i) {
        PruneSchedule sched;
        sched.target_sparsity = rng.next_double();
        sched.start_step = static_cast<index_t>(rng.below(1000));
        sched.end_step = sched.start_step + 1 + static_cast<index_t>(rng.below(5000));
        sched.interval = 1 + static_cast<index_t>(rng.below(300));
        sched.exponent = 0.5 + 4.0 * rng.next_double();
        if (schedule_sparsity(sched, sched.start_step) != 0.0) r.fail("s(start) != 0");
        if (schedule_sparsity(sched, sched.end_step) != sched.target_sparsity) r.fail("s(end) != target");
        if (schedule_sparsity(sched, sched.end_step + 999) != sched.target_sparsity) r.fail("s past end != target");
        double prev = -1.0;
        for (index_t t = sched.start_step; t <= sched.end_step; t += std::max<index_t>(1, (sched.end_step - sched.start_step) / 37)) {
            const double s = schedule_sparsity(sched, t);
            if (s < prev) r.fail("schedule not monotone");
            if (s < 0.0 || s > 1.0) r.fail("schedule outside [0,1]");
            prev = s;
        }
        if (!r.pass) break;
    }
    return r;
}

// Random small radix specs with prod(N) <= 256: density formula, constant
// path counts (against the DFS oracle), connectivity, determinism.
inline PropertyResult check_radix_properties(index_t count = 50) {
    PropertyResult r;
    Rng rng(2024);
    for (index_t i = 0; i < count && r.pass; ++i) {
        RadixSpec spec;
        const index_t depth = 1 + static_cast<index_t>(rng.below(3));
        index_t nstar = 1;
        for (index_t d = 0; d < depth; ++d) {
            index_t radix = 1 + static_cast<index_t>(rng.below(6));
            while (nstar * radix > 256) radix = std::max<index_t>(1, radix / 2);
            spec.radices.push_back(radix);
            nstar *= radix;
        }
        for (index_t b = 0; b <= depth; ++b) spec.blocks.push_back(1 + static_cast<index_t>(rng.below(3)));

        const LayeredTopology topo = radix_net(spec);
        if (topo != radix_net(spec)) r.fail("radix_net not deterministic");

        const auto sparsities = topo.layer_sparsities();
        for (std::size_t l = 0; l < sparsities.size(); ++l) {
            const double want = 1.0 - static_cast<double>(spec.radices[l]) / static_cast<double>(nstar);
            if (std::abs(sparsities[l] - want) > 1e-12)
                r.fail("density formula violated at layer " + std::to_string(l));
        }

        std::int64_t expected_paths = 1;
        for (std::size_t b = 1; b + 1 < spec.blocks.size(); ++b) expected_paths *= spec.blocks[b];
        const auto counts = path_count_matrix(topo);
        for (auto c : counts.v)
            if (c != expected_paths) r.fail("path count != product of interior blocks");
        if (!is_fully_path_connected(topo)) r.fail("radix net not fully connected");

        // spot-check the matrix against direct path enumeration
        Rng pick(derive_seed(2024, static_cast<std::uint64_t>(i)));
        for (int probe = 0; probe < 3; ++probe) {
            const index_t in = static_cast<index_t>(pick.below(static_cast<std::uint64_t>(topo.layer_sizes.front())));
            const index_t out = static_cast<index_t>(pick.below(static_cast<std::uint64_t>(topo.layer_sizes.back())));
            if (count_paths_dfs(topo, in, out) != counts.at(in, out)) r.fail("dfs oracle disagrees with matrix product");
        }
    }
    return r;
}

inline PropertyResult check_random_mask_concentration() {
    PropertyResult r;
    const double s = 0.9;
    const index_t rows = 1000, cols = 1000;
    double total_abs_dev = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed * 7919 + 1);
        const SparsityPattern m = random_mask(rows, cols, s, rng);
        const double emp = m.sparsity();
        total_abs_dev += std::abs(emp - s);
        const double nnz = static_cast<double>(m.nnz());
        // Binomial(1e6, 0.1): 3 sigma ~ 900
        if (std::abs(nnz - 100000.0) > 900.0)
            r.fail("nnz " + std::to_string(nnz) + " outside 3 sigma at seed " + std::to_string(seed));
    }
    if (total_abs_dev / 20.0 >= 0.003) r.fail("mean |empirical - target| too large");
    return r;
}

inline PropertyResult check_roundtrips() {
    PropertyResult r;
    TempDir tmp("roundtrip");

    const LayeredTopology topo = trim_inputs(radix_net({{10, 10}, {8, 3, 1}}), 16);
    save_topology(tmp.path() / "radix", topo, "radix");
    if (load_topology(tmp.path() / "radix") != topo) r.fail("topology bundle round trip changed masks");

    Rng rng(5);
    Model<float> m;
    m.layers.push_back(make_conv<float>(4, 1, 3, 3, rng));
    m.layers.push_back(MaxPoolLayer{2});
    m.layers.push_back(FlattenLayer{});
    m.layers.push_back(make_dense<float>(36, 10, rng));
    Rng mask_rng(6);
    std::get<DenseLayer<float>>(m.layers[3]).set_mask(random_mask(36, 10, 0.5, mask_rng));
    SparsityPattern conv_mask = random_mask(4, 9, 0.3, mask_rng);
    std::get<Conv2dLayer<float>>(m.layers[0]).set_mask(SparsityPattern({4, 1, 3, 3}, std::move(conv_mask.bits)));
    m.meta.name = "tiny";
    m.meta.seed = 5;

    save_checkpoint(tmp.path() / "ckpt", m, 42, json{{"note", "roundtrip"}});
    const auto loaded = load_checkpoint<float>(tmp.path() / "ckpt");
    if (loaded.step != 42) r.fail("checkpoint step changed");
    const auto& d0 = std::get<Conv2dLayer<float>>(m.layers[0]);
    const auto& d0l = std::get<Conv2dLayer<float>>(loaded.model.layers[0]);
    if (d0.k.v != d0l.k.v || d0.b != d0l.b || *d0.mask != *d0l.mask) r.fail("conv tensor not bit-exact");
    const auto& fc = std::get<DenseLayer<float>>(m.layers[3]);
    const auto& fcl = std::get<DenseLayer<float>>(loaded.model.layers[3]);
    if (fc.w.v != fcl.w.v || fc.b != fcl.b || *fc.mask != *fcl.mask) r.fail("dense tensor not bit-exact");
    return r;
}

// Two identical seeded runs must produce identical metrics.csv apart from
// wall time.
inline PropertyResult check_metrics_reproducibility() {
    PropertyResult r;
    TempDir tmp("repro");
    ExperimentConfig cfg;
    cfg.model = "lenet300";
    cfg.dataset.name = "synthetic";
    cfg.dataset.n = 600;
    cfg.dataset.test_n = 200;
    cfg.dataset.dims = 784;
    cfg.dataset.classes = 10;
    cfg.topology.source = "random";
    cfg.topology.sparsity = 0.5;
    cfg.train.steps = 40;
    cfg.train.batch_size = 50;
    cfg.train.eval_every = 10;
    cfg.train.seed = 99;
    for (const char* name : {"a", "b"}) {
        cfg.out_dir = (tmp.path() / name).string();
        run_experiment<float>(cfg);
    }
    const auto ma = read_metrics_csv(tmp.path() / "a" / "run-0" / "metrics.csv");
    const auto mb = read_metrics_csv(tmp.path() / "b" / "run-0" / "metrics.csv");
    if (ma.size() != mb.size()) {
        r.fail("metric record counts differ");
        return r;
    }
    for (std::size_t i = 0; i < ma.size(); ++i)
        if (!metrics_equal_ignoring_time(ma[i], mb[i])) r.fail("metrics differ at record " + std::to_string(i));
    return r;
}

}  // namespace spnn_test
