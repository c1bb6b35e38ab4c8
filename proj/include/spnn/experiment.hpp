#pragma once

#include <atomic>
#include <charconv>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "spnn/checkpoint.hpp"
#include "spnn/dataset.hpp"
#include "spnn/prune.hpp"
#include "spnn/topology.hpp"
#include "spnn/topology_io.hpp"
#include "spnn/train.hpp"

namespace spnn {

// ---- config schema ----

struct DatasetSpec {
    std::string name;  // mnist | cifar10 | synthetic
    std::string path;
    index_t n = 2000, test_n = 500, dims = 784;  // synthetic only
    int classes = 10;
};

struct TopologySpec {
    std::string source = "dense";  // dense | radix | random | bundle
    RadixSpec radix;
    index_t trim = 0;
    double sparsity = 0.0;
    std::optional<std::uint64_t> seed;  // random source: fixed mask across runs when set
    std::string path;                   // bundle source
    std::vector<index_t> keep_dense;    // prunable ordinals left dense (radix/random)
};

struct PruneSpec {
    PruneSchedule schedule;
    std::vector<index_t> keep_dense;
};

struct ExperimentConfig {
    std::string model;  // lenet300 | lenet5
    DatasetSpec dataset;
    TopologySpec topology;
    TrainConfig train;
    std::optional<PruneSpec> prune;
    std::string out_dir;
    index_t repeats = 1;
    std::vector<std::uint64_t> seeds;
    std::string precision = "f32";
    index_t threads = 1;
    std::string fc_kernel = "dense";  // dense | csr execution for fully-connected layers
};

namespace detail {

inline void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    if (!obj.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& [key, _] : obj.items())
        if (!allowed.contains(key)) throw ConfigError(where + ": unknown key \"" + key + "\"");
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const json& j) {
    detail::reject_unknown(j, {"model", "dataset", "topology", "train", "prune", "out_dir", "repeats", "seeds",
                               "precision", "threads", "fc_kernel"},
                           "config");
    ExperimentConfig cfg;
    try {
        cfg.model = j.at("model").get<std::string>();
        if (cfg.model != "lenet300" && cfg.model != "lenet5")
            throw ConfigError("config: unknown model \"" + cfg.model + "\"");

        const json& d = j.at("dataset");
        detail::reject_unknown(d, {"name", "path", "n", "test_n", "dims", "classes"}, "config.dataset");
        cfg.dataset.name = d.at("name").get<std::string>();
        if (cfg.dataset.name != "mnist" && cfg.dataset.name != "cifar10" && cfg.dataset.name != "synthetic")
            throw ConfigError("config: unknown dataset \"" + cfg.dataset.name + "\"");
        cfg.dataset.path = d.value("path", std::string{});
        if (cfg.dataset.name != "synthetic" && cfg.dataset.path.empty())
            throw ConfigError("config.dataset: path is required for " + cfg.dataset.name);
        cfg.dataset.n = d.value("n", cfg.dataset.n);
        cfg.dataset.test_n = d.value("test_n", cfg.dataset.test_n);
        cfg.dataset.dims = d.value("dims", cfg.dataset.dims);
        cfg.dataset.classes = d.value("classes", cfg.dataset.classes);

        if (j.contains("topology")) {
            const json& t = j.at("topology");
            detail::reject_unknown(t, {"source", "radices", "blocks", "trim", "sparsity", "seed", "path", "keep_dense"},
                                   "config.topology");
            cfg.topology.source = t.value("source", std::string{"dense"});
            if (cfg.topology.source == "radix") {
                cfg.topology.radix.radices = t.at("radices").get<std::vector<index_t>>();
                cfg.topology.radix.blocks = t.at("blocks").get<std::vector<index_t>>();
                cfg.topology.radix.validate();
                cfg.topology.trim = t.value("trim", index_t{0});
            } else if (cfg.topology.source == "random") {
                cfg.topology.sparsity = t.at("sparsity").get<double>();
                if (cfg.topology.sparsity < 0.0 || cfg.topology.sparsity > 1.0)
                    throw ConfigError("config.topology: sparsity outside [0,1]");
                if (t.contains("seed")) cfg.topology.seed = t.at("seed").get<std::uint64_t>();
            } else if (cfg.topology.source == "bundle") {
                cfg.topology.path = t.at("path").get<std::string>();
            } else if (cfg.topology.source != "dense") {
                throw ConfigError("config.topology: unknown source \"" + cfg.topology.source + "\"");
            }
            if (t.contains("keep_dense")) cfg.topology.keep_dense = t.at("keep_dense").get<std::vector<index_t>>();
        }

        if (j.contains("train")) {
            const json& t = j.at("train");
            detail::reject_unknown(t, {"learning_rate", "momentum", "batch_size", "steps", "epochs", "eval_every", "seed"},
                                   "config.train");
            cfg.train.learning_rate = t.value("learning_rate", cfg.train.learning_rate);
            cfg.train.momentum = t.value("momentum", cfg.train.momentum);
            cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
            cfg.train.steps = t.value("steps", index_t{0});
            cfg.train.epochs = t.value("epochs", index_t{0});
            cfg.train.eval_every = t.value("eval_every", cfg.train.eval_every);
            cfg.train.seed = t.value("seed", cfg.train.seed);
            cfg.train.validate();
        }

        if (j.contains("prune")) {
            const json& p = j.at("prune");
            detail::reject_unknown(p, {"target_sparsity", "start_step", "end_step", "interval", "exponent", "keep_dense"},
                                   "config.prune");
            PruneSpec spec;
            spec.schedule.target_sparsity = p.at("target_sparsity").get<double>();
            spec.schedule.start_step = p.at("start_step").get<index_t>();
            spec.schedule.end_step = p.at("end_step").get<index_t>();
            spec.schedule.interval = p.value("interval", index_t{200});
            spec.schedule.exponent = p.value("exponent", 3.0);
            spec.schedule.validate();
            if (p.contains("keep_dense")) spec.keep_dense = p.at("keep_dense").get<std::vector<index_t>>();
            cfg.prune = std::move(spec);
        }

        cfg.out_dir = j.value("out_dir", std::string{});
        cfg.repeats = j.value("repeats", index_t{1});
        if (cfg.repeats < 1) throw ConfigError("config: repeats must be >= 1");
        if (j.contains("seeds")) {
            cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
            if (static_cast<index_t>(cfg.seeds.size()) < cfg.repeats)
                throw ConfigError("config: seeds list shorter than repeats");
        }
        cfg.precision = j.value("precision", std::string{"f32"});
        if (cfg.precision != "f32" && cfg.precision != "f64")
            throw ConfigError("config: precision must be f32 or f64");
        cfg.threads = j.value("threads", index_t{1});
        if (cfg.threads < 1) throw ConfigError("config: threads must be >= 1");
        cfg.fc_kernel = j.value("fc_kernel", std::string{"dense"});
        if (cfg.fc_kernel != "dense" && cfg.fc_kernel != "csr")
            throw ConfigError("config: fc_kernel must be dense or csr");
    } catch (const json::exception& e) {
        throw ConfigError(std::string{"config: "} + e.what());
    }
    return cfg;
}

inline ExperimentConfig load_experiment_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return parse_experiment_config(j);
}

// Full echo with every default filled in, suitable for re-running.
inline json config_echo(const ExperimentConfig& cfg) {
    json j;
    j["model"] = cfg.model;
    j["dataset"] = {{"name", cfg.dataset.name}, {"path", cfg.dataset.path}};
    if (cfg.dataset.name == "synthetic") {
        j["dataset"]["n"] = cfg.dataset.n;
        j["dataset"]["test_n"] = cfg.dataset.test_n;
        j["dataset"]["dims"] = cfg.dataset.dims;
        j["dataset"]["classes"] = cfg.dataset.classes;
    }
    j["topology"]["source"] = cfg.topology.source;
    if (cfg.topology.source == "radix") {
        j["topology"]["radices"] = cfg.topology.radix.radices;
        j["topology"]["blocks"] = cfg.topology.radix.blocks;
        j["topology"]["trim"] = cfg.topology.trim;
    } else if (cfg.topology.source == "random") {
        j["topology"]["sparsity"] = cfg.topology.sparsity;
        if (cfg.topology.seed) j["topology"]["seed"] = *cfg.topology.seed;
    } else if (cfg.topology.source == "bundle") {
        j["topology"]["path"] = cfg.topology.path;
    }
    if (!cfg.topology.keep_dense.empty()) j["topology"]["keep_dense"] = cfg.topology.keep_dense;
    j["train"] = {{"learning_rate", cfg.train.learning_rate}, {"momentum", cfg.train.momentum},
                  {"batch_size", cfg.train.batch_size},       {"steps", cfg.train.steps},
                  {"epochs", cfg.train.epochs},               {"eval_every", cfg.train.eval_every},
                  {"seed", cfg.train.seed}};
    if (cfg.prune) {
        j["prune"] = {{"target_sparsity", cfg.prune->schedule.target_sparsity},
                      {"start_step", cfg.prune->schedule.start_step},
                      {"end_step", cfg.prune->schedule.end_step},
                      {"interval", cfg.prune->schedule.interval},
                      {"exponent", cfg.prune->schedule.exponent}};
        if (!cfg.prune->keep_dense.empty()) j["prune"]["keep_dense"] = cfg.prune->keep_dense;
    }
    j["out_dir"] = cfg.out_dir;
    j["repeats"] = cfg.repeats;
    if (!cfg.seeds.empty()) j["seeds"] = cfg.seeds;
    j["precision"] = cfg.precision;
    j["threads"] = cfg.threads;
    j["fc_kernel"] = cfg.fc_kernel;
    return j;
}

// ---- metrics csv ----

inline std::string format_double(double x) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

inline constexpr const char* kMetricsHeader = "step,train_loss,test_accuracy,overall_sparsity,layer_sparsities,wall_time";

inline std::string metrics_row(const MetricsRecord& r) {
    std::string joined;
    for (std::size_t i = 0; i < r.layer_sparsities.size(); ++i) {
        if (i) joined += ";";
        joined += format_double(r.layer_sparsities[i]);
    }
    return std::to_string(r.step) + "," + format_double(r.train_loss) + "," + format_double(r.test_accuracy) + "," +
           format_double(r.overall_sparsity) + "," + joined + "," + format_double(r.wall_ms);
}

// Streams records to disk as they arrive so a failed run keeps its partial
// metrics.
class MetricsWriter {
public:
    explicit MetricsWriter(const fs::path& path) : out_(path) {
        if (!out_) throw DataError("cannot write " + path.string());
        out_ << kMetricsHeader << "\n" << std::flush;
    }
    void operator()(const MetricsRecord& r) { out_ << metrics_row(r) << "\n" << std::flush; }

private:
    std::ofstream out_;
};

inline std::vector<MetricsRecord> read_metrics_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != kMetricsHeader) throw DataError(path.string() + ": bad metrics header");
    std::vector<MetricsRecord> out;
    auto parse_d = [&](const std::string& s) {
        double x = 0.0;
        const auto res = std::from_chars(s.data(), s.data() + s.size(), x);
        if (res.ec != std::errc{}) throw DataError(path.string() + ": bad number \"" + s + "\"");
        return x;
    };
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::size_t pos = 0;
        while (true) {
            const std::size_t comma = line.find(',', pos);
            cells.push_back(line.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos));
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        if (cells.size() != 6) throw DataError(path.string() + ": expected 6 columns");
        MetricsRecord r;
        r.step = std::stoll(cells[0]);
        r.train_loss = parse_d(cells[1]);
        r.test_accuracy = parse_d(cells[2]);
        r.overall_sparsity = parse_d(cells[3]);
        if (!cells[4].empty()) {
            std::size_t p = 0;
            while (true) {
                const std::size_t semi = cells[4].find(';', p);
                r.layer_sparsities.push_back(parse_d(cells[4].substr(p, semi == std::string::npos ? std::string::npos : semi - p)));
                if (semi == std::string::npos) break;
                p = semi + 1;
            }
        }
        r.wall_ms = parse_d(cells[5]);
        out.push_back(std::move(r));
    }
    return out;
}

// ---- model assembly ----

template <typename T>
std::pair<Dataset<T>, Dataset<T>> load_dataset(const DatasetSpec& spec, std::uint64_t seed) {
    if (spec.name == "mnist") return load_mnist<T>(spec.path);
    if (spec.name == "cifar10") return load_cifar10<T>(spec.path);
    Rng rng(derive_seed(seed, 0x0Du));
    Dataset<T> train = synthetic_separable<T>(spec.n, spec.dims, spec.classes, rng);
    Dataset<T> test = synthetic_separable<T>(spec.test_n, spec.dims, spec.classes, rng);
    return {std::move(train), std::move(test)};
}

template <typename T>
std::vector<index_t> model_input_dims(const std::string& model, const DatasetSpec& dataset) {
    if (model == "lenet5") {
        if (dataset.name == "cifar10") return {3, 32, 32};
        if (dataset.name == "mnist") return {1, 28, 28};
        throw ConfigError("lenet5 requires an image dataset");
    }
    return {};
}

// Attach bundle masks to the model's prunable layers (by explicit ordinals
// when present, else in order). Shape mismatches surface as errors.
template <typename T>
void attach_masks(Model<T>& m, const MaskBundle& bundle) {
    const auto prunable = m.prunable_layers();
    for (std::size_t i = 0; i < bundle.masks.size(); ++i) {
        const index_t ord = bundle.apply_to.empty() ? static_cast<index_t>(i) : bundle.apply_to[i];
        require(ord >= 0 && ord < static_cast<index_t>(prunable.size()),
                "mask bundle: ordinal " + std::to_string(ord) + " out of range");
        auto& layer = m.layers[static_cast<std::size_t>(prunable[static_cast<std::size_t>(ord)])];
        if (auto* d = std::get_if<DenseLayer<T>>(&layer))
            d->set_mask(bundle.masks[i]);
        else if (auto* c = std::get_if<Conv2dLayer<T>>(&layer))
            c->set_mask(bundle.masks[i]);
    }
}

// Build the configured model for one run: dense init from the run seed, then
// masks from the topology source.
template <typename T>
Model<T> build_model(const ExperimentConfig& cfg, std::uint64_t run_seed) {
    Rng init_rng(derive_seed(run_seed, 0x01u));
    Model<T> m;
    if (cfg.model == "lenet300")
        m = build_lenet300<T>(init_rng);
    else
        m = build_lenet5<T>(init_rng, model_input_dims<T>(cfg.model, cfg.dataset));
    m.meta.seed = run_seed;

    const auto& topo = cfg.topology;
    if (topo.source == "radix") {
        LayeredTopology t = radix_net(topo.radix);
        if (topo.trim > 0) t = trim_inputs(t, topo.trim);
        MaskBundle bundle{"radix", json::object(), t.layer_sizes, t.masks, {}};
        attach_masks(m, bundle);
    } else if (topo.source == "random") {
        Rng mask_rng(topo.seed ? *topo.seed : derive_seed(run_seed, 0x02u));
        const auto prunable = m.prunable_layers();
        for (std::size_t ord = 0; ord < prunable.size(); ++ord) {
            if (detail::contains(topo.keep_dense, static_cast<index_t>(ord))) continue;
            auto& layer = m.layers[static_cast<std::size_t>(prunable[ord])];
            if (auto* d = std::get_if<DenseLayer<T>>(&layer)) {
                d->set_mask(random_mask(d->w.rows, d->w.cols, topo.sparsity, mask_rng));
            } else if (auto* c = std::get_if<Conv2dLayer<T>>(&layer)) {
                SparsityPattern flat = random_mask(c->k.dim(0), c->k.size() / c->k.dim(0), topo.sparsity, mask_rng);
                c->set_mask(SparsityPattern(c->k.dims, std::move(flat.bits)));
            }
        }
    } else if (topo.source == "bundle") {
        attach_masks(m, load_mask_bundle(topo.path));
    }
    if (cfg.fc_kernel == "csr")
        for (auto& layer : m.layers)
            if (auto* d = std::get_if<DenseLayer<T>>(&layer)) d->kernel = FcKernel::Csr;
    return m;
}

// ---- run orchestration ----

struct RunSummary {
    index_t run = 0;
    std::uint64_t seed = 0;
    double final_accuracy = 0.0;
    double final_sparsity = 0.0;
    std::string dir;
    bool diverged = false;
};

inline std::uint64_t run_seed_for(const ExperimentConfig& cfg, index_t run) {
    if (!cfg.seeds.empty()) return cfg.seeds[static_cast<std::size_t>(run)];
    if (cfg.repeats == 1) return cfg.train.seed;
    return derive_seed(cfg.train.seed, 0x100u + static_cast<std::uint64_t>(run));
}

// One full run: build, train (with pruning hook when configured), write
// metrics.csv + final checkpoint (+ pruned mask bundle when pruning ran).
template <typename T>
RunSummary execute_run(const ExperimentConfig& cfg, index_t run,
                       const Dataset<T>& train_data, const Dataset<T>& test_data) {
    const std::uint64_t seed = run_seed_for(cfg, run);
    const fs::path run_dir = fs::path(cfg.out_dir) / ("run-" + std::to_string(run));
    fs::create_directories(run_dir);

    Model<T> m = build_model<T>(cfg, seed);
    m.meta.config_echo = config_echo(cfg).dump();
    TrainConfig tc = cfg.train;
    tc.seed = seed;

    MetricsWriter writer(run_dir / "metrics.csv");
    std::vector<MetricsRecord> metrics;
    RunSummary summary{run, seed, 0.0, 0.0, run_dir.string(), false};
    if (cfg.prune)
        metrics = iterative_prune(m, train_data, test_data, tc, cfg.prune->schedule, cfg.prune->keep_dense,
                                  std::ref(writer));
    else
        metrics = train(m, train_data, test_data, tc, StepHook<T>{}, std::ref(writer));

    const index_t final_step = metrics.empty() ? 0 : metrics.back().step;
    save_checkpoint(run_dir / "checkpoint", m, final_step, config_echo(cfg));
    if (cfg.prune) save_mask_bundle(run_dir / "pruned_masks", mask_bundle_from_model(m));
    if (!metrics.empty()) {
        summary.final_accuracy = metrics.back().test_accuracy;
        summary.final_sparsity = metrics.back().overall_sparsity;
    }
    return summary;
}

// Repeat runs own their state exclusively; they may execute on parallel
// threads. Dataset is shared read-only.
template <typename T>
std::vector<RunSummary> run_experiment_prepared(const ExperimentConfig& cfg, const Dataset<T>& train_data,
                                                const Dataset<T>& test_data) {
    if (cfg.out_dir.empty()) throw ConfigError("config: out_dir is required");
    fs::create_directories(cfg.out_dir);
    {
        std::ofstream echo(fs::path(cfg.out_dir) / "config.json");
        if (!echo) throw DataError("cannot write config echo");
        echo << config_echo(cfg).dump(2) << "\n";
    }
    std::vector<RunSummary> summaries(static_cast<std::size_t>(cfg.repeats));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(cfg.repeats));
    const index_t workers = std::min(cfg.threads, cfg.repeats);
    std::vector<std::thread> pool;
    std::atomic<index_t> next{0};
    auto work = [&] {
        for (;;) {
            const index_t run = next.fetch_add(1);
            if (run >= cfg.repeats) return;
            try {
                summaries[static_cast<std::size_t>(run)] = execute_run<T>(cfg, run, train_data, test_data);
            } catch (...) {
                errors[static_cast<std::size_t>(run)] = std::current_exception();
            }
        }
    };
    if (workers <= 1) {
        work();
    } else {
        for (index_t w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& th : pool) th.join();
    }
    for (const auto& err : errors)
        if (err) std::rethrow_exception(err);
    return summaries;
}

template <typename T>
std::vector<RunSummary> run_experiment(const ExperimentConfig& cfg) {
    const auto [train_data, test_data] = load_dataset<T>(cfg.dataset, cfg.train.seed);
    return run_experiment_prepared<T>(cfg, train_data, test_data);
}

// ---- kernel benchmark ----

struct BenchRow {
    index_t rows = 0, cols = 0, batch = 0;
    double sparsity = 0.0;
    index_t nnz = 0;
    double dense_ns = 0.0, csr_ns = 0.0;
    bool flagged = false;  // CSR median failed to decrease with sparsity
};

template <typename T>
std::vector<BenchRow> bench_fc_kernels(const std::vector<std::pair<index_t, index_t>>& shapes,
                                       std::vector<double> sparsities, index_t reps, index_t batch,
                                       std::uint64_t seed) {
    require(!shapes.empty() && !sparsities.empty(), "bench: empty grid");
    require(reps >= 1, "bench: reps must be >= 1");
    std::sort(sparsities.begin(), sparsities.end());
    std::vector<BenchRow> rows;
    Rng rng(seed);
    volatile double sink = 0.0;
    auto median_ns = [&](auto&& fn) {
        std::vector<double> times;
        for (index_t r = 0; r < reps; ++r) {
            const auto t0 = std::chrono::steady_clock::now();
            fn();
            const auto t1 = std::chrono::steady_clock::now();
            times.push_back(std::chrono::duration<double, std::nano>(t1 - t0).count());
        }
        std::sort(times.begin(), times.end());
        return times[times.size() / 2];
    };

    for (const auto& [in, out] : shapes) {
        double prev_csr = 0.0;
        bool have_prev = false;
        for (double s : sparsities) {
            Matrix<T> w(in, out);
            for (auto& x : w.v) x = static_cast<T>(rng.normal());
            SparsityPattern mask = random_mask(in, out, s, rng);
            apply_mask(w, mask);
            const CsrMatrix<T> wc = csr_from_dense(w, T{0});
            Matrix<T> x(batch, in);
            for (auto& v : x.v) v = static_cast<T>(rng.normal());
            Matrix<T> y(batch, out);

            BenchRow row;
            row.rows = in;
            row.cols = out;
            row.batch = batch;
            row.sparsity = s;
            row.nnz = mask.nnz();
            row.dense_ns = median_ns([&] {
                std::fill(y.v.begin(), y.v.end(), T{0});
                matmul_accum(x.data(), batch, in, w.data(), out, y.data());
                sink = sink + static_cast<double>(y.v[0]);
            });
            row.csr_ns = median_ns([&] {
                std::fill(y.v.begin(), y.v.end(), T{0});
                matmul_dense_csr_accum(x.data(), batch, in, wc, y.data());
                sink = sink + static_cast<double>(y.v[0]);
            });
            if (have_prev && row.csr_ns > prev_csr) row.flagged = true;
            prev_csr = row.csr_ns;
            have_prev = true;
            rows.push_back(row);
        }
    }
    return rows;
}

inline void write_bench_csv(const fs::path& path, const std::vector<BenchRow>& rows) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "rows,cols,batch,sparsity,nnz,dense_ns,csr_ns,flagged\n";
    for (const auto& r : rows)
        out << r.rows << "," << r.cols << "," << r.batch << "," << format_double(r.sparsity) << "," << r.nnz << ","
            << format_double(r.dense_ns) << "," << format_double(r.csr_ns) << "," << (r.flagged ? 1 : 0) << "\n";
}

}  // namespace spnn
