// Experiment runner: topology generation, training, pruning, retraining,
// evaluation, kernel benchmarks. See README for usage.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "spnn/experiment.hpp"

namespace {

using namespace spnn;

std::vector<index_t> parse_int_list(const std::string& csv) {
    std::vector<index_t> out;
    std::size_t pos = 0;
    while (pos <= csv.size()) {
        const std::size_t comma = csv.find(',', pos);
        const std::string tok = csv.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        if (tok.empty()) throw ConfigError("empty entry in list \"" + csv + "\"");
        out.push_back(std::stoll(tok));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

std::vector<index_t> parse_dims(const std::string& s) {
    std::vector<index_t> out;
    std::size_t pos = 0;
    while (pos <= s.size()) {
        const std::size_t x = s.find('x', pos);
        const std::string tok = s.substr(pos, x == std::string::npos ? std::string::npos : x - pos);
        if (tok.empty()) throw ConfigError("bad dimension list \"" + s + "\"");
        out.push_back(std::stoll(tok));
        if (x == std::string::npos) break;
        pos = x + 1;
    }
    return out;
}

void print_topology_summary(const LayeredTopology& topo) {
    std::cout << "layers:";
    for (index_t n : topo.layer_sizes) std::cout << " " << n;
    std::cout << "\n";
    const auto sp = topo.layer_sparsities();
    for (std::size_t l = 0; l < sp.size(); ++l)
        std::cout << "mask " << l << ": " << topo.masks[l].shape[0] << "x" << topo.masks[l].shape[1]
                  << " sparsity " << format_double(sp[l]) << "\n";
    std::cout << "overall sparsity: " << format_double(topo.overall_sparsity()) << "\n";
    std::cout << "fully path-connected: " << (is_fully_path_connected(topo) ? "yes" : "no") << "\n";
}

int cmd_gen_topology(const std::string& radix_csv, const std::string& blocks_csv, index_t trim,
                     const std::string& random_dims, double sparsity, std::uint64_t seed,
                     const std::string& out_dir) {
    LayeredTopology topo;
    json spec;
    std::string generator;
    if (!radix_csv.empty()) {
        RadixSpec rs{parse_int_list(radix_csv), parse_int_list(blocks_csv)};
        topo = radix_net(rs);
        if (trim > 0) topo = trim_inputs(topo, trim);
        generator = "radix";
        spec = {{"radices", rs.radices}, {"blocks", rs.blocks}, {"trim", trim}};
    } else if (!random_dims.empty()) {
        const auto sizes = parse_dims(random_dims);
        if (sizes.size() < 2) throw ConfigError("--random needs at least two layer sizes, e.g. 784x300");
        Rng rng(seed);
        topo.layer_sizes = sizes;
        for (std::size_t l = 0; l + 1 < sizes.size(); ++l)
            topo.masks.push_back(random_mask(sizes[l], sizes[l + 1], sparsity, rng));
        generator = "random";
        spec = {{"sparsity", sparsity}, {"seed", seed}, {"layer_sizes", sizes}};
    } else {
        throw ConfigError("gen-topology: give --radix/--blocks or --random");
    }
    print_topology_summary(topo);
    save_topology(out_dir, topo, generator, spec);
    std::cout << "wrote " << out_dir << "\n";
    return 0;
}

ExperimentConfig load_config_with_overrides(const std::string& config_path, std::uint64_t seed, bool seed_set,
                                            const std::string& out, const std::string& precision, index_t threads) {
    ExperimentConfig cfg = load_experiment_config(config_path);
    if (seed_set) cfg.train.seed = seed;
    if (!out.empty()) cfg.out_dir = out;
    if (!precision.empty()) cfg.precision = precision;
    if (threads > 0) cfg.threads = threads;
    if (cfg.out_dir.empty()) throw ConfigError("no output directory (config out_dir or --out)");
    return cfg;
}

template <typename T>
int run_and_report(const ExperimentConfig& cfg) {
    const auto summaries = run_experiment<T>(cfg);
    for (const auto& s : summaries)
        std::cout << "run " << s.run << " seed " << s.seed << ": accuracy " << format_double(s.final_accuracy)
                  << " sparsity " << format_double(s.final_sparsity) << " -> " << s.dir << "\n";
    return 0;
}

int dispatch_run(const ExperimentConfig& cfg) {
    return cfg.precision == "f64" ? run_and_report<double>(cfg) : run_and_report<float>(cfg);
}

bool is_checkpoint_dir(const fs::path& p) {
    std::ifstream in(p / "manifest.json");
    if (!in) return false;
    json j;
    try {
        in >> j;
    } catch (...) {
        return false;
    }
    return j.contains("architecture");
}

// Pull masks out of a checkpoint or pass a bundle through, staging them under
// the run output so the echo is self-contained.
template <typename T>
void stage_retrain_masks(ExperimentConfig& cfg, const std::string& from) {
    MaskBundle bundle;
    if (is_checkpoint_dir(from)) {
        const auto loaded = load_checkpoint<T>(from);
        bundle = mask_bundle_from_model(loaded.model);
        if (bundle.masks.empty()) throw DataError("retrain: checkpoint " + from + " carries no masks");
    } else {
        bundle = load_mask_bundle(from);
    }
    const fs::path staged = fs::path(cfg.out_dir) / "source_masks";
    save_mask_bundle(staged, bundle);
    cfg.topology = TopologySpec{};
    cfg.topology.source = "bundle";
    cfg.topology.path = staged.string();
}

int cmd_retrain(ExperimentConfig cfg, const std::string& from) {
    fs::create_directories(cfg.out_dir);
    if (cfg.precision == "f64")
        stage_retrain_masks<double>(cfg, from);
    else
        stage_retrain_masks<float>(cfg, from);
    return dispatch_run(cfg);
}

template <typename T>
int cmd_prune(const std::string& checkpoint, double sparsity, const std::string& keep_dense_csv,
              const std::string& out_dir) {
    auto loaded = load_checkpoint<T>(checkpoint);
    std::vector<index_t> keep_dense;
    if (!keep_dense_csv.empty()) keep_dense = parse_int_list(keep_dense_csv);
    one_time_prune(loaded.model, sparsity, keep_dense);
    save_checkpoint(fs::path(out_dir) / "checkpoint", loaded.model, loaded.step, loaded.config);
    save_mask_bundle(fs::path(out_dir) / "pruned_masks", mask_bundle_from_model(loaded.model));
    std::cout << "pruned to overall sparsity " << format_double(loaded.model.overall_sparsity()) << "\n";
    std::cout << "wrote " << out_dir << "\n";
    return 0;
}

// Dataset and eval batch size default to the checkpoint's config echo so a
// fresh eval reproduces the run's own final metrics; flags override.
template <typename T>
int cmd_eval(const std::string& checkpoint, const std::string& dataset_name, const std::string& data_path,
             const std::string& out_dir) {
    const auto loaded = load_checkpoint<T>(checkpoint);
    const json& cfg_echo = loaded.config;
    DatasetSpec spec;
    std::uint64_t data_seed = 0;
    if (cfg_echo.contains("dataset")) {
        const json& d = cfg_echo["dataset"];
        spec.name = d.value("name", std::string{});
        spec.path = d.value("path", std::string{});
        spec.n = d.value("n", spec.n);
        spec.test_n = d.value("test_n", spec.test_n);
        spec.dims = d.value("dims", spec.dims);
        spec.classes = d.value("classes", spec.classes);
    }
    if (cfg_echo.contains("train") && cfg_echo["train"].contains("seed"))
        data_seed = cfg_echo["train"]["seed"].get<std::uint64_t>();
    if (!dataset_name.empty()) spec.name = dataset_name;
    if (!data_path.empty()) spec.path = data_path;
    if (spec.name.empty()) throw ConfigError("eval: no dataset in checkpoint echo; pass --dataset/--data");
    const auto [train_data, test_data] = load_dataset<T>(spec, data_seed);
    index_t batch = 100;
    if (cfg_echo.contains("train") && cfg_echo["train"].contains("batch_size"))
        batch = cfg_echo["train"]["batch_size"].get<index_t>();
    const EvalResult r = evaluate(loaded.model, test_data, batch);

    json report;
    report["accuracy"] = r.accuracy;
    report["mean_loss"] = r.mean_loss;
    report["overall_sparsity"] = loaded.model.overall_sparsity();
    json audit = json::array();
    const auto prunable = loaded.model.prunable_layers();
    for (std::size_t ord = 0; ord < prunable.size(); ++ord) {
        const auto& layer = loaded.model.layers[static_cast<std::size_t>(prunable[ord])];
        double mask_s = 0.0, zero_frac = 0.0;
        if (const auto* d = std::get_if<DenseLayer<T>>(&layer)) {
            mask_s = d->mask ? d->mask->sparsity() : 0.0;
            index_t zeros = 0;
            for (T x : d->w.v) zeros += x == T{0} ? 1 : 0;
            zero_frac = static_cast<double>(zeros) / static_cast<double>(d->w.size());
        } else if (const auto* c = std::get_if<Conv2dLayer<T>>(&layer)) {
            mask_s = c->mask ? c->mask->sparsity() : 0.0;
            index_t zeros = 0;
            for (T x : c->k.v) zeros += x == T{0} ? 1 : 0;
            zero_frac = static_cast<double>(zeros) / static_cast<double>(c->k.size());
        }
        audit.push_back({{"layer", ord}, {"mask_sparsity", mask_s}, {"weight_zero_fraction", zero_frac}});
    }
    report["layer_audit"] = audit;

    std::cout << "accuracy " << format_double(r.accuracy) << "\n";
    std::cout << report.dump(2) << "\n";
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::ofstream out(fs::path(out_dir) / "report.json");
        if (!out) throw DataError("cannot write report.json");
        out << report.dump(2) << "\n";
    }
    return 0;
}

template <typename T>
int cmd_bench(const std::string& shapes_csv, const std::string& sparsities_csv, index_t reps, index_t batch,
              std::uint64_t seed, const std::string& out_dir) {
    std::vector<std::pair<index_t, index_t>> shapes;
    for (const auto& tok : [&] {
             std::vector<std::string> toks;
             std::size_t pos = 0;
             while (pos <= shapes_csv.size()) {
                 const auto comma = shapes_csv.find(',', pos);
                 toks.push_back(shapes_csv.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos));
                 if (comma == std::string::npos) break;
                 pos = comma + 1;
             }
             return toks;
         }()) {
        const auto dims = parse_dims(tok);
        if (dims.size() != 2) throw ConfigError("bench: shape must be RxC, got \"" + tok + "\"");
        shapes.emplace_back(dims[0], dims[1]);
    }
    std::vector<double> sparsities;
    {
        std::size_t pos = 0;
        while (pos <= sparsities_csv.size()) {
            const auto comma = sparsities_csv.find(',', pos);
            sparsities.push_back(std::stod(
                sparsities_csv.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos)));
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
    }
    const auto rows = bench_fc_kernels<T>(shapes, sparsities, reps, batch, seed);
    fs::create_directories(out_dir);
    write_bench_csv(fs::path(out_dir) / "bench.csv", rows);
    for (const auto& r : rows)
        std::cout << r.rows << "x" << r.cols << " s=" << format_double(r.sparsity) << " nnz=" << r.nnz
                  << " dense=" << format_double(r.dense_ns) << "ns csr=" << format_double(r.csr_ns) << "ns"
                  << (r.flagged ? " [flagged]" : "") << "\n";
    std::cout << "wrote " << (fs::path(out_dir) / "bench.csv").string() << "\n";
    return 0;
}

int cmd_inspect(const std::string& path) {
    if (is_checkpoint_dir(path)) {
        std::ifstream in(fs::path(path) / "manifest.json");
        json j;
        in >> j;
        std::cout << "checkpoint: " << j.value("name", "?") << " step " << j.value("step", 0)
                  << " precision " << j.value("precision", "?") << "\n";
        for (const auto& layer : j.value("architecture", json::array())) std::cout << "  " << layer.dump() << "\n";
        if (fs::exists(fs::path(path) / "masks")) {
            const auto bundle = load_mask_bundle(fs::path(path) / "masks");
            for (std::size_t i = 0; i < bundle.masks.size(); ++i)
                std::cout << "  mask " << i << " shape " << shape_str(bundle.masks[i].shape) << " sparsity "
                          << format_double(bundle.masks[i].sparsity()) << "\n";
        }
        return 0;
    }
    const auto bundle = load_mask_bundle(path);
    std::cout << "mask bundle: generator " << bundle.generator << "\n";
    if (!bundle.layer_sizes.empty()) {
        std::cout << "layers:";
        for (index_t n : bundle.layer_sizes) std::cout << " " << n;
        std::cout << "\n";
    }
    for (std::size_t i = 0; i < bundle.masks.size(); ++i)
        std::cout << "mask " << i << " shape " << shape_str(bundle.masks[i].shape) << " sparsity "
                  << format_double(bundle.masks[i].sparsity()) << "\n";
    std::cout << "spec: " << bundle.spec.dump() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sparse neural network training engine"};
    app.require_subcommand(1);

    std::string config_path, out_dir, precision, from_path, checkpoint_path, dataset_name, data_path,
                radix_csv, blocks_csv, random_dims, keep_dense_csv, inspect_path;
    std::string shapes_csv = "784x300,300x100", sparsities_csv = "0,0.5,0.9,0.99";
    std::uint64_t seed = 1;
    bool seed_set = false;
    index_t threads = 0, trim = 0, reps = 5, batch = 100;
    double sparsity = 0.0;

    auto add_run_flags = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "experiment config JSON")->required();
        cmd->add_option("--seed", seed, "override train.seed")->each([&](const std::string&) { seed_set = true; });
        cmd->add_option("--out", out_dir, "override out_dir");
        cmd->add_option("--precision", precision, "f32 or f64");
        cmd->add_option("--threads", threads, "worker threads for repeat runs");
    };

    auto* gen = app.add_subcommand("gen-topology", "generate a sparse topology bundle");
    gen->add_option("--radix", radix_csv, "mixed radix list, e.g. 10,10");
    gen->add_option("--blocks", blocks_csv, "Kronecker block list, e.g. 8,3,1");
    gen->add_option("--trim", trim, "drop this many top input neurons");
    gen->add_option("--random", random_dims, "layer sizes for a random topology, e.g. 784x300x100");
    gen->add_option("--sparsity", sparsity, "sparsity for --random");
    gen->add_option("--seed", seed, "seed for --random");
    gen->add_option("--out", out_dir, "bundle output directory")->required();

    auto* train_cmd = app.add_subcommand("train", "train a model per config");
    add_run_flags(train_cmd);

    auto* retrain_cmd = app.add_subcommand("retrain", "train fresh weights on masks from a bundle or checkpoint");
    add_run_flags(retrain_cmd);
    retrain_cmd->add_option("--from", from_path, "mask bundle or checkpoint directory")->required();

    auto* prune_cmd = app.add_subcommand("prune", "one-time magnitude pruning of a checkpoint");
    prune_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint directory")->required();
    prune_cmd->add_option("--sparsity", sparsity, "target sparsity")->required();
    prune_cmd->add_option("--keep-dense", keep_dense_csv, "prunable ordinals to keep dense");
    prune_cmd->add_option("--out", out_dir, "output directory")->required();
    prune_cmd->add_option("--precision", precision, "f32 or f64");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    eval_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint directory")->required();
    eval_cmd->add_option("--dataset", dataset_name, "mnist | cifar10 | synthetic (default: checkpoint echo)");
    eval_cmd->add_option("--data", data_path, "dataset directory");
    eval_cmd->add_option("--out", out_dir, "directory for report.json");
    eval_cmd->add_option("--precision", precision, "f32 or f64");

    auto* bench_cmd = app.add_subcommand("bench", "time dense-masked vs CSR fully-connected forward");
    bench_cmd->add_option("--shapes", shapes_csv, "comma-separated RxC shapes");
    bench_cmd->add_option("--sparsities", sparsities_csv, "comma-separated sparsity grid");
    bench_cmd->add_option("--reps", reps, "repetitions per cell (median reported)");
    bench_cmd->add_option("--batch", batch, "activation batch size");
    bench_cmd->add_option("--seed", seed, "rng seed");
    bench_cmd->add_option("--out", out_dir, "output directory")->required();
    bench_cmd->add_option("--precision", precision, "f32 or f64");

    auto* inspect_cmd = app.add_subcommand("inspect", "summarize a bundle or checkpoint");
    inspect_cmd->add_option("path", inspect_path, "directory to inspect")->required();

    try {
        app.parse(argc, argv);
        const bool f64 = precision == "f64";
        if (gen->parsed()) return cmd_gen_topology(radix_csv, blocks_csv, trim, random_dims, sparsity, seed, out_dir);
        if (train_cmd->parsed())
            return dispatch_run(load_config_with_overrides(config_path, seed, seed_set, out_dir, precision, threads));
        if (retrain_cmd->parsed())
            return cmd_retrain(load_config_with_overrides(config_path, seed, seed_set, out_dir, precision, threads),
                               from_path);
        if (prune_cmd->parsed())
            return f64 ? cmd_prune<double>(checkpoint_path, sparsity, keep_dense_csv, out_dir)
                       : cmd_prune<float>(checkpoint_path, sparsity, keep_dense_csv, out_dir);
        if (eval_cmd->parsed()) return f64 ? cmd_eval<double>(checkpoint_path, dataset_name, data_path, out_dir)
                                           : cmd_eval<float>(checkpoint_path, dataset_name, data_path, out_dir);
        if (bench_cmd->parsed()) return f64 ? cmd_bench<double>(shapes_csv, sparsities_csv, reps, batch, seed, out_dir)
                                            : cmd_bench<float>(shapes_csv, sparsities_csv, reps, batch, seed, out_dir);
        if (inspect_cmd->parsed()) return cmd_inspect(inspect_path);
        return 2;
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    } catch (const spnn::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 4;
    } catch (const spnn::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const spnn::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const spnn::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
