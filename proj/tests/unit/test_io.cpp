#include <catch2/catch_amalgamated.hpp>

#include <fstream>

#include "../support/test_util.hpp"
#include "spnn/checkpoint.hpp"
#include "spnn/experiment.hpp"
#include "spnn/topology_io.hpp"

using namespace spnn;
using spnn_test::TempDir;

TEST_CASE("matrix market pattern round trip") {
    Rng rng(1);
    const auto mask = random_mask(13, 17, 0.4, rng);
    TempDir tmp("mm");
    write_matrix_market_pattern(tmp.path() / "m.mtx", mask);
    CHECK(read_matrix_market_pattern(tmp.path() / "m.mtx", {13, 17}) == mask);

    SECTION("header carries the standard banner") {
        std::ifstream in(tmp.path() / "m.mtx");
        std::string line;
        std::getline(in, line);
        CHECK(line == "%%MatrixMarket matrix coordinate pattern general");
    }
    SECTION("shape disagreement is rejected") {
        CHECK_THROWS_AS(read_matrix_market_pattern(tmp.path() / "m.mtx", {17, 13}), ShapeError);
    }
    SECTION("truncated file is rejected") {
        std::ifstream in(tmp.path() / "m.mtx");
        std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        std::ofstream out(tmp.path() / "trunc.mtx");
        out << all.substr(0, all.size() - 8);
        out.close();
        CHECK_THROWS_AS(read_matrix_market_pattern(tmp.path() / "trunc.mtx", {13, 17}), DataError);
    }
    SECTION("garbage is rejected") {
        std::ofstream out(tmp.path() / "bad.mtx");
        out << "hello world\n";
        out.close();
        CHECK_THROWS_AS(read_matrix_market_pattern(tmp.path() / "bad.mtx", {2, 2}), DataError);
    }
}

TEST_CASE("topology bundle round trip") {
    const auto topo = trim_inputs(radix_net({{10, 10}, {8, 3, 1}}), 16);
    TempDir tmp("bundle");
    save_topology(tmp.path() / "b", topo, "radix", {{"radices", {10, 10}}, {"blocks", {8, 3, 1}}, {"trim", 16}});
    const auto loaded = load_topology(tmp.path() / "b");
    CHECK(loaded == topo);

    const auto bundle = load_mask_bundle(tmp.path() / "b");
    CHECK(bundle.generator == "radix");
    CHECK(bundle.layer_sizes == std::vector<index_t>{784, 300, 100});

    SECTION("missing manifest") {
        CHECK_THROWS_AS(load_mask_bundle(tmp.path() / "missing"), DataError);
    }
    SECTION("4-D conv masks keep their shape through the bundle") {
        Rng rng(3);
        SparsityPattern flat = random_mask(6, 3 * 5 * 5, 0.7, rng);
        MaskBundle out;
        out.generator = "pruned";
        out.masks = {SparsityPattern({6, 3, 5, 5}, std::move(flat.bits))};
        out.apply_to = {1};
        save_mask_bundle(tmp.path() / "conv", out);
        const auto back = load_mask_bundle(tmp.path() / "conv");
        CHECK(back.masks[0].shape == std::vector<index_t>{6, 3, 5, 5});
        CHECK(back.masks[0] == out.masks[0]);
        CHECK(back.apply_to == std::vector<index_t>{1});
    }
}

TEST_CASE("tensor file round trip and validation") {
    TempDir tmp("spnt");
    Rng rng(4);
    Tensor<float> t({3, 4, 2});
    for (auto& v : t.v) v = static_cast<float>(rng.normal());
    write_tensor_file<float>(tmp.path() / "t.spnt", t.dims, t.v);
    CHECK(read_tensor_file<float>(tmp.path() / "t.spnt") == t);

    SECTION("dtype mismatch") {
        CHECK_THROWS_AS(read_tensor_file<double>(tmp.path() / "t.spnt"), DataError);
    }
    SECTION("bad magic") {
        std::ofstream out(tmp.path() / "bad.spnt", std::ios::binary);
        out << "NOPE00000000";
        out.close();
        CHECK_THROWS_AS(read_tensor_file<float>(tmp.path() / "bad.spnt"), DataError);
    }
}

TEST_CASE("checkpoint round trip is bit-exact") {
    const auto result = spnn_test::check_roundtrips();
    INFO(result.detail);
    CHECK(result.pass);
}

TEST_CASE("metrics csv") {
    TempDir tmp("csv");
    MetricsRecord a{100, 0.523, 0.91, 0.25, {0.5, 0.0}, 1234.5};
    MetricsRecord b{200, 0.101, 0.97, 0.5, {0.9, 0.1}, 2345.6};
    {
        MetricsWriter w(tmp.path() / "m.csv");
        w(a);
        w(b);
    }
    const auto rows = read_metrics_csv(tmp.path() / "m.csv");
    REQUIRE(rows.size() == 2);
    CHECK(metrics_equal_ignoring_time(rows[0], a));
    CHECK(metrics_equal_ignoring_time(rows[1], b));
    CHECK(rows[1].wall_ms == 2345.6);

    std::ifstream in(tmp.path() / "m.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "step,train_loss,test_accuracy,overall_sparsity,layer_sparsities,wall_time");
}

TEST_CASE("experiment config parsing") {
    const json base = {
        {"model", "lenet300"},
        {"dataset", {{"name", "synthetic"}, {"n", 100}, {"test_n", 50}, {"dims", 784}, {"classes", 10}}},
        {"topology", {{"source", "random"}, {"sparsity", 0.5}}},
        {"train", {{"learning_rate", 0.05}, {"batch_size", 25}, {"steps", 10}, {"eval_every", 5}, {"seed", 3}}},
        {"out_dir", "/tmp/x"},
    };
    SECTION("happy path with defaults filled") {
        const auto cfg = parse_experiment_config(base);
        CHECK(cfg.model == "lenet300");
        CHECK(cfg.train.momentum == 0.9);
        CHECK(cfg.repeats == 1);
        CHECK(cfg.precision == "f32");
        const auto echo = config_echo(cfg);
        const auto reparsed = parse_experiment_config(echo);
        CHECK(reparsed.train.learning_rate == cfg.train.learning_rate);
        CHECK(reparsed.topology.sparsity == cfg.topology.sparsity);
    }
    SECTION("unknown keys are rejected at every level") {
        json bad = base;
        bad["surprise"] = 1;
        CHECK_THROWS_AS(parse_experiment_config(bad), ConfigError);
        bad = base;
        bad["dataset"]["pathh"] = "typo";
        CHECK_THROWS_AS(parse_experiment_config(bad), ConfigError);
        bad = base;
        bad["train"]["lr"] = 0.1;
        CHECK_THROWS_AS(parse_experiment_config(bad), ConfigError);
        bad = base;
        bad["topology"]["sparsityy"] = 0.4;
        CHECK_THROWS_AS(parse_experiment_config(bad), ConfigError);
        bad = base;
        bad["prune"] = {{"target_sparsity", 0.9}, {"start_step", 0}, {"end_step", 10}, {"oops", 1}};
        CHECK_THROWS_AS(parse_experiment_config(bad), ConfigError);
    }
    SECTION("bad values are rejected") {
        json bad = base;
        bad["model"] = "alexnet";
        CHECK_THROWS_AS(parse_experiment_config(bad), ConfigError);
        bad = base;
        bad["train"]["momentum"] = 1.0;
        CHECK_THROWS_AS(parse_experiment_config(bad), ConfigError);
        bad = base;
        bad["repeats"] = 3;
        bad["seeds"] = {1, 2};
        CHECK_THROWS_AS(parse_experiment_config(bad), ConfigError);
        bad = base;
        bad["dataset"] = {{"name", "mnist"}};
        CHECK_THROWS_AS(parse_experiment_config(bad), ConfigError);  // mnist needs a path
    }
}

TEST_CASE("seeded runs reproduce metrics bit-for-bit") {
    const auto result = spnn_test::check_metrics_reproducibility();
    INFO(result.detail);
    CHECK(result.pass);
}

namespace {

ExperimentConfig tiny_experiment(const fs::path& out) {
    ExperimentConfig cfg;
    cfg.model = "lenet300";
    cfg.dataset.name = "synthetic";
    cfg.dataset.n = 300;
    cfg.dataset.test_n = 100;
    cfg.dataset.dims = 784;
    cfg.dataset.classes = 10;
    cfg.train.steps = 20;
    cfg.train.batch_size = 50;
    cfg.train.eval_every = 10;
    cfg.train.seed = 5;
    cfg.out_dir = out.string();
    return cfg;
}

}  // namespace

TEST_CASE("repeat runs write sibling run directories") {
    TempDir tmp("repeat");
    auto cfg = tiny_experiment(tmp.path() / "out");
    cfg.repeats = 3;
    cfg.seeds = {100, 200, 300};
    cfg.threads = 2;
    const auto runs = run_experiment<float>(cfg);
    REQUIRE(runs.size() == 3);
    for (int r = 0; r < 3; ++r) {
        CHECK(fs::exists(tmp.path() / "out" / ("run-" + std::to_string(r)) / "metrics.csv"));
        CHECK(runs[static_cast<std::size_t>(r)].seed == cfg.seeds[static_cast<std::size_t>(r)]);
    }
    // distinct seeds, distinct trajectories
    const auto m0 = read_metrics_csv(tmp.path() / "out" / "run-0" / "metrics.csv");
    const auto m1 = read_metrics_csv(tmp.path() / "out" / "run-1" / "metrics.csv");
    CHECK(m0.back().train_loss != m1.back().train_loss);
}

TEST_CASE("zero-step run leaves the checkpoint at initialization") {
    TempDir tmp("zerostep");
    auto cfg = tiny_experiment(tmp.path() / "out");
    cfg.train.steps = 0;
    run_experiment<float>(cfg);
    const auto metrics = read_metrics_csv(tmp.path() / "out" / "run-0" / "metrics.csv");
    CHECK(metrics.empty());
    const auto loaded = load_checkpoint<float>(tmp.path() / "out" / "run-0" / "checkpoint");
    CHECK(loaded.step == 0);
    const auto fresh = build_model<float>(cfg, run_seed_for(cfg, 0));
    CHECK(std::get<DenseLayer<float>>(loaded.model.layers[1]).w == std::get<DenseLayer<float>>(fresh.layers[1]).w);
}

TEST_CASE("random topology seed semantics") {
    TempDir tmp("toposeed");
    auto cfg = tiny_experiment(tmp.path() / "out");
    cfg.topology.source = "random";
    cfg.topology.sparsity = 0.7;
    SECTION("explicit seed fixes the mask across runs") {
        cfg.topology.seed = 424242;
        const auto a = build_model<float>(cfg, 1);
        const auto b = build_model<float>(cfg, 2);
        CHECK(*std::get<DenseLayer<float>>(a.layers[1]).mask == *std::get<DenseLayer<float>>(b.layers[1]).mask);
    }
    SECTION("without a seed each run resamples") {
        const auto a = build_model<float>(cfg, 1);
        const auto b = build_model<float>(cfg, 2);
        CHECK(*std::get<DenseLayer<float>>(a.layers[1]).mask != *std::get<DenseLayer<float>>(b.layers[1]).mask);
    }
}

TEST_CASE("csr execution kernel is selectable through the config") {
    TempDir tmp("fckernel");
    auto cfg = tiny_experiment(tmp.path() / "out");
    cfg.topology.source = "random";
    cfg.topology.sparsity = 0.9;
    cfg.fc_kernel = "csr";
    const auto m = build_model<float>(cfg, 7);
    for (const auto& layer : m.layers)
        if (const auto* d = std::get_if<DenseLayer<float>>(&layer)) CHECK(d->kernel == FcKernel::Csr);

    auto dense_cfg = cfg;
    dense_cfg.fc_kernel = "dense";
    const auto md = build_model<float>(dense_cfg, 7);
    Rng xr(9);
    Tensor<float> x({4, 784});
    for (auto& v : x.v) v = static_cast<float>(xr.normal());
    const auto ya = forward(m, x);
    const auto yb = forward(md, x);
    CHECK(max_rel_error<float>(ya.v, yb.v) < 1e-5);

    json bad = config_echo(cfg);
    bad["fc_kernel"] = "sparse";
    CHECK_THROWS_AS(parse_experiment_config(bad), ConfigError);
}
