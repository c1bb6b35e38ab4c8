#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "spnn/model.hpp"
#include "spnn/topology_io.hpp"

namespace spnn {

// Raw tensor file: magic "SPNT", u32 dtype (0 = f32, 1 = f64), u32 rank,
// u64 dims, then the values. Everything little-endian, round trips bit-exact.

namespace detail {

template <typename T>
constexpr std::uint32_t dtype_code() {
    if constexpr (std::is_same_v<T, float>)
        return 0;
    else
        return 1;
}

inline void write_u32(std::ofstream& out, std::uint32_t x) { out.write(reinterpret_cast<const char*>(&x), 4); }
inline void write_u64(std::ofstream& out, std::uint64_t x) { out.write(reinterpret_cast<const char*>(&x), 8); }

inline std::uint32_t read_u32(std::ifstream& in, const std::string& what) {
    std::uint32_t x = 0;
    if (!in.read(reinterpret_cast<char*>(&x), 4)) throw DataError(what + ": truncated");
    return x;
}
inline std::uint64_t read_u64(std::ifstream& in, const std::string& what) {
    std::uint64_t x = 0;
    if (!in.read(reinterpret_cast<char*>(&x), 8)) throw DataError(what + ": truncated");
    return x;
}

}  // namespace detail

template <typename T>
void write_tensor_file(const fs::path& path, std::span<const index_t> dims, std::span<const T> values) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out.write("SPNT", 4);
    detail::write_u32(out, detail::dtype_code<T>());
    detail::write_u32(out, static_cast<std::uint32_t>(dims.size()));
    for (index_t d : dims) detail::write_u64(out, static_cast<std::uint64_t>(d));
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(T)));
    if (!out) throw DataError("write failed: " + path.string());
}

template <typename T>
Tensor<T> read_tensor_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "SPNT", 4) != 0)
        throw DataError(path.string() + ": bad tensor magic");
    const auto dtype = detail::read_u32(in, path.string());
    if (dtype != detail::dtype_code<T>())
        throw DataError(path.string() + ": dtype code " + std::to_string(dtype) + " does not match requested precision");
    const auto rank = detail::read_u32(in, path.string());
    if (rank > 8) throw DataError(path.string() + ": implausible rank");
    std::vector<index_t> dims(rank);
    for (auto& d : dims) d = static_cast<index_t>(detail::read_u64(in, path.string()));
    Tensor<T> t(dims);
    if (!in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.v.size() * sizeof(T))))
        throw DataError(path.string() + ": truncated payload");
    char extra;
    if (in.read(&extra, 1)) throw DataError(path.string() + ": trailing bytes");
    return t;
}

namespace detail {

template <typename T>
json layer_descriptor(const Layer<T>& layer) {
    return std::visit(
        [](const auto& l) -> json {
            using L = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<L, DenseLayer<T>>) {
                return {{"kind", "dense"},
                        {"in", l.w.rows},
                        {"out", l.w.cols},
                        {"masked", l.mask.has_value()},
                        {"kernel", l.kernel == FcKernel::Csr ? "csr" : "dense"}};
            } else if constexpr (std::is_same_v<L, Conv2dLayer<T>>) {
                return {{"kind", "conv2d"}, {"out", l.k.dim(0)}, {"in", l.k.dim(1)},
                        {"kh", l.k.dim(2)},  {"kw", l.k.dim(3)}, {"stride", l.stride},
                        {"masked", l.mask.has_value()}};
            } else if constexpr (std::is_same_v<L, MaxPoolLayer>) {
                return {{"kind", "max_pool"}, {"window", l.window}};
            } else if constexpr (std::is_same_v<L, ReluLayer>) {
                return {{"kind", "relu"}};
            } else {
                return {{"kind", "flatten"}};
            }
        },
        layer);
}

}  // namespace detail

// Masks of every masked prunable layer, as a bundle tagged with the ordinals
// they apply to.
template <typename T>
MaskBundle mask_bundle_from_model(const Model<T>& m, std::string generator = "pruned") {
    MaskBundle bundle;
    bundle.generator = std::move(generator);
    const auto prunable = m.prunable_layers();
    for (std::size_t ord = 0; ord < prunable.size(); ++ord) {
        const auto& layer = m.layers[static_cast<std::size_t>(prunable[ord])];
        if (const auto* d = std::get_if<DenseLayer<T>>(&layer)) {
            if (!d->mask) continue;
            bundle.masks.push_back(*d->mask);
            bundle.apply_to.push_back(static_cast<index_t>(ord));
        } else if (const auto* c = std::get_if<Conv2dLayer<T>>(&layer)) {
            if (!c->mask) continue;
            bundle.masks.push_back(*c->mask);
            bundle.apply_to.push_back(static_cast<index_t>(ord));
        }
    }
    bundle.spec["model"] = m.meta.name;
    return bundle;
}

template <typename T>
void save_checkpoint(const fs::path& dir, const Model<T>& m, index_t step, const json& config_echo = json::object()) {
    fs::create_directories(dir);
    json manifest;
    manifest["name"] = m.meta.name;
    manifest["seed"] = m.meta.seed;
    manifest["step"] = step;
    manifest["precision"] = detail::dtype_code<T>() == 0 ? "f32" : "f64";
    manifest["config"] = config_echo;
    json arch = json::array();
    for (const auto& layer : m.layers) arch.push_back(detail::layer_descriptor<T>(layer));
    manifest["architecture"] = arch;

    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        const std::string stem = "layer" + std::to_string(i);
        if (const auto* d = std::get_if<DenseLayer<T>>(&m.layers[i])) {
            const std::vector<index_t> wdims{d->w.rows, d->w.cols};
            write_tensor_file<T>(dir / (stem + "_weight.spnt"), wdims, std::span<const T>(d->w.v));
            const std::vector<index_t> bdims{static_cast<index_t>(d->b.size())};
            write_tensor_file<T>(dir / (stem + "_bias.spnt"), bdims, std::span<const T>(d->b));
        } else if (const auto* c = std::get_if<Conv2dLayer<T>>(&m.layers[i])) {
            write_tensor_file<T>(dir / (stem + "_weight.spnt"), c->k.dims, std::span<const T>(c->k.v));
            const std::vector<index_t> bdims{static_cast<index_t>(c->b.size())};
            write_tensor_file<T>(dir / (stem + "_bias.spnt"), bdims, std::span<const T>(c->b));
        }
    }

    const MaskBundle masks = mask_bundle_from_model(m);
    if (!masks.masks.empty()) save_mask_bundle(dir / "masks", masks);

    std::ofstream out(dir / "manifest.json");
    if (!out) throw DataError("cannot write " + (dir / "manifest.json").string());
    out << manifest.dump(2) << "\n";
}

template <typename T>
struct LoadedCheckpoint {
    Model<T> model;
    index_t step = 0;
    json config = json::object();
};

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const fs::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw DataError("cannot open checkpoint manifest in " + dir.string());
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        throw DataError((dir / "manifest.json").string() + ": " + e.what());
    }

    LoadedCheckpoint<T> loaded;
    try {
        const std::string precision = manifest.value("precision", "f32");
        if ((precision == "f32") != (detail::dtype_code<T>() == 0))
            throw DataError(dir.string() + ": checkpoint precision " + precision + " does not match");
        loaded.model.meta.name = manifest.at("name").get<std::string>();
        loaded.model.meta.seed = manifest.at("seed").get<std::uint64_t>();
        loaded.step = manifest.at("step").get<index_t>();
        loaded.config = manifest.value("config", json::object());
        loaded.model.meta.config_echo = loaded.config.dump();

        for (const auto& desc : manifest.at("architecture")) {
            const std::string kind = desc.at("kind").get<std::string>();
            const std::string stem = "layer" + std::to_string(loaded.model.layers.size());
            if (kind == "dense") {
                Tensor<T> w = read_tensor_file<T>(dir / (stem + "_weight.spnt"));
                Tensor<T> b = read_tensor_file<T>(dir / (stem + "_bias.spnt"));
                require(w.rank() == 2 && w.dim(0) == desc.at("in").get<index_t>() &&
                            w.dim(1) == desc.at("out").get<index_t>(),
                        dir.string() + ": " + stem + " weight shape mismatch");
                DenseLayer<T> layer(Matrix<T>(w.dim(0), w.dim(1), std::move(w.v)), std::move(b.v));
                layer.kernel = desc.value("kernel", "dense") == "csr" ? FcKernel::Csr : FcKernel::DenseMasked;
                loaded.model.layers.push_back(std::move(layer));
            } else if (kind == "conv2d") {
                Tensor<T> k = read_tensor_file<T>(dir / (stem + "_weight.spnt"));
                Tensor<T> b = read_tensor_file<T>(dir / (stem + "_bias.spnt"));
                require(k.rank() == 4, dir.string() + ": " + stem + " kernel rank mismatch");
                Conv2dLayer<T> layer(std::move(k), std::move(b.v), desc.at("stride").get<index_t>());
                loaded.model.layers.push_back(std::move(layer));
            } else if (kind == "max_pool") {
                loaded.model.layers.push_back(MaxPoolLayer{desc.at("window").get<index_t>()});
            } else if (kind == "relu") {
                loaded.model.layers.push_back(ReluLayer{});
            } else if (kind == "flatten") {
                loaded.model.layers.push_back(FlattenLayer{});
            } else {
                throw DataError(dir.string() + ": unknown layer kind " + kind);
            }
        }
    } catch (const json::exception& e) {
        throw DataError(dir.string() + ": manifest error: " + e.what());
    }

    if (fs::exists(dir / "masks")) {
        const MaskBundle bundle = load_mask_bundle(dir / "masks");
        const auto prunable = loaded.model.prunable_layers();
        for (std::size_t i = 0; i < bundle.masks.size(); ++i) {
            const index_t ord = bundle.apply_to.empty() ? static_cast<index_t>(i) : bundle.apply_to[i];
            if (ord < 0 || ord >= static_cast<index_t>(prunable.size()))
                throw DataError(dir.string() + ": mask ordinal " + std::to_string(ord) + " out of range");
            auto& layer = loaded.model.layers[static_cast<std::size_t>(prunable[static_cast<std::size_t>(ord)])];
            if (auto* d = std::get_if<DenseLayer<T>>(&layer))
                d->set_mask(bundle.masks[i]);
            else if (auto* c = std::get_if<Conv2dLayer<T>>(&layer))
                c->set_mask(bundle.masks[i]);
        }
    }
    return loaded;
}

}  // namespace spnn
