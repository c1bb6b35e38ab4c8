#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "spnn/common.hpp"
#include "spnn/mask.hpp"
#include "spnn/topology.hpp"

namespace spnn {

namespace fs = std::filesystem;
using json = nlohmann::json;

// On-disk mask bundle: manifest.json plus one Matrix Market coordinate
// pattern file per mask. Masks from pruning conv kernels keep their true
// (4-D) shape in the manifest; the .mtx file stores rows = dim0 and
// cols = product of the remaining dims.
struct MaskBundle {
    std::string generator;             // "radix" | "random" | "pruned"
    json spec = json::object();        // generation parameter echo
    std::vector<index_t> layer_sizes;  // neuron chain when the bundle is one; may be empty
    std::vector<SparsityPattern> masks;
    std::vector<index_t> apply_to;     // prunable-layer ordinals; empty = first masks.size() layers

    LayeredTopology to_layered() const {
        LayeredTopology t{layer_sizes, masks};
        t.validate();
        return t;
    }
};

inline std::pair<index_t, index_t> mask_matrix_dims(const SparsityPattern& m) {
    require(!m.shape.empty(), "mask has empty shape");
    index_t cols = 1;
    for (std::size_t i = 1; i < m.shape.size(); ++i) cols *= m.shape[i];
    return {m.shape[0], cols};
}

inline void write_matrix_market_pattern(const fs::path& path, const SparsityPattern& m) {
    const auto [rows, cols] = mask_matrix_dims(m);
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "%%MatrixMarket matrix coordinate pattern general\n";
    out << rows << " " << cols << " " << m.nnz() << "\n";
    for (index_t i = 0; i < rows; ++i)
        for (index_t j = 0; j < cols; ++j)
            if (m.bits[static_cast<std::size_t>(i * cols + j)]) out << (i + 1) << " " << (j + 1) << "\n";
    if (!out) throw DataError("write failed: " + path.string());
}

// Reads a coordinate pattern file into a mask of the given shape. The header
// dimensions must agree with the shape and the entry count with the header.
inline SparsityPattern read_matrix_market_pattern(const fs::path& path, std::vector<index_t> shape) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
    if (line.find("%%MatrixMarket matrix coordinate pattern") != 0)
        throw DataError(path.string() + ": not a MatrixMarket coordinate pattern file");
    do {
        if (!std::getline(in, line)) throw DataError(path.string() + ": missing size line");
    } while (!line.empty() && line[0] == '%');

    index_t rows = 0, cols = 0, nnz = 0;
    {
        std::istringstream ss(line);
        if (!(ss >> rows >> cols >> nnz)) throw DataError(path.string() + ": malformed size line");
    }
    SparsityPattern m = SparsityPattern::zeros(std::move(shape));
    const auto [want_rows, want_cols] = mask_matrix_dims(m);
    if (rows != want_rows || cols != want_cols)
        throw ShapeError(path.string() + ": header is " + std::to_string(rows) + "x" + std::to_string(cols) +
                         " but manifest shape is " + std::to_string(want_rows) + "x" + std::to_string(want_cols));
    for (index_t e = 0; e < nnz; ++e) {
        index_t i = 0, j = 0;
        if (!(in >> i >> j)) throw DataError(path.string() + ": truncated, expected " + std::to_string(nnz) +
                                             " entries, got " + std::to_string(e));
        if (i < 1 || i > rows || j < 1 || j > cols)
            throw DataError(path.string() + ": entry (" + std::to_string(i) + "," + std::to_string(j) +
                            ") out of range");
        m.bits[static_cast<std::size_t>((i - 1) * cols + (j - 1))] = 1;
    }
    return m;
}

inline void save_mask_bundle(const fs::path& dir, const MaskBundle& bundle) {
    fs::create_directories(dir);
    json manifest;
    manifest["layer_sizes"] = bundle.layer_sizes;
    manifest["generator"] = bundle.generator;
    manifest["spec"] = bundle.spec;
    std::vector<std::string> files;
    std::vector<std::vector<index_t>> shapes;
    for (std::size_t l = 0; l < bundle.masks.size(); ++l) {
        const std::string name = "mask_" + std::to_string(l) + ".mtx";
        write_matrix_market_pattern(dir / name, bundle.masks[l]);
        files.push_back(name);
        shapes.push_back(bundle.masks[l].shape);
    }
    manifest["masks"] = files;
    manifest["mask_shapes"] = shapes;
    if (!bundle.apply_to.empty()) manifest["apply_to"] = bundle.apply_to;
    std::ofstream out(dir / "manifest.json");
    if (!out) throw DataError("cannot write " + (dir / "manifest.json").string());
    out << manifest.dump(2) << "\n";
}

inline MaskBundle load_mask_bundle(const fs::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw DataError("cannot open " + (dir / "manifest.json").string());
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        throw DataError((dir / "manifest.json").string() + ": " + e.what());
    }
    MaskBundle bundle;
    try {
        bundle.layer_sizes = manifest.at("layer_sizes").get<std::vector<index_t>>();
        bundle.generator = manifest.at("generator").get<std::string>();
        bundle.spec = manifest.value("spec", json::object());
        const auto files = manifest.at("masks").get<std::vector<std::string>>();
        const auto shapes = manifest.at("mask_shapes").get<std::vector<std::vector<index_t>>>();
        if (files.size() != shapes.size())
            throw DataError(dir.string() + ": masks/mask_shapes length mismatch");
        for (std::size_t l = 0; l < files.size(); ++l)
            bundle.masks.push_back(read_matrix_market_pattern(dir / files[l], shapes[l]));
        if (manifest.contains("apply_to")) {
            bundle.apply_to = manifest.at("apply_to").get<std::vector<index_t>>();
            if (bundle.apply_to.size() != bundle.masks.size())
                throw DataError(dir.string() + ": apply_to/masks length mismatch");
        }
    } catch (const json::exception& e) {
        throw DataError((dir / "manifest.json").string() + ": " + e.what());
    }
    return bundle;
}

inline void save_topology(const fs::path& dir, const LayeredTopology& t, const std::string& generator,
                          json spec = json::object()) {
    t.validate();
    MaskBundle bundle{generator, std::move(spec), t.layer_sizes, t.masks};
    save_mask_bundle(dir, bundle);
}

inline LayeredTopology load_topology(const fs::path& dir) { return load_mask_bundle(dir).to_layered(); }

}  // namespace spnn
