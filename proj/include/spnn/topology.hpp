#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "spnn/common.hpp"
#include "spnn/mask.hpp"
#include "spnn/matrix.hpp"
#include "spnn/rng.hpp"

namespace spnn {

// Mixed radix system (N_1..N_L) plus Kronecker block sizes (B_1..B_{L+1}).
struct RadixSpec {
    std::vector<index_t> radices;
    std::vector<index_t> blocks;

    void validate() const {
        require(!radices.empty(), "radix spec: need at least one radix");
        require(blocks.size() == radices.size() + 1,
                "radix spec: need len(blocks) == len(radices)+1, got " + std::to_string(blocks.size()) +
                    " blocks for " + std::to_string(radices.size()) + " radices");
        for (index_t n : radices) require(n >= 1, "radix spec: radices must be >= 1");
        for (index_t b : blocks) require(b >= 1, "radix spec: blocks must be >= 1");
    }

    index_t radix_product() const {
        index_t p = 1;
        for (index_t n : radices) p *= n;
        return p;
    }
};

// A chain of neuron layers with one connectivity mask per adjacent pair.
// masks[l] has shape layer_sizes[l] x layer_sizes[l+1].
struct LayeredTopology {
    std::vector<index_t> layer_sizes;
    std::vector<SparsityPattern> masks;

    void validate() const {
        require(layer_sizes.size() == masks.size() + 1, "topology: len(masks) must be len(layer_sizes)-1");
        for (std::size_t l = 0; l < masks.size(); ++l) {
            require(masks[l].shape.size() == 2, "topology: masks must be 2-D");
            require(masks[l].shape[0] == layer_sizes[l] && masks[l].shape[1] == layer_sizes[l + 1],
                    "topology: mask " + std::to_string(l) + " shape mismatch");
        }
    }

    std::vector<double> layer_sparsities() const {
        std::vector<double> out;
        out.reserve(masks.size());
        for (const auto& m : masks) out.push_back(m.sparsity());
        return out;
    }

    // 1 - total kept connections / total possible connections.
    double overall_sparsity() const {
        index_t nnz = 0, total = 0;
        for (const auto& m : masks) {
            nnz += m.nnz();
            total += m.size();
        }
        return total == 0 ? 0.0 : 1.0 - static_cast<double>(nnz) / static_cast<double>(total);
    }

    bool operator==(const LayeredTopology&) const = default;
};

namespace detail {

// Digits are least-significant first: digit j of u is (u / prod_{i<j} N_i) % N_j.
inline std::vector<index_t> radix_strides(const std::vector<index_t>& radices) {
    std::vector<index_t> strides(radices.size());
    index_t s = 1;
    for (std::size_t j = 0; j < radices.size(); ++j) {
        strides[j] = s;
        s *= radices[j];
    }
    return strides;
}

}  // namespace detail

// Mixed-radix Kronecker topology. The base graph on L+1 layers of prod(N)
// neurons connects u in layer l-1 to v in layer l iff their digit expansions
// agree everywhere except possibly digit l; each mask is then expanded by an
// all-ones Kronecker block J(B_l, B_{l+1}). Per-layer density is N_l/prod(N)
// regardless of the block sizes.
inline LayeredTopology radix_net(const RadixSpec& spec, index_t max_mask_entries = index_t{1} << 24) {
    spec.validate();
    const auto& radices = spec.radices;
    const auto& blocks = spec.blocks;
    const std::size_t depth = radices.size();
    const index_t nstar = spec.radix_product();
    const auto strides = detail::radix_strides(radices);

    LayeredTopology topo;
    topo.layer_sizes.reserve(depth + 1);
    for (std::size_t l = 0; l <= depth; ++l) topo.layer_sizes.push_back(nstar * blocks[l]);

    for (std::size_t l = 0; l < depth; ++l) {
        const index_t rows = nstar * blocks[l];
        const index_t cols = nstar * blocks[l + 1];
        require(rows * cols <= max_mask_entries,
                "radix_net: mask " + std::to_string(l) + " would hold " + std::to_string(rows * cols) +
                    " entries (limit " + std::to_string(max_mask_entries) + ")");
        SparsityPattern mask = SparsityPattern::zeros({rows, cols});
        const index_t bl = blocks[l];
        const index_t bl1 = blocks[l + 1];
        const index_t stride = strides[l];
        const index_t radix = radices[l];
        for (index_t u = 0; u < nstar; ++u) {
            const index_t digit = (u / stride) % radix;
            const index_t base = u - digit * stride;  // u with digit l cleared
            for (index_t r = 0; r < radix; ++r) {
                const index_t vtx = base + r * stride;
                for (index_t a = 0; a < bl; ++a) {
                    const index_t row = u * bl + a;
                    std::uint8_t* dst = mask.bits.data() + row * cols + vtx * bl1;
                    for (index_t b = 0; b < bl1; ++b) dst[b] = 1;
                }
            }
        }
        topo.masks.push_back(std::move(mask));
    }
    return topo;
}

// Integer product of the 0/1 masks; entry (i,j) counts distinct paths from
// input neuron i to output neuron j.
inline Matrix<std::int64_t> path_count_matrix(const LayeredTopology& t) {
    t.validate();
    require(!t.masks.empty(), "path_count_matrix: need at least one mask");
    auto as_int = [](const SparsityPattern& m) {
        Matrix<std::int64_t> out(m.shape[0], m.shape[1]);
        for (std::size_t i = 0; i < m.bits.size(); ++i) out.v[i] = m.bits[i];
        return out;
    };
    Matrix<std::int64_t> acc = as_int(t.masks[0]);
    for (std::size_t l = 1; l < t.masks.size(); ++l) acc = dense_matmul(acc, as_int(t.masks[l]));
    return acc;
}

inline bool is_fully_path_connected(const LayeredTopology& t) {
    const auto counts = path_count_matrix(t);
    for (auto c : counts.v)
        if (c <= 0) return false;
    return true;
}

// Each connection kept independently with probability 1-s.
inline SparsityPattern random_mask(index_t rows, index_t cols, double s, Rng& rng) {
    require(s >= 0.0 && s <= 1.0, "random_mask: sparsity must be in [0,1]");
    SparsityPattern m = SparsityPattern::zeros({rows, cols});
    const double keep = 1.0 - s;
    for (auto& bit : m.bits) bit = rng.next_double() < keep ? 1 : 0;
    return m;
}

// Removes the k highest-index input neurons (drops the last k rows of mask 0).
inline LayeredTopology trim_inputs(const LayeredTopology& t, index_t k) {
    t.validate();
    require(!t.masks.empty(), "trim_inputs: empty topology");
    require(k >= 0 && k < t.layer_sizes[0],
            "trim_inputs: k=" + std::to_string(k) + " must be < first layer size " +
                std::to_string(t.layer_sizes[0]));
    LayeredTopology out = t;
    const index_t rows = t.layer_sizes[0] - k;
    const index_t cols = t.masks[0].shape[1];
    out.layer_sizes[0] = rows;
    out.masks[0].shape[0] = rows;
    out.masks[0].bits.resize(static_cast<std::size_t>(rows * cols));
    return out;
}

enum class ScaleMode { FixedConnections, FixedNeurons };

struct ScalePlan {
    std::vector<index_t> layer_sizes;
    std::vector<double> layer_sparsity;
};

// fixed-connections: hidden layers grow by `factor`, per-layer sparsity chosen
// so the expected connection count per layer matches the dense baseline.
// fixed-neurons: sizes stay, every layer gets s = 1 - 1/factor.
inline ScalePlan scale_plan(const std::vector<index_t>& base_sizes, ScaleMode mode, double factor) {
    require(base_sizes.size() >= 2, "scale_plan: need at least two layers");
    require(factor > 0.0, "scale_plan: factor must be positive");
    ScalePlan plan;
    if (mode == ScaleMode::FixedConnections) {
        plan.layer_sizes = base_sizes;
        for (std::size_t i = 1; i + 1 < base_sizes.size(); ++i)
            plan.layer_sizes[i] = static_cast<index_t>(std::llround(static_cast<double>(base_sizes[i]) * factor));
        for (std::size_t l = 0; l + 1 < base_sizes.size(); ++l) {
            const double dense = static_cast<double>(base_sizes[l]) * static_cast<double>(base_sizes[l + 1]);
            const double scaled = static_cast<double>(plan.layer_sizes[l]) * static_cast<double>(plan.layer_sizes[l + 1]);
            const double s = 1.0 - dense / scaled;
            require(s >= 0.0 && s <= 1.0, "scale_plan: layer " + std::to_string(l) + " sparsity " +
                                              std::to_string(s) + " outside [0,1]");
            plan.layer_sparsity.push_back(s);
        }
    } else {
        plan.layer_sizes = base_sizes;
        const double s = 1.0 - 1.0 / factor;
        require(s >= 0.0 && s <= 1.0, "scale_plan: sparsity " + std::to_string(s) + " outside [0,1]");
        plan.layer_sparsity.assign(base_sizes.size() - 1, s);
    }
    return plan;
}

}  // namespace spnn
