#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "spnn/common.hpp"
#include "spnn/matrix.hpp"
#include "spnn/tensor.hpp"

namespace spnn {

// Binary connectivity pattern over a weight tensor. bit 1 = connection kept,
// bit 0 = weight pinned to zero. Shape must match the tensor it masks.
struct SparsityPattern {
    std::vector<index_t> shape;
    std::vector<std::uint8_t> bits;

    SparsityPattern() = default;
    SparsityPattern(std::vector<index_t> s, std::vector<std::uint8_t> b) : shape(std::move(s)), bits(std::move(b)) {
        require(static_cast<index_t>(bits.size()) == shape_numel(shape), "mask bit count does not match shape");
    }

    static SparsityPattern ones(std::vector<index_t> s) {
        const auto n = static_cast<std::size_t>(shape_numel(s));
        return SparsityPattern(std::move(s), std::vector<std::uint8_t>(n, 1));
    }
    static SparsityPattern zeros(std::vector<index_t> s) {
        const auto n = static_cast<std::size_t>(shape_numel(s));
        return SparsityPattern(std::move(s), std::vector<std::uint8_t>(n, 0));
    }

    index_t size() const { return static_cast<index_t>(bits.size()); }

    index_t nnz() const {
        index_t n = 0;
        for (auto b : bits) n += b ? 1 : 0;
        return n;
    }

    // Fraction of absent connections, in [0,1].
    double sparsity() const {
        if (bits.empty()) return 0.0;
        return 1.0 - static_cast<double>(nnz()) / static_cast<double>(size());
    }

    bool operator==(const SparsityPattern&) const = default;
};

// True when every kept bit of `after` was kept in `before` (masks only shrink).
inline bool is_subpattern(const SparsityPattern& after, const SparsityPattern& before) {
    if (after.shape != before.shape) return false;
    for (std::size_t i = 0; i < after.bits.size(); ++i)
        if (after.bits[i] && !before.bits[i]) return false;
    return true;
}

template <typename T>
void apply_mask_inplace(std::span<T> w, const SparsityPattern& m) {
    require(w.size() == m.bits.size(), "apply_mask: size mismatch");
    for (std::size_t i = 0; i < w.size(); ++i)
        if (!m.bits[i]) w[i] = T{0};
}

template <typename T>
void apply_mask(Tensor<T>& w, const SparsityPattern& m) {
    require(w.dims == m.shape, "apply_mask: shape " + shape_str(w.dims) + " vs mask " + shape_str(m.shape));
    apply_mask_inplace(std::span<T>(w.v), m);
}

template <typename T>
void apply_mask(Matrix<T>& w, const SparsityPattern& m) {
    require(m.shape.size() == 2 && m.shape[0] == w.rows && m.shape[1] == w.cols,
            "apply_mask: matrix/mask shape mismatch");
    apply_mask_inplace(std::span<T>(w.v), m);
}

template <typename T>
Tensor<T> masked(const Tensor<T>& w, const SparsityPattern& m) {
    Tensor<T> out = w;
    apply_mask(out, m);
    return out;
}

}  // namespace spnn
