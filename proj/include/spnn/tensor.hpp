#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "spnn/common.hpp"

namespace spnn {

inline std::string shape_str(std::span<const index_t> dims) {
    std::string s = "(";
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(dims[i]);
    }
    return s + ")";
}

inline index_t shape_numel(std::span<const index_t> dims) {
    index_t n = 1;
    for (index_t d : dims) {
        require(d >= 0, "negative dimension in shape " + shape_str(dims));
        n *= d;
    }
    return n;
}

// Row-major N-D value container. Rank 2 for fully-connected weights and
// flattened activations, rank 4 for conv kernels and image batches.
template <typename T>
struct Tensor {
    std::vector<index_t> dims;
    std::vector<T> v;

    Tensor() = default;
    explicit Tensor(std::vector<index_t> d) : dims(std::move(d)), v(static_cast<std::size_t>(shape_numel(dims)), T{}) {}
    Tensor(std::vector<index_t> d, std::vector<T> values) : dims(std::move(d)), v(std::move(values)) {
        require(static_cast<index_t>(v.size()) == shape_numel(dims),
                "value count does not match shape " + shape_str(dims));
    }

    index_t size() const { return static_cast<index_t>(v.size()); }
    index_t rank() const { return static_cast<index_t>(dims.size()); }
    index_t dim(index_t i) const { return dims[static_cast<std::size_t>(i)]; }

    T* data() { return v.data(); }
    const T* data() const { return v.data(); }

    void fill(T x) { std::fill(v.begin(), v.end(), x); }

    Tensor reshaped(std::vector<index_t> d) const {
        require(shape_numel(d) == size(), "reshape " + shape_str(dims) + " -> " + shape_str(d));
        return Tensor(std::move(d), v);
    }

    bool operator==(const Tensor&) const = default;
};

template <typename T>
bool all_finite(const Tensor<T>& t) {
    for (T x : t.v)
        if (!is_finite(x)) return false;
    return true;
}

template <typename T>
double max_rel_error(std::span<const T> a, std::span<const T> b) {
    require(a.size() == b.size(), "max_rel_error: length mismatch");
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = static_cast<double>(a[i]);
        const double db = static_cast<double>(b[i]);
        const double denom = std::max({std::abs(da), std::abs(db), 1e-12});
        worst = std::max(worst, std::abs(da - db) / denom);
    }
    return worst;
}

}  // namespace spnn
