#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "spnn/common.hpp"
#include "spnn/rng.hpp"
#include "spnn/tensor.hpp"

namespace spnn {

enum class InitScheme { HeNormal, GlorotUniform };

inline InitScheme init_scheme_from_string(const std::string& s) {
    if (s == "he-normal") return InitScheme::HeNormal;
    if (s == "glorot-uniform") return InitScheme::GlorotUniform;
    throw ConfigError("unknown init scheme: " + s);
}

// fan_in/fan_out: rank 2 is (in, out); rank 4 kernels are (out, in, kh, kw)
// with fan_in = in*kh*kw and fan_out = out*kh*kw.
inline std::pair<index_t, index_t> fan_in_out(std::span<const index_t> shape) {
    require(!shape.empty(), "init_weights: empty shape");
    if (shape.size() == 1) return {shape[0], shape[0]};
    if (shape.size() == 2) return {shape[0], shape[1]};
    if (shape.size() == 4) {
        const index_t rf = shape[2] * shape[3];
        return {shape[1] * rf, shape[0] * rf};
    }
    throw ShapeError("init_weights: unsupported rank " + std::to_string(shape.size()));
}

template <typename T>
Tensor<T> init_weights(std::vector<index_t> shape, Rng& rng, InitScheme scheme) {
    require(!shape.empty(), "init_weights: empty shape");
    const auto [fan_in, fan_out] = fan_in_out(shape);
    Tensor<T> w(std::move(shape));
    if (scheme == InitScheme::HeNormal) {
        const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (auto& x : w.v) x = static_cast<T>(stddev * rng.normal());
    } else {
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        for (auto& x : w.v) x = static_cast<T>(rng.uniform(-limit, limit));
    }
    return w;
}

}  // namespace spnn
