#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace spnn {

using index_t = std::int64_t;

// Error taxonomy maps onto CLI exit codes: config 2, data 3, numeric 4.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& msg) : Error(msg) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}

template <typename T>
bool is_finite(T x) {
    return std::isfinite(static_cast<double>(x));
}

}  // namespace spnn
