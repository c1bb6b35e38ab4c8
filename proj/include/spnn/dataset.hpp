#pragma once

#include <zlib.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "spnn/common.hpp"
#include "spnn/rng.hpp"
#include "spnn/tensor.hpp"

namespace spnn {

namespace fs = std::filesystem;

// Standardization constants, fixed here rather than recomputed per run.
inline constexpr double kMnistMean = 0.1307;
inline constexpr double kMnistStd = 0.3081;
inline constexpr std::array<double, 3> kCifarMean{0.4914, 0.4822, 0.4465};
inline constexpr std::array<double, 3> kCifarStd{0.2470, 0.2435, 0.2616};

template <typename T>
struct Dataset {
    Tensor<T> images;        // (n, c, h, w) or (n, features)
    std::vector<int> labels; // in [0, 10)

    index_t size() const { return images.rank() == 0 ? 0 : images.dim(0); }

    std::vector<index_t> sample_dims() const {
        return {images.dims.begin() + 1, images.dims.end()};
    }

    // Gather the given samples into a batch tensor + label vector.
    std::pair<Tensor<T>, std::vector<int>> gather(std::span<const index_t> idx) const {
        std::vector<index_t> dims = images.dims;
        dims[0] = static_cast<index_t>(idx.size());
        Tensor<T> x(dims);
        const index_t stride = images.size() / std::max<index_t>(size(), 1);
        std::vector<int> y(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            const index_t s = idx[i];
            require(s >= 0 && s < size(), "gather: index out of range");
            std::copy_n(images.data() + s * stride, stride, x.data() + static_cast<index_t>(i) * stride);
            y[i] = labels[static_cast<std::size_t>(s)];
        }
        return {std::move(x), std::move(y)};
    }
};

namespace detail {

// gzopen reads gzip and plain files alike; we also accept a ".gz" sibling so
// datasets can be stored compressed.
inline std::vector<std::uint8_t> read_bytes_auto(const fs::path& path) {
    fs::path actual = path;
    if (!fs::exists(actual)) {
        const fs::path gz = path.string() + ".gz";
        if (fs::exists(gz))
            actual = gz;
        else
            throw DataError("dataset file not found: " + path.string() + " (nor .gz)");
    }
    gzFile f = gzopen(actual.string().c_str(), "rb");
    if (!f) throw DataError("cannot open " + actual.string());
    std::vector<std::uint8_t> bytes;
    std::array<std::uint8_t, 1 << 16> buf;
    int got = 0;
    while ((got = gzread(f, buf.data(), buf.size())) > 0) bytes.insert(bytes.end(), buf.begin(), buf.begin() + got);
    const bool bad = got < 0;
    gzclose(f);
    if (bad) throw DataError("decompression failed: " + actual.string());
    return bytes;
}

inline std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t off) {
    if (off + 4 > b.size()) throw DataError("truncated header");
    return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
           std::uint32_t{b[off + 3]};
}

}  // namespace detail

// IDX image file: big-endian magic 0x00000803, count, rows, cols, then bytes.
template <typename T>
Tensor<T> parse_idx_images(const std::vector<std::uint8_t>& bytes, double mean, double stddev,
                           const std::string& what) {
    if (bytes.size() < 16) throw DataError(what + ": truncated IDX header");
    const auto magic = detail::read_be32(bytes, 0);
    if (magic != 0x00000803u) throw DataError(what + ": bad IDX image magic");
    const index_t n = detail::read_be32(bytes, 4);
    const index_t rows = detail::read_be32(bytes, 8);
    const index_t cols = detail::read_be32(bytes, 12);
    if (bytes.size() != 16 + static_cast<std::size_t>(n * rows * cols))
        throw DataError(what + ": IDX image payload size mismatch");
    Tensor<T> images({n, 1, rows, cols});
    const double inv = 1.0 / 255.0;
    for (index_t i = 0; i < n * rows * cols; ++i)
        images.v[static_cast<std::size_t>(i)] =
            static_cast<T>((static_cast<double>(bytes[16 + static_cast<std::size_t>(i)]) * inv - mean) / stddev);
    return images;
}

// IDX label file: big-endian magic 0x00000801, count, then label bytes.
inline std::vector<int> parse_idx_labels(const std::vector<std::uint8_t>& bytes, const std::string& what) {
    if (bytes.size() < 8) throw DataError(what + ": truncated IDX header");
    const auto magic = detail::read_be32(bytes, 0);
    if (magic != 0x00000801u) throw DataError(what + ": bad IDX label magic");
    const index_t n = detail::read_be32(bytes, 4);
    if (bytes.size() != 8 + static_cast<std::size_t>(n)) throw DataError(what + ": IDX label payload size mismatch");
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        labels[i] = bytes[8 + i];
        if (labels[i] < 0 || labels[i] >= 10) throw DataError(what + ": label outside [0,10)");
    }
    return labels;
}

template <typename T>
Dataset<T> load_idx_pair(const fs::path& images_path, const fs::path& labels_path) {
    Dataset<T> d;
    d.images = parse_idx_images<T>(detail::read_bytes_auto(images_path), kMnistMean, kMnistStd,
                                   images_path.filename().string());
    d.labels = parse_idx_labels(detail::read_bytes_auto(labels_path), labels_path.filename().string());
    if (d.size() != static_cast<index_t>(d.labels.size()))
        throw DataError("image/label count mismatch: " + std::to_string(d.size()) + " vs " +
                        std::to_string(d.labels.size()));
    return d;
}

template <typename T>
std::pair<Dataset<T>, Dataset<T>> load_mnist(const fs::path& dir) {
    auto train = load_idx_pair<T>(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
    auto test = load_idx_pair<T>(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte");
    return {std::move(train), std::move(test)};
}

// CIFAR-10 binary batch: records of 3073 bytes, 1 label + 3072 pixels in
// R,G,B planes of 32x32.
template <typename T>
void parse_cifar_batch(const std::vector<std::uint8_t>& bytes, std::vector<T>& pixels, std::vector<int>& labels,
                       const std::string& what) {
    constexpr std::size_t kRecord = 3073;
    if (bytes.size() % kRecord != 0)
        throw DataError(what + ": size " + std::to_string(bytes.size()) + " is not a multiple of 3073");
    const std::size_t count = bytes.size() / kRecord;
    for (std::size_t r = 0; r < count; ++r) {
        const std::uint8_t* rec = bytes.data() + r * kRecord;
        if (rec[0] >= 10) throw DataError(what + ": bad label byte " + std::to_string(rec[0]));
        labels.push_back(rec[0]);
        for (int c = 0; c < 3; ++c) {
            const double mean = kCifarMean[static_cast<std::size_t>(c)];
            const double inv_std = 1.0 / kCifarStd[static_cast<std::size_t>(c)];
            const std::uint8_t* plane = rec + 1 + c * 1024;
            for (int p = 0; p < 1024; ++p)
                pixels.push_back(static_cast<T>((static_cast<double>(plane[p]) / 255.0 - mean) * inv_std));
        }
    }
}

template <typename T>
Dataset<T> load_cifar_files(const std::vector<fs::path>& files) {
    std::vector<T> pixels;
    std::vector<int> labels;
    for (const auto& f : files)
        parse_cifar_batch<T>(detail::read_bytes_auto(f), pixels, labels, f.filename().string());
    Dataset<T> d;
    d.images = Tensor<T>({static_cast<index_t>(labels.size()), 3, 32, 32}, std::move(pixels));
    d.labels = std::move(labels);
    return d;
}

template <typename T>
std::pair<Dataset<T>, Dataset<T>> load_cifar10(const fs::path& dir) {
    std::vector<fs::path> train_files;
    for (int i = 1; i <= 5; ++i) train_files.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
    auto train = load_cifar_files<T>(train_files);
    auto test = load_cifar_files<T>({dir / "test_batch.bin"});
    return {std::move(train), std::move(test)};
}

// Gaussian blobs with centers 6 standard deviations apart along the first
// axis: linearly separable with overwhelming probability.
template <typename T>
Dataset<T> synthetic_separable(index_t n, index_t dims, int classes, Rng& rng) {
    require(classes >= 2, "synthetic_separable: need >= 2 classes");
    require(dims >= 1 && n >= 0, "synthetic_separable: bad size");
    Dataset<T> d;
    d.images = Tensor<T>({n, dims});
    d.labels.resize(static_cast<std::size_t>(n));
    for (index_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(i % classes);
        d.labels[static_cast<std::size_t>(i)] = label;
        T* row = d.images.data() + i * dims;
        for (index_t j = 0; j < dims; ++j) row[j] = static_cast<T>(rng.normal());
        row[0] += static_cast<T>(6.0 * label);
    }
    // mix the round-robin ordering
    std::vector<index_t> perm(static_cast<std::size_t>(n));
    for (index_t i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
    rng.shuffle(perm);
    auto [x, y] = d.gather(perm);
    d.images = std::move(x);
    d.labels = std::move(y);
    return d;
}

// Seeded epoch shuffling; the last partial batch is kept.
class BatchPlan {
public:
    BatchPlan(index_t n, index_t batch_size, std::uint64_t seed)
        : n_(n), batch_(batch_size), rng_(seed), order_(static_cast<std::size_t>(n)) {
        require(batch_size >= 1, "batches: batch_size must be >= 1");
        for (index_t i = 0; i < n; ++i) order_[static_cast<std::size_t>(i)] = i;
        reshuffle();
    }

    index_t batches_per_epoch() const { return (n_ + batch_ - 1) / batch_; }

    // Indices for batch b of the current epoch.
    std::span<const index_t> batch(index_t b) const {
        const index_t lo = b * batch_;
        const index_t hi = std::min(n_, lo + batch_);
        return {order_.data() + lo, static_cast<std::size_t>(hi - lo)};
    }

    void next_epoch() { reshuffle(); }

private:
    void reshuffle() { rng_.shuffle(order_); }

    index_t n_;
    index_t batch_;
    Rng rng_;
    std::vector<index_t> order_;
};

}  // namespace spnn
