#include <catch2/catch_amalgamated.hpp>

#include <zlib.h>

#include <fstream>
#include <set>

#include "../support/test_util.hpp"
#include "spnn/dataset.hpp"

using namespace spnn;
using spnn_test::TempDir;

namespace {

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t x) {
    out.push_back(static_cast<std::uint8_t>(x >> 24));
    out.push_back(static_cast<std::uint8_t>(x >> 16));
    out.push_back(static_cast<std::uint8_t>(x >> 8));
    out.push_back(static_cast<std::uint8_t>(x));
}

std::vector<std::uint8_t> idx_images(index_t n, index_t rows, index_t cols, std::uint8_t fill) {
    std::vector<std::uint8_t> bytes;
    put_be32(bytes, 0x00000803u);
    put_be32(bytes, static_cast<std::uint32_t>(n));
    put_be32(bytes, static_cast<std::uint32_t>(rows));
    put_be32(bytes, static_cast<std::uint32_t>(cols));
    bytes.insert(bytes.end(), static_cast<std::size_t>(n * rows * cols), fill);
    return bytes;
}

std::vector<std::uint8_t> idx_labels(const std::vector<std::uint8_t>& labels) {
    std::vector<std::uint8_t> bytes;
    put_be32(bytes, 0x00000801u);
    put_be32(bytes, static_cast<std::uint32_t>(labels.size()));
    bytes.insert(bytes.end(), labels.begin(), labels.end());
    return bytes;
}

void write_file(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_gz(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
    gzFile f = gzopen(p.string().c_str(), "wb");
    REQUIRE(f != nullptr);
    gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
    gzclose(f);
}

}  // namespace

TEST_CASE("idx parsing") {
    SECTION("well-formed pair") {
        TempDir tmp("idx");
        write_file(tmp.path() / "imgs", idx_images(3, 4, 4, 255));
        write_file(tmp.path() / "labels", idx_labels({0, 9, 5}));
        const auto d = load_idx_pair<float>(tmp.path() / "imgs", tmp.path() / "labels");
        CHECK(d.size() == 3);
        CHECK(d.images.dims == std::vector<index_t>{3, 1, 4, 4});
        CHECK(d.labels == std::vector<int>{0, 9, 5});
        // byte 255 standardizes to (1 - mean)/std
        CHECK(d.images.v[0] == Catch::Approx((1.0 - kMnistMean) / kMnistStd));
        CHECK(all_finite(d.images));
    }
    SECTION("bad magic") {
        auto bytes = idx_images(1, 2, 2, 0);
        bytes[3] = 0x07;
        CHECK_THROWS_AS(parse_idx_images<float>(bytes, kMnistMean, kMnistStd, "x"), DataError);
    }
    SECTION("truncated payload") {
        auto bytes = idx_images(2, 3, 3, 1);
        bytes.pop_back();
        CHECK_THROWS_AS(parse_idx_images<float>(bytes, kMnistMean, kMnistStd, "x"), DataError);
    }
    SECTION("label out of range") {
        CHECK_THROWS_AS(parse_idx_labels(idx_labels({3, 17}), "x"), DataError);
    }
    SECTION("image/label count mismatch") {
        TempDir tmp("idx2");
        write_file(tmp.path() / "imgs", idx_images(3, 2, 2, 0));
        write_file(tmp.path() / "labels", idx_labels({1, 2}));
        CHECK_THROWS_AS(load_idx_pair<float>(tmp.path() / "imgs", tmp.path() / "labels"), DataError);
    }
    SECTION("gzip-compressed files load transparently") {
        TempDir tmp("idxgz");
        write_gz(fs::path(tmp.path() / "imgs.gz"), idx_images(2, 3, 3, 128));
        write_gz(fs::path(tmp.path() / "labels.gz"), idx_labels({4, 7}));
        const auto d = load_idx_pair<float>(tmp.path() / "imgs", tmp.path() / "labels");
        CHECK(d.size() == 2);
        CHECK(d.labels == std::vector<int>{4, 7});
    }
    SECTION("missing file") {
        TempDir tmp("idx3");
        CHECK_THROWS_AS(load_idx_pair<float>(tmp.path() / "nope", tmp.path() / "nope2"), DataError);
    }
}

TEST_CASE("cifar parsing") {
    SECTION("single record") {
        std::vector<std::uint8_t> bytes(3073, 0);
        bytes[0] = 7;
        for (std::size_t i = 1; i <= 1024; ++i) bytes[i] = 255;  // red plane saturated
        std::vector<float> pixels;
        std::vector<int> labels;
        parse_cifar_batch<float>(bytes, pixels, labels, "x");
        CHECK(labels == std::vector<int>{7});
        CHECK(pixels.size() == 3072);
        CHECK(pixels[0] == Catch::Approx((1.0 - kCifarMean[0]) / kCifarStd[0]));
        CHECK(pixels[1024] == Catch::Approx((0.0 - kCifarMean[1]) / kCifarStd[1]));
    }
    SECTION("3072 bytes is not a record") {
        std::vector<std::uint8_t> bytes(3072, 0);
        std::vector<float> pixels;
        std::vector<int> labels;
        CHECK_THROWS_AS(parse_cifar_batch<float>(bytes, pixels, labels, "x"), DataError);
    }
    SECTION("bad label byte") {
        std::vector<std::uint8_t> bytes(3073, 0);
        bytes[0] = 11;
        std::vector<float> pixels;
        std::vector<int> labels;
        CHECK_THROWS_AS(parse_cifar_batch<float>(bytes, pixels, labels, "x"), DataError);
    }
    SECTION("directory loader assembles the canonical file set") {
        TempDir tmp("cifar");
        std::vector<std::uint8_t> rec(3073, 0);
        for (int i = 1; i <= 5; ++i) {
            rec[0] = static_cast<std::uint8_t>(i);
            write_file(tmp.path() / ("data_batch_" + std::to_string(i) + ".bin"), rec);
        }
        rec[0] = 9;
        write_file(tmp.path() / "test_batch.bin", rec);
        const auto [train, test] = load_cifar10<float>(tmp.path());
        CHECK(train.size() == 5);
        CHECK(test.size() == 1);
        CHECK(train.images.dims == std::vector<index_t>{5, 3, 32, 32});
        CHECK(test.labels == std::vector<int>{9});
    }
}

TEST_CASE("batch plan") {
    SECTION("10 items, batch 3 -> 3,3,3,1") {
        BatchPlan plan(10, 3, 1);
        REQUIRE(plan.batches_per_epoch() == 4);
        CHECK(plan.batch(0).size() == 3);
        CHECK(plan.batch(1).size() == 3);
        CHECK(plan.batch(2).size() == 3);
        CHECK(plan.batch(3).size() == 1);
    }
    SECTION("same seed, same order") {
        BatchPlan a(50, 7, 42), b(50, 7, 42);
        for (index_t i = 0; i < a.batches_per_epoch(); ++i) {
            const auto ba = a.batch(i);
            const auto bb = b.batch(i);
            CHECK(std::vector<index_t>(ba.begin(), ba.end()) == std::vector<index_t>(bb.begin(), bb.end()));
        }
    }
    SECTION("every epoch covers the dataset exactly once") {
        BatchPlan plan(23, 4, 9);
        for (int epoch = 0; epoch < 3; ++epoch) {
            std::multiset<index_t> seen;
            for (index_t i = 0; i < plan.batches_per_epoch(); ++i)
                for (index_t idx : plan.batch(i)) seen.insert(idx);
            CHECK(seen.size() == 23);
            CHECK(std::set<index_t>(seen.begin(), seen.end()).size() == 23);
            plan.next_epoch();
        }
    }
    SECTION("batch size must be positive") {
        CHECK_THROWS_AS(BatchPlan(5, 0, 1), ShapeError);
    }
}

TEST_CASE("synthetic separable blobs") {
    Rng rng(33);
    const auto d = synthetic_separable<float>(1000, 5, 2, rng);
    REQUIRE(d.size() == 1000);

    SECTION("nearest-centroid classifies almost perfectly") {
        // centroid oracle computed directly from the data
        std::vector<std::vector<double>> centroid(2, std::vector<double>(5, 0.0));
        std::vector<index_t> count(2, 0);
        for (index_t i = 0; i < d.size(); ++i) {
            const int y = d.labels[static_cast<std::size_t>(i)];
            ++count[static_cast<std::size_t>(y)];
            for (index_t j = 0; j < 5; ++j)
                centroid[static_cast<std::size_t>(y)][static_cast<std::size_t>(j)] += d.images.v[static_cast<std::size_t>(i * 5 + j)];
        }
        for (int c = 0; c < 2; ++c)
            for (auto& x : centroid[static_cast<std::size_t>(c)]) x /= static_cast<double>(count[static_cast<std::size_t>(c)]);
        index_t correct = 0;
        for (index_t i = 0; i < d.size(); ++i) {
            double best = 1e30;
            int pick = -1;
            for (int c = 0; c < 2; ++c) {
                double dist = 0.0;
                for (index_t j = 0; j < 5; ++j) {
                    const double diff = d.images.v[static_cast<std::size_t>(i * 5 + j)] - centroid[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)];
                    dist += diff * diff;
                }
                if (dist < best) {
                    best = dist;
                    pick = c;
                }
            }
            if (pick == d.labels[static_cast<std::size_t>(i)]) ++correct;
        }
        CHECK(static_cast<double>(correct) / 1000.0 >= 0.99);
    }
    SECTION("deterministic per seed") {
        Rng a(33);
        const auto again = synthetic_separable<float>(1000, 5, 2, a);
        CHECK(again.images == d.images);
        CHECK(again.labels == d.labels);
    }
    SECTION("labels balanced within one") {
        Rng r(3);
        const auto odd = synthetic_separable<float>(100, 4, 3, r);
        std::vector<int> counts(3, 0);
        for (int y : odd.labels) ++counts[static_cast<std::size_t>(y)];
        const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
        CHECK(*hi - *lo <= 1);
    }
}
