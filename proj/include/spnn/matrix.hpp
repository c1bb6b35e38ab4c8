#pragma once

#include <cstring>
#include <vector>

#include "spnn/common.hpp"
#include "spnn/tensor.hpp"

namespace spnn {

// Dense row-major matrix. Kept separate from Tensor because the sparse
// conversions and the matmul contracts are two-dimensional by nature.
template <typename T>
struct Matrix {
    index_t rows = 0;
    index_t cols = 0;
    std::vector<T> v;

    Matrix() = default;
    Matrix(index_t r, index_t c) : rows(r), cols(c), v(static_cast<std::size_t>(r * c), T{}) {
        require(r >= 0 && c >= 0, "negative matrix dimension");
    }
    Matrix(index_t r, index_t c, std::vector<T> values) : rows(r), cols(c), v(std::move(values)) {
        require(static_cast<index_t>(v.size()) == r * c, "matrix value count mismatch");
    }

    T& at(index_t i, index_t j) { return v[static_cast<std::size_t>(i * cols + j)]; }
    const T& at(index_t i, index_t j) const { return v[static_cast<std::size_t>(i * cols + j)]; }

    index_t size() const { return rows * cols; }
    T* data() { return v.data(); }
    const T* data() const { return v.data(); }

    static Matrix identity(index_t n) {
        Matrix m(n, n);
        for (index_t i = 0; i < n; ++i) m.at(i, i) = T{1};
        return m;
    }

    Tensor<T> to_tensor() const { return Tensor<T>({rows, cols}, v); }

    bool operator==(const Matrix&) const = default;
};

// c += a (m x k) * b (k x n). i-k-j loop order: the k-accumulation order per
// output element is fixed and ascending, which keeps results bit-reproducible
// and still lets the inner loop vectorize.
template <typename T>
void matmul_accum(const T* a, index_t m, index_t k, const T* b, index_t n, T* c) {
    for (index_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (index_t kk = 0; kk < k; ++kk) {
            const T av = arow[kk];
            const T* brow = b + kk * n;
            for (index_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
Matrix<T> dense_matmul(const Matrix<T>& a, const Matrix<T>& b) {
    require(a.cols == b.rows, "dense_matmul: inner dimensions " + std::to_string(a.cols) + " vs " +
                                  std::to_string(b.rows));
    Matrix<T> c(a.rows, b.cols);
    matmul_accum(a.data(), a.rows, a.cols, b.data(), b.cols, c.data());
    return c;
}

template <typename T>
Matrix<T> transpose(const Matrix<T>& a) {
    Matrix<T> t(a.cols, a.rows);
    for (index_t i = 0; i < a.rows; ++i)
        for (index_t j = 0; j < a.cols; ++j) t.at(j, i) = a.at(i, j);
    return t;
}

// out (m x n) = a (m x k) * transpose-of-b where b is given row-major (n x k).
// Materializes b^T once so the inner loops stay in the vectorizable i-k-j form.
template <typename T>
void matmul_bt_accum(const T* a, index_t m, index_t k, const T* b_nk, index_t n, T* c) {
    std::vector<T> bt(static_cast<std::size_t>(k * n));
    for (index_t j = 0; j < n; ++j)
        for (index_t kk = 0; kk < k; ++kk) bt[static_cast<std::size_t>(kk * n + j)] = b_nk[j * k + kk];
    matmul_accum(a, m, k, bt.data(), n, c);
}

// c (k x n) += a^T * b where a is (m x k) and b is (m x n), both row-major.
// Accumulation over m in ascending order.
template <typename T>
void matmul_at_accum(const T* a, index_t m, index_t k, const T* b, index_t n, T* c) {
    for (index_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        const T* brow = b + i * n;
        for (index_t kk = 0; kk < k; ++kk) {
            const T av = arow[kk];
            T* crow = c + kk * n;
            for (index_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace spnn
