#pragma once

#include <cmath>
#include <vector>

#include "spnn/common.hpp"
#include "spnn/matrix.hpp"

namespace spnn {

// Compressed sparse row storage. Invariants: row_ptr non-decreasing with
// row_ptr[0] = 0 and row_ptr[rows] = nnz; column indices strictly increasing
// within a row; no explicitly stored zeros.
template <typename T>
struct CsrMatrix {
    index_t rows = 0;
    index_t cols = 0;
    std::vector<index_t> row_ptr{0};
    std::vector<index_t> col_idx;
    std::vector<T> values;

    index_t nnz() const { return static_cast<index_t>(values.size()); }

    void validate() const {
        require(rows >= 0 && cols >= 0, "csr: negative dimension");
        require(static_cast<index_t>(row_ptr.size()) == rows + 1, "csr: row_ptr length must be rows+1");
        require(row_ptr.front() == 0, "csr: row_ptr[0] must be 0");
        require(row_ptr.back() == nnz(), "csr: row_ptr[rows] must equal nnz");
        require(col_idx.size() == values.size(), "csr: col_idx/values length mismatch");
        for (index_t r = 0; r < rows; ++r) {
            require(row_ptr[r] <= row_ptr[r + 1], "csr: row_ptr must be non-decreasing");
            for (index_t p = row_ptr[r]; p < row_ptr[r + 1]; ++p) {
                require(col_idx[p] >= 0 && col_idx[p] < cols, "csr: column index out of range");
                if (p > row_ptr[r]) require(col_idx[p - 1] < col_idx[p], "csr: columns must increase within a row");
                require(values[p] != T{0}, "csr: explicit zero stored");
            }
        }
    }
};

// Drops entries with |value| <= tol. At tol 0 the round trip through
// csr_to_dense is exact.
template <typename T>
CsrMatrix<T> csr_from_dense(const T* d, index_t rows, index_t cols, T tol) {
    require(tol >= T{0}, "csr_from_dense: tol must be >= 0");
    CsrMatrix<T> m;
    m.rows = rows;
    m.cols = cols;
    m.row_ptr.assign(static_cast<std::size_t>(rows) + 1, 0);
    for (index_t i = 0; i < rows; ++i) {
        for (index_t j = 0; j < cols; ++j) {
            const T x = d[i * cols + j];
            if (std::abs(static_cast<double>(x)) <= static_cast<double>(tol)) continue;
            m.col_idx.push_back(j);
            m.values.push_back(x);
        }
        m.row_ptr[static_cast<std::size_t>(i) + 1] = m.nnz();
    }
    return m;
}

template <typename T>
CsrMatrix<T> csr_from_dense(const Matrix<T>& d, T tol) {
    return csr_from_dense(d.data(), d.rows, d.cols, tol);
}

template <typename T>
Matrix<T> csr_to_dense(const CsrMatrix<T>& m) {
    m.validate();
    Matrix<T> d(m.rows, m.cols);
    for (index_t i = 0; i < m.rows; ++i)
        for (index_t p = m.row_ptr[i]; p < m.row_ptr[i + 1]; ++p) d.at(i, m.col_idx[p]) = m.values[p];
    return d;
}

// c (m x n) = a (sparse, m x k) * b (dense, k x n). Row-wise accumulation in
// ascending stored order; inner loop runs over contiguous rows of b.
template <typename T>
void spmm_accum(const CsrMatrix<T>& a, const T* b, index_t n, T* c) {
    for (index_t i = 0; i < a.rows; ++i) {
        T* crow = c + i * n;
        for (index_t p = a.row_ptr[i]; p < a.row_ptr[i + 1]; ++p) {
            const T av = a.values[p];
            const T* brow = b + a.col_idx[p] * n;
            for (index_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
Matrix<T> spmm(const CsrMatrix<T>& a, const Matrix<T>& b) {
    require(a.cols == b.rows,
            "spmm: inner dimensions " + std::to_string(a.cols) + " vs " + std::to_string(b.rows));
    Matrix<T> c(a.rows, b.cols);
    spmm_accum(a, b.data(), b.cols, c.data());
    return c;
}

// c (m x n) += x (dense, m x k) * w (sparse, k x n). This is the orientation a
// row-major activation batch wants; k is the CSR row axis.
template <typename T>
void matmul_dense_csr_accum(const T* x, index_t m, index_t k, const CsrMatrix<T>& w, T* c) {
    require(w.rows == k, "dense*csr: inner dimension mismatch");
    const index_t n = w.cols;
    for (index_t i = 0; i < m; ++i) {
        const T* xrow = x + i * k;
        T* crow = c + i * n;
        for (index_t kk = 0; kk < k; ++kk) {
            const T xv = xrow[kk];
            if (xv == T{0}) continue;
            for (index_t p = w.row_ptr[kk]; p < w.row_ptr[kk + 1]; ++p) crow[w.col_idx[p]] += xv * w.values[p];
        }
    }
}

}  // namespace spnn
