// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major matrix, the only tensor type used in this project.

#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace rhythm {

template <typename T>
struct MatT {
    int rows = 0;
    int cols = 0;
    std::vector<T> a;

    MatT() = default;
    MatT(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, T(0)) {}
    MatT(int r, int c, std::vector<T> data) : rows(r), cols(c), a(std::move(data)) {
        if (a.size() != static_cast<size_t>(r) * c) throw std::invalid_argument("MatT: data size mismatch");
    }

    T& operator()(int i, int j) { return a[static_cast<size_t>(i) * cols + j]; }
    T operator()(int i, int j) const { return a[static_cast<size_t>(i) * cols + j]; }

    T* row_ptr(int i) { return a.data() + static_cast<size_t>(i) * cols; }
    const T* row_ptr(int i) const { return a.data() + static_cast<size_t>(i) * cols; }

    size_t size() const { return a.size(); }
    bool same_shape(const MatT& o) const { return rows == o.rows && cols == o.cols; }

    static MatT zeros(int r, int c) { return MatT(r, c); }
    static MatT full(int r, int c, T v) {
        MatT m(r, c);
        for (auto& x : m.a) x = v;
        return m;
    }
    static MatT identity(int n) {
        MatT m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = T(1);
        return m;
    }
};

using Mat = MatT<double>;

// C = A * B, ikj order.
template <typename T>
MatT<T> matmul(const MatT<T>& A, const MatT<T>& B) {
    if (A.cols != B.rows) throw std::invalid_argument("matmul: inner dims disagree");
    MatT<T> C(A.rows, B.cols);
    for (int i = 0; i < A.rows; ++i) {
        const T* arow = A.row_ptr(i);
        T* crow = C.row_ptr(i);
        for (int k = 0; k < A.cols; ++k) {
            const T aik = arow[k];
            if (aik == T(0)) continue;
            const T* brow = B.row_ptr(k);
            for (int j = 0; j < B.cols; ++j) crow[j] += aik * brow[j];
        }
    }
    return C;
}

// C = A^T * B
template <typename T>
MatT<T> matmul_tn(const MatT<T>& A, const MatT<T>& B) {
    if (A.rows != B.rows) throw std::invalid_argument("matmul_tn: outer dims disagree");
    MatT<T> C(A.cols, B.cols);
    for (int k = 0; k < A.rows; ++k) {
        const T* arow = A.row_ptr(k);
        const T* brow = B.row_ptr(k);
        for (int i = 0; i < A.cols; ++i) {
            const T aki = arow[i];
            if (aki == T(0)) continue;
            T* crow = C.row_ptr(i);
            for (int j = 0; j < B.cols; ++j) crow[j] += aki * brow[j];
        }
    }
    return C;
}

// C = A * B^T
template <typename T>
MatT<T> matmul_nt(const MatT<T>& A, const MatT<T>& B) {
    if (A.cols != B.cols) throw std::invalid_argument("matmul_nt: inner dims disagree");
    MatT<T> C(A.rows, B.rows);
    for (int i = 0; i < A.rows; ++i) {
        const T* arow = A.row_ptr(i);
        T* crow = C.row_ptr(i);
        for (int j = 0; j < B.rows; ++j) {
            const T* brow = B.row_ptr(j);
            T s = T(0);
            for (int k = 0; k < A.cols; ++k) s += arow[k] * brow[k];
            crow[j] = s;
        }
    }
    return C;
}

template <typename T>
MatT<T> transpose(const MatT<T>& A) {
    MatT<T> B(A.cols, A.rows);
    for (int i = 0; i < A.rows; ++i)
        for (int j = 0; j < A.cols; ++j) B(j, i) = A(i, j);
    return B;
}

template <typename T>
bool all_finite(const MatT<T>& A) {
    for (const T& x : A.a)
        if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
}

template <typename T>
double max_abs_diff(const MatT<T>& A, const MatT<T>& B) {
    if (!A.same_shape(B)) throw std::invalid_argument("max_abs_diff: shape mismatch");
    double m = 0;
    for (size_t i = 0; i < A.a.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(A.a[i]) - static_cast<double>(B.a[i])));
    return m;
}

}  // namespace rhythm
