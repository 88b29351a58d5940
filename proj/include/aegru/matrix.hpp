#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "aegru/errors.hpp"
#include "aegru/rng.hpp"

// Dense row-major matrix of doubles plus the elementwise and product
// kernels the rest of the toolkit is built on. All training math stays in
// 64-bit floats; narrower types appear only in file formats and footprint
// accounting.

namespace aegru {

class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), elems_(rows * cols, 0.0) {}

    static Matrix filled(std::size_t rows, std::size_t cols, double v) {
        Matrix m(rows, cols);
        for (auto& e : m.elems_) e = v;
        return m;
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        const std::size_t r = rows.size();
        const std::size_t c = r == 0 ? 0 : rows.begin()->size();
        Matrix m(r, c);
        std::size_t i = 0;
        for (const auto& row : rows) {
            if (row.size() != c) throw DimensionError("from_rows: ragged initializer");
            std::size_t j = 0;
            for (double v : row) m(i, j++) = v;
            ++i;
        }
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return elems_.size(); }
    bool empty() const { return elems_.empty(); }

    double& operator()(std::size_t i, std::size_t j) { return elems_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return elems_[i * cols_ + j]; }

    double* row_ptr(std::size_t i) { return elems_.data() + i * cols_; }
    const double* row_ptr(std::size_t i) const { return elems_.data() + i * cols_; }

    double* data() { return elems_.data(); }
    const double* data() const { return elems_.data(); }

    double& at_flat(std::size_t k) { return elems_[k]; }
    double at_flat(std::size_t k) const { return elems_[k]; }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    std::string shape_str() const {
        return std::to_string(rows_) + "x" + std::to_string(cols_);
    }

    friend bool operator==(const Matrix& a, const Matrix& b) = default;

private:
    std::size_t rows_ = 0, cols_ = 0;
    std::vector<double> elems_;
};

namespace detail {
inline void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (!a.same_shape(b))
        throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() +
                             " vs " + b.shape_str());
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Products. The accumulate variants are the hot kernels; they keep the inner
// loop over contiguous output rows so the compiler can vectorize it.

// out += a * b
inline void matmul_acc(Matrix& out, const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows())
        throw DimensionError("matmul: inner dimensions disagree, " + a.shape_str() +
                             " * " + b.shape_str());
    if (out.rows() != a.rows() || out.cols() != b.cols())
        throw DimensionError("matmul: output shape " + out.shape_str() +
                             " does not fit " + a.shape_str() + " * " + b.shape_str());
    const std::size_t m = a.rows(), kk = a.cols(), n = b.cols();
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a.row_ptr(i);
        double* orow = out.row_ptr(i);
        for (std::size_t k = 0; k < kk; ++k) {
            const double aik = arow[k];
            const double* brow = b.row_ptr(k);
            for (std::size_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
        }
    }
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), b.cols());
    matmul_acc(out, a, b);
    return out;
}

inline Matrix transpose(const Matrix& a) {
    Matrix out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

// out += a * b^T, via an explicit transpose so the product kernel stays
// row-contiguous instead of degrading to scalar dot products. The transpose
// lives in a per-thread scratch buffer; this runs once per matmul in the
// backward sweep.
inline void matmul_nt_acc(Matrix& out, const Matrix& a, const Matrix& b) {
    thread_local Matrix scratch;
    if (scratch.rows() != b.cols() || scratch.cols() != b.rows())
        scratch = Matrix(b.cols(), b.rows());
    for (std::size_t i = 0; i < b.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) scratch(j, i) = b(i, j);
    matmul_acc(out, a, scratch);
}

// out += a^T * b
inline void matmul_tn_acc(Matrix& out, const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows())
        throw DimensionError("matmul_tn: row counts disagree, " + a.shape_str() +
                             "^T * " + b.shape_str());
    if (out.rows() != a.cols() || out.cols() != b.cols())
        throw DimensionError("matmul_tn: output shape " + out.shape_str() +
                             " does not fit " + a.shape_str() + "^T * " + b.shape_str());
    const std::size_t m = a.rows(), kk = a.cols(), n = b.cols();
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a.row_ptr(i);
        const double* brow = b.row_ptr(i);
        for (std::size_t k = 0; k < kk; ++k) {
            const double aik = arow[k];
            double* orow = out.row_ptr(k);
            for (std::size_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
        }
    }
}

// ---------------------------------------------------------------------------
// Elementwise operations.

template <typename F>
inline Matrix map(const Matrix& a, F f) {
    Matrix out(a.rows(), a.cols());
    for (std::size_t k = 0; k < a.size(); ++k) out.at_flat(k) = f(a.at_flat(k));
    return out;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
    detail::require_same_shape(a, b, "add");
    Matrix out(a.rows(), a.cols());
    for (std::size_t k = 0; k < a.size(); ++k) out.at_flat(k) = a.at_flat(k) + b.at_flat(k);
    return out;
}

inline Matrix sub(const Matrix& a, const Matrix& b) {
    detail::require_same_shape(a, b, "sub");
    Matrix out(a.rows(), a.cols());
    for (std::size_t k = 0; k < a.size(); ++k) out.at_flat(k) = a.at_flat(k) - b.at_flat(k);
    return out;
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
    detail::require_same_shape(a, b, "hadamard");
    Matrix out(a.rows(), a.cols());
    for (std::size_t k = 0; k < a.size(); ++k) out.at_flat(k) = a.at_flat(k) * b.at_flat(k);
    return out;
}

inline Matrix scale(const Matrix& a, double s) {
    return map(a, [s](double x) { return s * x; });
}

// out += s * a
inline void axpy(Matrix& out, double s, const Matrix& a) {
    detail::require_same_shape(out, a, "axpy");
    for (std::size_t k = 0; k < a.size(); ++k) out.at_flat(k) += s * a.at_flat(k);
}

inline void add_in_place(Matrix& out, const Matrix& a) {
    detail::require_same_shape(out, a, "add_in_place");
    for (std::size_t k = 0; k < a.size(); ++k) out.at_flat(k) += a.at_flat(k);
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Overflow-safe softplus; above 30 the function is the identity to double
// precision.
inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

inline Matrix sigmoid(const Matrix& a) {
    return map(a, [](double x) { return sigmoid(x); });
}

inline Matrix tanh(const Matrix& a) {
    return map(a, [](double x) { return std::tanh(x); });
}

inline Matrix exp(const Matrix& a) {
    return map(a, [](double x) { return std::exp(x); });
}

inline Matrix log(const Matrix& a) {
    Matrix out(a.rows(), a.cols());
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double x = a.at_flat(k);
        if (!(x > 0.0))
            throw DomainError("log: non-positive element " + std::to_string(x) +
                              " at flat index " + std::to_string(k));
        out.at_flat(k) = std::log(x);
    }
    return out;
}

inline Matrix softplus(const Matrix& a) {
    return map(a, [](double x) { return softplus(x); });
}

inline Matrix relu(const Matrix& a) {
    return map(a, [](double x) { return x > 0.0 ? x : 0.0; });
}

// ---------------------------------------------------------------------------
// Broadcasts and reductions.

// a (m x n) + bias (1 x n) broadcast over rows.
inline Matrix add_row_broadcast(const Matrix& a, const Matrix& bias) {
    if (bias.rows() != 1 || bias.cols() != a.cols())
        throw DimensionError("add_row_broadcast: bias " + bias.shape_str() +
                             " does not match " + a.shape_str());
    Matrix out(a.rows(), a.cols());
    const double* brow = bias.row_ptr(0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* arow = a.row_ptr(i);
        double* orow = out.row_ptr(i);
        for (std::size_t j = 0; j < a.cols(); ++j) orow[j] = arow[j] + brow[j];
    }
    return out;
}

inline Matrix col_sums(const Matrix& a) {
    Matrix out(1, a.cols());
    double* orow = out.row_ptr(0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* arow = a.row_ptr(i);
        for (std::size_t j = 0; j < a.cols(); ++j) orow[j] += arow[j];
    }
    return out;
}

inline double sum(const Matrix& a) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += a.at_flat(k);
    return s;
}

inline double max_abs(const Matrix& a) {
    double m = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a.at_flat(k)));
    return m;
}

inline bool all_finite(const Matrix& a) {
    for (std::size_t k = 0; k < a.size(); ++k)
        if (!std::isfinite(a.at_flat(k))) return false;
    return true;
}

inline Matrix slice_rows(const Matrix& a, std::size_t r0, std::size_t r1) {
    if (r0 > r1 || r1 > a.rows())
        throw DimensionError("slice_rows: range [" + std::to_string(r0) + ", " +
                             std::to_string(r1) + ") out of " + a.shape_str());
    Matrix out(r1 - r0, a.cols());
    for (std::size_t i = r0; i < r1; ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(i - r0, j) = a(i, j);
    return out;
}

// ---------------------------------------------------------------------------
// Random fills.

inline void uniform_fill(Matrix& m, RngStream& rng, double lo, double hi) {
    for (std::size_t k = 0; k < m.size(); ++k) m.at_flat(k) = rng.uniform(lo, hi);
}

inline void normal_fill(Matrix& m, RngStream& rng) {
    for (std::size_t k = 0; k < m.size(); ++k) m.at_flat(k) = rng.normal();
}

}  // namespace aegru
