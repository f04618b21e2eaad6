#include "ufnet/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ufnet {

namespace {

// Parallelizing tiny matrices costs more than it saves.
constexpr std::int64_t kParallelCutoff = 16 * 1024;

inline std::size_t op_rows(const Matrix& m, bool trans) { return trans ? m.cols : m.rows; }
inline std::size_t op_cols(const Matrix& m, bool trans) { return trans ? m.rows : m.cols; }

} // namespace

Matrix gemm(const Matrix& a, const Matrix& b, bool trans_a, bool trans_b) {
    const std::size_t m = op_rows(a, trans_a);
    const std::size_t k = op_cols(a, trans_a);
    const std::size_t kb = op_rows(b, trans_b);
    const std::size_t n = op_cols(b, trans_b);
    if (k != kb) {
        throw ShapeError("gemm: inner dimension mismatch " + a.shape_str() +
                         (trans_a ? "^T" : "") + " * " + b.shape_str() + (trans_b ? "^T" : ""));
    }
    Matrix c(m, n, 0.0);
    const std::int64_t work = static_cast<std::int64_t>(m) * static_cast<std::int64_t>(n) *
                              static_cast<std::int64_t>(k);

    if (!trans_a && !trans_b) {
        // i-k-j with row accumulation: contiguous access, fixed per-element order.
#pragma omp parallel for schedule(static) if (work > kParallelCutoff)
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(m); ++i) {
            double* crow = c.row_ptr(static_cast<std::size_t>(i));
            const double* arow = a.row_ptr(static_cast<std::size_t>(i));
            for (std::size_t kk = 0; kk < k; ++kk) {
                const double av = arow[kk];
                if (av == 0.0) continue;
                const double* brow = b.row_ptr(kk);
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    } else if (!trans_a && trans_b) {
        // C[i,j] = dot(a_row_i, b_row_j): both contiguous.
#pragma omp parallel for schedule(static) if (work > kParallelCutoff)
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(m); ++i) {
            const double* arow = a.row_ptr(static_cast<std::size_t>(i));
            double* crow = c.row_ptr(static_cast<std::size_t>(i));
            for (std::size_t j = 0; j < n; ++j) {
                const double* brow = b.row_ptr(j);
                double acc = 0.0;
                for (std::size_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
                crow[j] = acc;
            }
        }
    } else if (trans_a && !trans_b) {
        // C[i,j] = sum_k a[k,i] * b[k,j]; per output row i, scan k.
#pragma omp parallel for schedule(static) if (work > kParallelCutoff)
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(m); ++i) {
            double* crow = c.row_ptr(static_cast<std::size_t>(i));
            for (std::size_t kk = 0; kk < k; ++kk) {
                const double av = a.at(kk, static_cast<std::size_t>(i));
                if (av == 0.0) continue;
                const double* brow = b.row_ptr(kk);
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    } else {
#pragma omp parallel for schedule(static) if (work > kParallelCutoff)
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(m); ++i) {
            double* crow = c.row_ptr(static_cast<std::size_t>(i));
            for (std::size_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (std::size_t kk = 0; kk < k; ++kk)
                    acc += a.at(kk, static_cast<std::size_t>(i)) * b.at(j, kk);
                crow[j] = acc;
            }
        }
    }
    return c;
}

Matrix add_row_broadcast(const Matrix& x, const Matrix& row) {
    if (row.rows != 1 || row.cols != x.cols) {
        throw ShapeError("add_row_broadcast: bias " + row.shape_str() + " vs input " +
                         x.shape_str());
    }
    Matrix out(x.rows, x.cols);
    const double* bias = row.row_ptr(0);
#pragma omp parallel for schedule(static) if (static_cast<std::int64_t>(x.size()) > kParallelCutoff)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(x.rows); ++i) {
        const double* src = x.row_ptr(static_cast<std::size_t>(i));
        double* dst = out.row_ptr(static_cast<std::size_t>(i));
        for (std::size_t j = 0; j < x.cols; ++j) dst[j] = src[j] + bias[j];
    }
    return out;
}

Matrix col_sums(const Matrix& x) {
    Matrix out(1, x.cols, 0.0);
    double* dst = out.row_ptr(0);
    for (std::size_t i = 0; i < x.rows; ++i) {
        const double* src = x.row_ptr(i);
        for (std::size_t j = 0; j < x.cols; ++j) dst[j] += src[j];
    }
    return out;
}

Matrix transpose(const Matrix& x) {
    Matrix out(x.cols, x.rows);
    for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t j = 0; j < x.cols; ++j) out.at(j, i) = x.at(i, j);
    return out;
}

Matrix map(const Matrix& x, const std::function<double(double)>& f) {
    Matrix out(x.rows, x.cols);
#pragma omp parallel for schedule(static) if (static_cast<std::int64_t>(x.size()) > kParallelCutoff)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(x.size()); ++i)
        out.data[static_cast<std::size_t>(i)] = f(x.data[static_cast<std::size_t>(i)]);
    return out;
}

Matrix zip(const Matrix& a, const Matrix& b, const std::function<double(double, double)>& f) {
    require_same_shape(a, b, "zip");
    Matrix out(a.rows, a.cols);
#pragma omp parallel for schedule(static) if (static_cast<std::int64_t>(a.size()) > kParallelCutoff)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(a.size()); ++i)
        out.data[static_cast<std::size_t>(i)] =
            f(a.data[static_cast<std::size_t>(i)], b.data[static_cast<std::size_t>(i)]);
    return out;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
    return zip(a, b, [](double x, double y) { return x * y; });
}

Matrix add(const Matrix& a, const Matrix& b) {
    return zip(a, b, [](double x, double y) { return x + y; });
}

Matrix scale(const Matrix& a, double c) {
    return map(a, [c](double x) { return c * x; });
}

void add_in_place(Matrix& dst, const Matrix& src) {
    require_same_shape(dst, src, "add_in_place");
    for (std::size_t i = 0; i < dst.size(); ++i) dst.data[i] += src.data[i];
}

void axpy_in_place(Matrix& dst, double alpha, const Matrix& src) {
    require_same_shape(dst, src, "axpy_in_place");
    for (std::size_t i = 0; i < dst.size(); ++i) dst.data[i] += alpha * src.data[i];
}

Matrix softmax_rows(const Matrix& x) {
    Matrix out(x.rows, x.cols);
#pragma omp parallel for schedule(static) if (static_cast<std::int64_t>(x.size()) > kParallelCutoff)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(x.rows); ++i) {
        const double* src = x.row_ptr(static_cast<std::size_t>(i));
        double* dst = out.row_ptr(static_cast<std::size_t>(i));
        double mx = src[0];
        for (std::size_t j = 1; j < x.cols; ++j) mx = std::max(mx, src[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < x.cols; ++j) {
            dst[j] = std::exp(src[j] - mx);
            sum += dst[j];
        }
        for (std::size_t j = 0; j < x.cols; ++j) dst[j] /= sum;
    }
    return out;
}

namespace reference {

Matrix gemm(const Matrix& a, const Matrix& b, bool trans_a, bool trans_b) {
    const std::size_t m = trans_a ? a.cols : a.rows;
    const std::size_t k = trans_a ? a.rows : a.cols;
    const std::size_t kb = trans_b ? b.cols : b.rows;
    const std::size_t n = trans_b ? b.rows : b.cols;
    if (k != kb) throw ShapeError("reference::gemm: inner dimension mismatch");
    Matrix c(m, n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t kk = 0; kk < k; ++kk) {
                const double av = trans_a ? a.at(kk, i) : a.at(i, kk);
                const double bv = trans_b ? b.at(j, kk) : b.at(kk, j);
                acc += av * bv;
            }
            c.at(i, j) = acc;
        }
    return c;
}

Matrix softmax_rows(const Matrix& x) {
    Matrix out(x.rows, x.cols);
    for (std::size_t i = 0; i < x.rows; ++i) {
        double mx = x.at(i, 0);
        for (std::size_t j = 1; j < x.cols; ++j) mx = std::max(mx, x.at(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < x.cols; ++j) sum += std::exp(x.at(i, j) - mx);
        for (std::size_t j = 0; j < x.cols; ++j) out.at(i, j) = std::exp(x.at(i, j) - mx) / sum;
    }
    return out;
}

} // namespace reference

} // namespace ufnet
