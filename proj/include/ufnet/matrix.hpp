#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "ufnet/error.hpp"

namespace ufnet {

// Dense row-major matrix of doubles. Row/column vectors are 1xN / Nx1.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rs);
    static Matrix row_vector(const std::vector<double>& v);
    static Matrix col_vector(const std::vector<double>& v);

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    double* row_ptr(std::size_t r) { return data.data() + r * cols; }
    const double* row_ptr(std::size_t r) const { return data.data() + r * cols; }

    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }
    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
    bool all_finite() const;

    std::string shape_str() const;
};

// Exact elementwise comparison (determinism checks).
bool operator==(const Matrix& a, const Matrix& b);
inline bool operator!=(const Matrix& a, const Matrix& b) { return !(a == b); }

// Throws ShapeError naming `what` and both shapes.
void require_same_shape(const Matrix& a, const Matrix& b, const char* what);
void require_shape(const Matrix& m, std::size_t r, std::size_t c, const char* what);

} // namespace ufnet
