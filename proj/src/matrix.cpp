#include "ufnet/matrix.hpp"

#include <cmath>
#include <sstream>

namespace ufnet {

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rs) {
    Matrix m;
    m.rows = rs.size();
    m.cols = rs.size() ? rs.begin()->size() : 0;
    m.data.reserve(m.rows * m.cols);
    for (const auto& r : rs) {
        if (r.size() != m.cols)
            throw ShapeError("from_rows: ragged initializer");
        m.data.insert(m.data.end(), r.begin(), r.end());
    }
    return m;
}

Matrix Matrix::row_vector(const std::vector<double>& v) {
    Matrix m(1, v.size());
    m.data = v;
    return m;
}

Matrix Matrix::col_vector(const std::vector<double>& v) {
    Matrix m(v.size(), 1);
    m.data = v;
    return m;
}

bool Matrix::all_finite() const {
    for (double x : data)
        if (!std::isfinite(x)) return false;
    return true;
}

std::string Matrix::shape_str() const {
    std::ostringstream os;
    os << rows << "x" << cols;
    return os.str();
}

bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows == b.rows && a.cols == b.cols && a.data == b.data;
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(what) + ": shape mismatch " + a.shape_str() +
                         " vs " + b.shape_str());
    }
}

void require_shape(const Matrix& m, std::size_t r, std::size_t c, const char* what) {
    if (m.rows != r || m.cols != c) {
        std::ostringstream os;
        os << what << ": expected " << r << "x" << c << ", got " << m.shape_str();
        throw ShapeError(os.str());
    }
}

} // namespace ufnet
