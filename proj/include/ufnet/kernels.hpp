#pragma once

#include <functional>

#include "ufnet/matrix.hpp"

namespace ufnet {

// Dense kernels. The parallel versions split work so that every output
// element is accumulated by exactly one thread in a fixed order, which keeps
// results bit-identical for any thread count (including 1). The serial
// reference versions in ufnet::reference are the test oracles and the
// baseline for the kernel benchmark.

// C = op(A) * op(B), op = transpose when the flag is set.
Matrix gemm(const Matrix& a, const Matrix& b, bool trans_a = false, bool trans_b = false);

// out[i, :] = x[i, :] + row (row is 1xN).
Matrix add_row_broadcast(const Matrix& x, const Matrix& row);

// Column sums as a 1xN row vector.
Matrix col_sums(const Matrix& x);

Matrix transpose(const Matrix& x);

// Elementwise map / zip with parallel dispatch for large inputs.
Matrix map(const Matrix& x, const std::function<double(double)>& f);
Matrix zip(const Matrix& a, const Matrix& b, const std::function<double(double, double)>& f);

Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix add(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double c);
void add_in_place(Matrix& dst, const Matrix& src);
void axpy_in_place(Matrix& dst, double alpha, const Matrix& src); // dst += alpha*src

// Row-wise softmax with max subtraction.
Matrix softmax_rows(const Matrix& x);

namespace reference {

// Naive triple-loop matmul, serial.
Matrix gemm(const Matrix& a, const Matrix& b, bool trans_a = false, bool trans_b = false);

Matrix softmax_rows(const Matrix& x);

} // namespace reference

} // namespace ufnet
