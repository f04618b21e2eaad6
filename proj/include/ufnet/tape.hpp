#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "ufnet/matrix.hpp"
#include "ufnet/rng.hpp"

namespace ufnet {

// Handle into a Tape. Only meaningful for the tape that produced it.
struct Var {
    std::int32_t id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode tape over Matrix values. Each primitive appends one node with
// a backward closure; backward() replays nodes in exact reverse order of the
// forward pass. Gradients of nodes unreachable from the loss stay zero.
class Tape {
public:
    Var leaf(Matrix value);

    const Matrix& val(Var v) const { return values_[check(v)]; }
    const Matrix& grad(Var v) const { return grads_[check(v)]; }
    Matrix& grad_ref(Var v) { return grads_[check(v)]; }

    // Seeds d(out)/d(out) = 1 for a 1x1 output and runs all backward closures.
    void backward(Var scalar_out);

    void clear();
    std::size_t node_count() const { return values_.size(); }

    // Used by the op implementations.
    Var emit(Matrix value, std::function<void(Tape&)> backward_fn);

private:
    std::size_t check(Var v) const;

    std::vector<Matrix> values_;
    std::vector<Matrix> grads_;
    std::vector<std::function<void(Tape&)>> backs_;
};

// ---- Primitive layer set ----
// All primitives validate shapes and record gradients on the tape.

// x[b,p] * w[p,q] + bias[1,q] broadcast per row.
Var linear(Tape& t, Var x, Var w, Var bias);

Var relu(Tape& t, Var x);

// Numerically stable branch form; never overflows.
Var sigmoid(Tape& t, Var x);

// Inverted dropout: zero with probability p, survivors scaled by 1/(1-p).
// Identity when !active or p == 0 (no rng draws). Mask order is row-major.
Var dropout(Tape& t, Var x, double p, Rng& rng, bool active);

// Per-row standardization with learnable affine; gain/shift are 1xd.
Var layer_norm(Tape& t, Var x, Var gain, Var shift, double eps);

// Row-wise softmax with max subtraction.
Var softmax(Tape& t, Var x);

// op(a) * op(b) with optional transposes.
Var matmul(Tape& t, Var a, Var b, bool trans_a = false, bool trans_b = false);

Var scale(Tape& t, Var a, double c);

// out[i,j] = s[i,j] - pen[0,j]  (column-wise penalty, pen is 1xn).
Var sub_col_bias(Tape& t, Var s, Var pen);

Var concat_cols(Tape& t, Var a, Var b);

// Scalar sum(x .* w); handy for reducing any op to a scalar in checks.
Var weighted_sum(Tape& t, Var x, Matrix w);

// Single-head attention over n_tasks per-row sequences, fused across a batch.
// q/k/v hold one [B,dq] matrix per task; penalty[B,n] is subtracted from
// score column j of each row's n x n score matrix (no gradient through it).
// Output is [B, n*dq]: the contextualized vectors concatenated per row.
Var attention_concat(Tape& t, const std::vector<Var>& q, const std::vector<Var>& k,
                     const std::vector<Var>& v, Matrix penalty, double inv_sqrt_d);

// Mean binary cross-entropy with optional label smoothing; probs[b,1],
// labels in {0,1}. Probabilities are clamped to [1e-7, 1-1e-7] before log.
Var bce_loss(Tape& t, Var probs, const std::vector<int>& labels, double smoothing = 0.0);

} // namespace ufnet
