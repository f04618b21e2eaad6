#include "ufnet/tape.hpp"

#include <cmath>
#include <cstdint>
#include <sstream>

#include "ufnet/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ufnet {

namespace {

constexpr double kProbClamp = 1e-7;

// Id the next emit() call will assign; lets closures reference their output.
Var upcoming(const Tape& t) {
    return Var{static_cast<std::int32_t>(t.node_count())};
}

} // namespace

Var Tape::leaf(Matrix value) {
    return emit(std::move(value), nullptr);
}

Var Tape::emit(Matrix value, std::function<void(Tape&)> backward_fn) {
    values_.push_back(std::move(value));
    grads_.emplace_back();
    backs_.push_back(std::move(backward_fn));
    return Var{static_cast<std::int32_t>(values_.size() - 1)};
}

std::size_t Tape::check(Var v) const {
    if (!v.valid() || static_cast<std::size_t>(v.id) >= values_.size())
        throw ConfigError("tape: invalid Var");
    return static_cast<std::size_t>(v.id);
}

void Tape::backward(Var scalar_out) {
    const std::size_t out = check(scalar_out);
    if (values_[out].rows != 1 || values_[out].cols != 1)
        throw ShapeError("tape::backward: output must be 1x1, got " + values_[out].shape_str());
    for (std::size_t i = 0; i < values_.size(); ++i)
        grads_[i] = Matrix(values_[i].rows, values_[i].cols, 0.0);
    grads_[out].at(0, 0) = 1.0;
    for (std::size_t i = backs_.size(); i-- > 0;) {
        if (backs_[i]) backs_[i](*this);
    }
}

void Tape::clear() {
    values_.clear();
    grads_.clear();
    backs_.clear();
}

// ---- primitives ----

Var linear(Tape& t, Var x, Var w, Var bias) {
    const Matrix& xv = t.val(x);
    const Matrix& wv = t.val(w);
    const Matrix& bv = t.val(bias);
    if (xv.cols != wv.rows)
        throw ShapeError("linear: input " + xv.shape_str() + " vs weights " + wv.shape_str());
    if (bv.rows != 1 || bv.cols != wv.cols)
        throw ShapeError("linear: bias " + bv.shape_str() + " vs weights " + wv.shape_str());
    Matrix out = add_row_broadcast(gemm(xv, wv), bv);
    const Var y = upcoming(t);
    return t.emit(std::move(out), [x, w, bias, y](Tape& tp) {
        const Matrix& g = tp.grad(y);
        add_in_place(tp.grad_ref(x), gemm(g, tp.val(w), false, true));
        add_in_place(tp.grad_ref(w), gemm(tp.val(x), g, true, false));
        add_in_place(tp.grad_ref(bias), col_sums(g));
    });
}

Var relu(Tape& t, Var x) {
    Matrix out = map(t.val(x), [](double v) { return v > 0.0 ? v : 0.0; });
    const Var y = upcoming(t);
    return t.emit(std::move(out), [x, y](Tape& tp) {
        const Matrix& g = tp.grad(y);
        const Matrix& xv = tp.val(x);
        Matrix& gx = tp.grad_ref(x);
        for (std::size_t i = 0; i < xv.size(); ++i)
            if (xv.data[i] > 0.0) gx.data[i] += g.data[i];
    });
}

Var sigmoid(Tape& t, Var x) {
    Matrix out = map(t.val(x), [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
    });
    const Var y = upcoming(t);
    return t.emit(std::move(out), [x, y](Tape& tp) {
        const Matrix& g = tp.grad(y);
        const Matrix& s = tp.val(y);
        Matrix& gx = tp.grad_ref(x);
        for (std::size_t i = 0; i < s.size(); ++i)
            gx.data[i] += g.data[i] * s.data[i] * (1.0 - s.data[i]);
    });
}

Var dropout(Tape& t, Var x, double p, Rng& rng, bool active) {
    if (p < 0.0 || p >= 1.0)
        throw ConfigError("dropout: p must be in [0, 1), got " + std::to_string(p));
    if (!active || p == 0.0) return x;
    const Matrix& xv = t.val(x);
    const double inv_keep = 1.0 / (1.0 - p);
    Matrix mask(xv.rows, xv.cols);
    for (std::size_t i = 0; i < mask.size(); ++i)
        mask.data[i] = rng.uniform() < p ? 0.0 : inv_keep;
    Matrix out = hadamard(xv, mask);
    const Var y = upcoming(t);
    return t.emit(std::move(out), [x, y, mask = std::move(mask)](Tape& tp) {
        const Matrix& g = tp.grad(y);
        Matrix& gx = tp.grad_ref(x);
        for (std::size_t i = 0; i < g.size(); ++i) gx.data[i] += g.data[i] * mask.data[i];
    });
}

Var layer_norm(Tape& t, Var x, Var gain, Var shift, double eps) {
    const Matrix& xv = t.val(x);
    const Matrix& gv = t.val(gain);
    const Matrix& sv = t.val(shift);
    if (gv.rows != 1 || gv.cols != xv.cols || sv.rows != 1 || sv.cols != xv.cols)
        throw ShapeError("layer_norm: affine params must be 1x" + std::to_string(xv.cols));
    const std::size_t d = xv.cols;
    Matrix xhat(xv.rows, d);
    std::vector<double> inv_std(xv.rows);
    for (std::size_t i = 0; i < xv.rows; ++i) {
        const double* row = xv.row_ptr(i);
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<double>(d);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        double* h = xhat.row_ptr(i);
        for (std::size_t j = 0; j < d; ++j) h[j] = (row[j] - mean) * inv_std[i];
    }
    Matrix out(xv.rows, d);
    for (std::size_t i = 0; i < xv.rows; ++i)
        for (std::size_t j = 0; j < d; ++j)
            out.at(i, j) = gv.at(0, j) * xhat.at(i, j) + sv.at(0, j);
    const Var y = upcoming(t);
    return t.emit(std::move(out),
                  [x, gain, shift, y, xhat = std::move(xhat),
                   inv_std = std::move(inv_std)](Tape& tp) {
                      const Matrix& g = tp.grad(y);
                      const Matrix& gv2 = tp.val(gain);
                      Matrix& gx = tp.grad_ref(x);
                      Matrix& ggain = tp.grad_ref(gain);
                      Matrix& gshift = tp.grad_ref(shift);
                      const std::size_t d2 = g.cols;
                      for (std::size_t i = 0; i < g.rows; ++i) {
                          const double* grow = g.row_ptr(i);
                          const double* hrow = xhat.row_ptr(i);
                          double sum_dh = 0.0, sum_dh_h = 0.0;
                          for (std::size_t j = 0; j < d2; ++j) {
                              const double dh = grow[j] * gv2.at(0, j);
                              sum_dh += dh;
                              sum_dh_h += dh * hrow[j];
                              ggain.at(0, j) += grow[j] * hrow[j];
                              gshift.at(0, j) += grow[j];
                          }
                          const double m1 = sum_dh / static_cast<double>(d2);
                          const double m2 = sum_dh_h / static_cast<double>(d2);
                          double* gxrow = gx.row_ptr(i);
                          for (std::size_t j = 0; j < d2; ++j) {
                              const double dh = grow[j] * gv2.at(0, j);
                              gxrow[j] += inv_std[i] * (dh - m1 - hrow[j] * m2);
                          }
                      }
                  });
}

Var softmax(Tape& t, Var x) {
    Matrix out = softmax_rows(t.val(x));
    const Var y = upcoming(t);
    return t.emit(std::move(out), [x, y](Tape& tp) {
        const Matrix& g = tp.grad(y);
        const Matrix& a = tp.val(y);
        Matrix& gx = tp.grad_ref(x);
        for (std::size_t i = 0; i < a.rows; ++i) {
            const double* arow = a.row_ptr(i);
            const double* grow = g.row_ptr(i);
            double dot = 0.0;
            for (std::size_t j = 0; j < a.cols; ++j) dot += arow[j] * grow[j];
            double* gxrow = gx.row_ptr(i);
            for (std::size_t j = 0; j < a.cols; ++j)
                gxrow[j] += arow[j] * (grow[j] - dot);
        }
    });
}

Var matmul(Tape& t, Var a, Var b, bool trans_a, bool trans_b) {
    Matrix out = gemm(t.val(a), t.val(b), trans_a, trans_b);
    const Var y = upcoming(t);
    return t.emit(std::move(out), [a, b, trans_a, trans_b, y](Tape& tp) {
        const Matrix& g = tp.grad(y);
        const Matrix& av = tp.val(a);
        const Matrix& bv = tp.val(b);
        if (!trans_a && !trans_b) {
            add_in_place(tp.grad_ref(a), gemm(g, bv, false, true));
            add_in_place(tp.grad_ref(b), gemm(av, g, true, false));
        } else if (!trans_a && trans_b) {
            add_in_place(tp.grad_ref(a), gemm(g, bv, false, false));
            add_in_place(tp.grad_ref(b), gemm(g, av, true, false));
        } else if (trans_a && !trans_b) {
            add_in_place(tp.grad_ref(a), gemm(bv, g, false, true));
            add_in_place(tp.grad_ref(b), gemm(av, g, false, false));
        } else {
            add_in_place(tp.grad_ref(a), gemm(bv, g, true, true));
            add_in_place(tp.grad_ref(b), gemm(g, av, true, true));
        }
    });
}

Var scale(Tape& t, Var a, double c) {
    Matrix out = ufnet::scale(t.val(a), c);
    const Var y = upcoming(t);
    return t.emit(std::move(out), [a, c, y](Tape& tp) {
        axpy_in_place(tp.grad_ref(a), c, tp.grad(y));
    });
}

Var sub_col_bias(Tape& t, Var s, Var pen) {
    const Matrix& sv = t.val(s);
    const Matrix& pv = t.val(pen);
    if (pv.rows != 1 || pv.cols != sv.cols)
        throw ShapeError("sub_col_bias: penalty " + pv.shape_str() + " vs scores " + sv.shape_str());
    Matrix out(sv.rows, sv.cols);
    for (std::size_t i = 0; i < sv.rows; ++i)
        for (std::size_t j = 0; j < sv.cols; ++j) out.at(i, j) = sv.at(i, j) - pv.at(0, j);
    const Var y = upcoming(t);
    return t.emit(std::move(out), [s, pen, y](Tape& tp) {
        const Matrix& g = tp.grad(y);
        add_in_place(tp.grad_ref(s), g);
        axpy_in_place(tp.grad_ref(pen), -1.0, col_sums(g));
    });
}

Var concat_cols(Tape& t, Var a, Var b) {
    const Matrix& av = t.val(a);
    const Matrix& bv = t.val(b);
    if (av.rows != bv.rows)
        throw ShapeError("concat_cols: row mismatch " + av.shape_str() + " vs " + bv.shape_str());
    Matrix out(av.rows, av.cols + bv.cols);
    for (std::size_t i = 0; i < av.rows; ++i) {
        double* dst = out.row_ptr(i);
        const double* sa = av.row_ptr(i);
        const double* sb = bv.row_ptr(i);
        for (std::size_t j = 0; j < av.cols; ++j) dst[j] = sa[j];
        for (std::size_t j = 0; j < bv.cols; ++j) dst[av.cols + j] = sb[j];
    }
    const Var y = upcoming(t);
    return t.emit(std::move(out), [a, b, y](Tape& tp) {
        const Matrix& g = tp.grad(y);
        Matrix& ga = tp.grad_ref(a);
        Matrix& gb = tp.grad_ref(b);
        for (std::size_t i = 0; i < g.rows; ++i) {
            const double* grow = g.row_ptr(i);
            double* da = ga.row_ptr(i);
            double* db = gb.row_ptr(i);
            for (std::size_t j = 0; j < ga.cols; ++j) da[j] += grow[j];
            for (std::size_t j = 0; j < gb.cols; ++j) db[j] += grow[ga.cols + j];
        }
    });
}

Var weighted_sum(Tape& t, Var x, Matrix w) {
    const Matrix& xv = t.val(x);
    require_same_shape(xv, w, "weighted_sum");
    double acc = 0.0;
    for (std::size_t i = 0; i < xv.size(); ++i) acc += xv.data[i] * w.data[i];
    Matrix out(1, 1, acc);
    const Var y = upcoming(t);
    return t.emit(std::move(out), [x, y, w = std::move(w)](Tape& tp) {
        const double g = tp.grad(y).at(0, 0);
        Matrix& gx = tp.grad_ref(x);
        for (std::size_t i = 0; i < gx.size(); ++i) gx.data[i] += g * w.data[i];
    });
}

Var attention_concat(Tape& t, const std::vector<Var>& q, const std::vector<Var>& k,
                     const std::vector<Var>& v, Matrix penalty, double inv_sqrt_d) {
    const std::size_t n = q.size();
    if (n < 2 || k.size() != n || v.size() != n)
        throw ShapeError("attention_concat: need matching q/k/v per task, n >= 2");
    const Matrix& q0 = t.val(q[0]);
    const std::size_t batch = q0.rows;
    const std::size_t dq = q0.cols;
    for (std::size_t i = 0; i < n; ++i) {
        require_shape(t.val(q[i]), batch, dq, "attention_concat q");
        require_shape(t.val(k[i]), batch, dq, "attention_concat k");
        require_shape(t.val(v[i]), batch, dq, "attention_concat v");
    }
    require_shape(penalty, batch, n, "attention_concat penalty");

    Matrix out(batch, n * dq);
    Matrix attn(batch, n * n); // row-softmax weights per item, saved for backward
    {
        std::vector<const Matrix*> qv(n), kv(n), vv(n);
        for (std::size_t i = 0; i < n; ++i) {
            qv[i] = &t.val(q[i]);
            kv[i] = &t.val(k[i]);
            vv[i] = &t.val(v[i]);
        }
#pragma omp parallel for schedule(static) if (batch * n * dq > 4096)
        for (std::int64_t ss = 0; ss < static_cast<std::int64_t>(batch); ++ss) {
            const std::size_t s = static_cast<std::size_t>(ss);
            // n x n scores, then row softmax
            std::vector<double> scores(n * n);
            for (std::size_t i = 0; i < n; ++i) {
                const double* qrow = qv[i]->row_ptr(s);
                for (std::size_t j = 0; j < n; ++j) {
                    const double* krow = kv[j]->row_ptr(s);
                    double dot = 0.0;
                    for (std::size_t c = 0; c < dq; ++c) dot += qrow[c] * krow[c];
                    scores[i * n + j] = dot * inv_sqrt_d - penalty.at(s, j);
                }
            }
            double* arow = attn.row_ptr(s);
            for (std::size_t i = 0; i < n; ++i) {
                double mx = scores[i * n];
                for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, scores[i * n + j]);
                double sum = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    arow[i * n + j] = std::exp(scores[i * n + j] - mx);
                    sum += arow[i * n + j];
                }
                for (std::size_t j = 0; j < n; ++j) arow[i * n + j] /= sum;
            }
            double* orow = out.row_ptr(s);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t c = 0; c < dq; ++c) {
                    double z = 0.0;
                    for (std::size_t j = 0; j < n; ++j)
                        z += arow[i * n + j] * vv[j]->row_ptr(s)[c];
                    orow[i * dq + c] = z;
                }
        }
    }

    const Var y = upcoming(t);
    return t.emit(std::move(out),
                  [q, k, v, y, n, dq, inv_sqrt_d, attn = std::move(attn)](Tape& tp) {
                      const Matrix& g = tp.grad(y);
                      const std::size_t batch = g.rows;
                      std::vector<const Matrix*> qv(n), kv(n), vv(n);
                      std::vector<Matrix*> gq(n), gk(n), gv(n);
                      for (std::size_t i = 0; i < n; ++i) {
                          qv[i] = &tp.val(q[i]);
                          kv[i] = &tp.val(k[i]);
                          vv[i] = &tp.val(v[i]);
                          gq[i] = &tp.grad_ref(q[i]);
                          gk[i] = &tp.grad_ref(k[i]);
                          gv[i] = &tp.grad_ref(v[i]);
                      }
#pragma omp parallel for schedule(static) if (batch * n * dq > 4096)
                      for (std::int64_t ss = 0; ss < static_cast<std::int64_t>(batch); ++ss) {
                          const std::size_t s = static_cast<std::size_t>(ss);
                          const double* arow = attn.row_ptr(s);
                          const double* grow = g.row_ptr(s);
                          // dA and softmax backward to scores
                          std::vector<double> da(n * n), ds(n * n);
                          for (std::size_t i = 0; i < n; ++i)
                              for (std::size_t j = 0; j < n; ++j) {
                                  double dot = 0.0;
                                  const double* vrow = vv[j]->row_ptr(s);
                                  for (std::size_t c = 0; c < dq; ++c)
                                      dot += grow[i * dq + c] * vrow[c];
                                  da[i * n + j] = dot;
                              }
                          for (std::size_t i = 0; i < n; ++i) {
                              double dot = 0.0;
                              for (std::size_t j = 0; j < n; ++j)
                                  dot += arow[i * n + j] * da[i * n + j];
                              for (std::size_t j = 0; j < n; ++j)
                                  ds[i * n + j] = arow[i * n + j] * (da[i * n + j] - dot);
                          }
                          // accumulate grads for this row only (thread-safe)
                          for (std::size_t j = 0; j < n; ++j) {
                              double* gvrow = gv[j]->row_ptr(s);
                              for (std::size_t c = 0; c < dq; ++c) {
                                  double acc = 0.0;
                                  for (std::size_t i = 0; i < n; ++i)
                                      acc += arow[i * n + j] * grow[i * dq + c];
                                  gvrow[c] += acc;
                              }
                          }
                          for (std::size_t i = 0; i < n; ++i) {
                              double* gqrow = gq[i]->row_ptr(s);
                              for (std::size_t c = 0; c < dq; ++c) {
                                  double acc = 0.0;
                                  for (std::size_t j = 0; j < n; ++j)
                                      acc += ds[i * n + j] * kv[j]->row_ptr(s)[c];
                                  gqrow[c] += acc * inv_sqrt_d;
                              }
                          }
                          for (std::size_t j = 0; j < n; ++j) {
                              double* gkrow = gk[j]->row_ptr(s);
                              for (std::size_t c = 0; c < dq; ++c) {
                                  double acc = 0.0;
                                  for (std::size_t i = 0; i < n; ++i)
                                      acc += ds[i * n + j] * qv[i]->row_ptr(s)[c];
                                  gkrow[c] += acc * inv_sqrt_d;
                              }
                          }
                      }
                  });
}

Var bce_loss(Tape& t, Var probs, const std::vector<int>& labels, double smoothing) {
    const Matrix& pv = t.val(probs);
    if (pv.cols != 1)
        throw ShapeError("bce_loss: probabilities must be bx1, got " + pv.shape_str());
    if (pv.rows == 0) throw ConfigError("bce_loss: empty batch");
    if (pv.rows != labels.size())
        throw ShapeError("bce_loss: " + std::to_string(pv.rows) + " probabilities vs " +
                         std::to_string(labels.size()) + " labels");
    if (smoothing < 0.0 || smoothing >= 0.5)
        throw ConfigError("bce_loss: smoothing must be in [0, 0.5)");
    const std::size_t b = pv.rows;
    double loss = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        const double p = std::min(1.0 - kProbClamp, std::max(kProbClamp, pv.at(i, 0)));
        const double yt = labels[i] ? 1.0 - smoothing : smoothing;
        loss += -(yt * std::log(p) + (1.0 - yt) * std::log(1.0 - p));
    }
    loss /= static_cast<double>(b);
    const Var y = upcoming(t);
    return t.emit(Matrix(1, 1, loss), [probs, y, labels, smoothing, b](Tape& tp) {
        const double g = tp.grad(y).at(0, 0);
        const Matrix& pv2 = tp.val(probs);
        Matrix& gp = tp.grad_ref(probs);
        for (std::size_t i = 0; i < b; ++i) {
            const double p = std::min(1.0 - kProbClamp, std::max(kProbClamp, pv2.at(i, 0)));
            const double yt = labels[i] ? 1.0 - smoothing : smoothing;
            gp.at(i, 0) += g * (-yt / p + (1.0 - yt) / (1.0 - p)) / static_cast<double>(b);
        }
    });
}

} // namespace ufnet
