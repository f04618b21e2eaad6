#include "ufnet/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "ufnet/error.hpp"
#include "ufnet/kernels.hpp"
#include "ufnet/uncertainty.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ufnet {

namespace {
constexpr double kLnEps = 1e-5;
} // namespace

FusionMode fusion_mode_from_string(const std::string& s) {
    if (s == "hybrid") return FusionMode::Hybrid;
    if (s == "early") return FusionMode::Early;
    throw ConfigError("unknown fusion mode '" + s + "' (expected hybrid|early)");
}

std::string to_string(FusionMode m) {
    return m == FusionMode::Hybrid ? "hybrid" : "early";
}

BaselineKind baseline_from_string(const std::string& s) {
    if (s == "majority") return BaselineKind::Majority;
    if (s == "late") return BaselineKind::Late;
    if (s == "early") return BaselineKind::Early;
    if (s == "hybrid") return BaselineKind::Hybrid;
    throw ConfigError("unknown baseline '" + s + "' (expected majority|late|early|hybrid)");
}

std::string to_string(BaselineKind k) {
    switch (k) {
        case BaselineKind::Majority: return "majority";
        case BaselineKind::Late: return "late";
        case BaselineKind::Early: return "early";
        default: return "hybrid";
    }
}

void UfnetConfig::validate() const {
    if (tasks.size() < 2 || tasks.size() > kNumTasks)
        throw ConfigError("fusion needs 2 or 3 tasks, got " + std::to_string(tasks.size()));
    for (std::size_t i = 0; i < tasks.size(); ++i)
        for (std::size_t j = i + 1; j < tasks.size(); ++j)
            if (tasks[i] == tasks[j]) throw ConfigError("duplicate task in fusion config");
    if (proj_dim == 0 || qkv_dim == 0) throw ConfigError("projection and qkv dims must be >= 1");
    if (hidden_layers > 1) throw ConfigError("head hidden layers must be 0 or 1");
    if (hidden_layers == 1 && hidden_dim == 0) throw ConfigError("head hidden width must be >= 1");
    if (dropout_p < 0.0 || dropout_p >= 1.0)
        throw ConfigError("dropout p must be in [0, 1), got " + std::to_string(dropout_p));
    if (eta < 0.0) throw ConfigError("eta must be >= 0, got " + std::to_string(eta));
    if (mc_rounds == 0) throw ConfigError("mc rounds must be >= 1");
    if (batch_size == 0 || epochs == 0) throw ConfigError("batch size and epochs must be >= 1");
    if (smoothing < 0.0 || smoothing >= 0.5)
        throw ConfigError("label smoothing must be in [0, 0.5)");
    opt.validate();
    sched.validate();
}

FusionDataset FusionDataset::rows(const std::vector<std::size_t>& which) const {
    FusionDataset out;
    out.x.reserve(x.size());
    for (const Matrix& xm : x) {
        Matrix sub(which.size(), xm.cols);
        for (std::size_t r = 0; r < which.size(); ++r)
            std::copy(xm.row_ptr(which[r]), xm.row_ptr(which[r]) + xm.cols, sub.row_ptr(r));
        out.x.push_back(std::move(sub));
    }
    out.mu = Matrix(which.size(), mu.cols);
    out.sigma = Matrix(which.size(), sigma.cols);
    out.labels.resize(which.size());
    out.session_rows.resize(which.size());
    for (std::size_t r = 0; r < which.size(); ++r) {
        const std::size_t s = which[r];
        std::copy(mu.row_ptr(s), mu.row_ptr(s) + mu.cols, out.mu.row_ptr(r));
        std::copy(sigma.row_ptr(s), sigma.row_ptr(s) + sigma.cols, out.sigma.row_ptr(r));
        out.labels[r] = labels[s];
        out.session_rows[r] = session_rows.empty() ? s : session_rows[s];
    }
    return out;
}

namespace {

void check_dataset(const FusionDataset& d, std::size_t n_tasks, const char* where) {
    if (d.x.size() != n_tasks)
        throw DataError(std::string(where) + ": expected " + std::to_string(n_tasks) +
                        " task feature blocks, got " + std::to_string(d.x.size()));
    const std::size_t n = d.labels.size();
    for (const Matrix& xm : d.x) {
        if (xm.rows != n)
            throw DataError(std::string(where) + ": feature block rows " +
                            std::to_string(xm.rows) + " vs " + std::to_string(n) + " labels");
        if (!xm.all_finite()) throw DataError(std::string(where) + ": non-finite features");
    }
    if (d.mu.rows != n || d.mu.cols != n_tasks || d.sigma.rows != n || d.sigma.cols != n_tasks)
        throw DataError(std::string(where) + ": mu/sigma shape mismatch");
    for (std::size_t i = 0; i < d.mu.size(); ++i) {
        const double mu = d.mu.data[i], sg = d.sigma.data[i];
        if (!std::isfinite(mu) || mu < 0.0 || mu > 1.0)
            throw DataError(std::string(where) + ": mu out of [0,1]");
        if (!std::isfinite(sg) || sg < 0.0)
            throw DataError(std::string(where) + ": sigma must be finite and >= 0");
    }
}

} // namespace

FusionDataset make_fusion_dataset(const Cohort& cohort, const std::vector<std::size_t>& idx,
                                  const std::vector<TaskId>& tasks,
                                  const std::vector<const TaskModel*>& models) {
    if (tasks.size() < 2 || tasks.size() > kNumTasks)
        throw ConfigError("fusion needs 2 or 3 tasks");
    if (models.size() != tasks.size())
        throw ConfigError("got " + std::to_string(models.size()) + " task models for " +
                          std::to_string(tasks.size()) + " tasks");
    for (const TaskModel* m : models)
        if (!m) throw ConfigError("null task model");

    FusionDataset out;
    for (std::size_t s : idx) {
        if (s >= cohort.sessions.size()) throw DataError("session index out of range");
        if (cohort.sessions[s].complete_for(tasks)) out.session_rows.push_back(s);
    }
    const std::size_t n = out.session_rows.size();
    out.labels = labels_of(cohort, out.session_rows);
    out.mu = Matrix(n, tasks.size());
    out.sigma = Matrix(n, tasks.size());
    for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
        const Matrix raw = feature_matrix(cohort, out.session_rows, tasks[ti]);
        const TaskModel& model = *models[ti];
        out.x.push_back(model.pipeline.apply(raw));
        const std::vector<McPrediction> preds =
            predict_mc(model, raw, model.config.mc_rounds, model.config.seed);
        for (std::size_t r = 0; r < n; ++r) {
            out.mu.at(r, ti) = preds[r].mu;
            out.sigma.at(r, ti) = preds[r].sigma;
        }
    }
    return out;
}

AttentionTrace calibrated_attention(const Matrix& xp, const Matrix& wq, const Matrix& wk,
                                    const Matrix& wv, const std::vector<double>& sigmas,
                                    double eta) {
    if (eta < 0.0) throw ConfigError("eta must be >= 0");
    const std::size_t n = xp.rows;
    if (sigmas.size() != n)
        throw ShapeError("attention: " + std::to_string(n) + " rows vs " +
                         std::to_string(sigmas.size()) + " sigmas");
    for (double s : sigmas)
        if (!(s >= 0.0)) throw DataError("attention: sigma must be >= 0, got " + std::to_string(s));
    if (wq.rows != xp.cols || !wq.same_shape(wk) || !wq.same_shape(wv))
        throw ShapeError("attention weight shapes inconsistent with input " + xp.shape_str());

    AttentionTrace tr;
    const Matrix q = gemm(xp, wq);
    const Matrix k = gemm(xp, wk);
    const Matrix v = gemm(xp, wv);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(wq.cols));
    tr.scores = gemm(q, k, false, true);
    for (double& s : tr.scores.data) s *= inv_sqrt;
    tr.penalty = Matrix(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) tr.penalty.at(i, j) = eta * sigmas[j];
    Matrix shifted(n, n);
    for (std::size_t i = 0; i < n * n; ++i)
        shifted.data[i] = tr.scores.data[i] - tr.penalty.data[i];
    tr.attn = softmax_rows(shifted);
    tr.z = gemm(tr.attn, v);
    return tr;
}

std::size_t UfnetModel::head_in_dim() const {
    return n_tasks() * config.qkv_dim + (config.mode == FusionMode::Hybrid ? n_tasks() : 0);
}

std::vector<const Matrix*> UfnetModel::all_params() const {
    std::vector<const Matrix*> out;
    for (const auto& p : proj)
        for (const Matrix& m : p) out.push_back(&m);
    out.push_back(&wq);
    out.push_back(&wk);
    out.push_back(&wv);
    for (const Matrix& m : head.params()) out.push_back(&m);
    return out;
}

std::uint64_t UfnetModel::weights_hash() const { return param_hash(all_params()); }

namespace {

// shared projection math for the no-tape paths: linear -> (dropout) -> relu
// -> layer norm, matching the training graph's draw order
Matrix project_plain(const Matrix& x, const std::array<Matrix, 4>& p, double drop_p,
                     bool drop_active, Rng* rng) {
    Matrix h = add_row_broadcast(gemm(x, p[0]), p[1]);
    if (drop_active && drop_p > 0.0) dropout_in_place(h, drop_p, *rng);
    for (double& v : h.data) v = v > 0.0 ? v : 0.0;
    const Matrix& gain = p[2];
    const Matrix& shift = p[3];
    for (std::size_t r = 0; r < h.rows; ++r) {
        double* row = h.row_ptr(r);
        double mean = 0.0;
        for (std::size_t c = 0; c < h.cols; ++c) mean += row[c];
        mean /= static_cast<double>(h.cols);
        double var = 0.0;
        for (std::size_t c = 0; c < h.cols; ++c) {
            const double d = row[c] - mean;
            var += d * d;
        }
        var /= static_cast<double>(h.cols);
        const double inv_std = 1.0 / std::sqrt(var + kLnEps);
        for (std::size_t c = 0; c < h.cols; ++c)
            row[c] = gain.at(0, c) * ((row[c] - mean) * inv_std) + shift.at(0, c);
    }
    return h;
}

// batched single-head attention over per-session n x n score matrices
Matrix attention_plain(const std::vector<Matrix>& q, const std::vector<Matrix>& k,
                       const std::vector<Matrix>& v, const Matrix& penalty, double inv_sqrt) {
    const std::size_t n = q.size();
    const std::size_t b = q[0].rows;
    const std::size_t dq = q[0].cols;
    Matrix out(b, n * dq);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (b * n * dq > 4096)
#endif
    for (std::ptrdiff_t sp = 0; sp < static_cast<std::ptrdiff_t>(b); ++sp) {
        const std::size_t s = static_cast<std::size_t>(sp);
        double scores[kNumTasks][kNumTasks];
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                double dot = 0.0;
                const double* qi = q[i].row_ptr(s);
                const double* kj = k[j].row_ptr(s);
                for (std::size_t c = 0; c < dq; ++c) dot += qi[c] * kj[c];
                scores[i][j] = dot * inv_sqrt - penalty.at(s, j);
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            double mx = scores[i][0];
            for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, scores[i][j]);
            double denom = 0.0;
            double a[kNumTasks];
            for (std::size_t j = 0; j < n; ++j) {
                a[j] = std::exp(scores[i][j] - mx);
                denom += a[j];
            }
            double* dst = out.row_ptr(s) + i * dq;
            for (std::size_t c = 0; c < dq; ++c) dst[c] = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double w = a[j] / denom;
                const double* vj = v[j].row_ptr(s);
                for (std::size_t c = 0; c < dq; ++c) dst[c] += w * vj[c];
            }
        }
    }
    return out;
}

Matrix eta_penalty(const Matrix& sigma, double eta) {
    Matrix pen = sigma;
    for (double& v : pen.data) v *= eta;
    return pen;
}

Matrix forward_plain(const UfnetModel& m, const FusionDataset& d, bool drop_active, Rng* rng) {
    const std::size_t n = m.n_tasks();
    std::vector<Matrix> q(n), k(n), v(n);
    for (std::size_t i = 0; i < n; ++i) {
        Matrix xp = project_plain(d.x[i], m.proj[i], m.config.dropout_p, drop_active, rng);
        q[i] = gemm(xp, m.wq);
        k[i] = gemm(xp, m.wk);
        v[i] = gemm(xp, m.wv);
    }
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(m.config.qkv_dim));
    Matrix head_in = attention_plain(q, k, v, eta_penalty(d.sigma, m.config.eta), inv_sqrt);
    if (m.config.mode == FusionMode::Hybrid) {
        Matrix joined(head_in.rows, head_in.cols + n);
        for (std::size_t r = 0; r < head_in.rows; ++r) {
            std::copy(head_in.row_ptr(r), head_in.row_ptr(r) + head_in.cols, joined.row_ptr(r));
            std::copy(d.mu.row_ptr(r), d.mu.row_ptr(r) + n, joined.row_ptr(r) + head_in.cols);
        }
        head_in = std::move(joined);
    }
    return m.head.predict(head_in, drop_active, rng);
}

// builds the training graph for one batch; pv order matches collect_params
Var build_graph(const UfnetModel& m, Tape& t, const std::vector<Var>& pv,
                const FusionDataset& batch, bool drop_active, Rng& rng) {
    const std::size_t n = m.n_tasks();
    const double p = m.config.dropout_p;
    const Var wq = pv[4 * n], wk = pv[4 * n + 1], wv = pv[4 * n + 2];
    std::vector<Var> q, k, v;
    for (std::size_t i = 0; i < n; ++i) {
        Var h = linear(t, t.leaf(batch.x[i]), pv[4 * i], pv[4 * i + 1]);
        h = dropout(t, h, p, rng, drop_active);
        h = relu(t, h);
        h = layer_norm(t, h, pv[4 * i + 2], pv[4 * i + 3], kLnEps);
        q.push_back(matmul(t, h, wq));
        k.push_back(matmul(t, h, wk));
        v.push_back(matmul(t, h, wv));
    }
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(m.config.qkv_dim));
    Var head_in = attention_concat(t, q, k, v, eta_penalty(batch.sigma, m.config.eta), inv_sqrt);
    if (m.config.mode == FusionMode::Hybrid)
        head_in = concat_cols(t, head_in, t.leaf(batch.mu));
    const std::vector<Var> head_pv(pv.begin() + 4 * n + 3, pv.end());
    return m.head.graph(t, head_in, head_pv, drop_active, rng);
}

std::vector<Matrix*> collect_params(UfnetModel& m) {
    std::vector<Matrix*> out;
    for (auto& p : m.proj)
        for (Matrix& mat : p) out.push_back(&mat);
    out.push_back(&m.wq);
    out.push_back(&m.wk);
    out.push_back(&m.wv);
    for (Matrix& mat : m.head.params()) out.push_back(&mat);
    return out;
}

} // namespace

UfnetModel train_ufnet(const FusionDataset& train, const FusionDataset& val,
                       const UfnetConfig& cfg) {
    cfg.validate();
    const std::size_t n_tasks = cfg.tasks.size();
    check_dataset(train, n_tasks, "fusion train set");
    if (train.size() == 0) throw DataError("fusion train set is empty");
    const auto npos = std::count(train.labels.begin(), train.labels.end(), 1);
    if (npos == 0 || npos == static_cast<std::ptrdiff_t>(train.labels.size()))
        throw DataError("fusion training labels must include both classes");
    if (val.size() > 0) check_dataset(val, n_tasks, "fusion val set");
    if (cfg.sched.kind == SchedulerKind::Plateau && val.size() == 0)
        throw ConfigError("plateau scheduler needs a validation set");

    UfnetModel m;
    m.config = cfg;
    Rng init_rng = Rng::for_stream(cfg.seed, RngStream::WeightInit);
    for (std::size_t i = 0; i < n_tasks; ++i) {
        std::array<Matrix, 4> p;
        p[0] = glorot_uniform(train.x[i].cols, cfg.proj_dim, init_rng);
        p[1] = Matrix(1, cfg.proj_dim);
        p[2] = Matrix(1, cfg.proj_dim, 1.0); // layer-norm gain
        p[3] = Matrix(1, cfg.proj_dim);      // layer-norm shift
        m.proj.push_back(std::move(p));
    }
    m.wq = glorot_uniform(cfg.proj_dim, cfg.qkv_dim, init_rng);
    m.wk = glorot_uniform(cfg.proj_dim, cfg.qkv_dim, init_rng);
    m.wv = glorot_uniform(cfg.proj_dim, cfg.qkv_dim, init_rng);
    ShallowNetConfig head_cfg;
    head_cfg.in_dim = m.head_in_dim();
    head_cfg.hidden_layers = cfg.hidden_layers;
    head_cfg.hidden_dim = cfg.hidden_dim;
    head_cfg.dropout_p = cfg.dropout_p;
    m.head = ShallowNet(head_cfg, init_rng);

    std::vector<Matrix*> param_ptrs = collect_params(m);
    Optimizer optim(cfg.opt);
    Scheduler sched(cfg.sched);
    Rng drop_rng = Rng::for_stream(cfg.seed, RngStream::Dropout);

    const std::size_t n = train.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});

    m.history.reserve(cfg.epochs);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng = Rng::for_stream(cfg.seed, RngStream::Shuffle, epoch);
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t lo = 0; lo < n; lo += cfg.batch_size) {
            const std::size_t hi = std::min(n, lo + cfg.batch_size);
            const std::vector<std::size_t> slice(order.begin() + lo, order.begin() + hi);
            FusionDataset batch = train.rows(slice);

            Tape tape;
            std::vector<Var> pv;
            pv.reserve(param_ptrs.size());
            for (Matrix* p : param_ptrs) pv.push_back(tape.leaf(*p));
            Var probs = build_graph(m, tape, pv, batch, true, drop_rng);
            Var loss = bce_loss(tape, probs, batch.labels, cfg.smoothing);
            const double lval = tape.val(loss).at(0, 0);
            if (!std::isfinite(lval))
                throw NumericError("fusion training diverged: non-finite loss at epoch " +
                                   std::to_string(epoch) + ", batch " +
                                   std::to_string(lo / cfg.batch_size));
            tape.backward(loss);
            std::vector<const Matrix*> grads;
            grads.reserve(pv.size());
            for (Var pvar : pv) grads.push_back(&tape.grad(pvar));
            optim.step(param_ptrs, grads);
            epoch_loss += lval * static_cast<double>(hi - lo);
        }
        EpochRecord rec;
        rec.train_loss = epoch_loss / static_cast<double>(n);
        rec.lr = optim.lr();
        if (val.size() > 0) {
            Matrix vp = forward_plain(m, val, false, nullptr);
            rec.val_loss = bce_value(vp, val.labels, cfg.smoothing);
        } else {
            rec.val_loss = std::numeric_limits<double>::quiet_NaN();
        }
        optim.set_lr(sched.on_epoch_end(epoch + 1, rec.val_loss, optim.lr()));
        m.history.push_back(rec);
    }
    return m;
}

AttentionTrace attention_trace(const UfnetModel& m, const FusionDataset& data, std::size_t row) {
    check_dataset(data, m.n_tasks(), "attention trace input");
    if (row >= data.size()) throw DataError("attention trace: row out of range");
    const std::size_t n = m.n_tasks();
    Matrix xp(n, m.config.proj_dim);
    std::vector<double> sigmas(n);
    for (std::size_t i = 0; i < n; ++i) {
        Matrix one(1, data.x[i].cols);
        std::copy(data.x[i].row_ptr(row), data.x[i].row_ptr(row) + data.x[i].cols,
                  one.row_ptr(0));
        Matrix p = project_plain(one, m.proj[i], 0.0, false, nullptr);
        std::copy(p.row_ptr(0), p.row_ptr(0) + p.cols, xp.row_ptr(i));
        sigmas[i] = data.sigma.at(row, i);
    }
    return calibrated_attention(xp, m.wq, m.wk, m.wv, sigmas, m.config.eta);
}

std::vector<McPrediction> ufnet_forward(const UfnetModel& m, const FusionDataset& data,
                                        std::size_t rounds, std::uint64_t seed,
                                        double ci_level) {
    if (rounds == 0) throw ConfigError("mc rounds must be >= 1");
    check_dataset(data, m.n_tasks(), "fusion forward input");
    const std::size_t b = data.size();
    std::vector<McPrediction> out(b);
    if (m.config.dropout_p == 0.0) {
        Matrix p = forward_plain(m, data, false, nullptr);
        for (std::size_t i = 0; i < b; ++i) {
            out[i] = mc_prediction_from_rounds({p.at(i, 0)}, ci_level);
            out[i].n = rounds;
        }
        return out;
    }
    Matrix per_round(rounds, b);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (rounds >= 4)
#endif
    for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(rounds); ++r) {
        Rng rng = Rng::for_stream(seed, RngStream::McRound, static_cast<std::uint64_t>(r));
        Matrix p = forward_plain(m, data, true, &rng);
        for (std::size_t i = 0; i < b; ++i)
            per_round.at(static_cast<std::size_t>(r), i) = p.at(i, 0);
    }
    std::vector<double> col(rounds);
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t r = 0; r < rounds; ++r) col[r] = per_round.at(r, i);
        out[i] = mc_prediction_from_rounds(col, ci_level);
    }
    return out;
}

std::vector<double> ufnet_probs(const UfnetModel& m, const FusionDataset& data) {
    check_dataset(data, m.n_tasks(), "fusion forward input");
    Matrix p = forward_plain(m, data, false, nullptr);
    std::vector<double> out(p.rows);
    for (std::size_t i = 0; i < p.rows; ++i) out[i] = p.at(i, 0);
    return out;
}

int baseline_majority(const std::vector<int>& votes) {
    if (votes.size() != 3) throw ConfigError("majority vote needs exactly 3 labels");
    int sum = 0;
    for (int v : votes) {
        if (v != 0 && v != 1) throw DataError("majority vote labels must be 0/1");
        sum += v;
    }
    return sum >= 2 ? 1 : 0;
}

Matrix baseline_input(const FusionDataset& data, BaselineKind kind) {
    const std::size_t n = data.size();
    const std::size_t n_tasks = data.x.size();
    if (kind == BaselineKind::Majority)
        throw ConfigError("majority baseline has no trainable design matrix");
    std::size_t feat_dim = 0;
    for (const Matrix& xm : data.x) feat_dim += xm.cols;
    const bool logits = kind == BaselineKind::Late || kind == BaselineKind::Hybrid;
    const bool feats = kind == BaselineKind::Early || kind == BaselineKind::Hybrid;
    Matrix out(n, (feats ? feat_dim : 0) + (logits ? n_tasks : 0));
    for (std::size_t r = 0; r < n; ++r) {
        double* dst = out.row_ptr(r);
        if (feats)
            for (const Matrix& xm : data.x) {
                std::copy(xm.row_ptr(r), xm.row_ptr(r) + xm.cols, dst);
                dst += xm.cols;
            }
        if (logits)
            for (std::size_t t = 0; t < n_tasks; ++t) *dst++ = logit_of(data.mu.at(r, t));
    }
    return out;
}

} // namespace ufnet
