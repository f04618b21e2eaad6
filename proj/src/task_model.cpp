#include "ufnet/task_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "ufnet/error.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ufnet {

void TaskModelConfig::validate() const {
    if (hidden_layers > 1)
        throw ConfigError("hidden layers must be 0 or 1, got " + std::to_string(hidden_layers));
    if (hidden_layers == 1 && hidden_dim == 0) throw ConfigError("hidden width must be >= 1");
    if (dropout_p < 0.0 || dropout_p >= 1.0)
        throw ConfigError("dropout p must be in [0, 1), got " + std::to_string(dropout_p));
    if (mc_rounds == 0) throw ConfigError("mc rounds must be >= 1");
    if (batch_size == 0) throw ConfigError("batch size must be >= 1");
    if (epochs == 0) throw ConfigError("epochs must be >= 1");
    if (smoothing < 0.0 || smoothing >= 0.5)
        throw ConfigError("label smoothing must be in [0, 0.5)");
    opt.validate();
    sched.validate();
    preprocess.validate();
}

namespace {

Matrix rows_subset(const Matrix& x, const std::vector<std::size_t>& idx, std::size_t lo,
                   std::size_t hi) {
    Matrix out(hi - lo, x.cols);
    for (std::size_t r = lo; r < hi; ++r)
        std::copy(x.row_ptr(idx[r]), x.row_ptr(idx[r]) + x.cols, out.row_ptr(r - lo));
    return out;
}

} // namespace

TaskModel train_task_model(const Matrix& x_train, const std::vector<int>& y_train,
                           const Matrix& x_val, const std::vector<int>& y_val,
                           const TaskModelConfig& cfg) {
    cfg.validate();
    if (x_train.rows != y_train.size())
        throw DataError("train set: " + std::to_string(x_train.rows) + " rows vs " +
                        std::to_string(y_train.size()) + " labels");
    if (x_val.rows != y_val.size())
        throw DataError("val set: " + std::to_string(x_val.rows) + " rows vs " +
                        std::to_string(y_val.size()) + " labels");
    const auto npos = std::count(y_train.begin(), y_train.end(), 1);
    if (npos == 0 || npos == static_cast<std::ptrdiff_t>(y_train.size()))
        throw DataError("training labels must include both classes");
    if (cfg.sched.kind == SchedulerKind::Plateau && x_val.rows == 0)
        throw ConfigError("plateau scheduler needs a validation set");

    TaskModel model;
    model.config = cfg;
    model.pipeline = PreprocessPipeline(cfg.preprocess);
    model.pipeline.fit(x_train);
    Matrix xt = model.pipeline.apply(x_train);
    std::vector<int> yt = y_train;
    if (cfg.preprocess.oversample != OversampleMethod::None) {
        Rng os_rng = Rng::for_stream(cfg.seed, RngStream::Oversample);
        OversampleResult res =
            oversample_minority(xt, yt, cfg.preprocess.oversample, cfg.preprocess.smote_k, os_rng);
        xt = std::move(res.x);
        yt = std::move(res.y);
        for (std::string& n : res.notes) model.notes.push_back(std::move(n));
    }
    const Matrix xv = x_val.rows > 0 ? model.pipeline.apply(x_val) : Matrix();

    ShallowNetConfig net_cfg;
    net_cfg.in_dim = model.pipeline.out_dim();
    net_cfg.hidden_layers = cfg.hidden_layers;
    net_cfg.hidden_dim = cfg.hidden_dim;
    net_cfg.dropout_p = cfg.dropout_p;
    Rng init_rng = Rng::for_stream(cfg.seed, RngStream::WeightInit);
    model.net = ShallowNet(net_cfg, init_rng);

    Optimizer optim(cfg.opt);
    Scheduler sched(cfg.sched);
    Rng drop_rng = Rng::for_stream(cfg.seed, RngStream::Dropout);

    const std::size_t n = xt.rows;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<Matrix*> param_ptrs;
    for (Matrix& p : model.net.params()) param_ptrs.push_back(&p);

    model.history.reserve(cfg.epochs);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng = Rng::for_stream(cfg.seed, RngStream::Shuffle, epoch);
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t lo = 0; lo < n; lo += cfg.batch_size) {
            const std::size_t hi = std::min(n, lo + cfg.batch_size);
            Matrix xb = rows_subset(xt, order, lo, hi);
            std::vector<int> yb(hi - lo);
            for (std::size_t r = lo; r < hi; ++r) yb[r - lo] = yt[order[r]];

            Tape tape;
            std::vector<Var> pv;
            pv.reserve(param_ptrs.size());
            for (Matrix* p : param_ptrs) pv.push_back(tape.leaf(*p));
            Var xvn = tape.leaf(std::move(xb));
            Var probs = model.net.graph(tape, xvn, pv, true, drop_rng);
            Var loss = bce_loss(tape, probs, yb, cfg.smoothing);
            const double lval = tape.val(loss).at(0, 0);
            if (!std::isfinite(lval))
                throw NumericError("training diverged: non-finite loss at epoch " +
                                   std::to_string(epoch) + ", batch " + std::to_string(lo / cfg.batch_size) +
                                   " (lr " + std::to_string(optim.lr()) + ")");
            tape.backward(loss);
            std::vector<const Matrix*> grads;
            grads.reserve(pv.size());
            for (Var v : pv) grads.push_back(&tape.grad(v));
            optim.step(param_ptrs, grads);
            epoch_loss += lval * static_cast<double>(hi - lo);
        }
        EpochRecord rec;
        rec.train_loss = epoch_loss / static_cast<double>(n);
        rec.lr = optim.lr();
        if (xv.rows > 0) {
            Matrix pv_probs = model.net.predict(xv, false, nullptr);
            rec.val_loss = bce_value(pv_probs, y_val, cfg.smoothing);
        } else {
            rec.val_loss = std::numeric_limits<double>::quiet_NaN();
        }
        optim.set_lr(sched.on_epoch_end(epoch + 1, rec.val_loss, optim.lr()));
        model.history.push_back(rec);
    }
    return model;
}

std::vector<McPrediction> predict_mc(const TaskModel& model, const Matrix& x_raw,
                                     std::size_t rounds, std::uint64_t seed, double ci_level) {
    if (rounds == 0) throw ConfigError("mc rounds must be >= 1");
    const Matrix x = model.pipeline.apply(x_raw);
    const std::size_t b = x.rows;
    std::vector<McPrediction> out(b);
    if (model.config.dropout_p == 0.0) {
        // every round is identical; one pass suffices and sigma is exactly 0
        Matrix p = model.net.predict(x, false, nullptr);
        for (std::size_t i = 0; i < b; ++i) {
            out[i] = mc_prediction_from_rounds({p.at(i, 0)}, ci_level);
            out[i].n = rounds;
        }
        return out;
    }
    Matrix per_round(rounds, b);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (rounds >= 8)
#endif
    for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(rounds); ++r) {
        Rng rng = Rng::for_stream(seed, RngStream::McRound, static_cast<std::uint64_t>(r));
        Matrix p = model.net.predict(x, true, &rng);
        for (std::size_t i = 0; i < b; ++i) per_round.at(static_cast<std::size_t>(r), i) = p.at(i, 0);
    }
    std::vector<double> col(rounds);
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t r = 0; r < rounds; ++r) col[r] = per_round.at(r, i);
        out[i] = mc_prediction_from_rounds(col, ci_level);
    }
    return out;
}

McPrediction predict_mc_one(const TaskModel& model, const std::vector<double>& x,
                            std::size_t rounds, std::uint64_t seed, double ci_level) {
    Matrix m(1, x.size());
    std::copy(x.begin(), x.end(), m.data.begin());
    return predict_mc(model, m, rounds, seed, ci_level)[0];
}

std::vector<double> predict_probs(const TaskModel& model, const Matrix& x_raw) {
    const Matrix x = model.pipeline.apply(x_raw);
    Matrix p = model.net.predict(x, false, nullptr);
    std::vector<double> out(p.rows);
    for (std::size_t i = 0; i < p.rows; ++i) out[i] = p.at(i, 0);
    return out;
}

} // namespace ufnet
