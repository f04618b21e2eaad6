#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "ufnet/error.hpp"
#include "ufnet/matrix.hpp"
#include "ufnet/rng.hpp"
#include "ufnet/shallow_net.hpp"
#include "ufnet/task_model.hpp"

using namespace ufnet;

namespace {

struct Toy {
    Matrix x_train, x_val;
    std::vector<int> y_train, y_val;
};

// two well-separated 2-D gaussian blobs
Toy separable_blobs(std::size_t n_train, std::size_t n_val, std::uint64_t seed) {
    Rng rng(seed);
    Toy t;
    t.x_train = Matrix(n_train, 2);
    t.x_val = Matrix(n_val, 2);
    const auto fill = [&](Matrix& x, std::vector<int>& y, std::size_t n) {
        y.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            const int label = rng.bernoulli(0.5) ? 1 : 0;
            const double cx = label ? 1.5 : -1.5;
            x.at(i, 0) = cx + 0.4 * rng.normal();
            x.at(i, 1) = cx + 0.4 * rng.normal();
            y[i] = label;
        }
        if (n < 2) return;
        y[0] = 0;
        y[1] = 1; // both classes guaranteed
        x.at(0, 0) = x.at(0, 1) = -1.5;
        x.at(1, 0) = x.at(1, 1) = 1.5;
    };
    fill(t.x_train, t.y_train, n_train);
    fill(t.x_val, t.y_val, n_val);
    return t;
}

TaskModelConfig blob_config() {
    TaskModelConfig cfg;
    cfg.hidden_layers = 0;
    cfg.batch_size = 32;
    cfg.epochs = 60;
    cfg.opt.kind = OptimizerKind::Sgd;
    cfg.opt.lr = 0.5;
    cfg.opt.momentum = 0.5;
    cfg.seed = 7;
    return cfg;
}

} // namespace

TEST_CASE("glorot init: bounds and determinism") {
    Rng a(5), b(5);
    Matrix w1 = glorot_uniform(30, 20, a);
    Matrix w2 = glorot_uniform(30, 20, b);
    CHECK(w1 == w2);
    const double limit = std::sqrt(6.0 / 50.0);
    for (double v : w1.data) {
        CHECK(v < limit);
        CHECK(v >= -limit);
    }
}

TEST_CASE("param hash: sensitive to any byte") {
    Rng rng(6);
    std::vector<Matrix> params = {glorot_uniform(4, 3, rng), Matrix(1, 3)};
    const std::uint64_t h = param_hash(params);
    CHECK(h == param_hash(params));
    params[1].at(0, 2) = 1e-300;
    CHECK(h != param_hash(params));
}

TEST_CASE("net predict matches the tape graph when dropout is off") {
    Rng rng(8);
    ShallowNetConfig cfg;
    cfg.in_dim = 5;
    cfg.hidden_layers = 1;
    cfg.hidden_dim = 4;
    ShallowNet net(cfg, rng);
    Matrix x(3, 5);
    for (double& v : x.data) v = rng.normal();
    Matrix direct = net.predict(x, false, nullptr);

    Tape t;
    std::vector<Var> pv;
    for (Matrix& p : net.params()) pv.push_back(t.leaf(p));
    Rng unused(1);
    Var out = net.graph(t, t.leaf(x), pv, false, unused);
    const Matrix& taped = t.val(out);
    REQUIRE(direct.same_shape(taped));
    for (std::size_t i = 0; i < direct.size(); ++i)
        CHECK(direct.data[i] == doctest::Approx(taped.data[i]).epsilon(1e-14));
}

TEST_CASE("training separates the blobs") {
    Toy toy = separable_blobs(200, 100, 3);
    TaskModel model = train_task_model(toy.x_train, toy.y_train, toy.x_val, toy.y_val,
                                       blob_config());
    CHECK(model.history.size() == 60);
    CHECK(model.history.front().train_loss > model.history.back().train_loss);
    std::vector<double> probs = predict_probs(model, toy.x_train);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < probs.size(); ++i)
        correct += (probs[i] > 0.5 ? 1 : 0) == toy.y_train[i];
    CHECK(static_cast<double>(correct) / probs.size() >= 0.98);
}

TEST_CASE("training is deterministic for a fixed config") {
    Toy toy = separable_blobs(120, 40, 4);
    TaskModelConfig cfg = blob_config();
    cfg.epochs = 10;
    cfg.dropout_p = 0.2;
    TaskModel a = train_task_model(toy.x_train, toy.y_train, toy.x_val, toy.y_val, cfg);
    TaskModel b = train_task_model(toy.x_train, toy.y_train, toy.x_val, toy.y_val, cfg);
    CHECK(a.weights_hash() == b.weights_hash());
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t e = 0; e < a.history.size(); ++e) {
        CHECK(a.history[e].train_loss == b.history[e].train_loss);
        CHECK(a.history[e].val_loss == b.history[e].val_loss);
    }
    cfg.seed = 8;
    TaskModel c = train_task_model(toy.x_train, toy.y_train, toy.x_val, toy.y_val, cfg);
    CHECK(a.weights_hash() != c.weights_hash());
}

TEST_CASE("p=0 model: repeated inference identical, sigma exactly zero") {
    Toy toy = separable_blobs(100, 30, 5);
    TaskModelConfig cfg = blob_config();
    cfg.epochs = 15;
    TaskModel model = train_task_model(toy.x_train, toy.y_train, toy.x_val, toy.y_val, cfg);
    auto a = predict_mc(model, toy.x_val, 5, 11);
    auto b = predict_mc(model, toy.x_val, 5, 99); // seed must not matter at p=0
    REQUIRE(a.size() == 30);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].mu == b[i].mu);
        CHECK(a[i].sigma == 0.0);
        CHECK(a[i].ci_low == a[i].mu);
        CHECK(a[i].ci_high == a[i].mu);
        CHECK(a[i].n == 5);
    }
}

TEST_CASE("n=1 round: sigma zero by convention") {
    Toy toy = separable_blobs(100, 10, 6);
    TaskModelConfig cfg = blob_config();
    cfg.epochs = 10;
    cfg.dropout_p = 0.3;
    TaskModel model = train_task_model(toy.x_train, toy.y_train, toy.x_val, toy.y_val, cfg);
    auto preds = predict_mc(model, toy.x_val, 1, 11);
    for (const McPrediction& p : preds) {
        CHECK(p.sigma == 0.0);
        CHECK(p.n == 1);
    }
}

TEST_CASE("mc estimates agree across independent replications within 3 SE") {
    Toy toy = separable_blobs(150, 6, 7);
    TaskModelConfig cfg = blob_config();
    cfg.epochs = 20;
    cfg.dropout_p = 0.3;
    TaskModel model = train_task_model(toy.x_train, toy.y_train, toy.x_val, toy.y_val, cfg);
    const std::size_t n = 1000;
    auto a = predict_mc(model, toy.x_val, n, 21);
    auto b = predict_mc(model, toy.x_val, n, 22);
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].sigma > 0.0);
        const double se_mu = std::sqrt((a[i].sigma * a[i].sigma + b[i].sigma * b[i].sigma) /
                                       static_cast<double>(n));
        CHECK(std::abs(a[i].mu - b[i].mu) < 3.0 * se_mu + 1e-12);
        // sd of the sample sd is roughly sigma/sqrt(2(n-1))
        const double se_sd = a[i].sigma / std::sqrt(2.0 * (n - 1.0));
        CHECK(std::abs(a[i].sigma - b[i].sigma) < 4.0 * se_sd + 1e-12);
    }
}

TEST_CASE("mc mean converges as rounds grow") {
    Toy toy = separable_blobs(150, 4, 8);
    TaskModelConfig cfg = blob_config();
    cfg.epochs = 20;
    cfg.dropout_p = 0.3;
    TaskModel model = train_task_model(toy.x_train, toy.y_train, toy.x_val, toy.y_val, cfg);
    auto small = predict_mc(model, toy.x_val, 1000, 31);
    auto big = predict_mc(model, toy.x_val, 10000, 31);
    for (std::size_t i = 0; i < small.size(); ++i)
        CHECK(std::abs(big[i].mu - small[i].mu) <
              3.0 * small[i].sigma / std::sqrt(1000.0) + 1e-12);
}

TEST_CASE("mc prediction determinism under a fixed seed") {
    Toy toy = separable_blobs(100, 8, 9);
    TaskModelConfig cfg = blob_config();
    cfg.epochs = 10;
    cfg.dropout_p = 0.25;
    TaskModel model = train_task_model(toy.x_train, toy.y_train, toy.x_val, toy.y_val, cfg);
    auto a = predict_mc(model, toy.x_val, 64, 17);
    auto b = predict_mc(model, toy.x_val, 64, 17);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].mu == b[i].mu);
        CHECK(a[i].sigma == b[i].sigma);
    }
    auto c = predict_mc(model, toy.x_val, 64, 18);
    bool differs = false;
    for (std::size_t i = 0; i < a.size(); ++i) differs = differs || a[i].mu != c[i].mu;
    CHECK(differs);
}

TEST_CASE("preprocessing rides inside the model") {
    Rng rng(41);
    Matrix x(80, 6);
    std::vector<int> y(80);
    for (std::size_t i = 0; i < 80; ++i) {
        y[i] = i % 2;
        const double c = y[i] ? 2.0 : -2.0;
        for (std::size_t j = 0; j < 6; ++j) x.at(i, j) = 100.0 + 5.0 * (c + rng.normal());
        x.at(i, 3) = x.at(i, 0); // duplicate column to trigger the filter
    }
    TaskModelConfig cfg = blob_config();
    cfg.epochs = 25;
    cfg.preprocess.drop_correlated = true;
    cfg.preprocess.corr_threshold = 0.95;
    cfg.preprocess.scaler = ScalerKind::Standard;
    TaskModel model = train_task_model(x, y, Matrix(0, 6), {}, cfg);
    CHECK(model.pipeline.out_dim() == 5);
    CHECK(model.net.config().in_dim == 5);
    std::vector<double> probs = predict_probs(model, x); // raw width accepted
    std::size_t correct = 0;
    for (std::size_t i = 0; i < 80; ++i) correct += (probs[i] > 0.5 ? 1 : 0) == y[i];
    CHECK(static_cast<double>(correct) / 80.0 >= 0.95);
}

TEST_CASE("oversampling integrates and notes propagate") {
    Rng rng(42);
    Matrix x(60, 3);
    std::vector<int> y(60, 0);
    for (std::size_t i = 0; i < 60; ++i)
        for (std::size_t j = 0; j < 3; ++j) x.at(i, j) = rng.normal();
    y[0] = y[1] = y[2] = 1; // 3 minority rows, below smote k
    for (int i : {0, 1, 2})
        for (std::size_t j = 0; j < 3; ++j) x.at(i, j) += 4.0;
    TaskModelConfig cfg = blob_config();
    cfg.epochs = 10;
    cfg.preprocess.oversample = OversampleMethod::Smote;
    TaskModel model = train_task_model(x, y, Matrix(0, 3), {}, cfg);
    REQUIRE(model.notes.size() == 1);
    CHECK(model.notes[0].find("falling back") != std::string::npos);
}

TEST_CASE("plateau scheduler decays the recorded lr") {
    Toy toy = separable_blobs(100, 40, 10);
    TaskModelConfig cfg = blob_config();
    cfg.epochs = 30;
    cfg.opt.lr = 1e-9; // moves less than the plateau min-delta -> stales out
    cfg.sched.kind = SchedulerKind::Plateau;
    cfg.sched.patience = 3;
    cfg.sched.gamma = 0.5;
    TaskModel model = train_task_model(toy.x_train, toy.y_train, toy.x_val, toy.y_val, cfg);
    CHECK(model.history.back().lr < cfg.opt.lr);
    for (std::size_t e = 1; e < model.history.size(); ++e)
        CHECK(model.history[e].lr <= model.history[e - 1].lr);
}

TEST_CASE("plateau scheduler without validation data is rejected") {
    Toy toy = separable_blobs(50, 10, 11);
    TaskModelConfig cfg = blob_config();
    cfg.sched.kind = SchedulerKind::Plateau;
    CHECK_THROWS_AS(train_task_model(toy.x_train, toy.y_train, Matrix(0, 2), {}, cfg),
                    ConfigError);
}

TEST_CASE("single-class training data is rejected") {
    Matrix x(10, 2, 0.5);
    std::vector<int> y(10, 1);
    CHECK_THROWS_AS(train_task_model(x, y, Matrix(0, 2), {}, blob_config()), DataError);
}

TEST_CASE("exploding training reports a numeric failure") {
    Toy toy = separable_blobs(64, 0, 12);
    TaskModelConfig cfg = blob_config();
    cfg.hidden_layers = 1;
    cfg.hidden_dim = 8;
    cfg.epochs = 6;
    cfg.batch_size = 64;
    cfg.opt.lr = 1e160;
    cfg.opt.momentum = 0.0;
    CHECK_THROWS_AS(train_task_model(toy.x_train, toy.y_train, Matrix(0, 2), {}, cfg),
                    NumericError);
}

TEST_CASE("predict dimension mismatch is a shape error") {
    Toy toy = separable_blobs(60, 0, 13);
    TaskModelConfig cfg = blob_config();
    cfg.epochs = 5;
    TaskModel model = train_task_model(toy.x_train, toy.y_train, Matrix(0, 2), {}, cfg);
    Matrix wrong(4, 3);
    CHECK_THROWS_AS(predict_probs(model, wrong), ShapeError);
    CHECK_THROWS_AS(predict_mc(model, wrong, 4, 1), ShapeError);
}

TEST_CASE("smile-like mc configuration trains end to end") {
    Toy toy = separable_blobs(300, 80, 14);
    TaskModelConfig cfg;
    cfg.hidden_layers = 0;
    cfg.dropout_p = 0.10661756438565197;
    cfg.mc_rounds = 50; // compact stand-in for the tuned round count
    cfg.batch_size = 256;
    cfg.epochs = 64;
    cfg.opt.kind = OptimizerKind::Sgd;
    cfg.opt.lr = 0.03265227174722892;
    cfg.opt.momentum = 0.5450637936769563;
    cfg.preprocess.scaler = ScalerKind::Standard;
    cfg.preprocess.oversample = OversampleMethod::Smote;
    cfg.seed = 462;
    TaskModel model = train_task_model(toy.x_train, toy.y_train, toy.x_val, toy.y_val, cfg);
    auto preds = predict_mc(model, toy.x_val, cfg.mc_rounds, cfg.seed);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        correct += predict_label(preds[i]) == toy.y_val[i];
    CHECK(static_cast<double>(correct) / preds.size() >= 0.95);
    for (const McPrediction& p : preds) CHECK(p.sigma >= 0.0);
}

TEST_CASE("adamw configuration trains") {
    Toy toy = separable_blobs(120, 40, 15);
    TaskModelConfig cfg;
    cfg.hidden_layers = 0;
    cfg.dropout_p = 0.2342;
    cfg.batch_size = 64;
    cfg.epochs = 40;
    cfg.opt.kind = OptimizerKind::AdamW;
    cfg.opt.lr = 0.05;
    cfg.seed = 303;
    TaskModel model = train_task_model(toy.x_train, toy.y_train, toy.x_val, toy.y_val, cfg);
    std::vector<double> probs = predict_probs(model, toy.x_val);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < probs.size(); ++i)
        correct += (probs[i] > 0.5 ? 1 : 0) == toy.y_val[i];
    CHECK(static_cast<double>(correct) / probs.size() >= 0.95);
}
