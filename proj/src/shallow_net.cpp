#include "ufnet/shallow_net.hpp"

#include <cmath>
#include <cstring>

#include "ufnet/error.hpp"
#include "ufnet/kernels.hpp"

namespace ufnet {

void ShallowNetConfig::validate() const {
    if (in_dim == 0) throw ConfigError("net input dimension must be >= 1");
    if (hidden_layers > 1)
        throw ConfigError("hidden layers must be 0 or 1, got " + std::to_string(hidden_layers));
    if (hidden_layers == 1 && hidden_dim == 0) throw ConfigError("hidden width must be >= 1");
    if (dropout_p < 0.0 || dropout_p >= 1.0)
        throw ConfigError("dropout p must be in [0, 1), got " + std::to_string(dropout_p));
}

Matrix glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    Matrix w(fan_in, fan_out);
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& v : w.data) v = rng.uniform(-limit, limit);
    return w;
}

ShallowNet::ShallowNet(const ShallowNetConfig& cfg, Rng& init_rng) : cfg_(cfg) {
    cfg.validate();
    if (cfg.hidden_layers == 1) {
        params_.push_back(glorot_uniform(cfg.in_dim, cfg.hidden_dim, init_rng));
        params_.emplace_back(1, cfg.hidden_dim);
        params_.push_back(glorot_uniform(cfg.hidden_dim, 1, init_rng));
        params_.emplace_back(1, 1);
    } else {
        params_.push_back(glorot_uniform(cfg.in_dim, 1, init_rng));
        params_.emplace_back(1, 1);
    }
}

void ShallowNet::restore(const ShallowNetConfig& cfg, std::vector<Matrix> params) {
    cfg.validate();
    const std::size_t expected = cfg.hidden_layers == 1 ? 4 : 2;
    if (params.size() != expected)
        throw DataError("net restore: expected " + std::to_string(expected) +
                        " parameter tensors, got " + std::to_string(params.size()));
    cfg_ = cfg;
    params_ = std::move(params);
}

Var ShallowNet::graph(Tape& t, Var x, const std::vector<Var>& pv, bool dropout_active,
                      Rng& rng) const {
    Var h = dropout(t, x, cfg_.dropout_p, rng, dropout_active);
    h = linear(t, h, pv[0], pv[1]);
    if (cfg_.hidden_layers == 1) {
        h = relu(t, h);
        h = dropout(t, h, cfg_.dropout_p, rng, dropout_active);
        h = linear(t, h, pv[2], pv[3]);
    }
    return sigmoid(t, h);
}

void dropout_in_place(Matrix& x, double p, Rng& rng) {
    const double inv_keep = 1.0 / (1.0 - p);
    for (double& v : x.data) v = rng.uniform() < p ? 0.0 : v * inv_keep;
}

namespace {

void sigmoid_in_place(Matrix& x) {
    for (double& v : x.data) {
        if (v >= 0.0) {
            v = 1.0 / (1.0 + std::exp(-v));
        } else {
            const double e = std::exp(v);
            v = e / (1.0 + e);
        }
    }
}

} // namespace

Matrix ShallowNet::predict(const Matrix& x, bool dropout_active, Rng* rng) const {
    if (x.cols != cfg_.in_dim)
        throw ShapeError("net predict: expected " + std::to_string(cfg_.in_dim) +
                         " features, got " + std::to_string(x.cols));
    const bool drop = dropout_active && cfg_.dropout_p > 0.0;
    if (drop && !rng) throw ConfigError("net predict: dropout requested without rng");
    Matrix h = x;
    if (drop) dropout_in_place(h, cfg_.dropout_p, *rng);
    Matrix z = add_row_broadcast(gemm(h, params_[0]), params_[1]);
    if (cfg_.hidden_layers == 1) {
        for (double& v : z.data) v = v > 0.0 ? v : 0.0;
        if (drop) dropout_in_place(z, cfg_.dropout_p, *rng);
        z = add_row_broadcast(gemm(z, params_[2]), params_[3]);
    }
    sigmoid_in_place(z);
    return z;
}

std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t h) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

std::uint64_t param_hash(const std::vector<Matrix>& params) {
    std::uint64_t h = 14695981039346656037ull;
    for (const Matrix& m : params) {
        const std::uint64_t shape[2] = {m.rows, m.cols};
        h = fnv1a(shape, sizeof(shape), h);
        h = fnv1a(m.data.data(), m.data.size() * sizeof(double), h);
    }
    return h;
}

std::uint64_t param_hash(const std::vector<const Matrix*>& params) {
    std::uint64_t h = 14695981039346656037ull;
    for (const Matrix* m : params) {
        const std::uint64_t shape[2] = {m->rows, m->cols};
        h = fnv1a(shape, sizeof(shape), h);
        h = fnv1a(m->data.data(), m->data.size() * sizeof(double), h);
    }
    return h;
}

double bce_value(const Matrix& probs, const std::vector<int>& labels, double smoothing) {
    if (probs.cols != 1 || probs.rows != labels.size())
        throw ShapeError("bce: probs " + probs.shape_str() + " vs " +
                         std::to_string(labels.size()) + " labels");
    if (probs.rows == 0) throw ConfigError("bce: empty batch");
    if (smoothing < 0.0 || smoothing >= 0.5)
        throw ConfigError("label smoothing must be in [0, 0.5)");
    constexpr double kClamp = 1e-7;
    double sum = 0.0;
    for (std::size_t i = 0; i < probs.rows; ++i) {
        const double p = std::min(1.0 - kClamp, std::max(kClamp, probs.at(i, 0)));
        const double y = static_cast<double>(labels[i]);
        const double ys = y * (1.0 - smoothing) + (1.0 - y) * smoothing;
        sum -= ys * std::log(p) + (1.0 - ys) * std::log(1.0 - p);
    }
    return sum / static_cast<double>(probs.rows);
}

} // namespace ufnet
