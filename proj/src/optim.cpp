#include "ufnet/optim.hpp"

#include <cmath>

#include "ufnet/error.hpp"

namespace ufnet {

OptimizerKind optimizer_kind_from_string(const std::string& s) {
    if (s == "sgd") return OptimizerKind::Sgd;
    if (s == "adamw") return OptimizerKind::AdamW;
    throw ConfigError("unknown optimizer '" + s + "' (expected sgd|adamw)");
}

std::string to_string(OptimizerKind k) {
    return k == OptimizerKind::Sgd ? "sgd" : "adamw";
}

SchedulerKind scheduler_kind_from_string(const std::string& s) {
    if (s == "none") return SchedulerKind::None;
    if (s == "step") return SchedulerKind::Step;
    if (s == "plateau") return SchedulerKind::Plateau;
    throw ConfigError("unknown scheduler '" + s + "' (expected none|step|plateau)");
}

std::string to_string(SchedulerKind k) {
    switch (k) {
        case SchedulerKind::None: return "none";
        case SchedulerKind::Step: return "step";
        default: return "plateau";
    }
}

void OptimizerConfig::validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr))
        throw ConfigError("optimizer: lr must be positive, got " + std::to_string(lr));
    if (momentum < 0.0 || momentum >= 1.0)
        throw ConfigError("optimizer: momentum must be in [0, 1)");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
        throw ConfigError("optimizer: betas must be in [0, 1)");
    if (eps <= 0.0) throw ConfigError("optimizer: eps must be positive");
    if (weight_decay < 0.0) throw ConfigError("optimizer: weight decay must be >= 0");
}

Optimizer::Optimizer(OptimizerConfig cfg) : cfg_(cfg) {
    cfg_.validate();
}

void Optimizer::set_lr(double lr) {
    if (!(lr > 0.0)) throw ConfigError("optimizer: lr must stay positive");
    cfg_.lr = lr;
}

void Optimizer::step(std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads) {
    if (params.size() != grads.size())
        throw ConfigError("optimizer: " + std::to_string(params.size()) + " params vs " +
                          std::to_string(grads.size()) + " grads");
    if (m_.empty()) {
        m_.reserve(params.size());
        for (const Matrix* p : params) m_.emplace_back(p->rows, p->cols, 0.0);
        if (cfg_.kind == OptimizerKind::AdamW) {
            v_.reserve(params.size());
            for (const Matrix* p : params) v_.emplace_back(p->rows, p->cols, 0.0);
        }
    }
    if (m_.size() != params.size())
        throw ConfigError("optimizer: parameter count changed between steps");
    for (std::size_t i = 0; i < params.size(); ++i) {
        require_same_shape(*params[i], *grads[i], "optimizer_step");
        if (!grads[i]->all_finite())
            throw NumericError("optimizer: non-finite gradient in parameter " + std::to_string(i) +
                               " (" + grads[i]->shape_str() + ") at step " +
                               std::to_string(steps_ + 1));
    }
    ++steps_;
    if (cfg_.kind == OptimizerKind::Sgd) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            double* th = params[i]->data.data();
            const double* g = grads[i]->data.data();
            double* vel = m_[i].data.data();
            const std::size_t n = params[i]->size();
            for (std::size_t j = 0; j < n; ++j) {
                vel[j] = cfg_.momentum * vel[j] + g[j];
                th[j] -= cfg_.lr * vel[j];
            }
        }
    } else {
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            double* th = params[i]->data.data();
            const double* g = grads[i]->data.data();
            double* m = m_[i].data.data();
            double* v = v_[i].data.data();
            const std::size_t n = params[i]->size();
            for (std::size_t j = 0; j < n; ++j) {
                m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
                v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
                const double mhat = m[j] / bc1;
                const double vhat = v[j] / bc2;
                th[j] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                                    cfg_.weight_decay * th[j]);
            }
        }
    }
}

void SchedulerConfig::validate() const {
    if (!(gamma > 0.0) || gamma > 1.0)
        throw ConfigError("scheduler: gamma must be in (0, 1], got " + std::to_string(gamma));
    if (kind == SchedulerKind::Step && step_size == 0)
        throw ConfigError("scheduler: step size must be >= 1");
    if (kind == SchedulerKind::Plateau && patience == 0)
        throw ConfigError("scheduler: patience must be >= 1");
}

Scheduler::Scheduler(SchedulerConfig cfg) : cfg_(cfg) {
    cfg_.validate();
}

double Scheduler::on_epoch_end(std::size_t completed_epochs, double val_loss, double current_lr) {
    switch (cfg_.kind) {
        case SchedulerKind::None:
            return current_lr;
        case SchedulerKind::Step:
            if (completed_epochs > 0 && completed_epochs % cfg_.step_size == 0)
                return current_lr * cfg_.gamma;
            return current_lr;
        case SchedulerKind::Plateau:
            if (!has_best_ || val_loss < best_ - kMinDelta) {
                best_ = val_loss;
                has_best_ = true;
                stale_ = 0;
                return current_lr;
            }
            if (++stale_ >= cfg_.patience) {
                stale_ = 0;
                return current_lr * cfg_.gamma;
            }
            return current_lr;
    }
    return current_lr;
}

} // namespace ufnet
