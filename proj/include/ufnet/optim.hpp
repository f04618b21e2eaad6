#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ufnet/matrix.hpp"

namespace ufnet {

enum class OptimizerKind { Sgd, AdamW };
enum class SchedulerKind { None, Step, Plateau };

OptimizerKind optimizer_kind_from_string(const std::string& s);
std::string to_string(OptimizerKind k);
SchedulerKind scheduler_kind_from_string(const std::string& s);
std::string to_string(SchedulerKind k);

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::Sgd;
    double lr = 0.01;
    double momentum = 0.0;       // SGD only
    double beta1 = 0.9;          // AdamW
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    void validate() const;
};

// Per-parameter moment buffers are allocated lazily on the first step and
// keyed by position, so the parameter list must keep a stable order.
class Optimizer {
public:
    explicit Optimizer(OptimizerConfig cfg);

    // In-place update; params[i] and grads[i] must have matching shapes.
    void step(std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads);

    double lr() const { return cfg_.lr; }
    void set_lr(double lr);
    const OptimizerConfig& config() const { return cfg_; }
    std::int64_t steps_taken() const { return steps_; }

private:
    OptimizerConfig cfg_;
    std::int64_t steps_ = 0;
    std::vector<Matrix> m_; // SGD velocity / AdamW first moment
    std::vector<Matrix> v_; // AdamW second moment
};

struct SchedulerConfig {
    SchedulerKind kind = SchedulerKind::None;
    std::size_t step_size = 1; // step: decay every step_size epochs
    std::size_t patience = 1;  // plateau: non-improving epochs before decay
    double gamma = 0.1;
    void validate() const;
};

// Called once per completed epoch; returns the learning rate to use next.
// The rate never increases. Plateau mode watches validation loss with a
// fixed min-delta of 1e-6.
class Scheduler {
public:
    explicit Scheduler(SchedulerConfig cfg);
    double on_epoch_end(std::size_t completed_epochs, double val_loss, double current_lr);

private:
    static constexpr double kMinDelta = 1e-6;
    SchedulerConfig cfg_;
    double best_ = 0.0;
    bool has_best_ = false;
    std::size_t stale_ = 0;
};

} // namespace ufnet
