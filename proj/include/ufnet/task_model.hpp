#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ufnet/matrix.hpp"
#include "ufnet/optim.hpp"
#include "ufnet/preprocess.hpp"
#include "ufnet/shallow_net.hpp"
#include "ufnet/uncertainty.hpp"

namespace ufnet {

struct TaskModelConfig {
    std::size_t hidden_layers = 0; // 0 or 1
    std::size_t hidden_dim = 64;
    double dropout_p = 0.0;
    std::size_t mc_rounds = 1;
    std::size_t batch_size = 256;
    std::size_t epochs = 50;
    OptimizerConfig opt;
    SchedulerConfig sched;
    double smoothing = 0.0;
    std::uint64_t seed = 1;
    PreprocessConfig preprocess;

    void validate() const;
};

struct EpochRecord {
    double train_loss = 0.0;
    double val_loss = 0.0;
    double lr = 0.0;
};

// Frozen after training: nothing here mutates on inference.
struct TaskModel {
    TaskModelConfig config;
    PreprocessPipeline pipeline;
    ShallowNet net;
    std::vector<EpochRecord> history;
    std::vector<std::string> notes;

    std::uint64_t weights_hash() const { return param_hash(net.params()); }
};

// Raw (unpreprocessed) matrices in; the pipeline is fitted on train only.
// Deterministic for a fixed config. Returns final-epoch weights.
TaskModel train_task_model(const Matrix& x_train, const std::vector<int>& y_train,
                           const Matrix& x_val, const std::vector<int>& y_val,
                           const TaskModelConfig& cfg);

// n stochastic forward passes with dropout active; round r draws its masks
// from an r-indexed substream, so parallel execution stays reproducible.
std::vector<McPrediction> predict_mc(const TaskModel& model, const Matrix& x_raw,
                                     std::size_t rounds, std::uint64_t seed,
                                     double ci_level = 0.95);

McPrediction predict_mc_one(const TaskModel& model, const std::vector<double>& x,
                            std::size_t rounds, std::uint64_t seed, double ci_level = 0.95);

// Deterministic probabilities with dropout off, preprocessing applied.
std::vector<double> predict_probs(const TaskModel& model, const Matrix& x_raw);

} // namespace ufnet
