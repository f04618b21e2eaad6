#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ufnet/data.hpp"
#include "ufnet/matrix.hpp"
#include "ufnet/optim.hpp"
#include "ufnet/shallow_net.hpp"
#include "ufnet/task_model.hpp"

namespace ufnet {

enum class FusionMode { Hybrid, Early };
FusionMode fusion_mode_from_string(const std::string& s);
std::string to_string(FusionMode m);

struct UfnetConfig {
    std::vector<TaskId> tasks; // 2 or 3 distinct tasks, fixed order
    std::size_t proj_dim = 512;
    std::size_t qkv_dim = 64;
    std::size_t hidden_layers = 1; // head depth, 0 or 1
    std::size_t hidden_dim = 128;
    double dropout_p = 0.0;
    double eta = 0.0; // uncertainty penalty strength
    std::size_t mc_rounds = 30;
    FusionMode mode = FusionMode::Hybrid;
    std::size_t batch_size = 1024;
    std::size_t epochs = 164;
    OptimizerConfig opt;
    SchedulerConfig sched;
    double smoothing = 0.0;
    std::uint64_t seed = 242;

    void validate() const;
};

// Aligned per-session rows for fusion: each task's preprocessed features plus
// the frozen task models' MC statistics. Row order is shared across members.
struct FusionDataset {
    std::vector<Matrix> x; // one [n, d_Xi] matrix per task, config order
    Matrix mu;             // [n, n_tasks]
    Matrix sigma;          // [n, n_tasks]
    std::vector<int> labels;
    std::vector<std::size_t> session_rows; // cohort indices, bookkeeping only

    std::size_t size() const { return labels.size(); }
    FusionDataset rows(const std::vector<std::size_t>& which) const;
};

// Runs each frozen task model over the chosen cohort sessions (those complete
// for `tasks`) and assembles the fusion rows. Models align with tasks.
FusionDataset make_fusion_dataset(const Cohort& cohort, const std::vector<std::size_t>& idx,
                                  const std::vector<TaskId>& tasks,
                                  const std::vector<const TaskModel*>& models);

struct AttentionTrace {
    Matrix scores;  // n x n, QK^T / sqrt(d_qkv)
    Matrix penalty; // n x n, row i holds eta*sigma_j
    Matrix attn;    // n x n, row-stochastic
    Matrix z;       // n x d_qkv contextual vectors
};

struct UfnetModel {
    UfnetConfig config;
    // per task: projection weight [d_Xi, d], bias [1, d], layer-norm gain and
    // shift [1, d]
    std::vector<std::array<Matrix, 4>> proj;
    Matrix wq, wk, wv; // [d, d_qkv], shared across tasks
    ShallowNet head;
    std::vector<EpochRecord> history;
    std::vector<std::uint64_t> task_hashes; // frozen task-model weight hashes

    std::size_t n_tasks() const { return config.tasks.size(); }
    std::size_t head_in_dim() const;
    std::vector<const Matrix*> all_params() const; // stable serialization order
    std::uint64_t weights_hash() const;
};

// Q = Xp Wq, K = Xp Wk, V = Xp Wv; scores = QK^T/sqrt(d_qkv); column j of the
// score matrix is penalized by eta*sigma_j before the row softmax.
AttentionTrace calibrated_attention(const Matrix& xp, const Matrix& wq, const Matrix& wk,
                                    const Matrix& wv, const std::vector<double>& sigmas,
                                    double eta);

// Projection + attention trace for one dataset row, dropout off.
AttentionTrace attention_trace(const UfnetModel& m, const FusionDataset& data, std::size_t row);

UfnetModel train_ufnet(const FusionDataset& train, const FusionDataset& val,
                       const UfnetConfig& cfg);

// n stochastic rounds with dropout active everywhere; round-indexed RNG
// substreams keep parallel execution reproducible.
std::vector<McPrediction> ufnet_forward(const UfnetModel& m, const FusionDataset& data,
                                        std::size_t rounds, std::uint64_t seed,
                                        double ci_level = 0.95);

// Deterministic probabilities with dropout off.
std::vector<double> ufnet_probs(const UfnetModel& m, const FusionDataset& data);

// Majority vote over exactly three task-level labels.
int baseline_majority(const std::vector<int>& votes);

enum class BaselineKind { Majority, Late, Early, Hybrid };
BaselineKind baseline_from_string(const std::string& s);
std::string to_string(BaselineKind k);

// Design matrix for the learned baselines: late = per-task logit(mu);
// early = concatenated features; hybrid = features + logits.
Matrix baseline_input(const FusionDataset& data, BaselineKind kind);

} // namespace ufnet
