#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ufnet/matrix.hpp"

namespace ufnet {

inline constexpr std::size_t kNumTasks = 3;

enum class TaskId : std::size_t { Tapping = 0, Smile = 1, Speech = 2 };

inline constexpr std::array<std::size_t, kNumTasks> kCanonicalDims{130, 42, 1024};

const char* task_name(TaskId t);
TaskId task_from_string(const std::string& s);
std::vector<TaskId> tasks_from_csv_string(const std::string& csv); // "tapping,smile,speech"

// Empty string / NaN mean unknown.
struct Demographics {
    std::string sex;
    double age = std::numeric_limits<double>::quiet_NaN();
    std::string ethnicity;
    std::string cohort_name;
    double duration = std::numeric_limits<double>::quiet_NaN();
};

struct Session {
    std::string subject_id;
    std::string session_id;
    int label = 0; // 1 = PD
    Demographics demo;
    std::array<std::vector<double>, kNumTasks> features; // empty vector = task absent

    bool has_task(TaskId t) const { return !features[static_cast<std::size_t>(t)].empty(); }
    bool complete_for(const std::vector<TaskId>& tasks) const;
};

struct Cohort {
    std::vector<Session> sessions;
    std::array<std::size_t, kNumTasks> dims{0, 0, 0}; // 0 = task not loaded

    // (subject id, label) sorted by id; labels consistent per subject.
    std::vector<std::pair<std::string, int>> subjects() const;
};

// Optional adapter for externally released feature tables.
struct ColumnMapping {
    std::map<std::string, std::string> columns; // role -> header name
    std::map<std::string, int> label_map;       // raw label string -> 0/1
    std::string feature_prefix = "f";
    std::vector<std::string> feature_columns; // explicit list beats prefix
    // 0 = task's canonical width; SIZE_MAX = accept whatever the file has.
    std::size_t expected_dim = 0;

    static ColumnMapping from_json_file(const std::string& path);
};

// Reads one task's CSV into session fragments. Header must name subject_id,
// session_id, label plus feature columns; demographics optional. Throws
// DataError with line numbers on malformed rows.
std::vector<Session> load_task_csv(const std::string& path, TaskId task,
                                   const ColumnMapping& mapping = {});

// Merges per-task files; duplicate (subject, session, task) or conflicting
// labels/demographics are errors.
Cohort load_cohort(const std::map<TaskId, std::string>& paths,
                   const ColumnMapping& mapping = {});

// Writes canonical per-task CSVs plus subjects.csv into dir; returns the
// file paths written. Formatting round-trips doubles bit-exactly.
std::vector<std::string> write_cohort(const Cohort& cohort, const std::string& dir);

enum class Fold { Train = 0, Val = 1, Test = 2 };
const char* fold_name(Fold f);

struct SplitPlan {
    std::map<std::string, Fold> assignment; // subject id -> fold
    std::array<double, 3> ratios{0.6, 0.2, 0.2};
    std::uint64_t seed = 0;

    Fold fold_of(const std::string& subject_id) const;
};

// Stratified by label at subject level: per class, floor(r0*n) train,
// floor(r1*n) val, remainder test, after a seeded shuffle of sorted ids.
SplitPlan make_split(const std::vector<std::pair<std::string, int>>& subjects,
                     std::array<double, 3> ratios, std::uint64_t seed);

void assert_split_covers(const Cohort& cohort, const SplitPlan& plan);

// Sessions of a fold whose listed tasks are all present, in cohort order.
std::vector<std::size_t> sessions_in_fold(const Cohort& cohort, const SplitPlan& plan, Fold fold,
                                          const std::vector<TaskId>& required_tasks);

Matrix feature_matrix(const Cohort& cohort, const std::vector<std::size_t>& idx, TaskId task);
std::vector<int> labels_of(const Cohort& cohort, const std::vector<std::size_t>& idx);

struct SyntheticCohortSpec {
    std::size_t n_subjects = 200;
    double prevalence = 0.322;
    std::array<std::size_t, kNumTasks> dims{130, 42, 1024};
    std::array<std::size_t, kNumTasks> informative{8, 8, 8};
    std::array<double, kNumTasks> signal{0.42, 0.42, 0.42}; // class-mean separation per dim
    double signal_correlation = 0.0; // shared subject latent across tasks, [0,1]
    double noise_scale = 1.0;
    double extra_session_prob = 0.15;                 // chance of each extra session (max 3)
    std::array<double, kNumTasks> missing_prob{0, 0, 0};
    double corrupt_prob = 0.0;  // per session-task: features replaced by scaled noise
    double corrupt_scale = 4.0;
    double sex_attenuation = 0.0; // signal multiplier for female subjects = 1 - this
    std::uint64_t seed = 1;

    void validate() const;
};

Cohort gen_synthetic_cohort(const SyntheticCohortSpec& spec);

} // namespace ufnet
