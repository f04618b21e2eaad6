#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ufnet/bundle.hpp"
#include "ufnet/data.hpp"
#include "ufnet/fusion.hpp"
#include "ufnet/metrics.hpp"
#include "ufnet/task_model.hpp"

namespace ufnet {

// Cohort CSV locations plus the subject-split settings. Every command that
// touches data takes one of these and records it (with content hashes) in its
// manifest so the run can be replayed bit-exactly.
struct DataArgs {
    std::map<TaskId, std::string> csvs;
    std::string mapping_file; // optional column-mapping JSON
    std::array<double, 3> ratios{0.6, 0.2, 0.2};
    std::uint64_t split_seed = 0;
};

Cohort load_cohort_from(const DataArgs& d);

struct TrainTaskArgs {
    DataArgs data;
    TaskId task = TaskId::Tapping;
    TaskModelConfig config; // fully resolved (preset already applied)
    std::size_t n_seeds = 1; // sweep seeds config.seed .. config.seed+n-1
    std::string out_dir;
};
void run_train_task(const TrainTaskArgs& a);

struct TrainFuseArgs {
    DataArgs data;
    std::vector<std::string> task_bundles; // aligned with config.tasks
    UfnetConfig config;
    std::string baseline; // "" = ufnet; majority|late|early|hybrid otherwise
    bool compare_singletask = false;
    std::size_t n_seeds = 1;
    std::string out_dir;
};
void run_train_fuse(const TrainFuseArgs& a);

enum class WithholdPolicy { None, McCi, Conformal };
WithholdPolicy withhold_from_string(const std::string& s);
std::string to_string(WithholdPolicy p);

struct EvalArgs {
    DataArgs data;
    std::string bundle_file;
    WithholdPolicy withhold = WithholdPolicy::None;
    double alpha = 0.05;
    double ci_level = 0.95;
    bool platt = false;
    double smoothing = -1.0; // < 0 keeps the bundle's training smoothing
    std::size_t rounds = 0;  // 0 keeps the bundle's mc_rounds
    std::string out_dir;
};
void run_eval(const EvalArgs& a);

struct SubgroupArgs {
    DataArgs data;
    std::string bundle_file;
    std::size_t rounds = 0;
    std::string out_dir;
};
void run_subgroup(const SubgroupArgs& a);

ordered_json synth_spec_json(const SyntheticCohortSpec& spec);
SyntheticCohortSpec synth_spec_from_json(const ordered_json& j);

struct GenSynthArgs {
    std::string spec_file; // optional; inline spec used when empty
    SyntheticCohortSpec spec;
    std::string out_dir;
};
void run_gen_synth(const GenSynthArgs& a);

enum class SearchFamily { Task, TaskMc, Fusion };
SearchFamily search_family_from_string(const std::string& s);
std::string to_string(SearchFamily f);

struct SearchArgs {
    DataArgs data;
    SearchFamily family = SearchFamily::Task;
    TaskId task = TaskId::Tapping;         // task families
    std::vector<std::string> task_bundles; // fusion family
    std::vector<TaskId> tasks;             // fusion family
    std::size_t trials = 10;
    std::uint64_t search_seed = 1;
    std::string out_dir;
};
void run_search(const SearchArgs& a);

// Uniform draw from the published search space for one trial index.
TaskModelConfig sample_task_config(std::uint64_t search_seed, std::uint64_t trial, bool mc);
UfnetConfig sample_fusion_config(std::uint64_t search_seed, std::uint64_t trial,
                                 std::vector<TaskId> tasks);

// Replays the command recorded in a manifest into a fresh output directory;
// reports come out byte-identical.
void run_rerun(const std::string& manifest_file, const std::string& out_dir);

int cli_main(int argc, char** argv);

} // namespace ufnet
