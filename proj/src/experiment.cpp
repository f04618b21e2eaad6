#include "ufnet/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>

#include "ufnet/error.hpp"
#include "ufnet/metrics.hpp"
#include "ufnet/presets.hpp"
#include "ufnet/rng.hpp"
#include "ufnet/stats.hpp"
#include "ufnet/uncertainty.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fs = std::filesystem;

namespace ufnet {

namespace {

constexpr int kManifestVersion = 1;
constexpr double kThreshold = 0.5;

std::string fmt_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

// ---- shared output plumbing --------------------------------------------

struct OutputTracker {
    fs::path dir;
    std::vector<std::pair<std::string, std::string>> written; // name -> hash

    explicit OutputTracker(const std::string& out_dir) : dir(out_dir) {
        if (out_dir.empty()) throw ConfigError("output directory required");
        fs::create_directories(dir);
    }

    void write(const std::string& name, const std::string& text) {
        write_text_file((dir / name).string(), text);
        const std::string stored = read_text_file((dir / name).string());
        written.emplace_back(name, hex64(hash_bytes(stored.data(), stored.size())));
    }

    void write_json(const std::string& name, const ordered_json& j) { write(name, j.dump(2)); }

    void finish_manifest(const std::string& command, const ordered_json& args,
                         const std::vector<std::pair<std::string, std::string>>& inputs) {
        ordered_json m;
        m["command"] = command;
        m["format_version"] = kManifestVersion;
        m["args"] = args;
        ordered_json in = ordered_json::array();
        for (const auto& [path, hash] : inputs) {
            ordered_json e;
            e["path"] = path;
            e["hash"] = hash;
            in.push_back(std::move(e));
        }
        m["inputs"] = std::move(in);
        ordered_json out = ordered_json::array();
        for (const auto& [name, hash] : written) {
            ordered_json e;
            e["path"] = name;
            e["hash"] = hash;
            out.push_back(std::move(e));
        }
        m["outputs"] = std::move(out);
        write_text_file((dir / "manifest.json").string(), m.dump(2));
    }
};

std::vector<std::pair<std::string, std::string>> hash_inputs(
    const std::vector<std::string>& paths) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const std::string& p : paths) out.emplace_back(p, hex64(hash_file(p)));
    return out;
}

std::vector<std::string> data_paths(const DataArgs& d) {
    std::vector<std::string> paths;
    for (const auto& [task, path] : d.csvs) paths.push_back(path);
    if (!d.mapping_file.empty()) paths.push_back(d.mapping_file);
    return paths;
}

// ---- args <-> json ------------------------------------------------------

ordered_json data_args_json(const DataArgs& d) {
    ordered_json j;
    ordered_json csvs = ordered_json::object();
    for (const auto& [task, path] : d.csvs) csvs[task_name(task)] = path;
    j["csvs"] = std::move(csvs);
    j["mapping"] = d.mapping_file;
    j["ratios"] = d.ratios;
    j["split_seed"] = d.split_seed;
    return j;
}

DataArgs data_args_from_json(const ordered_json& j) {
    DataArgs d;
    for (const auto& [name, path] : j.at("csvs").items())
        d.csvs[task_from_string(name)] = path.get<std::string>();
    d.mapping_file = j.at("mapping").get<std::string>();
    for (std::size_t i = 0; i < 3; ++i) d.ratios[i] = j.at("ratios").at(i).get<double>();
    d.split_seed = j.at("split_seed").get<std::uint64_t>();
    return d;
}

// ---- metric reporting ---------------------------------------------------

EvalReport scored_metrics(const std::vector<int>& preds, const std::vector<int>& labels,
                          const std::vector<double>& probs, std::size_t withheld) {
    EvalReport r = binary_metrics(preds, labels, withheld);
    try {
        r.auroc = auroc(probs, labels);
        r.auprc = auprc(probs, labels);
    } catch (const DataError&) {
        // single-class retained set: rank metrics undefined
    }
    if (!labels.empty()) {
        r.ece = ece(probs, labels);
        r.brier = brier(probs, labels);
    }
    return r;
}

ordered_json metrics_json(const EvalReport& r) {
    ordered_json j;
    ordered_json counts;
    counts["tp"] = r.counts.tp;
    counts["fp"] = r.counts.fp;
    counts["tn"] = r.counts.tn;
    counts["fn"] = r.counts.fn;
    counts["withheld"] = r.counts.withheld;
    j["counts"] = std::move(counts);
    for (const auto& [name, value] : r.named()) j[name] = value;
    return j;
}

ordered_json aggregate_json(const SeedAggregate& agg) {
    ordered_json j;
    j["k"] = agg.k;
    for (const auto& [name, ci] : agg.metrics) {
        ordered_json e;
        e["mean"] = ci.mean;
        e["half_width"] = ci.half_width;
        j[name] = std::move(e);
    }
    return j;
}

void append_metrics_text(std::ostringstream& out, const std::string& title,
                         const EvalReport& r) {
    out << title << "\n";
    for (const auto& [name, value] : r.named())
        out << "  " << name << std::string(name.size() < 18 ? 18 - name.size() : 1, ' ')
            << fmt4(value) << "\n";
}

void append_aggregate_text(std::ostringstream& out, const std::string& title,
                           const SeedAggregate& agg) {
    out << title << " (" << agg.k << " seeds, mean +/- 95% CI)\n";
    for (const auto& [name, ci] : agg.metrics)
        out << "  " << name << std::string(name.size() < 18 ? 18 - name.size() : 1, ' ')
            << fmt4(ci.mean) << " +/- " << fmt4(ci.half_width) << "\n";
}

std::vector<int> hard_labels(const std::vector<double>& probs) {
    std::vector<int> out(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) out[i] = probs[i] > kThreshold ? 1 : 0;
    return out;
}

std::vector<double> mus_of(const std::vector<McPrediction>& preds) {
    std::vector<double> out(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) out[i] = preds[i].mu;
    return out;
}

// ---- fold plumbing ------------------------------------------------------

struct FoldSessions {
    std::vector<std::size_t> train, val, test;
};

FoldSessions fold_sessions(const Cohort& cohort, const SplitPlan& plan,
                           const std::vector<TaskId>& tasks) {
    assert_split_covers(cohort, plan);
    FoldSessions f;
    f.train = sessions_in_fold(cohort, plan, Fold::Train, tasks);
    f.val = sessions_in_fold(cohort, plan, Fold::Val, tasks);
    f.test = sessions_in_fold(cohort, plan, Fold::Test, tasks);
    return f;
}

ordered_json split_summary_json(const SplitPlan& plan, const FoldSessions& f) {
    std::array<std::size_t, 3> subj{0, 0, 0};
    for (const auto& [id, fold] : plan.assignment) ++subj[static_cast<std::size_t>(fold)];
    ordered_json j;
    j["train_subjects"] = subj[0];
    j["val_subjects"] = subj[1];
    j["test_subjects"] = subj[2];
    j["train_sessions"] = f.train.size();
    j["val_sessions"] = f.val.size();
    j["test_sessions"] = f.test.size();
    return j;
}

// Seeds for a sweep: base, base+1, ...
std::vector<std::uint64_t> sweep_seeds(std::uint64_t base, std::size_t n) {
    std::vector<std::uint64_t> seeds(n);
    for (std::size_t i = 0; i < n; ++i) seeds[i] = base + i;
    return seeds;
}

template <typename Fn>
void parallel_seeds(std::size_t n, Fn&& fn) {
    std::vector<std::exception_ptr> errors(n);
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) if (n > 1)
#endif
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
        try {
            fn(static_cast<std::size_t>(i));
        } catch (...) {
            errors[static_cast<std::size_t>(i)] = std::current_exception();
        }
    }
    for (const std::exception_ptr& e : errors)
        if (e) std::rethrow_exception(e);
}

// ---- fusion helpers -----------------------------------------------------

struct LoadedTaskBundles {
    std::vector<TaskBundle> bundles;
    std::vector<const TaskModel*> models() const {
        std::vector<const TaskModel*> out;
        for (const TaskBundle& b : bundles) out.push_back(&b.model);
        return out;
    }
};

LoadedTaskBundles load_task_bundles(const std::vector<std::string>& files,
                                    const std::vector<TaskId>& tasks) {
    if (files.size() != tasks.size())
        throw ConfigError("expected " + std::to_string(tasks.size()) + " task bundles, got " +
                          std::to_string(files.size()));
    LoadedTaskBundles out;
    for (std::size_t i = 0; i < files.size(); ++i) {
        TaskBundle b = load_task_bundle(files[i]);
        if (b.task != task_name(tasks[i]))
            throw ConfigError("task bundle " + files[i] + " holds a '" + b.task +
                              "' model, expected '" + task_name(tasks[i]) + "'");
        out.bundles.push_back(std::move(b));
    }
    const std::uint64_t h0 = split_hash(out.bundles[0].split);
    for (std::size_t i = 1; i < out.bundles.size(); ++i)
        if (split_hash(out.bundles[i].split) != h0)
            throw DataError("task bundles were trained on different subject splits; refusing "
                            "to fuse (leakage risk)");
    return out;
}

struct FusionFoldData {
    FusionDataset train, val, test;
};

FusionFoldData fusion_fold_data(const Cohort& cohort, const SplitPlan& plan,
                                const std::vector<TaskId>& tasks,
                                const std::vector<const TaskModel*>& models) {
    const FoldSessions f = fold_sessions(cohort, plan, tasks);
    FusionFoldData d;
    d.train = make_fusion_dataset(cohort, f.train, tasks, models);
    d.val = make_fusion_dataset(cohort, f.val, tasks, models);
    d.test = make_fusion_dataset(cohort, f.test, tasks, models);
    return d;
}

// Late/early/hybrid baselines reuse the fusion preset's training settings on
// the corresponding design matrix.
TaskModelConfig baseline_head_config(const UfnetConfig& f, std::uint64_t seed) {
    TaskModelConfig cfg;
    cfg.hidden_layers = f.hidden_layers;
    cfg.hidden_dim = f.hidden_dim;
    cfg.dropout_p = f.dropout_p;
    cfg.mc_rounds = f.mc_rounds;
    cfg.batch_size = f.batch_size;
    cfg.epochs = f.epochs;
    cfg.opt = f.opt;
    cfg.sched = f.sched;
    cfg.smoothing = f.smoothing;
    cfg.seed = seed;
    return cfg;
}

// ---- conformal / eval plumbing ------------------------------------------

// Splits the train-fold subjects 80/20 into a proper-train part and a
// calibration part, deterministically from the bundle's seed.
std::pair<std::set<std::string>, std::set<std::string>> conformal_partition(
    const SplitPlan& plan, std::uint64_t seed) {
    std::vector<std::string> train_subjects;
    for (const auto& [id, fold] : plan.assignment)
        if (fold == Fold::Train) train_subjects.push_back(id);
    std::sort(train_subjects.begin(), train_subjects.end());
    Rng rng = Rng::for_stream(seed, RngStream::Conformal);
    rng.shuffle(train_subjects);
    const std::size_t n_proper = (train_subjects.size() * 8) / 10;
    if (n_proper == 0 || n_proper == train_subjects.size())
        throw DataError("train fold too small to carve out a conformal calibration set");
    std::set<std::string> proper(train_subjects.begin(), train_subjects.begin() + n_proper);
    std::set<std::string> calib(train_subjects.begin() + n_proper, train_subjects.end());
    return {std::move(proper), std::move(calib)};
}

std::vector<std::size_t> filter_by_subject(const Cohort& cohort,
                                           const std::vector<std::size_t>& idx,
                                           const std::set<std::string>& allowed) {
    std::vector<std::size_t> out;
    for (std::size_t s : idx)
        if (allowed.count(cohort.sessions[s].subject_id)) out.push_back(s);
    return out;
}

const char* reason_key(AbstainReason r) {
    switch (r) {
        case AbstainReason::CiStraddlesThreshold: return "ci_straddles_threshold";
        case AbstainReason::ConformalAmbiguous: return "conformal_ambiguous";
        case AbstainReason::ConformalEmpty: return "conformal_empty";
        default: return "none";
    }
}

} // namespace

// ---- public helpers -----------------------------------------------------

Cohort load_cohort_from(const DataArgs& d) {
    if (d.csvs.empty()) throw ConfigError("no data files given");
    ColumnMapping mapping;
    if (!d.mapping_file.empty()) mapping = ColumnMapping::from_json_file(d.mapping_file);
    return load_cohort(d.csvs, mapping);
}

WithholdPolicy withhold_from_string(const std::string& s) {
    if (s == "none") return WithholdPolicy::None;
    if (s == "mc-ci") return WithholdPolicy::McCi;
    if (s == "conformal") return WithholdPolicy::Conformal;
    throw ConfigError("unknown withhold policy '" + s + "' (expected none|mc-ci|conformal)");
}

std::string to_string(WithholdPolicy p) {
    switch (p) {
        case WithholdPolicy::None: return "none";
        case WithholdPolicy::McCi: return "mc-ci";
        default: return "conformal";
    }
}

SearchFamily search_family_from_string(const std::string& s) {
    if (s == "task") return SearchFamily::Task;
    if (s == "task-mc") return SearchFamily::TaskMc;
    if (s == "fusion") return SearchFamily::Fusion;
    throw ConfigError("unknown search family '" + s + "' (expected task|task-mc|fusion)");
}

std::string to_string(SearchFamily f) {
    switch (f) {
        case SearchFamily::Task: return "task";
        case SearchFamily::TaskMc: return "task-mc";
        default: return "fusion";
    }
}

// ---- train-task ---------------------------------------------------------

void run_train_task(const TrainTaskArgs& a) {
    a.config.validate();
    if (a.n_seeds == 0) throw ConfigError("train-task: need at least one seed");
    if (!a.data.csvs.count(a.task))
        throw ConfigError(std::string("train-task: no csv given for task '") +
                          task_name(a.task) + "'");
    OutputTracker out(a.out_dir);
    const Cohort cohort = load_cohort_from(a.data);
    const SplitPlan plan = make_split(cohort.subjects(), a.data.ratios, a.data.split_seed);
    const std::vector<TaskId> req{a.task};
    const FoldSessions folds = fold_sessions(cohort, plan, req);

    const Matrix x_tr = feature_matrix(cohort, folds.train, a.task);
    const std::vector<int> y_tr = labels_of(cohort, folds.train);
    const Matrix x_va = feature_matrix(cohort, folds.val, a.task);
    const std::vector<int> y_va = labels_of(cohort, folds.val);
    const Matrix x_te = feature_matrix(cohort, folds.test, a.task);
    const std::vector<int> y_te = labels_of(cohort, folds.test);

    const std::vector<std::uint64_t> seeds = sweep_seeds(a.config.seed, a.n_seeds);
    const auto inputs = hash_inputs(data_paths(a.data));

    struct SeedResult {
        TaskModel model;
        EvalReport val, test;
    };
    std::vector<SeedResult> results(seeds.size());
    parallel_seeds(seeds.size(), [&](std::size_t i) {
        TaskModelConfig cfg = a.config;
        cfg.seed = seeds[i];
        SeedResult r;
        r.model = train_task_model(x_tr, y_tr, x_va, y_va, cfg);
        const std::vector<double> pv =
            mus_of(predict_mc(r.model, x_va, cfg.mc_rounds, cfg.seed));
        const std::vector<double> pt =
            mus_of(predict_mc(r.model, x_te, cfg.mc_rounds, cfg.seed));
        r.val = scored_metrics(hard_labels(pv), y_va, pv, 0);
        r.test = scored_metrics(hard_labels(pt), y_te, pt, 0);
        results[i] = std::move(r);
    });

    ordered_json report;
    report["command"] = "train-task";
    report["task"] = task_name(a.task);
    report["seeds"] = seeds;
    report["split"] = split_summary_json(plan, folds);
    ordered_json per_seed = ordered_json::array();
    std::vector<EvalReport> vals, tests;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        const SeedResult& r = results[i];
        ordered_json e;
        e["seed"] = seeds[i];
        e["final_train_loss"] = r.model.history.back().train_loss;
        e["weights_hash"] = hex64(r.model.weights_hash());
        e["val"] = metrics_json(r.val);
        e["test"] = metrics_json(r.test);
        e["notes"] = r.model.notes;
        per_seed.push_back(std::move(e));
        vals.push_back(r.val);
        tests.push_back(r.test);
    }
    report["per_seed"] = std::move(per_seed);
    std::ostringstream text;
    text << "train-task " << task_name(a.task) << " over " << seeds.size() << " seed(s)\n";
    if (seeds.size() >= 2) {
        const SeedAggregate agg_val = aggregate_reports(vals);
        const SeedAggregate agg_test = aggregate_reports(tests);
        report["aggregate_val"] = aggregate_json(agg_val);
        report["aggregate_test"] = aggregate_json(agg_test);
        append_aggregate_text(text, "validation", agg_val);
        append_aggregate_text(text, "test", agg_test);
    } else {
        append_metrics_text(text, "validation", vals[0]);
        append_metrics_text(text, "test", tests[0]);
    }

    for (std::size_t i = 0; i < seeds.size(); ++i) {
        TaskBundle b;
        b.task = task_name(a.task);
        b.model = results[i].model;
        b.split = plan;
        b.inputs = inputs;
        const std::string name = "bundle_seed" + std::to_string(seeds[i]) + ".json";
        save_task_bundle(b, (out.dir / name).string());
        const std::string stored = read_text_file((out.dir / name).string());
        out.written.emplace_back(name, hex64(hash_bytes(stored.data(), stored.size())));
    }
    out.write_json("report.json", report);
    out.write("report.txt", text.str());

    ordered_json args;
    args["data"] = data_args_json(a.data);
    args["task"] = task_name(a.task);
    args["config"] = json_of(a.config);
    args["n_seeds"] = a.n_seeds;
    out.finish_manifest("train-task", args, inputs);
}

// ---- train-fuse ---------------------------------------------------------

void run_train_fuse(const TrainFuseArgs& a) {
    a.config.validate();
    if (a.n_seeds == 0) throw ConfigError("train-fuse: need at least one seed");
    const bool is_baseline = !a.baseline.empty();
    BaselineKind baseline_kind = BaselineKind::Majority;
    if (is_baseline) baseline_kind = baseline_from_string(a.baseline);
    if (is_baseline && baseline_kind == BaselineKind::Majority && a.config.tasks.size() != 3)
        throw ConfigError("majority baseline needs all three tasks");

    OutputTracker out(a.out_dir);
    const Cohort cohort = load_cohort_from(a.data);
    const LoadedTaskBundles tb = load_task_bundles(a.task_bundles, a.config.tasks);
    const SplitPlan plan = tb.bundles[0].split;
    const FusionFoldData data =
        fusion_fold_data(cohort, plan, a.config.tasks, tb.models());
    const FoldSessions folds = fold_sessions(cohort, plan, a.config.tasks);

    std::vector<std::string> in_paths = data_paths(a.data);
    in_paths.insert(in_paths.end(), a.task_bundles.begin(), a.task_bundles.end());
    const auto inputs = hash_inputs(in_paths);

    ordered_json report;
    report["command"] = "train-fuse";
    ordered_json tasks = ordered_json::array();
    for (TaskId t : a.config.tasks) tasks.push_back(task_name(t));
    report["tasks"] = tasks;
    report["model"] = is_baseline ? a.baseline : "ufnet";
    report["split"] = split_summary_json(plan, folds);
    std::ostringstream text;

    if (is_baseline && baseline_kind == BaselineKind::Majority) {
        const auto vote_all = [&](const FusionDataset& d) {
            std::vector<int> preds(d.size());
            for (std::size_t r = 0; r < d.size(); ++r)
                preds[r] = baseline_majority({d.mu.at(r, 0) > kThreshold ? 1 : 0,
                                              d.mu.at(r, 1) > kThreshold ? 1 : 0,
                                              d.mu.at(r, 2) > kThreshold ? 1 : 0});
            return preds;
        };
        const EvalReport val = binary_metrics(vote_all(data.val), data.val.labels, 0);
        const EvalReport test = binary_metrics(vote_all(data.test), data.test.labels, 0);
        report["val"] = metrics_json(val);
        report["test"] = metrics_json(test);
        text << "majority vote over task verdicts\n";
        append_metrics_text(text, "validation", val);
        append_metrics_text(text, "test", test);
    } else {
        const std::vector<std::uint64_t> seeds = sweep_seeds(a.config.seed, a.n_seeds);
        report["seeds"] = seeds;
        struct SeedResult {
            EvalReport val, test;
            std::uint64_t weights_hash = 0;
        };
        std::vector<SeedResult> results(seeds.size());
        std::vector<UfnetModel> models(is_baseline ? 0 : seeds.size());

        parallel_seeds(seeds.size(), [&](std::size_t i) {
            SeedResult r;
            if (is_baseline) {
                const Matrix bx_tr = baseline_input(data.train, baseline_kind);
                const Matrix bx_va = baseline_input(data.val, baseline_kind);
                const Matrix bx_te = baseline_input(data.test, baseline_kind);
                const TaskModelConfig cfg = baseline_head_config(a.config, seeds[i]);
                const TaskModel head =
                    train_task_model(bx_tr, data.train.labels, bx_va, data.val.labels, cfg);
                const std::vector<double> pv =
                    mus_of(predict_mc(head, bx_va, cfg.mc_rounds, cfg.seed));
                const std::vector<double> pt =
                    mus_of(predict_mc(head, bx_te, cfg.mc_rounds, cfg.seed));
                r.val = scored_metrics(hard_labels(pv), data.val.labels, pv, 0);
                r.test = scored_metrics(hard_labels(pt), data.test.labels, pt, 0);
                r.weights_hash = head.weights_hash();
            } else {
                UfnetConfig cfg = a.config;
                cfg.seed = seeds[i];
                UfnetModel m = train_ufnet(data.train, data.val, cfg);
                m.task_hashes.clear();
                for (const TaskBundle& b : tb.bundles)
                    m.task_hashes.push_back(b.model.weights_hash());
                const std::vector<double> pv =
                    mus_of(ufnet_forward(m, data.val, cfg.mc_rounds, cfg.seed));
                const std::vector<double> pt =
                    mus_of(ufnet_forward(m, data.test, cfg.mc_rounds, cfg.seed));
                r.val = scored_metrics(hard_labels(pv), data.val.labels, pv, 0);
                r.test = scored_metrics(hard_labels(pt), data.test.labels, pt, 0);
                r.weights_hash = m.weights_hash();
                models[i] = std::move(m);
            }
            results[i] = std::move(r);
        });

        ordered_json per_seed = ordered_json::array();
        std::vector<EvalReport> vals, tests;
        for (std::size_t i = 0; i < seeds.size(); ++i) {
            ordered_json e;
            e["seed"] = seeds[i];
            e["weights_hash"] = hex64(results[i].weights_hash);
            e["val"] = metrics_json(results[i].val);
            e["test"] = metrics_json(results[i].test);
            per_seed.push_back(std::move(e));
            vals.push_back(results[i].val);
            tests.push_back(results[i].test);
        }
        report["per_seed"] = std::move(per_seed);
        text << (is_baseline ? a.baseline + " baseline" : std::string("ufnet ")
                 + to_string(a.config.mode) + " fusion")
             << " over " << seeds.size() << " seed(s)\n";
        if (seeds.size() >= 2) {
            const SeedAggregate agg_val = aggregate_reports(vals);
            const SeedAggregate agg_test = aggregate_reports(tests);
            report["aggregate_val"] = aggregate_json(agg_val);
            report["aggregate_test"] = aggregate_json(agg_test);
            append_aggregate_text(text, "validation", agg_val);
            append_aggregate_text(text, "test", agg_test);
        } else {
            append_metrics_text(text, "validation", vals[0]);
            append_metrics_text(text, "test", tests[0]);
        }

        for (std::size_t i = 0; i < models.size(); ++i) {
            FusionBundle fb;
            fb.model = models[i];
            fb.split = plan;
            fb.task_bundle_files = a.task_bundles;
            fb.inputs = inputs;
            const std::string name = "fusion_seed" + std::to_string(seeds[i]) + ".json";
            save_fusion_bundle(fb, (out.dir / name).string());
            const std::string stored = read_text_file((out.dir / name).string());
            out.written.emplace_back(name, hex64(hash_bytes(stored.data(), stored.size())));
        }
    }

    if (a.compare_singletask) {
        // task-model scores on the same all-tasks-complete sessions
        ordered_json cmp = ordered_json::array();
        for (std::size_t t = 0; t < a.config.tasks.size(); ++t) {
            std::vector<double> pv(data.val.size()), pt(data.test.size());
            for (std::size_t r = 0; r < pv.size(); ++r) pv[r] = data.val.mu.at(r, t);
            for (std::size_t r = 0; r < pt.size(); ++r) pt[r] = data.test.mu.at(r, t);
            const EvalReport val = scored_metrics(hard_labels(pv), data.val.labels, pv, 0);
            const EvalReport test = scored_metrics(hard_labels(pt), data.test.labels, pt, 0);
            ordered_json e;
            e["task"] = task_name(a.config.tasks[t]);
            e["val"] = metrics_json(val);
            e["test"] = metrics_json(test);
            cmp.push_back(std::move(e));
            append_metrics_text(text, std::string("single-task ") +
                                          task_name(a.config.tasks[t]) + " (test)",
                                test);
        }
        report["single_task"] = std::move(cmp);
    }

    out.write_json("report.json", report);
    out.write("report.txt", text.str());

    ordered_json args;
    args["data"] = data_args_json(a.data);
    args["task_bundles"] = a.task_bundles;
    args["config"] = json_of(a.config);
    args["baseline"] = a.baseline;
    args["compare_singletask"] = a.compare_singletask;
    args["n_seeds"] = a.n_seeds;
    out.finish_manifest("train-fuse", args, inputs);
}

// ---- eval ---------------------------------------------------------------

namespace {

// Everything the withholding policies need, uniform across bundle kinds.
struct EvalContext {
    std::vector<std::string> session_ids, subject_ids;
    std::vector<int> labels;
    std::vector<McPrediction> preds; // over the test fold
    std::size_t rounds = 0;
    std::uint64_t seed = 0;
    double train_smoothing = 0.0;
    // conformal support: mu over the calibration sessions from the retrained
    // model, plus the retrained model's test-fold mu
    std::vector<double> calib_mu;
    std::vector<int> calib_labels;
    std::vector<McPrediction> retrained_preds;
};

EvalContext eval_task_bundle(const TaskBundle& b, const Cohort& cohort, const EvalArgs& a) {
    const TaskId task = task_from_string(b.task);
    const std::vector<TaskId> req{task};
    const FoldSessions folds = fold_sessions(cohort, b.split, req);
    EvalContext ctx;
    ctx.rounds = a.rounds ? a.rounds : b.model.config.mc_rounds;
    ctx.seed = b.model.config.seed;
    ctx.train_smoothing = b.model.config.smoothing;
    for (std::size_t s : folds.test) {
        ctx.session_ids.push_back(cohort.sessions[s].session_id);
        ctx.subject_ids.push_back(cohort.sessions[s].subject_id);
    }
    ctx.labels = labels_of(cohort, folds.test);
    const Matrix x_te = feature_matrix(cohort, folds.test, task);
    ctx.preds = predict_mc(b.model, x_te, ctx.rounds, ctx.seed, a.ci_level);

    if (a.withhold == WithholdPolicy::Conformal) {
        const auto [proper, calib] = conformal_partition(b.split, ctx.seed);
        const std::vector<std::size_t> proper_rows =
            filter_by_subject(cohort, folds.train, proper);
        const std::vector<std::size_t> calib_rows =
            filter_by_subject(cohort, folds.train, calib);
        if (calib_rows.size() < 10)
            throw DataError("conformal calibration set has " +
                            std::to_string(calib_rows.size()) + " sessions, need >= 10");
        TaskModelConfig cfg = b.model.config;
        if (a.smoothing >= 0.0) cfg.smoothing = a.smoothing;
        const TaskModel retrained = train_task_model(
            feature_matrix(cohort, proper_rows, task), labels_of(cohort, proper_rows),
            feature_matrix(cohort, folds.val, task), labels_of(cohort, folds.val), cfg);
        ctx.train_smoothing = cfg.smoothing;
        ctx.calib_mu = mus_of(predict_mc(retrained, feature_matrix(cohort, calib_rows, task),
                                         ctx.rounds, ctx.seed, a.ci_level));
        ctx.calib_labels = labels_of(cohort, calib_rows);
        ctx.retrained_preds = predict_mc(retrained, x_te, ctx.rounds, ctx.seed, a.ci_level);
    }
    return ctx;
}

EvalContext eval_fusion_bundle(const FusionBundle& fb, const Cohort& cohort,
                               const EvalArgs& a) {
    const UfnetConfig& cfg = fb.model.config;
    const LoadedTaskBundles tb = load_task_bundles(fb.task_bundle_files, cfg.tasks);
    for (std::size_t i = 0; i < tb.bundles.size(); ++i)
        if (!fb.model.task_hashes.empty() &&
            tb.bundles[i].model.weights_hash() != fb.model.task_hashes[i])
            throw DataError("task bundle " + fb.task_bundle_files[i] +
                            " does not match the weights this fusion model was trained on");
    if (split_hash(tb.bundles[0].split) != split_hash(fb.split))
        throw DataError("fusion bundle and task bundles disagree on the subject split");

    const FoldSessions folds = fold_sessions(cohort, fb.split, cfg.tasks);
    const FusionDataset test_data =
        make_fusion_dataset(cohort, folds.test, cfg.tasks, tb.models());
    EvalContext ctx;
    ctx.rounds = a.rounds ? a.rounds : cfg.mc_rounds;
    ctx.seed = cfg.seed;
    ctx.train_smoothing = cfg.smoothing;
    for (std::size_t s : test_data.session_rows) {
        ctx.session_ids.push_back(cohort.sessions[s].session_id);
        ctx.subject_ids.push_back(cohort.sessions[s].subject_id);
    }
    ctx.labels = test_data.labels;
    ctx.preds = ufnet_forward(fb.model, test_data, ctx.rounds, ctx.seed, a.ci_level);

    if (a.withhold == WithholdPolicy::Conformal) {
        const auto [proper, calib] = conformal_partition(fb.split, ctx.seed);
        const std::vector<std::size_t> proper_rows =
            filter_by_subject(cohort, folds.train, proper);
        const std::vector<std::size_t> calib_rows =
            filter_by_subject(cohort, folds.train, calib);
        const FusionDataset proper_data =
            make_fusion_dataset(cohort, proper_rows, cfg.tasks, tb.models());
        const FusionDataset calib_data =
            make_fusion_dataset(cohort, calib_rows, cfg.tasks, tb.models());
        if (calib_data.size() < 10)
            throw DataError("conformal calibration set has " +
                            std::to_string(calib_data.size()) + " sessions, need >= 10");
        const FusionDataset val_data =
            make_fusion_dataset(cohort, folds.val, cfg.tasks, tb.models());
        UfnetConfig cfg2 = cfg;
        if (a.smoothing >= 0.0) cfg2.smoothing = a.smoothing;
        const UfnetModel retrained = train_ufnet(proper_data, val_data, cfg2);
        ctx.train_smoothing = cfg2.smoothing;
        ctx.calib_mu =
            mus_of(ufnet_forward(retrained, calib_data, ctx.rounds, ctx.seed, a.ci_level));
        ctx.calib_labels = calib_data.labels;
        ctx.retrained_preds =
            ufnet_forward(retrained, test_data, ctx.rounds, ctx.seed, a.ci_level);
    }
    return ctx;
}

} // namespace

void run_eval(const EvalArgs& a) {
    if (a.smoothing >= 0.5) throw ConfigError("label smoothing must be below 0.5");
    if ((a.platt || a.smoothing >= 0.0) && a.withhold != WithholdPolicy::Conformal)
        throw ConfigError("--platt and --smoothing apply to conformal withholding only");
    if (!(a.alpha > 0.0 && a.alpha < 1.0)) throw ConfigError("alpha must be in (0, 1)");

    OutputTracker out(a.out_dir);
    const Cohort cohort = load_cohort_from(a.data);
    const std::string kind = bundle_kind(a.bundle_file);

    std::vector<std::string> in_paths = data_paths(a.data);
    in_paths.push_back(a.bundle_file);

    std::optional<TaskBundle> task_b;
    std::optional<FusionBundle> fusion_b;
    std::uint64_t model_hash = 0;
    std::vector<std::pair<std::string, std::string>> bundle_inputs;
    if (kind == "task_bundle") {
        task_b = load_task_bundle(a.bundle_file);
        bundle_inputs = task_b->inputs;
        model_hash = task_b->model.weights_hash();
    } else if (kind == "fusion_bundle") {
        fusion_b = load_fusion_bundle(a.bundle_file);
        for (const std::string& t : fusion_b->task_bundle_files) in_paths.push_back(t);
        bundle_inputs = fusion_b->inputs;
        model_hash = fusion_b->model.weights_hash();
    } else {
        throw DataError(a.bundle_file + ": not a recognizable model bundle");
    }
    const auto inputs = hash_inputs(in_paths);

    // the bundle remembers what it was trained on; refuse silently switched
    // data before any inference happens
    for (const auto& [path, hash] : inputs)
        for (const auto& [bpath, bhash] : bundle_inputs)
            if (path == bpath && hash != bhash)
                throw DataError(path + " changed since the bundle was trained; refusing "
                                       "to evaluate against a silently different cohort");

    const EvalContext ctx = task_b ? eval_task_bundle(*task_b, cohort, a)
                                   : eval_fusion_bundle(*fusion_b, cohort, a);

    const std::size_t n = ctx.labels.size();
    if (n == 0) throw DataError("no test sessions to evaluate");

    // per-sample decisions
    PlattScaler platt;
    ConformalCalibrator cal;
    std::vector<double> p_final(n);
    std::vector<AbstainDecision> decisions(n);
    if (a.withhold == WithholdPolicy::Conformal) {
        std::vector<double> calib_p = ctx.calib_mu;
        if (a.platt) {
            std::vector<double> z(calib_p.size());
            for (std::size_t i = 0; i < calib_p.size(); ++i) z[i] = logit_of(calib_p[i]);
            platt = fit_platt(z, ctx.calib_labels);
            for (std::size_t i = 0; i < calib_p.size(); ++i)
                calib_p[i] = platt_apply(platt, z[i]);
        }
        cal = fit_conformal(calib_p, ctx.calib_labels, a.alpha);
        cal.platt = a.platt ? std::optional<PlattScaler>(platt) : std::nullopt;
        cal.smoothing_used = ctx.train_smoothing;
        for (std::size_t i = 0; i < n; ++i) {
            double p = ctx.retrained_preds[i].mu;
            if (a.platt) p = platt_apply(platt, logit_of(p));
            p_final[i] = p;
            decisions[i] = conformal_decision(cal, p);
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            p_final[i] = ctx.preds[i].mu;
            if (a.withhold == WithholdPolicy::McCi) {
                decisions[i] = abstain_by_ci(ctx.preds[i], kThreshold);
            } else {
                decisions[i].withhold = false;
                decisions[i].label = predict_label(ctx.preds[i], kThreshold);
            }
        }
    }

    std::vector<int> forced = hard_labels(p_final);
    std::vector<int> kept_preds, kept_labels;
    std::vector<double> kept_probs;
    std::map<std::string, std::size_t> reasons;
    for (std::size_t i = 0; i < n; ++i) {
        if (decisions[i].withhold) {
            ++reasons[reason_key(decisions[i].reason)];
        } else {
            kept_preds.push_back(decisions[i].label);
            kept_labels.push_back(ctx.labels[i]);
            kept_probs.push_back(p_final[i]);
        }
    }
    const std::size_t withheld = n - kept_preds.size();
    const EvalReport full = scored_metrics(forced, ctx.labels, p_final, 0);
    const EvalReport retained = scored_metrics(kept_preds, kept_labels, kept_probs, withheld);

    ordered_json report;
    report["command"] = "eval";
    ordered_json bj;
    bj["path"] = a.bundle_file;
    bj["kind"] = kind;
    bj["weights_hash"] = hex64(model_hash);
    report["bundle"] = std::move(bj);
    report["policy"] = to_string(a.withhold);
    report["rounds"] = ctx.rounds;
    report["ci_level"] = a.ci_level;
    report["test_sessions"] = n;
    if (a.withhold == WithholdPolicy::Conformal) {
        ordered_json cj;
        cj["alpha"] = a.alpha;
        cj["qhat"] = cal.qhat == std::numeric_limits<double>::infinity()
                         ? ordered_json(nullptr)
                         : ordered_json(cal.qhat);
        cj["calibration_size"] = ctx.calib_mu.size();
        cj["smoothing_used"] = cal.smoothing_used;
        if (a.platt) {
            ordered_json pj;
            pj["a"] = platt.a;
            pj["b"] = platt.b;
            pj["capped"] = platt.capped;
            pj["negative_slope"] = platt.negative_slope;
            cj["platt"] = std::move(pj);
        }
        report["conformal"] = std::move(cj);
    }
    report["full"] = metrics_json(full);
    report["retained"] = metrics_json(retained);
    ordered_json wj;
    wj["count"] = withheld;
    ordered_json rj = ordered_json::object();
    for (const auto& [key, count] : reasons) rj[key] = count;
    wj["reasons"] = std::move(rj);
    report["withheld"] = std::move(wj);

    std::ostringstream text;
    text << "eval " << to_string(a.withhold) << " on " << n << " test session(s)\n";
    append_metrics_text(text, "full set (forced verdicts)", full);
    append_metrics_text(text, "retained set", retained);
    text << "withheld " << withheld << "\n";

    std::ostringstream csv;
    csv << "session_id,subject_id,label,mu,sigma,ci_low,ci_high,p_final,decision,reason\n";
    for (std::size_t i = 0; i < n; ++i) {
        const McPrediction& p = ctx.preds[i];
        csv << ctx.session_ids[i] << ',' << ctx.subject_ids[i] << ',' << ctx.labels[i] << ','
            << fmt_real(p.mu) << ',' << fmt_real(p.sigma) << ',' << fmt_real(p.ci_low) << ','
            << fmt_real(p.ci_high) << ',' << fmt_real(p_final[i]) << ','
            << (decisions[i].withhold ? "withheld" : (decisions[i].label ? "pd" : "non-pd"))
            << ',' << reason_key(decisions[i].reason) << '\n';
    }

    out.write_json("eval.json", report);
    out.write("eval.txt", text.str());
    out.write("predictions.csv", csv.str());

    ordered_json args;
    args["data"] = data_args_json(a.data);
    args["bundle"] = a.bundle_file;
    args["withhold"] = to_string(a.withhold);
    args["alpha"] = a.alpha;
    args["ci_level"] = a.ci_level;
    args["platt"] = a.platt;
    args["smoothing"] = a.smoothing;
    args["rounds"] = a.rounds;
    out.finish_manifest("eval", args, inputs);
}

// ---- subgroup -----------------------------------------------------------

namespace {

struct GroupRate {
    std::string name;
    std::size_t n = 0, errors = 0;
    double rate = 0.0, ci_low = 0.0, ci_high = 0.0;
};

GroupRate group_rate(const std::string& name, const std::vector<int>& errs) {
    GroupRate g;
    g.name = name;
    g.n = errs.size();
    for (int e : errs) g.errors += e;
    g.rate = errs.empty() ? 0.0 : static_cast<double>(g.errors) / errs.size();
    if (errs.size() >= 2) {
        std::vector<double> vals(errs.begin(), errs.end());
        const auto [lo, hi] = ci_of_mean(vals, 0.95);
        g.ci_low = lo;
        g.ci_high = hi;
    } else {
        g.ci_low = g.ci_high = g.rate;
    }
    return g;
}

ordered_json group_json(const GroupRate& g) {
    ordered_json j;
    j["name"] = g.name;
    j["n"] = g.n;
    j["errors"] = g.errors;
    j["error_rate"] = g.rate;
    j["ci_low"] = g.ci_low;
    j["ci_high"] = g.ci_high;
    return j;
}

} // namespace

void run_subgroup(const SubgroupArgs& a) {
    OutputTracker out(a.out_dir);
    const Cohort cohort = load_cohort_from(a.data);
    const std::string kind = bundle_kind(a.bundle_file);

    std::vector<std::string> in_paths = data_paths(a.data);
    in_paths.push_back(a.bundle_file);

    // test-fold verdicts, no withholding
    std::vector<std::size_t> rows;
    std::vector<double> probs;
    if (kind == "task_bundle") {
        const TaskBundle b = load_task_bundle(a.bundle_file);
        const TaskId task = task_from_string(b.task);
        const FoldSessions folds = fold_sessions(cohort, b.split, {task});
        rows = folds.test;
        const std::size_t rounds = a.rounds ? a.rounds : b.model.config.mc_rounds;
        probs = mus_of(predict_mc(b.model, feature_matrix(cohort, rows, task), rounds,
                                  b.model.config.seed));
    } else if (kind == "fusion_bundle") {
        const FusionBundle b = load_fusion_bundle(a.bundle_file);
        for (const std::string& t : b.task_bundle_files) in_paths.push_back(t);
        const LoadedTaskBundles tb = load_task_bundles(b.task_bundle_files, b.model.config.tasks);
        const FoldSessions folds = fold_sessions(cohort, b.split, b.model.config.tasks);
        const FusionDataset test_data =
            make_fusion_dataset(cohort, folds.test, b.model.config.tasks, tb.models());
        rows = test_data.session_rows;
        const std::size_t rounds = a.rounds ? a.rounds : b.model.config.mc_rounds;
        probs = mus_of(ufnet_forward(b.model, test_data, rounds, b.model.config.seed));
    } else {
        throw DataError(a.bundle_file + ": not a recognizable model bundle");
    }
    const auto inputs = hash_inputs(in_paths);
    if (rows.empty()) throw DataError("no test sessions to analyze");

    std::vector<int> errors(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const int pred = probs[i] > kThreshold ? 1 : 0;
        errors[i] = pred != cohort.sessions[rows[i]].label;
    }

    ordered_json report;
    report["command"] = "subgroup";
    report["test_sessions"] = rows.size();
    std::ostringstream text;
    text << "subgroup analysis over " << rows.size() << " test session(s)\n";

    // --- sex ---
    {
        std::map<std::string, std::vector<int>> by_sex;
        std::size_t unknown = 0;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const std::string& sex = cohort.sessions[rows[i]].demo.sex;
            if (sex.empty()) {
                ++unknown;
            } else {
                by_sex[sex].push_back(errors[i]);
            }
        }
        ordered_json sj;
        ordered_json groups = ordered_json::array();
        std::vector<GroupRate> rates;
        for (const auto& [name, errs] : by_sex) {
            rates.push_back(group_rate(name, errs));
            groups.push_back(group_json(rates.back()));
        }
        sj["groups"] = std::move(groups);
        sj["excluded_unknown"] = unknown;
        if (rates.size() == 2) {
            const ZTestResult z = two_proportion_ztest(rates[0].errors, rates[0].n,
                                                       rates[1].errors, rates[1].n);
            ordered_json zj;
            zj["z"] = z.z;
            zj["p"] = z.p;
            sj["ztest"] = std::move(zj);
            text << "sex: z = " << fmt4(z.z) << ", p = " << fmt4(z.p) << "\n";
        } else {
            sj["notice"] = rates.size() < 2 ? "fewer than two sex groups; no test"
                                            : "more than two sex groups; no test";
        }
        report["sex"] = std::move(sj);
    }

    // --- ethnicity: exact test of largest group vs the rest ---
    {
        std::map<std::string, std::vector<int>> by_eth;
        std::size_t unknown = 0;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const std::string& eth = cohort.sessions[rows[i]].demo.ethnicity;
            if (eth.empty()) {
                ++unknown;
            } else {
                by_eth[eth].push_back(errors[i]);
            }
        }
        ordered_json ej;
        ordered_json groups = ordered_json::array();
        std::string largest;
        std::size_t largest_n = 0;
        for (const auto& [name, errs] : by_eth) {
            groups.push_back(group_json(group_rate(name, errs)));
            if (errs.size() > largest_n) {
                largest_n = errs.size();
                largest = name;
            }
        }
        ej["groups"] = std::move(groups);
        ej["excluded_unknown"] = unknown;
        if (by_eth.size() >= 2) {
            std::uint64_t a2 = 0, b2 = 0, c2 = 0, d2 = 0;
            for (const auto& [name, errs] : by_eth)
                for (int e : errs) {
                    if (name == largest) {
                        ++(e ? a2 : b2);
                    } else {
                        ++(e ? c2 : d2);
                    }
                }
            try {
                const FisherResult f = fisher_exact_2x2(a2, b2, c2, d2);
                ordered_json fj;
                fj["comparison"] = largest + " vs rest";
                fj["odds_ratio"] = std::isfinite(f.odds_ratio) ? ordered_json(f.odds_ratio)
                                                               : ordered_json(nullptr);
                fj["p"] = f.p;
                ej["fisher"] = std::move(fj);
                text << "ethnicity (" << largest << " vs rest): p = " << fmt4(f.p) << "\n";
            } catch (const DataError&) {
                ej["notice"] = "degenerate error table; exact test skipped";
            }
        } else {
            ej["notice"] = "fewer than two ethnicity groups; no test";
        }
        report["ethnicity"] = std::move(ej);
    }

    // --- age buckets ---
    {
        const auto bucket_of = [](double age) -> std::string {
            if (age < 50.0) return "<50";
            if (age < 60.0) return "50-59";
            if (age < 70.0) return "60-69";
            if (age < 80.0) return "70-79";
            return "80+";
        };
        const std::vector<std::string> order{"<50", "50-59", "60-69", "70-79", "80+"};
        std::map<std::string, std::vector<int>> by_age;
        std::size_t unknown = 0;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const double age = cohort.sessions[rows[i]].demo.age;
            if (std::isnan(age)) {
                ++unknown;
            } else {
                by_age[bucket_of(age)].push_back(errors[i]);
            }
        }
        ordered_json aj;
        ordered_json buckets = ordered_json::array();
        for (const std::string& name : order)
            if (by_age.count(name)) buckets.push_back(group_json(group_rate(name, by_age[name])));
        aj["buckets"] = std::move(buckets);
        aj["excluded_unknown"] = unknown;
        report["age"] = std::move(aj);
    }

    // --- disease duration vs misclassification (PD only) ---
    {
        std::map<double, std::pair<std::size_t, std::size_t>> by_dur; // value -> (errors, n)
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const Session& s = cohort.sessions[rows[i]];
            if (s.label != 1 || std::isnan(s.demo.duration)) continue;
            auto& [e, n2] = by_dur[s.demo.duration];
            e += errors[i];
            n2 += 1;
        }
        ordered_json dj;
        dj["n_values"] = by_dur.size();
        if (by_dur.size() >= 3) {
            std::vector<double> xs, ys;
            for (const auto& [dur, en] : by_dur) {
                xs.push_back(dur);
                ys.push_back(static_cast<double>(en.first) / en.second);
            }
            try {
                const KendallResult k = kendall_tau(xs, ys);
                ordered_json kj;
                kj["tau"] = k.tau;
                kj["p"] = k.p;
                dj["kendall"] = std::move(kj);
                text << "duration: tau = " << fmt4(k.tau) << ", p = " << fmt4(k.p) << "\n";
            } catch (const DataError&) {
                dj["notice"] = "constant misclassification rates; correlation undefined";
            }
        } else {
            dj["notice"] = "fewer than three distinct duration values; no correlation";
        }
        report["duration"] = std::move(dj);
    }

    out.write_json("subgroup.json", report);
    out.write("subgroup.txt", text.str());

    ordered_json args;
    args["data"] = data_args_json(a.data);
    args["bundle"] = a.bundle_file;
    args["rounds"] = a.rounds;
    out.finish_manifest("subgroup", args, inputs);
}

// ---- gen-synth ----------------------------------------------------------

ordered_json synth_spec_json(const SyntheticCohortSpec& spec) {
    ordered_json j;
    j["n_subjects"] = spec.n_subjects;
    j["prevalence"] = spec.prevalence;
    j["dims"] = spec.dims;
    j["informative"] = spec.informative;
    j["signal"] = spec.signal;
    j["signal_correlation"] = spec.signal_correlation;
    j["noise_scale"] = spec.noise_scale;
    j["extra_session_prob"] = spec.extra_session_prob;
    j["missing_prob"] = spec.missing_prob;
    j["corrupt_prob"] = spec.corrupt_prob;
    j["corrupt_scale"] = spec.corrupt_scale;
    j["sex_attenuation"] = spec.sex_attenuation;
    j["seed"] = spec.seed;
    return j;
}

SyntheticCohortSpec synth_spec_from_json(const ordered_json& j) {
    SyntheticCohortSpec spec;
    const auto opt = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    opt("n_subjects", spec.n_subjects);
    opt("prevalence", spec.prevalence);
    opt("dims", spec.dims);
    opt("informative", spec.informative);
    opt("signal", spec.signal);
    opt("signal_correlation", spec.signal_correlation);
    opt("noise_scale", spec.noise_scale);
    opt("extra_session_prob", spec.extra_session_prob);
    opt("missing_prob", spec.missing_prob);
    opt("corrupt_prob", spec.corrupt_prob);
    opt("corrupt_scale", spec.corrupt_scale);
    opt("sex_attenuation", spec.sex_attenuation);
    opt("seed", spec.seed);
    for (const auto& [key, value] : j.items()) {
        static const std::set<std::string> known{
            "n_subjects", "prevalence", "dims", "informative", "signal",
            "signal_correlation", "noise_scale", "extra_session_prob", "missing_prob",
            "corrupt_prob", "corrupt_scale", "sex_attenuation", "seed"};
        if (!known.count(key)) throw ConfigError("unknown cohort spec field '" + key + "'");
    }
    return spec;
}

void run_gen_synth(const GenSynthArgs& a) {
    SyntheticCohortSpec spec = a.spec;
    std::vector<std::string> in_paths;
    if (!a.spec_file.empty()) {
        try {
            spec = synth_spec_from_json(ordered_json::parse(read_text_file(a.spec_file)));
        } catch (const nlohmann::json::exception& e) {
            throw DataError("cannot parse " + a.spec_file + ": " + e.what());
        }
        in_paths.push_back(a.spec_file);
    }
    spec.validate();
    OutputTracker out(a.out_dir);
    const auto inputs = hash_inputs(in_paths);

    const Cohort cohort = gen_synthetic_cohort(spec);
    const std::vector<std::string> files = write_cohort(cohort, out.dir.string());
    for (const std::string& f : files) {
        const std::string stored = read_text_file(f);
        out.written.emplace_back(fs::path(f).filename().string(),
                                 hex64(hash_bytes(stored.data(), stored.size())));
    }
    out.write_json("spec.json", synth_spec_json(spec));
    // synthetic widths are not the canonical ones; ship the matching mapping
    ordered_json mapping;
    mapping["expected_dim"] = std::numeric_limits<std::size_t>::max();
    out.write_json("mapping.json", mapping);

    ordered_json report;
    report["command"] = "gen-synth";
    report["sessions"] = cohort.sessions.size();
    report["subjects"] = cohort.subjects().size();
    std::size_t pd = 0;
    for (const auto& [id, label] : cohort.subjects()) pd += label;
    report["pd_subjects"] = pd;
    out.write_json("report.json", report);

    ordered_json args;
    args["spec_file"] = a.spec_file;
    args["spec"] = synth_spec_json(spec);
    out.finish_manifest("gen-synth", args, inputs);
}

// ---- search -------------------------------------------------------------

namespace {

template <typename T, std::size_t N>
T pick(Rng& rng, const std::array<T, N>& options) {
    return options[rng.uniform_int(N)];
}

// Draw order is fixed so a (seed, trial) pair always denotes the same config.
void sample_common_tail(Rng& rng, OptimizerConfig& opt, SchedulerConfig& sched,
                        std::size_t& epochs, std::size_t max_epochs) {
    epochs = 1 + rng.uniform_int(max_epochs);
    opt.kind = rng.bernoulli(0.5) ? OptimizerKind::Sgd : OptimizerKind::AdamW;
    opt.momentum = rng.uniform(0.1, 1.0);
    const bool use_sched = rng.bernoulli(0.5);
    const bool plateau = rng.bernoulli(0.5);
    sched.kind = use_sched ? (plateau ? SchedulerKind::Plateau : SchedulerKind::Step)
                           : SchedulerKind::None;
    sched.step_size = 1 + rng.uniform_int(30);
    sched.patience = 1 + rng.uniform_int(20);
    sched.gamma = rng.uniform(0.5, 0.95);
}

} // namespace

TaskModelConfig sample_task_config(std::uint64_t search_seed, std::uint64_t trial, bool mc) {
    Rng rng = Rng::for_stream(search_seed, RngStream::Search, trial);
    TaskModelConfig cfg;
    cfg.batch_size = pick(rng, std::array<std::size_t, 3>{256, 512, 1024});
    cfg.opt.lr = rng.uniform(0.0005, 1.0);
    cfg.preprocess.drop_correlated = rng.bernoulli(0.5);
    cfg.preprocess.corr_threshold = pick(rng, std::array<double, 4>{0.80, 0.85, 0.90, 0.95});
    const bool scale = rng.bernoulli(0.5);
    const bool standard = rng.bernoulli(0.5);
    cfg.preprocess.scaler =
        scale ? (standard ? ScalerKind::Standard : ScalerKind::MinMax) : ScalerKind::None;
    cfg.preprocess.oversample =
        rng.bernoulli(0.5) ? OversampleMethod::Smote : OversampleMethod::None;
    cfg.hidden_layers = rng.uniform_int(2);
    if (mc) {
        cfg.dropout_p = rng.uniform(0.01, 0.30);
        cfg.mc_rounds = pick(rng, std::array<std::size_t, 7>{100, 300, 500, 1000, 3000, 5000,
                                                             10000});
    }
    sample_common_tail(rng, cfg.opt, cfg.sched, cfg.epochs, 100);
    cfg.seed = 100 + rng.uniform_int(900);
    return cfg;
}

UfnetConfig sample_fusion_config(std::uint64_t search_seed, std::uint64_t trial,
                                 std::vector<TaskId> tasks) {
    Rng rng = Rng::for_stream(search_seed, RngStream::Search, trial);
    UfnetConfig cfg;
    cfg.tasks = std::move(tasks);
    cfg.batch_size = pick(rng, std::array<std::size_t, 3>{256, 512, 1024});
    cfg.opt.lr = rng.uniform(5e-5, 1.0);
    cfg.hidden_layers = 1;
    cfg.proj_dim = pick(rng, std::array<std::size_t, 3>{128, 256, 512});
    cfg.qkv_dim = pick(rng, std::array<std::size_t, 4>{32, 64, 128, 256});
    cfg.hidden_dim = pick(rng, std::array<std::size_t, 6>{4, 8, 16, 32, 64, 128});
    cfg.dropout_p = rng.uniform(0.05, 0.50);
    cfg.eta = rng.uniform(0.1, 100.0);
    cfg.mc_rounds = 30;
    sample_common_tail(rng, cfg.opt, cfg.sched, cfg.epochs, 300);
    cfg.seed = 100 + rng.uniform_int(900);
    return cfg;
}

void run_search(const SearchArgs& a) {
    if (a.trials == 0) throw ConfigError("search: need at least one trial");
    OutputTracker out(a.out_dir);
    const Cohort cohort = load_cohort_from(a.data);

    struct Trial {
        ordered_json config;
        double val_auroc = 0.0;
    };
    std::vector<Trial> trials(a.trials);

    if (a.family == SearchFamily::Fusion) {
        if (a.tasks.size() < 2) throw ConfigError("fusion search needs a task list");
        const LoadedTaskBundles tb = load_task_bundles(a.task_bundles, a.tasks);
        const FusionFoldData data =
            fusion_fold_data(cohort, tb.bundles[0].split, a.tasks, tb.models());
        parallel_seeds(a.trials, [&](std::size_t t) {
            UfnetConfig cfg = sample_fusion_config(a.search_seed, t, a.tasks);
            const UfnetModel m = train_ufnet(data.train, data.val, cfg);
            const std::vector<double> pv =
                mus_of(ufnet_forward(m, data.val, cfg.mc_rounds, cfg.seed));
            trials[t] = {json_of(cfg), auroc(pv, data.val.labels)};
        });
    } else {
        const bool mc = a.family == SearchFamily::TaskMc;
        if (!a.data.csvs.count(a.task))
            throw ConfigError(std::string("search: no csv given for task '") +
                              task_name(a.task) + "'");
        const SplitPlan plan = make_split(cohort.subjects(), a.data.ratios, a.data.split_seed);
        const FoldSessions folds = fold_sessions(cohort, plan, {a.task});
        const Matrix x_tr = feature_matrix(cohort, folds.train, a.task);
        const std::vector<int> y_tr = labels_of(cohort, folds.train);
        const Matrix x_va = feature_matrix(cohort, folds.val, a.task);
        const std::vector<int> y_va = labels_of(cohort, folds.val);
        parallel_seeds(a.trials, [&](std::size_t t) {
            TaskModelConfig cfg = sample_task_config(a.search_seed, t, mc);
            const TaskModel m = train_task_model(x_tr, y_tr, x_va, y_va, cfg);
            const std::vector<double> pv = mus_of(predict_mc(m, x_va, cfg.mc_rounds, cfg.seed));
            trials[t] = {json_of(cfg), auroc(pv, y_va)};
        });
    }

    std::size_t best = 0;
    for (std::size_t t = 1; t < trials.size(); ++t)
        if (trials[t].val_auroc > trials[best].val_auroc) best = t;

    ordered_json tj = ordered_json::array();
    for (std::size_t t = 0; t < trials.size(); ++t) {
        ordered_json e;
        e["trial"] = t;
        e["val_auroc"] = trials[t].val_auroc;
        e["config"] = trials[t].config;
        tj.push_back(std::move(e));
    }
    out.write_json("trials.json", tj);
    ordered_json bj;
    bj["trial"] = best;
    bj["val_auroc"] = trials[best].val_auroc;
    bj["config"] = trials[best].config;
    out.write_json("best.json", bj);
    std::ostringstream text;
    text << "search " << to_string(a.family) << ": " << a.trials << " trial(s), best trial "
         << best << " with validation auroc " << fmt4(trials[best].val_auroc) << "\n";
    out.write("search.txt", text.str());

    std::vector<std::string> in_paths = data_paths(a.data);
    in_paths.insert(in_paths.end(), a.task_bundles.begin(), a.task_bundles.end());
    ordered_json args;
    args["data"] = data_args_json(a.data);
    args["family"] = to_string(a.family);
    args["task"] = task_name(a.task);
    ordered_json tnames = ordered_json::array();
    for (TaskId t : a.tasks) tnames.push_back(task_name(t));
    args["tasks"] = std::move(tnames);
    args["task_bundles"] = a.task_bundles;
    args["trials"] = a.trials;
    args["search_seed"] = a.search_seed;
    out.finish_manifest("search", args, hash_inputs(in_paths));
}

// ---- rerun --------------------------------------------------------------

void run_rerun(const std::string& manifest_file, const std::string& out_dir) {
    ordered_json m;
    try {
        m = ordered_json::parse(read_text_file(manifest_file));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("cannot parse " + manifest_file + ": " + e.what());
    }
    const std::string command = m.value("command", "");
    const ordered_json& args = m.at("args");

    // inputs must still be the same bytes, otherwise the replay is meaningless
    for (const auto& e : m.at("inputs")) {
        const std::string path = e.at("path").get<std::string>();
        const std::string want = e.at("hash").get<std::string>();
        if (hex64(hash_file(path)) != want)
            throw DataError("input " + path + " changed since the original run");
    }

    if (command == "train-task") {
        TrainTaskArgs a;
        a.data = data_args_from_json(args.at("data"));
        a.task = task_from_string(args.at("task").get<std::string>());
        a.config = task_model_config_from_json(args.at("config"));
        a.n_seeds = args.at("n_seeds").get<std::size_t>();
        a.out_dir = out_dir;
        run_train_task(a);
    } else if (command == "train-fuse") {
        TrainFuseArgs a;
        a.data = data_args_from_json(args.at("data"));
        a.task_bundles = args.at("task_bundles").get<std::vector<std::string>>();
        a.config = ufnet_config_from_json(args.at("config"));
        a.baseline = args.at("baseline").get<std::string>();
        a.compare_singletask = args.at("compare_singletask").get<bool>();
        a.n_seeds = args.at("n_seeds").get<std::size_t>();
        a.out_dir = out_dir;
        run_train_fuse(a);
    } else if (command == "eval") {
        EvalArgs a;
        a.data = data_args_from_json(args.at("data"));
        a.bundle_file = args.at("bundle").get<std::string>();
        a.withhold = withhold_from_string(args.at("withhold").get<std::string>());
        a.alpha = args.at("alpha").get<double>();
        a.ci_level = args.at("ci_level").get<double>();
        a.platt = args.at("platt").get<bool>();
        a.smoothing = args.at("smoothing").get<double>();
        a.rounds = args.at("rounds").get<std::size_t>();
        a.out_dir = out_dir;
        run_eval(a);
    } else if (command == "subgroup") {
        SubgroupArgs a;
        a.data = data_args_from_json(args.at("data"));
        a.bundle_file = args.at("bundle").get<std::string>();
        a.rounds = args.at("rounds").get<std::size_t>();
        a.out_dir = out_dir;
        run_subgroup(a);
    } else if (command == "gen-synth") {
        GenSynthArgs a;
        // the spec file was hash-verified above, so re-reading it is safe and
        // keeps the replayed manifest byte-identical
        a.spec_file = args.at("spec_file").get<std::string>();
        a.spec = synth_spec_from_json(args.at("spec"));
        a.out_dir = out_dir;
        run_gen_synth(a);
    } else if (command == "search") {
        SearchArgs a;
        a.data = data_args_from_json(args.at("data"));
        a.family = search_family_from_string(args.at("family").get<std::string>());
        a.task = task_from_string(args.at("task").get<std::string>());
        for (const auto& t : args.at("tasks"))
            a.tasks.push_back(task_from_string(t.get<std::string>()));
        a.task_bundles = args.at("task_bundles").get<std::vector<std::string>>();
        a.trials = args.at("trials").get<std::size_t>();
        a.search_seed = args.at("search_seed").get<std::uint64_t>();
        a.out_dir = out_dir;
        run_search(a);
    } else {
        throw DataError(manifest_file + ": unknown command '" + command + "'");
    }
}

} // namespace ufnet
