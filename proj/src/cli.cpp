#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ufnet/error.hpp"
#include "ufnet/experiment.hpp"
#include "ufnet/presets.hpp"

namespace ufnet {

namespace {

// --data accepts task=path pairs; a bare path is tied to --task when present.
struct DataCli {
    std::vector<std::string> data;
    std::string mapping;
    std::vector<double> ratios{0.6, 0.2, 0.2};
    std::uint64_t split_seed = 7;
};

void add_data_options(CLI::App* sub, DataCli& d) {
    sub->add_option("--data", d.data,
                    "feature csv as task=path (repeatable); bare path binds to --task")
        ->required();
    sub->add_option("--mapping", d.mapping, "column-mapping json for external tables");
    sub->add_option("--ratios", d.ratios, "train/val/test subject ratios")->expected(3);
    sub->add_option("--split-seed", d.split_seed, "subject split seed");
}

DataArgs resolve_data(const DataCli& d, const std::string& bare_task = "") {
    DataArgs a;
    for (const std::string& v : d.data) {
        const std::size_t eq = v.find('=');
        if (eq == std::string::npos) {
            if (bare_task.empty())
                throw ConfigError("--data '" + v + "' needs the task=path form here");
            a.csvs[task_from_string(bare_task)] = v;
        } else {
            a.csvs[task_from_string(v.substr(0, eq))] = v.substr(eq + 1);
        }
    }
    a.mapping_file = d.mapping;
    a.ratios = {d.ratios[0], d.ratios[1], d.ratios[2]};
    a.split_seed = d.split_seed;
    return a;
}

ordered_json parse_json_file(const std::string& path) {
    try {
        return ordered_json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("cannot parse " + path + ": " + e.what());
    }
}

void add_out_option(CLI::App* sub, std::string& out) {
    sub->add_option("--out", out, "output directory")->envname("UFNET_OUT_DIR")->required();
}

std::vector<TaskId> parse_tasks(const std::vector<std::string>& names) {
    std::vector<TaskId> out;
    for (const std::string& n : names) out.push_back(task_from_string(n));
    return out;
}

} // namespace

int cli_main(int argc, char** argv) {
    CLI::App app{"session-level disease screening: task models, uncertainty-aware fusion, "
                 "selective prediction"};
    app.require_subcommand(1);

    // ---- train-task ----
    auto* tt = app.add_subcommand("train-task", "train one task model over a seed sweep");
    DataCli tt_data;
    std::string tt_task, tt_preset, tt_config, tt_out;
    std::size_t tt_seeds = 1, tt_epochs = 0, tt_rounds = 0;
    std::uint64_t tt_seed = 0;
    tt->add_option("--task", tt_task, "tapping|smile|speech")->required();
    add_data_options(tt, tt_data);
    tt->add_option("--preset", tt_preset, "named task configuration");
    tt->add_option("--config", tt_config, "full task configuration json");
    tt->add_option("--seeds", tt_seeds, "number of seeds in the sweep");
    auto* tt_seed_opt = tt->add_option("--seed", tt_seed, "override base seed");
    auto* tt_epochs_opt = tt->add_option("--epochs", tt_epochs, "override epoch count");
    auto* tt_rounds_opt = tt->add_option("--rounds", tt_rounds, "override mc rounds");
    add_out_option(tt, tt_out);
    tt->callback([&] {
        if (tt_preset.empty() == tt_config.empty())
            throw ConfigError("train-task: give exactly one of --preset or --config");
        TrainTaskArgs a;
        a.task = task_from_string(tt_task);
        a.data = resolve_data(tt_data, tt_task);
        a.config = tt_config.empty() ? task_preset(tt_preset)
                                     : task_model_config_from_json(parse_json_file(tt_config));
        if (*tt_seed_opt) a.config.seed = tt_seed;
        if (*tt_epochs_opt) a.config.epochs = tt_epochs;
        if (*tt_rounds_opt) a.config.mc_rounds = tt_rounds;
        a.n_seeds = tt_seeds;
        a.out_dir = tt_out;
        run_train_task(a);
    });

    // ---- train-fuse ----
    auto* tf = app.add_subcommand("train-fuse", "train the fusion model or a baseline");
    DataCli tf_data;
    std::vector<std::string> tf_tasks, tf_bundles;
    std::string tf_preset, tf_config, tf_baseline, tf_mode, tf_out;
    std::size_t tf_seeds = 1, tf_epochs = 0;
    std::uint64_t tf_seed = 0;
    double tf_eta = 0.0;
    tf->add_option("--tasks", tf_tasks, "task list, e.g. tapping,smile,speech")->delimiter(',');
    add_data_options(tf, tf_data);
    tf->add_option("--bundles", tf_bundles, "task-model bundles, aligned with --tasks")
        ->delimiter(',')
        ->required();
    tf->add_option("--preset", tf_preset, "named fusion configuration");
    tf->add_option("--config", tf_config, "full fusion configuration json");
    tf->add_option("--baseline", tf_baseline, "majority|late|early|hybrid instead of ufnet");
    tf->add_flag("--compare-singletask", "append single-task scores on the same sessions");
    tf->add_option("--fusion-mode", tf_mode, "hybrid|early");
    tf->add_option("--seeds", tf_seeds, "number of seeds in the sweep");
    auto* tf_seed_opt = tf->add_option("--seed", tf_seed, "override base seed");
    auto* tf_epochs_opt = tf->add_option("--epochs", tf_epochs, "override epoch count");
    auto* tf_eta_opt = tf->add_option("--eta", tf_eta, "override uncertainty penalty weight");
    add_out_option(tf, tf_out);
    tf->callback([&] {
        if (tf_preset.empty() == tf_config.empty())
            throw ConfigError("train-fuse: give exactly one of --preset or --config");
        TrainFuseArgs a;
        a.config = tf_config.empty() ? fusion_preset(tf_preset)
                                     : ufnet_config_from_json(parse_json_file(tf_config));
        if (!tf_tasks.empty()) a.config.tasks = parse_tasks(tf_tasks);
        if (!tf_mode.empty()) a.config.mode = fusion_mode_from_string(tf_mode);
        if (*tf_seed_opt) a.config.seed = tf_seed;
        if (*tf_epochs_opt) a.config.epochs = tf_epochs;
        if (*tf_eta_opt) a.config.eta = tf_eta;
        a.data = resolve_data(tf_data);
        a.task_bundles = tf_bundles;
        a.baseline = tf_baseline;
        a.compare_singletask = tf->count("--compare-singletask") > 0;
        a.n_seeds = tf_seeds;
        a.out_dir = tf_out;
        run_train_fuse(a);
    });

    // ---- eval ----
    auto* ev = app.add_subcommand("eval", "evaluate a bundle with an abstention policy");
    DataCli ev_data;
    EvalArgs ev_args;
    std::string ev_withhold = "none";
    ev->add_option("--bundle", ev_args.bundle_file, "task or fusion bundle json")->required();
    add_data_options(ev, ev_data);
    ev->add_option("--withhold", ev_withhold, "none|mc-ci|conformal");
    ev->add_option("--alpha", ev_args.alpha, "conformal miscoverage level");
    ev->add_option("--ci-level", ev_args.ci_level, "mc confidence-interval level");
    ev->add_flag("--platt", ev_args.platt, "platt-scale probabilities on the calibration set");
    ev->add_option("--smoothing", ev_args.smoothing,
                   "label smoothing for the conformal retrain (default: keep bundle's)");
    ev->add_option("--rounds", ev_args.rounds, "override mc rounds (0 keeps bundle's)");
    add_out_option(ev, ev_args.out_dir);
    ev->callback([&] {
        ev_args.data = resolve_data(ev_data);
        ev_args.withhold = withhold_from_string(ev_withhold);
        run_eval(ev_args);
    });

    // ---- subgroup ----
    auto* sg = app.add_subcommand("subgroup", "error rates across demographic groups");
    DataCli sg_data;
    SubgroupArgs sg_args;
    sg->add_option("--bundle", sg_args.bundle_file, "task or fusion bundle json")->required();
    add_data_options(sg, sg_data);
    sg->add_option("--rounds", sg_args.rounds, "override mc rounds (0 keeps bundle's)");
    add_out_option(sg, sg_args.out_dir);
    sg->callback([&] {
        sg_args.data = resolve_data(sg_data);
        run_subgroup(sg_args);
    });

    // ---- gen-synth ----
    auto* gs = app.add_subcommand("gen-synth", "generate a synthetic cohort");
    GenSynthArgs gs_args;
    std::vector<std::size_t> gs_dims, gs_informative;
    std::vector<double> gs_signal, gs_missing;
    gs->add_option("--spec", gs_args.spec_file, "cohort spec json (overrides inline flags)");
    gs->add_option("--subjects", gs_args.spec.n_subjects, "subject count");
    gs->add_option("--prevalence", gs_args.spec.prevalence, "positive-label fraction");
    gs->add_option("--seed", gs_args.spec.seed, "generator seed");
    gs->add_option("--dims", gs_dims, "per-task feature widths")->expected(3);
    gs->add_option("--informative", gs_informative, "per-task informative dims")->expected(3);
    gs->add_option("--signal", gs_signal, "per-task signal strengths")->expected(3);
    gs->add_option("--missing", gs_missing, "per-task missing-session probabilities")
        ->expected(3);
    gs->add_option("--signal-correlation", gs_args.spec.signal_correlation,
                   "cross-task signal correlation");
    gs->add_option("--sex-attenuation", gs_args.spec.sex_attenuation,
                   "signal attenuation for one sex group");
    add_out_option(gs, gs_args.out_dir);
    gs->callback([&] {
        for (std::size_t i = 0; i < gs_dims.size(); ++i) gs_args.spec.dims[i] = gs_dims[i];
        for (std::size_t i = 0; i < gs_informative.size(); ++i)
            gs_args.spec.informative[i] = gs_informative[i];
        for (std::size_t i = 0; i < gs_signal.size(); ++i) gs_args.spec.signal[i] = gs_signal[i];
        for (std::size_t i = 0; i < gs_missing.size(); ++i)
            gs_args.spec.missing_prob[i] = gs_missing[i];
        run_gen_synth(gs_args);
    });

    // ---- search ----
    auto* se = app.add_subcommand("search", "random search over the hyperparameter space");
    DataCli se_data;
    SearchArgs se_args;
    std::string se_family = "task", se_task = "tapping";
    std::vector<std::string> se_tasks;
    se->add_option("--family", se_family, "task|task-mc|fusion")->required();
    add_data_options(se, se_data);
    se->add_option("--task", se_task, "target task for the task families");
    se->add_option("--tasks", se_tasks, "task list for the fusion family")->delimiter(',');
    se->add_option("--bundles", se_args.task_bundles, "task bundles for the fusion family")
        ->delimiter(',');
    se->add_option("--trials", se_args.trials, "number of sampled configurations");
    se->add_option("--search-seed", se_args.search_seed, "sampling seed");
    add_out_option(se, se_args.out_dir);
    se->callback([&] {
        se_args.family = search_family_from_string(se_family);
        se_args.task = task_from_string(se_task);
        se_args.tasks = parse_tasks(se_tasks);
        se_args.data = resolve_data(se_data, se_task);
        run_search(se_args);
    });

    // ---- rerun ----
    auto* rr = app.add_subcommand("rerun", "replay a finished run from its manifest");
    std::string rr_manifest, rr_out;
    rr->add_option("manifest", rr_manifest, "manifest.json of the original run")->required();
    add_out_option(rr, rr_out);
    rr->callback([&] { run_rerun(rr_manifest, rr_out); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const DataError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    }
    return 0;
}

} // namespace ufnet
