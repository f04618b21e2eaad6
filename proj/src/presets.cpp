#include "ufnet/presets.hpp"

#include "ufnet/error.hpp"

namespace ufnet {

namespace {

std::string joined(const std::vector<std::string>& names) {
    std::string out;
    for (const std::string& n : names) {
        if (!out.empty()) out += ", ";
        out += n;
    }
    return out;
}

TaskModelConfig base_task(std::size_t batch, double lr, double momentum, std::size_t hidden,
                          std::size_t epochs, std::uint64_t seed) {
    TaskModelConfig cfg;
    cfg.batch_size = batch;
    cfg.opt.kind = OptimizerKind::Sgd;
    cfg.opt.lr = lr;
    cfg.opt.momentum = momentum;
    cfg.hidden_layers = hidden;
    cfg.epochs = epochs;
    cfg.seed = seed;
    cfg.preprocess.scaler = ScalerKind::Standard;
    return cfg;
}

UfnetConfig base_fusion(std::vector<TaskId> tasks, std::size_t batch, double lr,
                        double momentum, std::size_t proj, std::size_t qkv, std::size_t hidden,
                        double dropout, double eta, std::size_t epochs, std::uint64_t seed) {
    UfnetConfig cfg;
    cfg.tasks = std::move(tasks);
    cfg.batch_size = batch;
    cfg.opt.kind = OptimizerKind::Sgd;
    cfg.opt.lr = lr;
    cfg.opt.momentum = momentum;
    cfg.proj_dim = proj;
    cfg.qkv_dim = qkv;
    cfg.hidden_layers = 1;
    cfg.hidden_dim = hidden;
    cfg.dropout_p = dropout;
    cfg.eta = eta;
    cfg.mc_rounds = 30;
    cfg.epochs = epochs;
    cfg.seed = seed;
    return cfg;
}

} // namespace

const std::vector<std::string>& task_preset_names() {
    static const std::vector<std::string> names{
        "tapping", "tapping-left", "tapping-right", "smile", "speech",
        "tapping-mc", "smile-mc", "speech-mc",
    };
    return names;
}

const std::vector<std::string>& fusion_preset_names() {
    static const std::vector<std::string> names{
        "ufnet-all", "ufnet-tapping-smile", "ufnet-tapping-speech", "ufnet-smile-speech",
    };
    return names;
}

TaskModelConfig task_preset(const std::string& name) {
    if (name == "tapping")
        return base_task(256, 0.6246956232061768, 0.8046223742478498, 0, 82, 276);
    if (name == "tapping-left") {
        TaskModelConfig cfg = base_task(512, 0.807750048295928, 0.6614402107331798, 0, 50, 556);
        cfg.preprocess.drop_correlated = true;
        cfg.preprocess.corr_threshold = 0.95;
        return cfg;
    }
    if (name == "tapping-right")
        return base_task(512, 0.5437653223933676, 0.709095892070382, 1, 74, 751);
    if (name == "smile") {
        TaskModelConfig cfg = base_task(1024, 0.8365099039036598, 0.615229008837764, 0, 74, 488);
        cfg.preprocess.oversample = OversampleMethod::Smote;
        cfg.sched.kind = SchedulerKind::Plateau;
        cfg.sched.patience = 4;
        cfg.sched.gamma = 0.5;
        return cfg;
    }
    if (name == "speech")
        return base_task(256, 0.06573643554880117, 0.5231696483982686, 1, 27, 287);
    if (name == "tapping-mc") {
        TaskModelConfig cfg = base_task(256, 0.3081959128766984, 0.9206317439937552, 0, 87, 790);
        cfg.dropout_p = 0.24180259124462203;
        cfg.mc_rounds = 1000;
        cfg.sched.kind = SchedulerKind::Plateau;
        cfg.sched.patience = 13;
        cfg.sched.gamma = 0.5;
        return cfg;
    }
    if (name == "smile-mc") {
        TaskModelConfig cfg = base_task(256, 0.03265227174722892, 0.5450637936769563, 0, 64, 462);
        cfg.dropout_p = 0.10661756438565197;
        cfg.mc_rounds = 1000;
        cfg.preprocess.oversample = OversampleMethod::Smote;
        return cfg;
    }
    if (name == "speech-mc") {
        TaskModelConfig cfg = base_task(1024, 0.364654919080181, 0.0, 0, 74, 303);
        cfg.opt.kind = OptimizerKind::AdamW;
        cfg.dropout_p = 0.23420212038821583;
        cfg.mc_rounds = 10000;
        cfg.preprocess.scaler = ScalerKind::None;
        cfg.preprocess.drop_correlated = true;
        cfg.preprocess.corr_threshold = 0.95;
        return cfg;
    }
    throw ConfigError("unknown task preset '" + name + "'; available: " +
                      joined(task_preset_names()));
}

UfnetConfig fusion_preset(const std::string& name) {
    if (name == "ufnet-all")
        return base_fusion({TaskId::Tapping, TaskId::Smile, TaskId::Speech}, 1024, 0.020724,
                           0.689782158, 512, 64, 128, 0.4959892, 81.8179035, 164, 242);
    if (name == "ufnet-tapping-smile") {
        UfnetConfig cfg =
            base_fusion({TaskId::Tapping, TaskId::Smile}, 256, 0.06754950185131235,
                        0.9822830376765904, 512, 64, 64, 0.4453733432524283,
                        12.554916213821272, 18, 919);
        cfg.sched.kind = SchedulerKind::Plateau;
        cfg.sched.patience = 10;
        cfg.sched.gamma = 0.5;
        return cfg;
    }
    if (name == "ufnet-tapping-speech") {
        UfnetConfig cfg =
            base_fusion({TaskId::Tapping, TaskId::Speech}, 512, 0.04035092571261426,
                        0.24020164138826405, 256, 256, 16, 0.49813214914563847,
                        79.95872101951133, 164, 953);
        cfg.sched.kind = SchedulerKind::Plateau;
        cfg.sched.patience = 12;
        cfg.sched.gamma = 0.5;
        return cfg;
    }
    if (name == "ufnet-smile-speech") {
        UfnetConfig cfg =
            base_fusion({TaskId::Smile, TaskId::Speech}, 512, 0.16688970966723005,
                        0.22419387711544064, 128, 64, 4, 0.3763157755397192,
                        51.88439832518041, 132, 845);
        cfg.sched.kind = SchedulerKind::Plateau;
        cfg.sched.patience = 13;
        cfg.sched.gamma = 0.5;
        return cfg;
    }
    throw ConfigError("unknown fusion preset '" + name + "'; available: " +
                      joined(fusion_preset_names()));
}

} // namespace ufnet
