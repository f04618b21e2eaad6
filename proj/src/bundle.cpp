#include "ufnet/bundle.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "ufnet/error.hpp"

namespace ufnet {

namespace {
constexpr int kFormatVersion = 1;

double json_double(const ordered_json& j) {
    if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
    return j.get<double>();
}

ordered_json double_json(double v) {
    if (std::isnan(v)) return nullptr;
    return v;
}

Fold fold_from_name(const std::string& s) {
    if (s == "train") return Fold::Train;
    if (s == "val") return Fold::Val;
    if (s == "test") return Fold::Test;
    throw DataError("unknown fold name '" + s + "'");
}

ordered_json history_json(const std::vector<EpochRecord>& history) {
    ordered_json arr = ordered_json::array();
    for (const EpochRecord& r : history) {
        ordered_json e;
        e["train_loss"] = r.train_loss;
        e["val_loss"] = double_json(r.val_loss);
        e["lr"] = r.lr;
        arr.push_back(std::move(e));
    }
    return arr;
}

std::vector<EpochRecord> history_from_json(const ordered_json& arr) {
    std::vector<EpochRecord> out;
    for (const auto& e : arr) {
        EpochRecord r;
        r.train_loss = e.at("train_loss").get<double>();
        r.val_loss = json_double(e.at("val_loss"));
        r.lr = e.at("lr").get<double>();
        out.push_back(r);
    }
    return out;
}

ordered_json inputs_json(const std::vector<std::pair<std::string, std::string>>& inputs) {
    ordered_json arr = ordered_json::array();
    for (const auto& [path, hash] : inputs) {
        ordered_json e;
        e["path"] = path;
        e["hash"] = hash;
        arr.push_back(std::move(e));
    }
    return arr;
}

std::vector<std::pair<std::string, std::string>> inputs_from_json(const ordered_json& arr) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& e : arr)
        out.emplace_back(e.at("path").get<std::string>(), e.at("hash").get<std::string>());
    return out;
}

ordered_json opt_json(const OptimizerConfig& o) {
    ordered_json j;
    j["kind"] = to_string(o.kind);
    j["lr"] = o.lr;
    j["momentum"] = o.momentum;
    j["beta1"] = o.beta1;
    j["beta2"] = o.beta2;
    j["eps"] = o.eps;
    j["weight_decay"] = o.weight_decay;
    return j;
}

OptimizerConfig opt_from_json(const ordered_json& j) {
    OptimizerConfig o;
    o.kind = optimizer_kind_from_string(j.at("kind").get<std::string>());
    o.lr = j.at("lr").get<double>();
    o.momentum = j.at("momentum").get<double>();
    o.beta1 = j.at("beta1").get<double>();
    o.beta2 = j.at("beta2").get<double>();
    o.eps = j.at("eps").get<double>();
    o.weight_decay = j.at("weight_decay").get<double>();
    return o;
}

ordered_json sched_json(const SchedulerConfig& s) {
    ordered_json j;
    j["kind"] = to_string(s.kind);
    j["step_size"] = s.step_size;
    j["patience"] = s.patience;
    j["gamma"] = s.gamma;
    return j;
}

SchedulerConfig sched_from_json(const ordered_json& j) {
    SchedulerConfig s;
    s.kind = scheduler_kind_from_string(j.at("kind").get<std::string>());
    s.step_size = j.at("step_size").get<std::size_t>();
    s.patience = j.at("patience").get<std::size_t>();
    s.gamma = j.at("gamma").get<double>();
    return s;
}

ordered_json net_json(const ShallowNet& net) {
    ordered_json j;
    j["in_dim"] = net.config().in_dim;
    j["hidden_layers"] = net.config().hidden_layers;
    j["hidden_dim"] = net.config().hidden_dim;
    j["dropout_p"] = net.config().dropout_p;
    ordered_json params = ordered_json::array();
    for (const Matrix& m : net.params()) params.push_back(matrix_to_json(m));
    j["params"] = std::move(params);
    return j;
}

ShallowNet net_from_json(const ordered_json& j) {
    ShallowNetConfig cfg;
    cfg.in_dim = j.at("in_dim").get<std::size_t>();
    cfg.hidden_layers = j.at("hidden_layers").get<std::size_t>();
    cfg.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    cfg.dropout_p = j.at("dropout_p").get<double>();
    std::vector<Matrix> params;
    for (const auto& m : j.at("params")) params.push_back(matrix_from_json(m));
    ShallowNet net;
    net.restore(cfg, std::move(params));
    return net;
}

ordered_json parse_file(const std::string& path) {
    const std::string text = read_text_file(path);
    try {
        return ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("cannot parse " + path + ": " + e.what());
    }
}

} // namespace

std::uint64_t hash_bytes(const void* data, std::size_t n, std::uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

std::uint64_t hash_file(const std::string& path) {
    const std::string text = read_text_file(path);
    return hash_bytes(text.data(), text.size());
}

std::string hex64(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open " + path + " for writing");
    out << text;
    if (text.empty() || text.back() != '\n') out << '\n';
    out.close();
    if (!out) throw DataError("write failed for " + path);
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ordered_json matrix_to_json(const Matrix& m) {
    ordered_json j;
    j["rows"] = m.rows;
    j["cols"] = m.cols;
    j["data"] = m.data;
    return j;
}

Matrix matrix_from_json(const ordered_json& j) {
    Matrix m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
    const auto& data = j.at("data");
    if (data.size() != m.size())
        throw DataError("matrix payload has " + std::to_string(data.size()) +
                        " values for shape " + m.shape_str());
    for (std::size_t i = 0; i < m.size(); ++i) m.data[i] = data[i].get<double>();
    return m;
}

ordered_json json_of(const TaskModelConfig& cfg) {
    ordered_json j;
    j["hidden_layers"] = cfg.hidden_layers;
    j["hidden_dim"] = cfg.hidden_dim;
    j["dropout_p"] = cfg.dropout_p;
    j["mc_rounds"] = cfg.mc_rounds;
    j["batch_size"] = cfg.batch_size;
    j["epochs"] = cfg.epochs;
    j["optimizer"] = opt_json(cfg.opt);
    j["scheduler"] = sched_json(cfg.sched);
    j["smoothing"] = cfg.smoothing;
    j["seed"] = cfg.seed;
    ordered_json pp;
    pp["drop_correlated"] = cfg.preprocess.drop_correlated;
    pp["corr_threshold"] = cfg.preprocess.corr_threshold;
    pp["scaler"] = to_string(cfg.preprocess.scaler);
    pp["oversample"] = to_string(cfg.preprocess.oversample);
    pp["smote_k"] = cfg.preprocess.smote_k;
    j["preprocess"] = std::move(pp);
    return j;
}

TaskModelConfig task_model_config_from_json(const ordered_json& j) {
    TaskModelConfig cfg;
    cfg.hidden_layers = j.at("hidden_layers").get<std::size_t>();
    cfg.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    cfg.dropout_p = j.at("dropout_p").get<double>();
    cfg.mc_rounds = j.at("mc_rounds").get<std::size_t>();
    cfg.batch_size = j.at("batch_size").get<std::size_t>();
    cfg.epochs = j.at("epochs").get<std::size_t>();
    cfg.opt = opt_from_json(j.at("optimizer"));
    cfg.sched = sched_from_json(j.at("scheduler"));
    cfg.smoothing = j.at("smoothing").get<double>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    const auto& pp = j.at("preprocess");
    cfg.preprocess.drop_correlated = pp.at("drop_correlated").get<bool>();
    cfg.preprocess.corr_threshold = pp.at("corr_threshold").get<double>();
    cfg.preprocess.scaler = scaler_kind_from_string(pp.at("scaler").get<std::string>());
    cfg.preprocess.oversample = oversample_from_string(pp.at("oversample").get<std::string>());
    cfg.preprocess.smote_k = pp.at("smote_k").get<std::size_t>();
    return cfg;
}

ordered_json json_of(const UfnetConfig& cfg) {
    ordered_json j;
    ordered_json tasks = ordered_json::array();
    for (TaskId t : cfg.tasks) tasks.push_back(task_name(t));
    j["tasks"] = std::move(tasks);
    j["proj_dim"] = cfg.proj_dim;
    j["qkv_dim"] = cfg.qkv_dim;
    j["hidden_layers"] = cfg.hidden_layers;
    j["hidden_dim"] = cfg.hidden_dim;
    j["dropout_p"] = cfg.dropout_p;
    j["eta"] = cfg.eta;
    j["mc_rounds"] = cfg.mc_rounds;
    j["mode"] = to_string(cfg.mode);
    j["batch_size"] = cfg.batch_size;
    j["epochs"] = cfg.epochs;
    j["optimizer"] = opt_json(cfg.opt);
    j["scheduler"] = sched_json(cfg.sched);
    j["smoothing"] = cfg.smoothing;
    j["seed"] = cfg.seed;
    return j;
}

UfnetConfig ufnet_config_from_json(const ordered_json& j) {
    UfnetConfig cfg;
    cfg.tasks.clear();
    for (const auto& t : j.at("tasks"))
        cfg.tasks.push_back(task_from_string(t.get<std::string>()));
    cfg.proj_dim = j.at("proj_dim").get<std::size_t>();
    cfg.qkv_dim = j.at("qkv_dim").get<std::size_t>();
    cfg.hidden_layers = j.at("hidden_layers").get<std::size_t>();
    cfg.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    cfg.dropout_p = j.at("dropout_p").get<double>();
    cfg.eta = j.at("eta").get<double>();
    cfg.mc_rounds = j.at("mc_rounds").get<std::size_t>();
    cfg.mode = fusion_mode_from_string(j.at("mode").get<std::string>());
    cfg.batch_size = j.at("batch_size").get<std::size_t>();
    cfg.epochs = j.at("epochs").get<std::size_t>();
    cfg.opt = opt_from_json(j.at("optimizer"));
    cfg.sched = sched_from_json(j.at("scheduler"));
    cfg.smoothing = j.at("smoothing").get<double>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    return cfg;
}

ordered_json json_of(const SplitPlan& plan) {
    ordered_json j;
    j["seed"] = plan.seed;
    j["ratios"] = plan.ratios;
    ordered_json assign = ordered_json::object();
    for (const auto& [subject, fold] : plan.assignment) assign[subject] = fold_name(fold);
    j["assignment"] = std::move(assign);
    return j;
}

SplitPlan split_from_json(const ordered_json& j) {
    SplitPlan plan;
    plan.seed = j.at("seed").get<std::uint64_t>();
    const auto& ratios = j.at("ratios");
    for (std::size_t i = 0; i < 3; ++i) plan.ratios[i] = ratios.at(i).get<double>();
    for (const auto& [subject, fold] : j.at("assignment").items())
        plan.assignment[subject] = fold_from_name(fold.get<std::string>());
    return plan;
}

std::uint64_t split_hash(const SplitPlan& plan) {
    // std::map iteration is sorted, so the dump is canonical
    const std::string text = json_of(plan).dump();
    return hash_bytes(text.data(), text.size());
}

void save_task_bundle(const TaskBundle& b, const std::string& path) {
    ordered_json j;
    j["kind"] = "task_bundle";
    j["format_version"] = kFormatVersion;
    j["task"] = b.task;
    j["config"] = json_of(b.model.config);
    ordered_json pipe;
    pipe["kept_columns"] = b.model.pipeline.kept_columns();
    pipe["center"] = b.model.pipeline.stat_center();
    pipe["scale"] = b.model.pipeline.stat_scale();
    j["pipeline"] = std::move(pipe);
    j["net"] = net_json(b.model.net);
    j["weights_hash"] = hex64(b.model.weights_hash());
    j["history"] = history_json(b.model.history);
    j["notes"] = b.model.notes;
    j["split"] = json_of(b.split);
    j["split_hash"] = hex64(split_hash(b.split));
    j["inputs"] = inputs_json(b.inputs);
    write_text_file(path, j.dump(2));
}

TaskBundle load_task_bundle(const std::string& path) {
    const ordered_json j = parse_file(path);
    if (j.value("kind", "") != "task_bundle")
        throw DataError(path + " is not a task bundle");
    TaskBundle b;
    b.task = j.at("task").get<std::string>();
    b.model.config = task_model_config_from_json(j.at("config"));
    const auto& pipe = j.at("pipeline");
    b.model.pipeline.restore(b.model.config.preprocess,
                             pipe.at("kept_columns").get<std::vector<std::size_t>>(),
                             pipe.at("center").get<std::vector<double>>(),
                             pipe.at("scale").get<std::vector<double>>());
    b.model.net = net_from_json(j.at("net"));
    b.model.history = history_from_json(j.at("history"));
    b.model.notes = j.at("notes").get<std::vector<std::string>>();
    b.split = split_from_json(j.at("split"));
    b.inputs = inputs_from_json(j.at("inputs"));
    const std::string recorded = j.at("weights_hash").get<std::string>();
    if (hex64(b.model.weights_hash()) != recorded)
        throw DataError(path + ": weights hash mismatch (file corrupted?)");
    return b;
}

void save_fusion_bundle(const FusionBundle& b, const std::string& path) {
    ordered_json j;
    j["kind"] = "fusion_bundle";
    j["format_version"] = kFormatVersion;
    j["config"] = json_of(b.model.config);
    ordered_json proj = ordered_json::array();
    for (const auto& p : b.model.proj) {
        ordered_json block;
        block["weight"] = matrix_to_json(p[0]);
        block["bias"] = matrix_to_json(p[1]);
        block["ln_gain"] = matrix_to_json(p[2]);
        block["ln_shift"] = matrix_to_json(p[3]);
        proj.push_back(std::move(block));
    }
    j["proj"] = std::move(proj);
    j["wq"] = matrix_to_json(b.model.wq);
    j["wk"] = matrix_to_json(b.model.wk);
    j["wv"] = matrix_to_json(b.model.wv);
    j["head"] = net_json(b.model.head);
    j["weights_hash"] = hex64(b.model.weights_hash());
    ordered_json hashes = ordered_json::array();
    for (std::uint64_t h : b.model.task_hashes) hashes.push_back(hex64(h));
    j["task_hashes"] = std::move(hashes);
    j["task_bundles"] = b.task_bundle_files;
    j["history"] = history_json(b.model.history);
    j["split"] = json_of(b.split);
    j["split_hash"] = hex64(split_hash(b.split));
    j["inputs"] = inputs_json(b.inputs);
    write_text_file(path, j.dump(2));
}

FusionBundle load_fusion_bundle(const std::string& path) {
    const ordered_json j = parse_file(path);
    if (j.value("kind", "") != "fusion_bundle")
        throw DataError(path + " is not a fusion bundle");
    FusionBundle b;
    b.model.config = ufnet_config_from_json(j.at("config"));
    for (const auto& block : j.at("proj"))
        b.model.proj.push_back({matrix_from_json(block.at("weight")),
                                matrix_from_json(block.at("bias")),
                                matrix_from_json(block.at("ln_gain")),
                                matrix_from_json(block.at("ln_shift"))});
    if (b.model.proj.size() != b.model.config.tasks.size())
        throw DataError(path + ": projection blocks do not match task list");
    b.model.wq = matrix_from_json(j.at("wq"));
    b.model.wk = matrix_from_json(j.at("wk"));
    b.model.wv = matrix_from_json(j.at("wv"));
    b.model.head = net_from_json(j.at("head"));
    for (const auto& h : j.at("task_hashes"))
        b.model.task_hashes.push_back(
            std::stoull(h.get<std::string>(), nullptr, 16));
    b.task_bundle_files = j.at("task_bundles").get<std::vector<std::string>>();
    b.model.history = history_from_json(j.at("history"));
    b.split = split_from_json(j.at("split"));
    b.inputs = inputs_from_json(j.at("inputs"));
    const std::string recorded = j.at("weights_hash").get<std::string>();
    if (hex64(b.model.weights_hash()) != recorded)
        throw DataError(path + ": weights hash mismatch (file corrupted?)");
    return b;
}

std::string bundle_kind(const std::string& path) {
    return parse_file(path).value("kind", "");
}

} // namespace ufnet
