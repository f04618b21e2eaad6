#include "ufnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "ufnet/error.hpp"
#include "ufnet/rng.hpp"

namespace ufnet {

const char* task_name(TaskId t) {
    switch (t) {
        case TaskId::Tapping: return "tapping";
        case TaskId::Smile: return "smile";
        default: return "speech";
    }
}

TaskId task_from_string(const std::string& s) {
    if (s == "tapping") return TaskId::Tapping;
    if (s == "smile") return TaskId::Smile;
    if (s == "speech") return TaskId::Speech;
    throw ConfigError("unknown task '" + s + "' (expected tapping|smile|speech)");
}

std::vector<TaskId> tasks_from_csv_string(const std::string& csv) {
    std::vector<TaskId> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(task_from_string(item));
    }
    if (out.empty()) throw ConfigError("no tasks given");
    std::vector<TaskId> dedup = out;
    std::sort(dedup.begin(), dedup.end());
    if (std::adjacent_find(dedup.begin(), dedup.end()) != dedup.end())
        throw ConfigError("duplicate task in '" + csv + "'");
    return out;
}

bool Session::complete_for(const std::vector<TaskId>& tasks) const {
    for (TaskId t : tasks)
        if (!has_task(t)) return false;
    return true;
}

std::vector<std::pair<std::string, int>> Cohort::subjects() const {
    std::map<std::string, int> by_id;
    for (const Session& s : sessions) {
        auto [it, inserted] = by_id.emplace(s.subject_id, s.label);
        if (!inserted && it->second != s.label)
            throw DataError("subject " + s.subject_id + " has conflicting labels");
    }
    return {by_id.begin(), by_id.end()};
}

ColumnMapping ColumnMapping::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open column mapping file " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("column mapping " + path + ": " + e.what());
    }
    ColumnMapping m;
    if (j.contains("columns"))
        for (auto& [k, v] : j["columns"].items()) m.columns[k] = v.get<std::string>();
    if (j.contains("label_map"))
        for (auto& [k, v] : j["label_map"].items()) m.label_map[k] = v.get<int>();
    if (j.contains("feature_prefix")) m.feature_prefix = j["feature_prefix"].get<std::string>();
    if (j.contains("feature_columns"))
        for (auto& v : j["feature_columns"]) m.feature_columns.push_back(v.get<std::string>());
    if (j.contains("expected_dim")) m.expected_dim = j["expected_dim"].get<std::size_t>();
    return m;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

bool is_unknown_field(const std::string& s) {
    return s.empty() || s == "unknown" || s == "na" || s == "nan";
}

double parse_real(const std::string& s, const std::string& where) {
    const char* begin = s.c_str();
    char* end = nullptr;
    const double v = std::strtod(begin, &end);
    if (end != begin + s.size() || s.empty())
        throw DataError(where + ": unparseable real '" + s + "'");
    return v;
}

int parse_label(const std::string& raw, const ColumnMapping& m, const std::string& where) {
    if (!m.label_map.empty()) {
        auto it = m.label_map.find(raw);
        if (it == m.label_map.end())
            throw DataError(where + ": label '" + raw + "' not in mapping");
        return it->second ? 1 : 0;
    }
    if (raw == "pd" || raw == "PD" || raw == "1") return 1;
    if (raw == "non-pd" || raw == "nonpd" || raw == "non_pd" || raw == "0") return 0;
    throw DataError(where + ": label '" + raw + "' not recognized (pd|non-pd|1|0)");
}

std::string mapped(const ColumnMapping& m, const std::string& role) {
    auto it = m.columns.find(role);
    return it == m.columns.end() ? role : it->second;
}

std::string fmt_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

std::vector<Session> load_task_csv(const std::string& path, TaskId task,
                                   const ColumnMapping& mapping) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError(path + ": empty file");
    const std::vector<std::string> header = split_csv_line(line);
    std::map<std::string, std::size_t> col_of;
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (!col_of.emplace(header[i], i).second)
            throw DataError(path + ": duplicate header column '" + header[i] + "'");
    }
    const auto require_col = [&](const std::string& role) {
        const std::string name = mapped(mapping, role);
        auto it = col_of.find(name);
        if (it == col_of.end())
            throw DataError(path + ": missing required column '" + name + "'");
        return it->second;
    };
    const auto optional_col = [&](const std::string& role) -> std::ptrdiff_t {
        const std::string name = mapped(mapping, role);
        auto it = col_of.find(name);
        return it == col_of.end() ? -1 : static_cast<std::ptrdiff_t>(it->second);
    };
    const std::size_t c_subj = require_col("subject_id");
    const std::size_t c_sess = require_col("session_id");
    const std::size_t c_label = require_col("label");
    const std::ptrdiff_t c_sex = optional_col("sex");
    const std::ptrdiff_t c_age = optional_col("age");
    const std::ptrdiff_t c_eth = optional_col("ethnicity");
    const std::ptrdiff_t c_coh = optional_col("cohort");
    const std::ptrdiff_t c_dur = optional_col("duration");

    std::vector<std::size_t> feat_cols;
    if (!mapping.feature_columns.empty()) {
        for (const std::string& name : mapping.feature_columns) {
            auto it = col_of.find(name);
            if (it == col_of.end())
                throw DataError(path + ": missing feature column '" + name + "'");
            feat_cols.push_back(it->second);
        }
    } else {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i].rfind(mapping.feature_prefix, 0) == 0 &&
                header[i].size() > mapping.feature_prefix.size())
                feat_cols.push_back(i);
    }
    const std::size_t expected = mapping.expected_dim != 0
                                     ? mapping.expected_dim
                                     : kCanonicalDims[static_cast<std::size_t>(task)];
    if (mapping.expected_dim != std::size_t(-1) && feat_cols.size() != expected)
        throw DataError(path + ": " + task_name(task) + " expects " + std::to_string(expected) +
                        " feature columns, found " + std::to_string(feat_cols.size()));
    if (feat_cols.empty()) throw DataError(path + ": no feature columns found");

    std::vector<Session> out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::vector<std::string> f = split_csv_line(line);
        const std::string where = path + ":" + std::to_string(line_no);
        if (f.size() != header.size())
            throw DataError(where + ": expected " + std::to_string(header.size()) +
                            " fields, got " + std::to_string(f.size()));
        Session s;
        s.subject_id = f[c_subj];
        s.session_id = f[c_sess];
        if (s.subject_id.empty() || s.session_id.empty())
            throw DataError(where + ": empty subject or session id");
        s.label = parse_label(f[c_label], mapping, where);
        if (c_sex >= 0 && !is_unknown_field(f[c_sex])) s.demo.sex = f[c_sex];
        if (c_age >= 0 && !is_unknown_field(f[c_age])) s.demo.age = parse_real(f[c_age], where);
        if (c_eth >= 0 && !is_unknown_field(f[c_eth])) s.demo.ethnicity = f[c_eth];
        if (c_coh >= 0 && !is_unknown_field(f[c_coh])) s.demo.cohort_name = f[c_coh];
        if (c_dur >= 0 && !is_unknown_field(f[c_dur]))
            s.demo.duration = parse_real(f[c_dur], where);
        std::vector<double>& feat = s.features[static_cast<std::size_t>(task)];
        feat.reserve(feat_cols.size());
        for (std::size_t c : feat_cols) feat.push_back(parse_real(f[c], where));
        out.push_back(std::move(s));
    }
    return out;
}

namespace {

void merge_demographics(Demographics& into, const Demographics& from, const std::string& key) {
    const auto merge_str = [&](std::string& a, const std::string& b, const char* what) {
        if (b.empty()) return;
        if (a.empty())
            a = b;
        else if (a != b)
            throw DataError("session " + key + ": conflicting " + what + " ('" + a + "' vs '" +
                            b + "')");
    };
    const auto merge_num = [&](double& a, double b, const char* what) {
        if (std::isnan(b)) return;
        if (std::isnan(a))
            a = b;
        else if (a != b)
            throw DataError("session " + key + ": conflicting " + what);
    };
    merge_str(into.sex, from.sex, "sex");
    merge_str(into.ethnicity, from.ethnicity, "ethnicity");
    merge_str(into.cohort_name, from.cohort_name, "cohort");
    merge_num(into.age, from.age, "age");
    merge_num(into.duration, from.duration, "duration");
}

} // namespace

Cohort load_cohort(const std::map<TaskId, std::string>& paths, const ColumnMapping& mapping) {
    if (paths.empty()) throw ConfigError("load_cohort: no task files given");
    Cohort cohort;
    std::map<std::pair<std::string, std::string>, std::size_t> index;
    for (const auto& [task, path] : paths) {
        const std::size_t ti = static_cast<std::size_t>(task);
        std::vector<Session> frags = load_task_csv(path, task, mapping);
        for (Session& frag : frags) {
            const auto key = std::make_pair(frag.subject_id, frag.session_id);
            const std::string key_str = frag.subject_id + "/" + frag.session_id;
            auto [it, inserted] = index.emplace(key, cohort.sessions.size());
            if (inserted) {
                cohort.sessions.push_back(std::move(frag));
            } else {
                Session& dst = cohort.sessions[it->second];
                if (!dst.features[ti].empty())
                    throw DataError("duplicate " + std::string(task_name(task)) +
                                    " features for session " + key_str);
                if (dst.label != frag.label)
                    throw DataError("session " + key_str + ": conflicting labels across files");
                merge_demographics(dst.demo, frag.demo, key_str);
                dst.features[ti] = std::move(frag.features[ti]);
            }
        }
        // uniform width within the file is enforced by the loader
        for (const Session& s : cohort.sessions) {
            if (!s.features[ti].empty()) {
                cohort.dims[ti] = s.features[ti].size();
                break;
            }
        }
    }
    (void)cohort.subjects(); // validates per-subject label consistency
    return cohort;
}

std::vector<std::string> write_cohort(const Cohort& cohort, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::vector<std::string> written;
    for (std::size_t ti = 0; ti < kNumTasks; ++ti) {
        if (cohort.dims[ti] == 0) continue;
        const std::string path = (fs::path(dir) / (std::string(task_name(TaskId(ti))) + ".csv")).string();
        std::ofstream out(path);
        if (!out) throw DataError("cannot write " + path);
        out << "subject_id,session_id,label,sex,age,ethnicity,cohort,duration";
        for (std::size_t j = 0; j < cohort.dims[ti]; ++j) out << ",f" << j;
        out << "\n";
        for (const Session& s : cohort.sessions) {
            const std::vector<double>& feat = s.features[ti];
            if (feat.empty()) continue;
            out << s.subject_id << ',' << s.session_id << ',' << (s.label ? "pd" : "non-pd")
                << ',' << s.demo.sex << ','
                << (std::isnan(s.demo.age) ? std::string() : fmt_real(s.demo.age)) << ','
                << s.demo.ethnicity << ',' << s.demo.cohort_name << ','
                << (std::isnan(s.demo.duration) ? std::string() : fmt_real(s.demo.duration));
            for (double v : feat) out << ',' << fmt_real(v);
            out << "\n";
        }
        written.push_back(path);
    }
    const std::string subj_path = (fs::path(dir) / "subjects.csv").string();
    std::ofstream out(subj_path);
    out << "subject_id,label\n";
    for (const auto& [id, label] : cohort.subjects())
        out << id << ',' << (label ? "pd" : "non-pd") << "\n";
    written.push_back(subj_path);
    return written;
}

const char* fold_name(Fold f) {
    switch (f) {
        case Fold::Train: return "train";
        case Fold::Val: return "val";
        default: return "test";
    }
}

Fold SplitPlan::fold_of(const std::string& subject_id) const {
    auto it = assignment.find(subject_id);
    if (it == assignment.end())
        throw DataError("subject " + subject_id + " missing from split plan");
    return it->second;
}

SplitPlan make_split(const std::vector<std::pair<std::string, int>>& subjects,
                     std::array<double, 3> ratios, std::uint64_t seed) {
    const double sum = ratios[0] + ratios[1] + ratios[2];
    if (std::abs(sum - 1.0) > 1e-9 || ratios[0] <= 0.0 || ratios[1] < 0.0 || ratios[2] < 0.0)
        throw ConfigError("split ratios must be nonnegative and sum to 1");
    std::array<std::vector<std::string>, 2> by_class;
    {
        std::map<std::string, int> dedup;
        for (const auto& [id, label] : subjects) {
            auto [it, inserted] = dedup.emplace(id, label);
            if (!inserted && it->second != label)
                throw DataError("subject " + id + " listed with conflicting labels");
        }
        for (const auto& [id, label] : dedup) by_class[label ? 1 : 0].push_back(id);
    }
    for (int cls = 0; cls < 2; ++cls)
        if (by_class[cls].size() < 5)
            throw DataError("stratified split needs >= 5 subjects per class, class " +
                            std::to_string(cls) + " has " +
                            std::to_string(by_class[cls].size()));
    SplitPlan plan;
    plan.ratios = ratios;
    plan.seed = seed;
    Rng rng = Rng::for_stream(seed, RngStream::Split);
    for (int cls = 0; cls < 2; ++cls) {
        std::vector<std::string>& ids = by_class[cls]; // sorted via the map above
        rng.shuffle(ids);
        const std::size_t n = ids.size();
        const std::size_t n_train = static_cast<std::size_t>(std::floor(ratios[0] * n));
        const std::size_t n_val = static_cast<std::size_t>(std::floor(ratios[1] * n));
        for (std::size_t i = 0; i < n; ++i) {
            Fold f = i < n_train ? Fold::Train : (i < n_train + n_val ? Fold::Val : Fold::Test);
            plan.assignment[ids[i]] = f;
        }
    }
    return plan;
}

void assert_split_covers(const Cohort& cohort, const SplitPlan& plan) {
    for (const Session& s : cohort.sessions) (void)plan.fold_of(s.subject_id);
}

std::vector<std::size_t> sessions_in_fold(const Cohort& cohort, const SplitPlan& plan, Fold fold,
                                          const std::vector<TaskId>& required_tasks) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < cohort.sessions.size(); ++i) {
        const Session& s = cohort.sessions[i];
        if (plan.fold_of(s.subject_id) == fold && s.complete_for(required_tasks))
            idx.push_back(i);
    }
    return idx;
}

Matrix feature_matrix(const Cohort& cohort, const std::vector<std::size_t>& idx, TaskId task) {
    const std::size_t ti = static_cast<std::size_t>(task);
    const std::size_t d = cohort.dims[ti];
    if (d == 0) throw DataError(std::string("no ") + task_name(task) + " features loaded");
    Matrix x(idx.size(), d);
    for (std::size_t r = 0; r < idx.size(); ++r) {
        const std::vector<double>& f = cohort.sessions[idx[r]].features[ti];
        if (f.size() != d)
            throw DataError("session " + cohort.sessions[idx[r]].session_id +
                            ": inconsistent " + task_name(task) + " width");
        std::copy(f.begin(), f.end(), x.row_ptr(r));
    }
    return x;
}

std::vector<int> labels_of(const Cohort& cohort, const std::vector<std::size_t>& idx) {
    std::vector<int> y;
    y.reserve(idx.size());
    for (std::size_t i : idx) y.push_back(cohort.sessions[i].label);
    return y;
}

void SyntheticCohortSpec::validate() const {
    if (n_subjects < 10) throw ConfigError("synthetic cohort needs >= 10 subjects");
    if (prevalence <= 0.0 || prevalence >= 1.0)
        throw ConfigError("prevalence must be in (0, 1)");
    for (std::size_t t = 0; t < kNumTasks; ++t) {
        if (dims[t] == 0) throw ConfigError("task dims must be >= 1");
        if (informative[t] > dims[t])
            throw ConfigError("informative dims exceed total dims for task " +
                              std::string(task_name(TaskId(t))));
        if (missing_prob[t] < 0.0 || missing_prob[t] > 0.95)
            throw ConfigError("missing prob must be in [0, 0.95]");
    }
    if (signal_correlation < 0.0 || signal_correlation > 1.0)
        throw ConfigError("signal correlation must be in [0, 1]");
    if (noise_scale <= 0.0) throw ConfigError("noise scale must be positive");
    if (extra_session_prob < 0.0 || extra_session_prob >= 1.0)
        throw ConfigError("extra session prob must be in [0, 1)");
    if (corrupt_prob < 0.0 || corrupt_prob > 1.0)
        throw ConfigError("corrupt prob must be in [0, 1]");
    if (sex_attenuation < 0.0 || sex_attenuation >= 1.0)
        throw ConfigError("sex attenuation must be in [0, 1)");
}

Cohort gen_synthetic_cohort(const SyntheticCohortSpec& spec) {
    spec.validate();
    Rng rng = Rng::for_stream(spec.seed, RngStream::Synth);
    Cohort cohort;
    cohort.dims = spec.dims;
    constexpr double kSubjectEffect = 0.3; // within-subject session correlation

    char idbuf[24];
    for (std::size_t s = 0; s < spec.n_subjects; ++s) {
        std::snprintf(idbuf, sizeof(idbuf), "S%05zu", s);
        const std::string subject_id = idbuf;
        const int label = rng.bernoulli(spec.prevalence) ? 1 : 0;
        Demographics demo;
        demo.sex = rng.bernoulli(0.5) ? "female" : "male";
        demo.age = rng.normal(63.0, 9.0);
        demo.ethnicity = rng.bernoulli(0.85) ? "white" : "non-white";
        demo.cohort_name = "synthetic";
        if (label) demo.duration = rng.uniform(0.5, 15.0);

        const double shared = rng.normal();
        std::array<double, kNumTasks> latent;
        const double rho = spec.signal_correlation;
        for (std::size_t t = 0; t < kNumTasks; ++t)
            latent[t] = rho * shared + std::sqrt(1.0 - rho * rho) * rng.normal();

        const double atten = demo.sex == "female" ? 1.0 - spec.sex_attenuation : 1.0;
        const double dir = label ? 0.5 : -0.5;

        std::size_t n_sessions = 1;
        while (n_sessions < 4 && rng.bernoulli(spec.extra_session_prob)) ++n_sessions;

        for (std::size_t sess = 0; sess < n_sessions; ++sess) {
            Session row;
            row.subject_id = subject_id;
            row.session_id = subject_id + "-v" + std::to_string(sess);
            row.label = label;
            row.demo = demo;
            std::array<bool, kNumTasks> missing{};
            bool all_missing = true;
            for (std::size_t t = 0; t < kNumTasks; ++t) {
                missing[t] = rng.bernoulli(spec.missing_prob[t]);
                all_missing = all_missing && missing[t];
            }
            if (all_missing) missing = {false, false, false};
            for (std::size_t t = 0; t < kNumTasks; ++t) {
                const bool corrupted = rng.bernoulli(spec.corrupt_prob);
                std::vector<double>& feat = row.features[t];
                if (missing[t]) continue;
                feat.resize(spec.dims[t]);
                for (std::size_t j = 0; j < spec.dims[t]; ++j) {
                    if (corrupted) {
                        feat[j] = spec.corrupt_scale * spec.noise_scale * rng.normal();
                    } else if (j < spec.informative[t]) {
                        feat[j] = dir * spec.signal[t] * atten + kSubjectEffect * latent[t] +
                                  spec.noise_scale * rng.normal();
                    } else {
                        feat[j] = spec.noise_scale * rng.normal();
                    }
                }
            }
            cohort.sessions.push_back(std::move(row));
        }
    }
    return cohort;
}

} // namespace ufnet
