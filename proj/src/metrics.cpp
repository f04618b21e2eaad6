#include "ufnet/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "ufnet/error.hpp"

namespace ufnet {

EvalReport binary_metrics(const std::vector<int>& preds, const std::vector<int>& labels,
                          std::size_t withheld) {
    if (preds.size() != labels.size())
        throw DataError("binary_metrics: " + std::to_string(preds.size()) + " preds vs " +
                        std::to_string(labels.size()) + " labels");
    if (preds.empty() && withheld == 0) throw DataError("binary_metrics: empty input");
    EvalReport r;
    r.counts.withheld = withheld;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if ((preds[i] != 0 && preds[i] != 1) || (labels[i] != 0 && labels[i] != 1))
            throw DataError("binary_metrics: non-binary value at index " + std::to_string(i));
        if (labels[i]) {
            ++(preds[i] ? r.counts.tp : r.counts.fn);
        } else {
            ++(preds[i] ? r.counts.fp : r.counts.tn);
        }
    }
    const auto& c = r.counts;
    const std::size_t n = c.retained();
    const auto ratio = [](std::size_t num, std::size_t den) {
        return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
    };
    r.accuracy = ratio(c.tp + c.tn, n);
    r.sensitivity = ratio(c.tp, c.tp + c.fn);
    r.specificity = ratio(c.tn, c.tn + c.fp);
    r.balanced_accuracy = 0.5 * (r.sensitivity + r.specificity);
    r.precision = ratio(c.tp, c.tp + c.fp);
    const double pr_sum = r.precision + r.sensitivity;
    r.f1 = pr_sum == 0.0 ? 0.0 : 2.0 * r.precision * r.sensitivity / pr_sum;
    r.coverage = ratio(n, n + withheld);
    return r;
}

double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size() || scores.empty())
        throw DataError("auroc: bad input sizes");
    std::size_t npos = 0;
    for (int y : labels) npos += (y != 0);
    const std::size_t nneg = labels.size() - npos;
    if (npos == 0 || nneg == 0)
        throw DataError("auroc: needs both classes (got " + std::to_string(npos) +
                        " positives of " + std::to_string(labels.size()) + ")");
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // average ranks over ties, then Mann-Whitney U
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j + 1);
        for (std::size_t t = i; t <= j; ++t)
            if (labels[order[t]]) rank_sum_pos += avg_rank;
        i = j + 1;
    }
    const double u = rank_sum_pos - 0.5 * static_cast<double>(npos) * (npos + 1);
    return u / (static_cast<double>(npos) * static_cast<double>(nneg));
}

double auprc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size() || scores.empty())
        throw DataError("auprc: bad input sizes");
    std::size_t npos = 0;
    for (int y : labels) npos += (y != 0);
    if (npos == 0 || npos == labels.size())
        throw DataError("auprc: needs both classes");
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    // sweep thresholds at distinct scores; AP = sum precision * recall increment
    double ap = 0.0;
    std::size_t tp = 0, fp = 0;
    std::size_t prev_tp = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        for (std::size_t t = i; t <= j; ++t) {
            if (labels[order[t]])
                ++tp;
            else
                ++fp;
        }
        if (tp > prev_tp) {
            const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
            const double recall_step =
                static_cast<double>(tp - prev_tp) / static_cast<double>(npos);
            ap += precision * recall_step;
            prev_tp = tp;
        }
        i = j + 1;
    }
    return ap;
}

MeanCi aggregate_values(const std::vector<double>& values) {
    const std::size_t k = values.size();
    if (k < 2) throw ConfigError("aggregate: need >= 2 values, got " + std::to_string(k));
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(k);
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(k - 1));
    return {mean, 1.96 * sd / std::sqrt(static_cast<double>(k))};
}

std::vector<std::pair<std::string, double>> EvalReport::named() const {
    std::vector<std::pair<std::string, double>> out = {
        {"accuracy", accuracy},     {"balanced_accuracy", balanced_accuracy},
        {"precision", precision},   {"sensitivity", sensitivity},
        {"specificity", specificity}, {"f1", f1},
        {"coverage", coverage},
    };
    if (auroc) out.emplace_back("auroc", *auroc);
    if (auprc) out.emplace_back("auprc", *auprc);
    if (ece) out.emplace_back("ece", *ece);
    if (brier) out.emplace_back("brier", *brier);
    return out;
}

SeedAggregate aggregate_reports(const std::vector<EvalReport>& reports) {
    if (reports.size() < 2)
        throw ConfigError("aggregate: need >= 2 seed reports");
    std::map<std::string, std::vector<double>> series;
    for (const EvalReport& r : reports)
        for (const auto& [name, value] : r.named()) series[name].push_back(value);
    SeedAggregate agg;
    agg.k = reports.size();
    for (auto& [name, vals] : series) {
        if (vals.size() == reports.size()) // drop metrics absent in some seeds
            agg.metrics[name] = aggregate_values(vals);
    }
    return agg;
}

} // namespace ufnet
