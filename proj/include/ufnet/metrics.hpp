#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ufnet {

struct BinaryCounts {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    std::size_t withheld = 0;
    std::size_t retained() const { return tp + fp + tn + fn; }
};

// Metrics over the retained (non-withheld) samples only. AUROC/AUPRC need
// scores and both classes, so they are optional and filled separately.
struct EvalReport {
    BinaryCounts counts;
    double accuracy = 0.0;
    double balanced_accuracy = 0.0;
    double precision = 0.0;
    double sensitivity = 0.0; // recall
    double specificity = 0.0;
    double f1 = 0.0;
    double coverage = 1.0; // retained / (retained + withheld)
    std::optional<double> auroc;
    std::optional<double> auprc;
    std::optional<double> ece;
    std::optional<double> brier;

    // name -> value for every populated metric, in a fixed order
    std::vector<std::pair<std::string, double>> named() const;
};

// preds/labels in {0,1}; withheld counts samples excluded upstream.
EvalReport binary_metrics(const std::vector<int>& preds, const std::vector<int>& labels,
                          std::size_t withheld = 0);

// Mann-Whitney rank AUROC, ties credited 0.5. Throws on single-class input.
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);

// Step integration of the precision-recall curve (average precision).
double auprc(const std::vector<double>& scores, const std::vector<int>& labels);

struct MeanCi {
    double mean = 0.0, half_width = 0.0;
    double low() const { return mean - half_width; }
    double high() const { return mean + half_width; }
};

// mean +/- 1.96 * sample_std / sqrt(k); requires k >= 2.
MeanCi aggregate_values(const std::vector<double>& values);

struct SeedAggregate {
    std::size_t k = 0;
    std::map<std::string, MeanCi> metrics; // ordered by name
};

SeedAggregate aggregate_reports(const std::vector<EvalReport>& reports);

} // namespace ufnet
