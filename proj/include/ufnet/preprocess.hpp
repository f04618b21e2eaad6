#pragma once

#include <string>
#include <vector>

#include "ufnet/matrix.hpp"
#include "ufnet/rng.hpp"

namespace ufnet {

enum class ScalerKind { None, Standard, MinMax };
enum class OversampleMethod { None, Random, Smote };

ScalerKind scaler_kind_from_string(const std::string& s);
std::string to_string(ScalerKind k);

// Accepts the extended family of names (svmsmote, adasyn, borderlinesmote,
// smoten) as aliases for smote; appends a notice when aliasing happens.
OversampleMethod oversample_from_string(const std::string& s,
                                        std::vector<std::string>* notices = nullptr);
std::string to_string(OversampleMethod m);

struct PreprocessConfig {
    bool drop_correlated = false;
    double corr_threshold = 0.95;
    ScalerKind scaler = ScalerKind::None;
    OversampleMethod oversample = OversampleMethod::None;
    std::size_t smote_k = 5;
    void validate() const;
};

// Greedy left-to-right scan: column j is dropped iff |pearson(j, k)| exceeds
// the threshold for some already-kept k < j. Constant columns correlate 0
// with everything. Returns kept indices in original order.
std::vector<std::size_t> fit_correlation_filter(const Matrix& x, double threshold);

// Column pruning + scaling fitted on the training matrix only. Oversampling
// is separate (see oversample_minority) because it must not touch eval data.
class PreprocessPipeline {
public:
    PreprocessPipeline() = default;
    explicit PreprocessPipeline(PreprocessConfig cfg) : cfg_(cfg) {}

    void fit(const Matrix& x_train);
    Matrix apply(const Matrix& x) const;

    bool fitted() const { return fitted_; }
    const PreprocessConfig& config() const { return cfg_; }
    const std::vector<std::size_t>& kept_columns() const { return kept_; }
    std::size_t out_dim() const { return kept_.size(); }

    // Serialization hooks used by the model bundle.
    const std::vector<double>& stat_center() const { return center_; }
    const std::vector<double>& stat_scale() const { return scale_; }
    void restore(PreprocessConfig cfg, std::vector<std::size_t> kept,
                 std::vector<double> center, std::vector<double> scale);

private:
    PreprocessConfig cfg_;
    bool fitted_ = false;
    std::size_t in_dim_ = 0;
    std::vector<std::size_t> kept_;
    std::vector<double> center_; // mean (standard) or min (minmax) per kept col
    std::vector<double> scale_;  // std or max-min; 0 marks a degenerate column
};

struct OversampleResult {
    Matrix x;
    std::vector<int> y;
    std::vector<std::string> notes;
};

// Upsamples the minority class to the majority count. Original rows are
// copied first, in order, untouched. smote falls back to random (with a
// note) when the minority class has <= k members.
OversampleResult oversample_minority(const Matrix& x, const std::vector<int>& y,
                                     OversampleMethod method, std::size_t k, Rng& rng);

} // namespace ufnet
