#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace ufnet {

// Mean / spread of MC-dropout round outputs for one sample.
struct McPrediction {
    double mu = 0.0;
    double sigma = 0.0; // sample std over rounds (ddof=1), 0 for n=1
    std::size_t n = 1;
    double ci_low = 0.0;
    double ci_high = 0.0;
};

// Normal-theory CI on the mean, clipped to [0,1]. Supported levels:
// 0.90, 0.95, 0.99 (z = 1.645 / 1.96 / 2.576).
std::pair<double, double> ci_of_mean(double mu, double sd, std::size_t n, double level = 0.95);
std::pair<double, double> ci_of_mean(const std::vector<double>& rounds, double level = 0.95);

// Builds the full prediction record (mu, ddof-1 sigma, CI) from round outputs.
McPrediction mc_prediction_from_rounds(const std::vector<double>& rounds, double level = 0.95);

int predict_label(const McPrediction& pred, double threshold = 0.5); // 1 iff mu > threshold

enum class AbstainReason { None, CiStraddlesThreshold, ConformalAmbiguous, ConformalEmpty };
std::string to_string(AbstainReason r);

struct AbstainDecision {
    bool withhold = false;
    int label = 0; // meaningful only when !withhold
    AbstainReason reason = AbstainReason::None;
};

// Withholds iff ci_low <= threshold <= ci_high (inclusive on both ends).
AbstainDecision abstain_by_ci(const McPrediction& pred, double threshold = 0.5);

struct PlattScaler {
    double a = 1.0, b = 0.0;
    bool capped = false;         // |a| hit the 50 cap (separable fit)
    bool negative_slope = false; // fitted a < 0 (labels oppose scores)
};

// Maximum-likelihood logistic fit sigma(a*z + b) on logits via damped Newton,
// run to gradient norm < 1e-8.
PlattScaler fit_platt(const std::vector<double>& logits, const std::vector<int>& labels);

double platt_apply(const PlattScaler& s, double logit);

double logit_of(double p); // clamped at 1e-7 from the boundaries

struct ConformalCalibrator {
    double alpha = 0.05;
    double qhat = 0.0;
    std::vector<double> scores; // sorted nonconformity scores
    std::optional<PlattScaler> platt;
    double smoothing_used = 0.0;
};

// Split conformal on nonconformity 1 - p(true class). Needs m >= 10.
// qhat is the ceil((m+1)(1-alpha))-th smallest score; +inf when the index
// exceeds m.
ConformalCalibrator fit_conformal(const std::vector<double>& p_positive,
                                  const std::vector<int>& labels, double alpha = 0.05);

struct ConformalSet {
    bool contains_positive = false;
    bool contains_negative = false;
    std::size_t size() const {
        return (contains_positive ? 1u : 0u) + (contains_negative ? 1u : 0u);
    }
};

ConformalSet conformal_predict_set(const ConformalCalibrator& cal, double p_positive);

// Singleton set -> predict it; otherwise withhold (ambiguous or empty).
AbstainDecision conformal_decision(const ConformalCalibrator& cal, double p_positive);

// Expected calibration error over equal-width bins on max-class confidence.
double ece(const std::vector<double>& p_positive, const std::vector<int>& labels,
           std::size_t bins = 10);

double brier(const std::vector<double>& p_positive, const std::vector<int>& labels);

} // namespace ufnet
