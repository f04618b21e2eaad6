#include "ufnet/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <tuple>

#include "ufnet/error.hpp"

namespace ufnet {

namespace {

constexpr double kProbClamp = 1e-7;

double z_for_level(double level) {
    if (level == 0.90) return 1.645;
    if (level == 0.95) return 1.96;
    if (level == 0.99) return 2.576;
    throw ConfigError("ci level must be one of 0.90/0.95/0.99, got " + std::to_string(level));
}

} // namespace

std::pair<double, double> ci_of_mean(double mu, double sd, std::size_t n, double level) {
    if (n == 0) throw ConfigError("ci_of_mean: n must be >= 1");
    const double half = n == 1 ? 0.0 : z_for_level(level) * sd / std::sqrt(static_cast<double>(n));
    return {std::max(0.0, mu - half), std::min(1.0, mu + half)};
}

std::pair<double, double> ci_of_mean(const std::vector<double>& rounds, double level) {
    const McPrediction p = mc_prediction_from_rounds(rounds, level);
    return {p.ci_low, p.ci_high};
}

McPrediction mc_prediction_from_rounds(const std::vector<double>& rounds, double level) {
    if (rounds.empty()) throw ConfigError("mc prediction: no rounds");
    McPrediction p;
    p.n = rounds.size();
    double mean = 0.0;
    for (double v : rounds) mean += v;
    mean /= static_cast<double>(p.n);
    p.mu = mean;
    if (p.n > 1) {
        double ss = 0.0;
        for (double v : rounds) ss += (v - mean) * (v - mean);
        p.sigma = std::sqrt(ss / static_cast<double>(p.n - 1));
    }
    std::tie(p.ci_low, p.ci_high) = ci_of_mean(p.mu, p.sigma, p.n, level);
    return p;
}

int predict_label(const McPrediction& pred, double threshold) {
    return pred.mu > threshold ? 1 : 0;
}

std::string to_string(AbstainReason r) {
    switch (r) {
        case AbstainReason::None: return "none";
        case AbstainReason::CiStraddlesThreshold: return "ci-straddles-threshold";
        case AbstainReason::ConformalAmbiguous: return "conformal-ambiguous";
        default: return "conformal-empty";
    }
}

AbstainDecision abstain_by_ci(const McPrediction& pred, double threshold) {
    if (pred.ci_low <= threshold && threshold <= pred.ci_high)
        return {true, 0, AbstainReason::CiStraddlesThreshold};
    return {false, predict_label(pred, threshold), AbstainReason::None};
}

double logit_of(double p) {
    const double q = std::min(1.0 - kProbClamp, std::max(kProbClamp, p));
    return std::log(q / (1.0 - q));
}

double platt_apply(const PlattScaler& s, double logit) {
    const double v = s.a * logit + s.b;
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
}

PlattScaler fit_platt(const std::vector<double>& logits, const std::vector<int>& labels) {
    if (logits.size() != labels.size() || logits.empty())
        throw DataError("platt: bad input sizes");
    std::size_t npos = 0;
    for (int y : labels) npos += (y != 0);
    if (npos == 0 || npos == labels.size())
        throw DataError("platt: both classes must be present");
    const std::size_t n = logits.size();

    const auto nll = [&](double a, double b) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double v = a * logits[i] + b;
            // -log sigma(v) for y=1, -log(1-sigma(v)) for y=0, stable form
            const double soft = v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
            s += labels[i] ? soft - v : soft;
        }
        return s;
    };

    double a = 1.0, b = 0.0;
    double cur = nll(a, b);
    for (int iter = 0; iter < 200; ++iter) {
        double ga = 0.0, gb = 0.0, haa = 0.0, hab = 0.0, hbb = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double v = a * logits[i] + b;
            const double p = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                                      : std::exp(v) / (1.0 + std::exp(v));
            const double r = p - (labels[i] ? 1.0 : 0.0);
            const double w = std::max(p * (1.0 - p), 1e-12);
            ga += r * logits[i];
            gb += r;
            haa += w * logits[i] * logits[i];
            hab += w * logits[i];
            hbb += w;
        }
        if (std::sqrt(ga * ga + gb * gb) < 1e-8) break;
        const double det = haa * hbb - hab * hab;
        double da, db;
        if (std::abs(det) < 1e-300) {
            da = -ga;
            db = -gb;
        } else {
            da = -(hbb * ga - hab * gb) / det;
            db = -(haa * gb - hab * ga) / det;
        }
        double step = 1.0;
        for (int h = 0; h < 60; ++h) {
            const double trial = nll(a + step * da, b + step * db);
            if (trial <= cur + 1e-15) {
                a += step * da;
                b += step * db;
                cur = trial;
                break;
            }
            step *= 0.5;
        }
    }

    PlattScaler out;
    out.a = a;
    out.b = b;
    out.negative_slope = a < 0.0;
    if (std::abs(a) > 50.0) {
        out.capped = true;
        out.a = a > 0.0 ? 50.0 : -50.0;
        // refit the intercept alone at the capped slope
        double bb = b;
        for (int iter = 0; iter < 200; ++iter) {
            double g = 0.0, h = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double v = out.a * logits[i] + bb;
                const double p = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                                          : std::exp(v) / (1.0 + std::exp(v));
                g += p - (labels[i] ? 1.0 : 0.0);
                h += std::max(p * (1.0 - p), 1e-12);
            }
            if (std::abs(g) < 1e-8) break;
            bb -= g / h;
        }
        out.b = bb;
    }
    return out;
}

ConformalCalibrator fit_conformal(const std::vector<double>& p_positive,
                                  const std::vector<int>& labels, double alpha) {
    if (p_positive.size() != labels.size())
        throw DataError("conformal: score/label size mismatch");
    const std::size_t m = p_positive.size();
    if (m < 10)
        throw DataError("conformal: calibration set needs >= 10 samples, got " +
                        std::to_string(m));
    if (alpha <= 0.0 || alpha >= 1.0)
        throw ConfigError("conformal: alpha must be in (0, 1)");
    ConformalCalibrator cal;
    cal.alpha = alpha;
    cal.scores.reserve(m);
    for (std::size_t i = 0; i < m; ++i)
        cal.scores.push_back(labels[i] ? 1.0 - p_positive[i] : p_positive[i]);
    std::sort(cal.scores.begin(), cal.scores.end());
    const double raw = std::ceil(static_cast<double>(m + 1) * (1.0 - alpha));
    const std::size_t k = static_cast<std::size_t>(raw);
    cal.qhat = k > m ? std::numeric_limits<double>::infinity() : cal.scores[k - 1];
    return cal;
}

ConformalSet conformal_predict_set(const ConformalCalibrator& cal, double p_positive) {
    ConformalSet s;
    s.contains_positive = (1.0 - p_positive) <= cal.qhat;
    s.contains_negative = p_positive <= cal.qhat;
    return s;
}

AbstainDecision conformal_decision(const ConformalCalibrator& cal, double p_positive) {
    const ConformalSet s = conformal_predict_set(cal, p_positive);
    if (s.size() == 1) return {false, s.contains_positive ? 1 : 0, AbstainReason::None};
    if (s.size() == 2) return {true, 0, AbstainReason::ConformalAmbiguous};
    return {true, 0, AbstainReason::ConformalEmpty};
}

double ece(const std::vector<double>& p_positive, const std::vector<int>& labels,
           std::size_t bins) {
    if (p_positive.size() != labels.size() || p_positive.empty())
        throw DataError("ece: empty or mismatched input");
    if (bins == 0) throw ConfigError("ece: bins must be >= 1");
    std::vector<double> conf_sum(bins, 0.0), acc_sum(bins, 0.0);
    std::vector<std::size_t> count(bins, 0);
    for (std::size_t i = 0; i < p_positive.size(); ++i) {
        const double p = p_positive[i];
        if (p < 0.0 || p > 1.0)
            throw DataError("ece: probability out of [0,1] at index " + std::to_string(i));
        const int pred = p > 0.5 ? 1 : 0;
        const double conf = pred ? p : 1.0 - p;
        std::size_t b = static_cast<std::size_t>(conf * static_cast<double>(bins));
        if (b == bins) b = bins - 1; // conf == 1.0 lands in the top bin
        conf_sum[b] += conf;
        acc_sum[b] += (pred == labels[i]) ? 1.0 : 0.0;
        ++count[b];
    }
    double e = 0.0;
    const double n = static_cast<double>(p_positive.size());
    for (std::size_t b = 0; b < bins; ++b) {
        if (count[b] == 0) continue;
        const double cb = static_cast<double>(count[b]);
        e += (cb / n) * std::abs(acc_sum[b] / cb - conf_sum[b] / cb);
    }
    return e;
}

double brier(const std::vector<double>& p_positive, const std::vector<int>& labels) {
    if (p_positive.size() != labels.size() || p_positive.empty())
        throw DataError("brier: empty or mismatched input");
    double s = 0.0;
    for (std::size_t i = 0; i < p_positive.size(); ++i) {
        const double d = p_positive[i] - (labels[i] ? 1.0 : 0.0);
        s += d * d;
    }
    return s / static_cast<double>(p_positive.size());
}

} // namespace ufnet
