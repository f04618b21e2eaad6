#include "ufnet/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include "ufnet/error.hpp"

namespace ufnet {

ScalerKind scaler_kind_from_string(const std::string& s) {
    if (s == "none") return ScalerKind::None;
    if (s == "standard") return ScalerKind::Standard;
    if (s == "minmax") return ScalerKind::MinMax;
    throw ConfigError("unknown scaler '" + s + "' (expected none|standard|minmax)");
}

std::string to_string(ScalerKind k) {
    switch (k) {
        case ScalerKind::None: return "none";
        case ScalerKind::Standard: return "standard";
        default: return "minmax";
    }
}

OversampleMethod oversample_from_string(const std::string& s,
                                        std::vector<std::string>* notices) {
    if (s == "none") return OversampleMethod::None;
    if (s == "random") return OversampleMethod::Random;
    if (s == "smote") return OversampleMethod::Smote;
    if (s == "svmsmote" || s == "adasyn" || s == "borderlinesmote" || s == "smoten") {
        if (notices) notices->push_back("oversample '" + s + "' treated as smote");
        return OversampleMethod::Smote;
    }
    throw ConfigError("unknown oversample method '" + s + "'");
}

std::string to_string(OversampleMethod m) {
    switch (m) {
        case OversampleMethod::None: return "none";
        case OversampleMethod::Random: return "random";
        default: return "smote";
    }
}

void PreprocessConfig::validate() const {
    if (drop_correlated && (corr_threshold <= 0.0 || corr_threshold > 1.0))
        throw ConfigError("correlation threshold must be in (0, 1], got " +
                          std::to_string(corr_threshold));
    if (oversample == OversampleMethod::Smote && smote_k == 0)
        throw ConfigError("smote neighbor count must be >= 1");
}

namespace {

struct ColStats {
    double mean, norm; // norm = sqrt(sum (x-mean)^2); 0 for constant columns
};

ColStats column_stats(const Matrix& x, std::size_t j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < x.rows; ++i) mean += x.at(i, j);
    mean /= static_cast<double>(x.rows);
    double ss = 0.0;
    for (std::size_t i = 0; i < x.rows; ++i) {
        const double d = x.at(i, j) - mean;
        ss += d * d;
    }
    return {mean, std::sqrt(ss)};
}

} // namespace

std::vector<std::size_t> fit_correlation_filter(const Matrix& x, double threshold) {
    if (x.rows < 2) throw DataError("correlation filter needs >= 2 rows, got " +
                                    std::to_string(x.rows));
    if (threshold <= 0.0 || threshold > 1.0)
        throw ConfigError("correlation threshold must be in (0, 1]");
    std::vector<ColStats> stats(x.cols);
    for (std::size_t j = 0; j < x.cols; ++j) stats[j] = column_stats(x, j);
    std::vector<std::size_t> kept;
    for (std::size_t j = 0; j < x.cols; ++j) {
        bool drop = false;
        for (std::size_t k : kept) {
            if (stats[j].norm == 0.0 || stats[k].norm == 0.0) continue; // r treated as 0
            double dot = 0.0;
            for (std::size_t i = 0; i < x.rows; ++i)
                dot += (x.at(i, j) - stats[j].mean) * (x.at(i, k) - stats[k].mean);
            const double r = dot / (stats[j].norm * stats[k].norm);
            if (std::abs(r) > threshold) {
                drop = true;
                break;
            }
        }
        if (!drop) kept.push_back(j);
    }
    return kept;
}

void PreprocessPipeline::fit(const Matrix& x_train) {
    cfg_.validate();
    if (x_train.rows == 0 || x_train.cols == 0)
        throw DataError("preprocess fit: empty training matrix " + x_train.shape_str());
    in_dim_ = x_train.cols;
    if (cfg_.drop_correlated) {
        kept_ = fit_correlation_filter(x_train, cfg_.corr_threshold);
    } else {
        kept_.resize(x_train.cols);
        for (std::size_t j = 0; j < x_train.cols; ++j) kept_[j] = j;
    }
    center_.assign(kept_.size(), 0.0);
    scale_.assign(kept_.size(), 1.0);
    if (cfg_.scaler == ScalerKind::Standard) {
        for (std::size_t idx = 0; idx < kept_.size(); ++idx) {
            const std::size_t j = kept_[idx];
            const ColStats s = column_stats(x_train, j);
            center_[idx] = s.mean;
            // population std; 0 marks a constant column (mapped to 0 later)
            scale_[idx] = s.norm / std::sqrt(static_cast<double>(x_train.rows));
        }
    } else if (cfg_.scaler == ScalerKind::MinMax) {
        for (std::size_t idx = 0; idx < kept_.size(); ++idx) {
            const std::size_t j = kept_[idx];
            double lo = x_train.at(0, j), hi = x_train.at(0, j);
            for (std::size_t i = 1; i < x_train.rows; ++i) {
                lo = std::min(lo, x_train.at(i, j));
                hi = std::max(hi, x_train.at(i, j));
            }
            center_[idx] = lo;
            scale_[idx] = hi - lo;
        }
    }
    fitted_ = true;
}

Matrix PreprocessPipeline::apply(const Matrix& x) const {
    if (!fitted_) throw ConfigError("preprocess pipeline applied before fit");
    if (x.cols != in_dim_)
        throw ShapeError("preprocess apply: expected " + std::to_string(in_dim_) +
                         " columns, got " + std::to_string(x.cols));
    Matrix out(x.rows, kept_.size());
    const bool rescale = cfg_.scaler != ScalerKind::None;
    for (std::size_t i = 0; i < x.rows; ++i) {
        double* dst = out.row_ptr(i);
        const double* src = x.row_ptr(i);
        for (std::size_t idx = 0; idx < kept_.size(); ++idx) {
            double v = src[kept_[idx]];
            if (rescale) v = scale_[idx] == 0.0 ? 0.0 : (v - center_[idx]) / scale_[idx];
            dst[idx] = v;
        }
    }
    return out;
}

void PreprocessPipeline::restore(PreprocessConfig cfg, std::vector<std::size_t> kept,
                                 std::vector<double> center, std::vector<double> scale) {
    if (kept.empty() || center.size() != kept.size() || scale.size() != kept.size())
        throw DataError("preprocess restore: inconsistent state");
    cfg_ = cfg;
    kept_ = std::move(kept);
    center_ = std::move(center);
    scale_ = std::move(scale);
    in_dim_ = *std::max_element(kept_.begin(), kept_.end()) + 1;
    fitted_ = true;
}

namespace {

// k nearest minority neighbors by Euclidean distance, ties broken by index.
std::vector<std::size_t> nearest_neighbors(const Matrix& x,
                                           const std::vector<std::size_t>& pool,
                                           std::size_t self, std::size_t k) {
    std::vector<std::pair<double, std::size_t>> dist;
    dist.reserve(pool.size() - 1);
    for (std::size_t other : pool) {
        if (other == self) continue;
        double d2 = 0.0;
        for (std::size_t c = 0; c < x.cols; ++c) {
            const double d = x.at(self, c) - x.at(other, c);
            d2 += d * d;
        }
        dist.emplace_back(d2, other);
    }
    std::sort(dist.begin(), dist.end());
    std::vector<std::size_t> nn;
    for (std::size_t i = 0; i < k && i < dist.size(); ++i) nn.push_back(dist[i].second);
    return nn;
}

} // namespace

OversampleResult oversample_minority(const Matrix& x, const std::vector<int>& y,
                                     OversampleMethod method, std::size_t k, Rng& rng) {
    if (x.rows != y.size())
        throw DataError("oversample: " + std::to_string(x.rows) + " rows vs " +
                        std::to_string(y.size()) + " labels");
    OversampleResult res{x, y, {}};
    if (method == OversampleMethod::None) return res;
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < y.size(); ++i) (y[i] ? pos : neg).push_back(i);
    if (pos.empty() || neg.empty())
        throw DataError("oversample: both classes must be present (got " +
                        std::to_string(pos.size()) + " positive, " +
                        std::to_string(neg.size()) + " negative)");
    const bool pos_minority = pos.size() < neg.size();
    const std::vector<std::size_t>& minority = pos_minority ? pos : neg;
    const std::size_t deficit =
        (pos_minority ? neg.size() - pos.size() : pos.size() - neg.size());
    if (deficit == 0) return res;

    OversampleMethod effective = method;
    if (method == OversampleMethod::Smote && minority.size() <= k) {
        res.notes.push_back("smote needs more than " + std::to_string(k) +
                            " minority rows, got " + std::to_string(minority.size()) +
                            "; falling back to random oversampling");
        effective = OversampleMethod::Random;
    }

    Matrix aug(x.rows + deficit, x.cols);
    std::copy(x.data.begin(), x.data.end(), aug.data.begin());
    res.y.reserve(y.size() + deficit);
    const int minority_label = pos_minority ? 1 : 0;

    std::vector<std::vector<std::size_t>> nn;
    if (effective == OversampleMethod::Smote) {
        nn.resize(minority.size());
        for (std::size_t m = 0; m < minority.size(); ++m)
            nn[m] = nearest_neighbors(x, minority, minority[m], k);
    }
    for (std::size_t s = 0; s < deficit; ++s) {
        const std::size_t pick = static_cast<std::size_t>(rng.uniform_int(minority.size()));
        const std::size_t base = minority[pick];
        double* dst = aug.row_ptr(x.rows + s);
        if (effective == OversampleMethod::Random) {
            std::copy(x.row_ptr(base), x.row_ptr(base) + x.cols, dst);
        } else {
            const std::vector<std::size_t>& cand = nn[pick];
            const std::size_t nb = cand[static_cast<std::size_t>(rng.uniform_int(cand.size()))];
            const double u = rng.uniform();
            for (std::size_t c = 0; c < x.cols; ++c)
                dst[c] = x.at(base, c) + u * (x.at(nb, c) - x.at(base, c));
        }
        res.y.push_back(minority_label);
    }
    res.x = std::move(aug);
    return res;
}

} // namespace ufnet
