#include "ufnet/stats.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "ufnet/error.hpp"

namespace ufnet {

double normal_cdf(double x) {
    return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

double normal_two_sided_p(double z) {
    return std::erfc(std::abs(z) / std::sqrt(2.0));
}

ZTestResult two_proportion_ztest(std::uint64_t x1, std::uint64_t n1, std::uint64_t x2,
                                 std::uint64_t n2) {
    if (n1 == 0 || n2 == 0) throw DataError("ztest: empty group");
    if (x1 > n1 || x2 > n2) throw DataError("ztest: successes exceed trials");
    const double p1 = static_cast<double>(x1) / static_cast<double>(n1);
    const double p2 = static_cast<double>(x2) / static_cast<double>(n2);
    const double pooled = static_cast<double>(x1 + x2) / static_cast<double>(n1 + n2);
    const double var = pooled * (1.0 - pooled) *
                       (1.0 / static_cast<double>(n1) + 1.0 / static_cast<double>(n2));
    if (var == 0.0) return {0.0, 1.0};
    const double z = (p1 - p2) / std::sqrt(var);
    return {z, normal_two_sided_p(z)};
}

namespace {

double log_choose(std::uint64_t n, std::uint64_t k) {
    return std::lgamma(static_cast<double>(n + 1)) - std::lgamma(static_cast<double>(k + 1)) -
           std::lgamma(static_cast<double>(n - k + 1));
}

} // namespace

FisherResult fisher_exact_2x2(std::uint64_t a, std::uint64_t b, std::uint64_t c,
                              std::uint64_t d) {
    const std::uint64_t r1 = a + b, r2 = c + d, c1 = a + c, c2 = b + d;
    if (r1 == 0 || r2 == 0 || c1 == 0 || c2 == 0)
        throw DataError("fisher: zero margin in table [[" + std::to_string(a) + "," +
                        std::to_string(b) + "],[" + std::to_string(c) + "," +
                        std::to_string(d) + "]]");
    const std::uint64_t kmin = c1 > r2 ? c1 - r2 : 0;
    const std::uint64_t kmax = std::min(r1, c1);
    const std::uint64_t n = r1 + r2;

    // central hypergeometric log-pmf over the support
    std::vector<double> logp(kmax - kmin + 1);
    const double log_denom = log_choose(n, c1);
    for (std::uint64_t k = kmin; k <= kmax; ++k)
        logp[k - kmin] = log_choose(r1, k) + log_choose(r2, c1 - k) - log_denom;

    const double obs = logp[a - kmin];
    double p = 0.0;
    for (double lp : logp)
        if (lp <= obs + 1e-7) p += std::exp(lp);
    p = std::min(p, 1.0);

    // conditional MLE of the odds ratio: psi with E_psi[A] = a
    double orat;
    if (a == kmin) {
        orat = 0.0;
    } else if (a == kmax) {
        orat = std::numeric_limits<double>::infinity();
    } else {
        std::vector<double> logw(logp.size()); // log C(r1,k) + log C(r2, c1-k)
        for (std::uint64_t k = kmin; k <= kmax; ++k)
            logw[k - kmin] = log_choose(r1, k) + log_choose(r2, c1 - k);
        const auto mean_at = [&](double t) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::uint64_t k = kmin; k <= kmax; ++k)
                mx = std::max(mx, logw[k - kmin] + static_cast<double>(k) * t);
            double num = 0.0, den = 0.0;
            for (std::uint64_t k = kmin; k <= kmax; ++k) {
                const double w = std::exp(logw[k - kmin] + static_cast<double>(k) * t - mx);
                num += static_cast<double>(k) * w;
                den += w;
            }
            return num / den;
        };
        double lo = -60.0, hi = 60.0;
        for (int it = 0; it < 200; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (mean_at(mid) < static_cast<double>(a))
                lo = mid;
            else
                hi = mid;
        }
        orat = std::exp(0.5 * (lo + hi));
    }
    return {orat, p};
}

namespace {

struct PairCounts {
    long long concordant = 0, discordant = 0;
    double n1 = 0.0, n2 = 0.0; // tie terms sum t(t-1)/2 for x and y
};

PairCounts count_pairs(const std::vector<double>& x, const std::vector<double>& y) {
    PairCounts pc;
    const std::size_t n = x.size();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double dx = x[i] - x[j], dy = y[i] - y[j];
            if (dx == 0.0 && dy == 0.0) {
                pc.n1 += 1.0;
                pc.n2 += 1.0;
            } else if (dx == 0.0) {
                pc.n1 += 1.0;
            } else if (dy == 0.0) {
                pc.n2 += 1.0;
            } else if ((dx > 0.0) == (dy > 0.0)) {
                ++pc.concordant;
            } else {
                ++pc.discordant;
            }
        }
    return pc;
}

double tau_b_from(const PairCounts& pc, std::size_t n) {
    const double n0 = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
    const double denom = std::sqrt((n0 - pc.n1) * (n0 - pc.n2));
    if (denom == 0.0)
        throw DataError("kendall: tau undefined, a variable is completely tied");
    return static_cast<double>(pc.concordant - pc.discordant) / denom;
}

// tie-corrected normal approximation for the null variance of C - D
double kendall_var(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    const auto tie_terms = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        double s1 = 0.0, s2 = 0.0, s3 = 0.0; // sum t(t-1)(2t+5), t(t-1), t(t-1)(t-2)
        std::size_t i = 0;
        while (i < v.size()) {
            std::size_t j = i;
            while (j + 1 < v.size() && v[j + 1] == v[i]) ++j;
            const double t = static_cast<double>(j - i + 1);
            s1 += t * (t - 1.0) * (2.0 * t + 5.0);
            s2 += t * (t - 1.0);
            s3 += t * (t - 1.0) * (t - 2.0);
            i = j + 1;
        }
        return std::array<double, 3>{s1, s2, s3};
    };
    const auto [xt1, xt2, xt3] = tie_terms(x);
    const auto [yt1, yt2, yt3] = tie_terms(y);
    double v = (n * (n - 1.0) * (2.0 * n + 5.0) - xt1 - yt1) / 18.0;
    v += xt2 * yt2 / (2.0 * n * (n - 1.0));
    if (n > 2.0) v += xt3 * yt3 / (9.0 * n * (n - 1.0) * (n - 2.0));
    return v;
}

} // namespace

KendallResult kendall_tau(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2)
        throw DataError("kendall: need matched sequences of length >= 2");
    const std::size_t n = x.size();
    const PairCounts obs = count_pairs(x, y);
    const double tau = tau_b_from(obs, n);

    double p;
    if (n <= 8) {
        // exact test: enumerate distinct rearrangements of y
        std::vector<double> perm = y;
        std::sort(perm.begin(), perm.end());
        std::size_t hits = 0, total = 0;
        const double target = std::abs(tau) - 1e-12;
        do {
            const double t = tau_b_from(count_pairs(x, perm), n);
            if (std::abs(t) >= target) ++hits;
            ++total;
        } while (std::next_permutation(perm.begin(), perm.end()));
        p = static_cast<double>(hits) / static_cast<double>(total);
    } else {
        const double v = kendall_var(x, y);
        const double z = static_cast<double>(obs.concordant - obs.discordant) / std::sqrt(v);
        p = normal_two_sided_p(z);
    }
    return {tau, p};
}

} // namespace ufnet
