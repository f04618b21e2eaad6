#pragma once

#include <cstdint>
#include <vector>

namespace ufnet {

double normal_cdf(double x);
double normal_two_sided_p(double z);

struct ZTestResult {
    double z, p;
};

// Pooled two-proportion z-test, two-sided. Zero pooled variance -> z=0, p=1.
ZTestResult two_proportion_ztest(std::uint64_t x1, std::uint64_t n1, std::uint64_t x2,
                                 std::uint64_t n2);

struct FisherResult {
    double odds_ratio; // conditional MLE; may be 0 or +inf at the support edge
    double p;          // two-sided, sum of hypergeometric probs <= observed
};

// 2x2 table rows (a, b) / (c, d). Throws on a zero row or column margin.
FisherResult fisher_exact_2x2(std::uint64_t a, std::uint64_t b, std::uint64_t c,
                              std::uint64_t d);

struct KendallResult {
    double tau; // tau-b (tie corrected)
    double p;   // exact permutation p for n <= 8, else normal approximation
};

KendallResult kendall_tau(const std::vector<double>& x, const std::vector<double>& y);

} // namespace ufnet
