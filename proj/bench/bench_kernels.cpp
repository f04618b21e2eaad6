#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "ufnet/kernels.hpp"
#include "ufnet/rng.hpp"

using namespace ufnet;
using clock_type = std::chrono::steady_clock;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
    Matrix m(r, c);
    for (double& v : m.data) v = rng.normal();
    return m;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        worst = std::max(worst, std::fabs(a.data[i] - b.data[i]));
    return worst;
}

// best-of-k wall time in milliseconds
template <typename Fn>
double time_ms(Fn&& fn, int reps) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = clock_type::now();
        fn();
        const auto t1 = clock_type::now();
        best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    return best;
}

volatile double sink; // keeps the optimizer honest

} // namespace

int main(int argc, char** argv) {
    int reps = 5;
    double scale = 1.0;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--reps" && i + 1 < argc) reps = std::atoi(argv[++i]);
        if (a == "--scale" && i + 1 < argc) scale = std::atof(argv[++i]);
    }
    Rng rng(17);

    std::printf("%-28s %10s %10s %8s %12s\n", "kernel", "serial ms", "omp ms", "speedup",
                "max |diff|");

    const std::size_t gemm_sizes[][3] = {{128, 128, 128}, {256, 256, 256}, {512, 512, 512},
                                         {1024, 256, 512}};
    for (const auto& s : gemm_sizes) {
        const std::size_t m = static_cast<std::size_t>(s[0] * scale);
        const std::size_t k = static_cast<std::size_t>(s[1] * scale);
        const std::size_t n = static_cast<std::size_t>(s[2] * scale);
        const Matrix a = random_matrix(m, k, rng);
        const Matrix b = random_matrix(k, n, rng);
        const Matrix want = reference::gemm(a, b);
        const Matrix got = gemm(a, b);
        const double serial = time_ms([&] { sink = reference::gemm(a, b).at(0, 0); }, reps);
        const double par = time_ms([&] { sink = gemm(a, b).at(0, 0); }, reps);
        char label[64];
        std::snprintf(label, sizeof label, "gemm %zux%zu * %zux%zu", m, k, k, n);
        std::printf("%-28s %10.2f %10.2f %7.2fx %12.2e\n", label, serial, par, serial / par,
                    max_abs_diff(want, got));
    }

    // transposed operand paths, exercised heavily by backprop
    {
        const std::size_t n = static_cast<std::size_t>(384 * scale);
        const Matrix a = random_matrix(n, n, rng);
        const Matrix b = random_matrix(n, n, rng);
        const Matrix want = reference::gemm(a, b, true, true);
        const Matrix got = gemm(a, b, true, true);
        const double serial =
            time_ms([&] { sink = reference::gemm(a, b, true, true).at(0, 0); }, reps);
        const double par = time_ms([&] { sink = gemm(a, b, true, true).at(0, 0); }, reps);
        char label[64];
        std::snprintf(label, sizeof label, "gemm^T^T %zux%zu", n, n);
        std::printf("%-28s %10.2f %10.2f %7.2fx %12.2e\n", label, serial, par, serial / par,
                    max_abs_diff(want, got));
    }

    const std::size_t soft_sizes[][2] = {{4096, 64}, {1024, 1024}, {64, 16384}};
    for (const auto& s : soft_sizes) {
        const std::size_t r = static_cast<std::size_t>(s[0] * scale);
        const std::size_t c = static_cast<std::size_t>(s[1] * scale);
        const Matrix x = random_matrix(r, c, rng);
        const Matrix want = reference::softmax_rows(x);
        const Matrix got = softmax_rows(x);
        const double serial = time_ms([&] { sink = reference::softmax_rows(x).at(0, 0); }, reps);
        const double par = time_ms([&] { sink = softmax_rows(x).at(0, 0); }, reps);
        char label[64];
        std::snprintf(label, sizeof label, "softmax_rows %zux%zu", r, c);
        std::printf("%-28s %10.2f %10.2f %7.2fx %12.2e\n", label, serial, par, serial / par,
                    max_abs_diff(want, got));
    }
    return 0;
}
