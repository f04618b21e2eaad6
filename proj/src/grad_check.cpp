#include "ufnet/grad_check.hpp"

#include <cmath>

#include "ufnet/error.hpp"

namespace ufnet {

double grad_check(const std::function<double(const std::vector<Matrix>&)>& f,
                  const std::vector<Matrix>& x, const std::vector<Matrix>& analytic,
                  double h) {
    if (x.size() != analytic.size())
        throw ConfigError("grad_check: param/grad count mismatch");
    std::vector<Matrix> probe = x;
    double worst = 0.0;
    for (std::size_t p = 0; p < probe.size(); ++p) {
        require_same_shape(x[p], analytic[p], "grad_check");
        for (std::size_t i = 0; i < probe[p].size(); ++i) {
            const double orig = probe[p].data[i];
            probe[p].data[i] = orig + h;
            const double fp = f(probe);
            probe[p].data[i] = orig - h;
            const double fm = f(probe);
            probe[p].data[i] = orig;
            const double fd = (fp - fm) / (2.0 * h);
            const double a = analytic[p].data[i];
            const double rel = std::abs(a - fd) / std::max(1.0, std::abs(a));
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

} // namespace ufnet
