#pragma once

#include <functional>
#include <vector>

#include "ufnet/matrix.hpp"

namespace ufnet {

// Central-difference check for a scalar function of several matrices.
// Returns max over all coordinates of |analytic - fd| / max(1, |analytic|).
// f must be deterministic: it is re-evaluated twice per coordinate.
double grad_check(const std::function<double(const std::vector<Matrix>&)>& f,
                  const std::vector<Matrix>& x, const std::vector<Matrix>& analytic,
                  double h = 1e-5);

} // namespace ufnet
