#pragma once

#include <functional>
#include <vector>

#include "bifusion/tensor.hpp"

namespace bifusion {

// Maps the given inputs to a scalar loss. A null tape means forward-only;
// the closure must be deterministic in its inputs.
using ScalarFn = std::function<TensorPtr(Tape*, const std::vector<TensorPtr>&)>;

// Compares reverse-mode gradients against central finite differences
// (f(x+h) - f(x-h)) / 2h elementwise and returns the max over elements of
// |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|).
double grad_check(const ScalarFn& fn, const std::vector<TensorPtr>& inputs, double h = 1e-5);

}  // namespace bifusion
