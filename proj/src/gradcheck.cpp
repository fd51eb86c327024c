#include "bifusion/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace bifusion {

double grad_check(const ScalarFn& fn, const std::vector<TensorPtr>& inputs, double h) {
  for (const auto& in : inputs) {
    in->requires_grad = true;
    in->ensure_grad();
    in->zero_grad();
  }
  Tape tape;
  auto loss = fn(&tape, inputs);
  if (loss->numel() != 1) throw ContractError("grad_check: closure must produce a scalar");
  tape.backward(loss);

  double worst = 0.0;
  for (const auto& in : inputs) {
    for (std::int64_t i = 0; i < in->numel(); ++i) {
      const double saved = in->data[i];
      in->data[i] = saved + h;
      const double up = fn(nullptr, inputs)->data[0];
      in->data[i] = saved - h;
      const double down = fn(nullptr, inputs)->data[0];
      in->data[i] = saved;
      const double g_fd = (up - down) / (2.0 * h);
      const double g_ad = in->grad[i];
      const double err = std::abs(g_ad - g_fd) / std::max(1e-8, std::abs(g_ad) + std::abs(g_fd));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace bifusion
