#include "bifusion/optimizer.hpp"

namespace bifusion {

void sgd_step(Tensor& param, const std::vector<double>& grad, std::vector<double>& velocity,
              double lr, double momentum, double weight_decay, bool decay_exempt) {
  if (grad.size() != param.data.size())
    throw DimensionError("sgd_step: gradient size does not match the parameter");
  if (velocity.size() != param.data.size()) velocity.assign(param.data.size(), 0.0);
  const double wd = decay_exempt ? 0.0 : weight_decay;
  for (std::size_t i = 0; i < param.data.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grad[i] + wd * param.data[i];
    param.data[i] -= lr * velocity[i];
  }
}

void Sgd::step(const std::vector<ParamRef>& params, const std::vector<double>& lrs) {
  if (params.size() != lrs.size())
    throw DimensionError("sgd: one learning rate per parameter required");
  if (velocity_.size() != params.size()) velocity_.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i].tensor;
    p.ensure_grad();
    sgd_step(p, p.grad, velocity_[i], lrs[i], momentum_, weight_decay_, params[i].decay_exempt);
  }
}

}  // namespace bifusion
