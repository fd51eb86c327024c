#pragma once

#include <cstdint>
#include <vector>

#include "bifusion/checkpoint.hpp"

namespace bifusion {

// lr(iter) = base * 0.1^(milestones passed), decayed every `every` iterations
// at most `count` times
struct LrSchedule {
  double base = 0.1;
  std::int64_t every = 1000;
  std::int64_t count = 3;

  double at(std::int64_t iteration) const {
    std::int64_t passed = every > 0 ? iteration / every : 0;
    if (passed > count) passed = count;
    double lr = base;
    for (std::int64_t i = 0; i < passed; ++i) lr *= 0.1;
    return lr;
  }
};

// SGD with momentum and decoupled-by-exemption weight decay:
//   v <- momentum * v + grad + weight_decay * param
//   param <- param - lr * v
// Batch-norm gamma/beta and edge-importance matrices carry decay_exempt.
class Sgd {
 public:
  Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

  // lrs[i] is the learning rate for params[i]
  void step(const std::vector<ParamRef>& params, const std::vector<double>& lrs);

  void reset() { velocity_.clear(); }

 private:
  double momentum_;
  double weight_decay_;
  std::vector<std::vector<double>> velocity_;
};

// single-parameter convenience used by unit tests and simple loops
void sgd_step(Tensor& param, const std::vector<double>& grad, std::vector<double>& velocity,
              double lr, double momentum, double weight_decay, bool decay_exempt);

}  // namespace bifusion
