#include "bifusion/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace bifusion {

std::int64_t numel_of(const Shape& shape) {
  std::int64_t n = 1;
  for (std::int64_t e : shape) {
    if (e < 0) throw DimensionError("negative extent in shape " + shape_str(shape));
    n *= e;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

TensorPtr make_tensor(Shape shape, bool requires_grad) {
  auto t = std::make_shared<Tensor>();
  std::int64_t n = numel_of(shape);
  t->shape = std::move(shape);
  t->data.assign(static_cast<std::size_t>(n), 0.0);
  t->requires_grad = requires_grad;
  if (requires_grad) t->ensure_grad();
  return t;
}

TensorPtr make_tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  std::int64_t n = numel_of(shape);
  if (n != static_cast<std::int64_t>(values.size()))
    throw DimensionError("value count " + std::to_string(values.size()) +
                         " does not fill shape " + shape_str(shape));
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  t->data = std::move(values);
  t->requires_grad = requires_grad;
  if (requires_grad) t->ensure_grad();
  return t;
}

TensorPtr make_tensor(Shape shape, std::initializer_list<double> values, bool requires_grad) {
  return make_tensor(std::move(shape), std::vector<double>(values), requires_grad);
}

TensorPtr make_scalar(double value, bool requires_grad) {
  return make_tensor({1}, std::vector<double>{value}, requires_grad);
}

bool all_finite(const Tensor& t) {
  for (double v : t.data)
    if (!std::isfinite(v)) return false;
  return true;
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

void Tape::backward(const TensorPtr& loss) {
  if (consumed_) throw TapeError("tape already consumed by a previous backward");
  if (!loss || loss->numel() != 1)
    throw ContractError("backward requires a scalar loss");
  consumed_ = true;
  if (loss->requires_grad) {
    loss->ensure_grad();
    loss->grad[0] = 1.0;
  }
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
}

void Tape::backward_seeded() {
  if (consumed_) throw TapeError("tape already consumed by a previous backward");
  consumed_ = true;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
}

}  // namespace bifusion
