#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace bifusion {

// Error taxonomy. Each maps to one failure category named in the library
// contracts; all derive from std::runtime_error so callers may catch broadly.
struct DimensionError : std::runtime_error { using std::runtime_error::runtime_error; };
struct ConfigError : std::runtime_error { using std::runtime_error::runtime_error; };
struct IndexError : std::runtime_error { using std::runtime_error::runtime_error; };
struct BatchSizeError : std::runtime_error { using std::runtime_error::runtime_error; };
struct ContractError : std::runtime_error { using std::runtime_error::runtime_error; };
struct TapeError : std::runtime_error { using std::runtime_error::runtime_error; };
struct SamplingError : std::runtime_error { using std::runtime_error::runtime_error; };
struct InputLengthError : std::runtime_error { using std::runtime_error::runtime_error; };
struct NormalizationError : std::runtime_error { using std::runtime_error::runtime_error; };
struct RenderError : std::runtime_error { using std::runtime_error::runtime_error; };
struct IoError : std::runtime_error { using std::runtime_error::runtime_error; };
struct LoadError : std::runtime_error { using std::runtime_error::runtime_error; };
struct ProtocolError : std::runtime_error { using std::runtime_error::runtime_error; };

using Shape = std::vector<std::int64_t>;

std::int64_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major 64-bit float tensor. `grad` is sized like `data` iff
// requires_grad; ops accumulate into it during Tape::backward.
struct Tensor {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  std::int64_t rank() const { return static_cast<std::int64_t>(shape.size()); }
  std::int64_t extent(std::int64_t axis) const { return shape[static_cast<std::size_t>(axis)]; }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

using TensorPtr = std::shared_ptr<Tensor>;

TensorPtr make_tensor(Shape shape, bool requires_grad = false);
TensorPtr make_tensor(Shape shape, std::vector<double> values, bool requires_grad = false);
// keeps braced value lists like {1, 0} away from the bool overload
TensorPtr make_tensor(Shape shape, std::initializer_list<double> values,
                      bool requires_grad = false);
TensorPtr make_scalar(double value, bool requires_grad = false);

bool all_finite(const Tensor& t);
bool same_shape(const Tensor& a, const Tensor& b);

// Ordered record of gradient rules for one forward computation. Replaying the
// rules in reverse order accumulates gradients into every requires_grad input
// reachable from the loss. A tape may be backwarded once; clear() resets it.
class Tape {
 public:
  void record(std::function<void()> rule) { records_.push_back(std::move(rule)); }

  void backward(const TensorPtr& loss);

  // Replays the rules in reverse with gradients the caller has already seeded
  // into the output tensors; used by staged pipelines that backpropagate a
  // subgraph from upstream gradients.
  void backward_seeded();

  void clear() {
    records_.clear();
    consumed_ = false;
  }

  bool consumed() const { return consumed_; }
  std::size_t size() const { return records_.size(); }

 private:
  std::vector<std::function<void()>> records_;
  bool consumed_ = false;
};

}  // namespace bifusion
