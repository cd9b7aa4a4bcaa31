#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "anchor/errors.hpp"

namespace anchor {

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

namespace detail {

struct TensorData {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;
  // Empty until backward first reaches this tensor; per-element gradient
  // buffer afterwards. Accumulates across backward calls until reset.
  std::vector<double> grad;

  void accumulate_grad(const double* g, std::size_t n);
  std::vector<double>& grad_buffer();  // allocates zeros on first use
};

}  // namespace detail

// Shape-carrying 64-bit float array with an optional gradient. Handle
// semantics: copies share the underlying storage, which is what the tape
// needs to route gradients back to the tensors the caller holds.
class Tensor {
 public:
  Tensor() : Tensor(Shape{0}) {}
  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double v) { return Tensor(Shape{1}, {v}); }

  const Shape& shape() const { return data_->shape; }
  int rank() const { return static_cast<int>(data_->shape.size()); }
  std::int64_t dim(int i) const { return data_->shape[static_cast<std::size_t>(i)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_->values.size()); }

  const std::vector<double>& values() const { return data_->values; }
  std::vector<double>& mutable_values() { return data_->values; }
  double operator[](std::int64_t i) const { return data_->values[static_cast<std::size_t>(i)]; }
  double& at(std::int64_t i) { return data_->values[static_cast<std::size_t>(i)]; }

  bool requires_grad() const { return data_->requires_grad; }
  void set_requires_grad(bool b) { data_->requires_grad = b; }

  bool has_grad() const { return !data_->grad.empty(); }
  const std::vector<double>& grad() const;
  void reset_grad() { data_->grad.clear(); }

  bool same_storage(const Tensor& other) const { return data_ == other.data_; }

  std::shared_ptr<detail::TensorData> data() const { return data_; }

 private:
  std::shared_ptr<detail::TensorData> data_;
};

// Record of one forward pass. Nodes are appended in execution order; backward
// replays them once, in reverse, propagating only where an output gradient
// exists so that branches unreachable from the loss stay untouched.
class Tape {
 public:
  void record(std::shared_ptr<detail::TensorData> output,
              std::function<void()> backward_fn) {
    nodes_.push_back({std::move(output), std::move(backward_fn)});
  }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    std::shared_ptr<detail::TensorData> output;
    std::function<void()> backward;
  };
  std::vector<Node> nodes_;

  friend void backward(const Tensor& loss, Tape& tape);
};

// Elementwise operations. Binary kinds require equal shapes; the only
// broadcasting anywhere is tensor-scalar (scale / add_scalar).
Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor sub(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor relu(const Tensor& a, Tape* tape = nullptr);
Tensor scale(const Tensor& a, double s, Tape* tape = nullptr);
Tensor add_scalar(const Tensor& a, double s, Tape* tape = nullptr);
Tensor sum(const Tensor& a, Tape* tape = nullptr);  // -> scalar

// matmul(a[m,k], b[k,n]) -> [m,n]; dA = dC.B^T, dB = A^T.dC.
Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);

// linear(x[n,in], w[in,out], bias[out]) -> [n,out]; matmul with a fused
// per-column bias so no general broadcasting is needed.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias,
              Tape* tape = nullptr);

// conv2d(input[N,Cin,H,W], kernel[F,Cin,kh,kw], bias[F]) with zero padding.
// H' = floor((H + 2*padding - kh)/stride) + 1, same for W'.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, int padding, Tape* tape = nullptr);

// avg_pool2d(input[N,C,H,W], window) -> [N,C,H/window,W/window]; H and W must
// divide by window.
Tensor avg_pool2d(const Tensor& input, int window, Tape* tape = nullptr);

// Row-wise stable log(sum(exp(logits))) over [N,C] -> [N].
Tensor logsumexp(const Tensor& logits, Tape* tape = nullptr);

// Mean over rows of -sum_c target[n,c] * log softmax(logits)[n,c]. Each
// target row must be a probability distribution (sum 1 within 1e-6).
// Gradient wrt logits is (softmax - target) / N.
Tensor cross_entropy_soft(const Tensor& logits, const Tensor& target,
                          Tape* tape = nullptr);

// Forward-only stable softmax over rows of [N,C].
Tensor softmax(const Tensor& logits);

// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. Loss must be a
// scalar produced on this tape. Grads accumulate until reset_grad().
void backward(const Tensor& loss, Tape& tape);

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedTensor>;

// SGD with momentum and decoupled-from-schedule weight decay:
//   v <- momentum*v + (grad + weight_decay*param); param <- param - lr*v.
struct SgdState {
  double learning_rate = 0.05;
  double momentum = 0.9;      // in [0,1)
  double weight_decay = 0.0;  // >= 0
  std::unordered_map<std::string, std::vector<double>> velocity;
};

void sgd_step(ParamList& params, SgdState& state);

}  // namespace anchor
