#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "dmgnn/rng.hpp"

namespace dmgnn {

// Error taxonomy shared across the library. Exit codes in the CLI map
// ConfigError->2, DataError->3, NumericError->4.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class ContractError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::int64_t>;

std::int64_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorData;
}

// Dense 64-bit float tensor participating in a reverse-mode autodiff
// graph. Handles have shared-buffer semantics: copying a Tensor copies
// the handle, not the storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor identity(std::int64_t n, bool requires_grad = false);
  // Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  static Tensor uniform_init(Shape shape, std::int64_t fan_in, Rng& rng, bool requires_grad = true);

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const;
  int rank() const;
  std::int64_t dim(int axis) const;
  std::int64_t numel() const;

  std::vector<double>& values();
  const std::vector<double>& values() const;
  double* data();
  const double* data() const;
  double item() const;  // scalar tensors only

  bool requires_grad() const;
  void set_requires_grad(bool rg);

  // Gradient buffer, itself a Tensor sharing shape. Undefined until the
  // first accumulation (or ensure_grad).
  bool has_grad() const;
  Tensor grad() const;
  Tensor ensure_grad();
  void zero_grad();
  void drop_grad();
  void accumulate_grad(const double* g, std::int64_t n);

  // Stable identity of the underlying storage (for param bookkeeping).
  const void* id() const { return d_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorData> d) : d_(std::move(d)) {}
  std::shared_ptr<detail::TensorData> d_;
  friend struct detail::TensorData;
};

// Ordered record of executed operations. Ops push a backward closure when
// grad recording is active and any input requires grad; backward() replays
// the record in exact reverse execution order, then clears it (releasing
// all saved intermediates).
class Tape {
 public:
  static Tape& current();

  bool recording() const { return pause_depth_ == 0; }
  void record(const char* op_name, std::function<void()> backward_fn);
  void clear();
  std::size_t size() const { return entries_.size(); }

 private:
  friend void backward(const Tensor&);
  friend struct NoGradGuard;
  struct Entry {
    const char* op_name;
    std::function<void()> backward_fn;
  };
  std::vector<Entry> entries_;
  int pause_depth_ = 0;
};

// RAII pause of gradient recording (evaluation paths).
struct NoGradGuard {
  NoGradGuard() { ++Tape::current().pause_depth_; }
  ~NoGradGuard() { --Tape::current().pause_depth_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Accumulates gradients for every requires-grad tensor reachable from
// root (a scalar), consuming the tape.
void backward(const Tensor& root);

// ---- Operation kernels -------------------------------------------------
// Elementwise ops require identical shapes; matmul broadcasts leading
// (batch) dimensions numpy-style; shape violations throw ShapeError naming
// the operation and the offending axes.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
// a*x + b elementwise with scalar coefficients.
Tensor affine(const Tensor& x, double a, double b);
// bias shape {C} broadcast over all leading axes of x (last axis = C).
Tensor add_bias(const Tensor& x, const Tensor& bias);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh_op(const Tensor& x);
Tensor abs_op(const Tensor& x);

// Softmax over the last axis (row-softmax for rank-2 input).
Tensor softmax_lastdim(const Tensor& x);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice_axis(const Tensor& x, int axis, std::int64_t start, std::int64_t len);
Tensor transpose(const Tensor& x, int axis_a, int axis_b);
Tensor reshape(const Tensor& x, Shape new_shape);

Tensor sum_axis(const Tensor& x, int axis);
Tensor mean_axis(const Tensor& x, int axis);
Tensor sum_all(const Tensor& x);

// Per-node temporal convolution: x [B, T, M, Cin], w [k, Cin, Cout],
// bias {Cout} (pass undefined Tensor for none). Zero padding `pad` on both
// ends of the time axis; output length floor((T + 2*pad - k)/stride) + 1.
Tensor conv1d_time(const Tensor& x, const Tensor& w, const Tensor& bias, std::int64_t stride,
                   std::int64_t pad);

// cross_add(u [.., M1, h], v [.., M2, h]) -> [.., M1*M2, h] with
// out[.., i*M2 + j, :] = u[.., i, :] + v[.., j, :].
Tensor cross_add(const Tensor& u, const Tensor& v);

// Inverted dropout; draws one uniform per element from rng when training,
// identity (and no rng consumption) otherwise.
Tensor dropout(const Tensor& x, double p, Rng& rng, bool training);

// Per-channel batch normalization over all axes except the last.
struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormState(std::int64_t channels = 0)
      : running_mean(static_cast<std::size_t>(channels), 0.0),
        running_var(static_cast<std::size_t>(channels), 1.0) {}
};

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                  bool training);

// x [.., in] * w [in, out] + bias -> [.., out]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

// ---- Optimizer ----------------------------------------------------------

struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

// Scales all gradient tensors in place by max_norm/g when the global l2
// norm g exceeds max_norm; returns the applied factor (1.0 otherwise).
double clip_global_norm(const std::vector<Tensor>& grads, double max_norm);

// Standard Adam with bias correction; zeroes parameter grads afterwards.
// Moment buffers are created lazily on first use and keyed by position,
// so the parameter list must be stable across steps.
void adam_step(std::vector<Tensor>& params, AdamState& state);

}  // namespace dmgnn
