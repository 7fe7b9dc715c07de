#include "dmgnn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>
#include <utility>

namespace dmgnn {

namespace detail {
struct TensorData {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;
  std::shared_ptr<TensorData> grad;

  static Tensor wrap(std::shared_ptr<TensorData> d) { return Tensor(std::move(d)); }
};
}  // namespace detail

using detail::TensorData;

std::int64_t numel_of(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

namespace {

void check_defined(const char* op, const Tensor& t) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor argument");
}

void check_positive_shape(const char* op, const Shape& shape) {
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] <= 0) {
      throw ShapeError(std::string(op) + ": axis " + std::to_string(i) +
                       " has non-positive size in " + shape_str(shape));
    }
  }
}

std::vector<std::int64_t> row_strides(const Shape& shape) {
  std::vector<std::int64_t> s(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) s[i] = s[i + 1] * shape[i + 1];
  return s;
}

// C(n x m) += A(n x k) * B(k x m), all row-major.
void gemm_nn_acc(const double* a, const double* b, double* c, std::int64_t n, std::int64_t k,
                 std::int64_t m) {
  for (std::int64_t i = 0; i < n; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * m;
    for (std::int64_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      const double* brow = b + kk * m;
      for (std::int64_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

// C(n x k) += G(n x m) * B(k x m)^T
void gemm_nt_acc(const double* g, const double* b, double* c, std::int64_t n, std::int64_t k,
                 std::int64_t m) {
  for (std::int64_t i = 0; i < n; ++i) {
    const double* grow = g + i * m;
    double* crow = c + i * k;
    for (std::int64_t kk = 0; kk < k; ++kk) {
      const double* brow = b + kk * m;
      double s = 0.0;
      for (std::int64_t j = 0; j < m; ++j) s += grow[j] * brow[j];
      crow[kk] += s;
    }
  }
}

// C(k x m) += A(n x k)^T * G(n x m)
void gemm_tn_acc(const double* a, const double* g, double* c, std::int64_t n, std::int64_t k,
                 std::int64_t m) {
  for (std::int64_t i = 0; i < n; ++i) {
    const double* arow = a + i * k;
    const double* grow = g + i * m;
    for (std::int64_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      double* crow = c + kk * m;
      for (std::int64_t j = 0; j < m; ++j) crow[j] += av * grow[j];
    }
  }
}

bool want_grad(const Tensor& t) { return t.defined() && t.requires_grad(); }

bool recording_for(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::current().recording()) return false;
  for (const Tensor* t : inputs) {
    if (want_grad(*t)) return true;
  }
  return false;
}

void accum(Tensor t, const std::vector<double>& g) {
  t.accumulate_grad(g.data(), static_cast<std::int64_t>(g.size()));
}

}  // namespace

// ---- Tensor -------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  check_positive_shape("zeros", shape);
  auto d = std::make_shared<TensorData>();
  d->values.assign(static_cast<std::size_t>(numel_of(shape)), 0.0);
  d->shape = std::move(shape);
  d->requires_grad = requires_grad;
  return TensorData::wrap(std::move(d));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.values().begin(), t.values().end(), value);
  return t;
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
  check_positive_shape("from_values", shape);
  if (numel_of(shape) != static_cast<std::int64_t>(values.size())) {
    throw ShapeError("from_values: " + std::to_string(values.size()) +
                     " values do not fill shape " + shape_str(shape));
  }
  auto d = std::make_shared<TensorData>();
  d->shape = std::move(shape);
  d->values = std::move(values);
  d->requires_grad = requires_grad;
  return TensorData::wrap(std::move(d));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_values({1}, {value}, requires_grad);
}

Tensor Tensor::identity(std::int64_t n, bool requires_grad) {
  Tensor t = zeros({n, n}, requires_grad);
  for (std::int64_t i = 0; i < n; ++i) t.values()[static_cast<std::size_t>(i * n + i)] = 1.0;
  return t;
}

Tensor Tensor::uniform_init(Shape shape, std::int64_t fan_in, Rng& rng, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : t.values()) v = rng.uniform(-bound, bound);
  return t;
}

const Shape& Tensor::shape() const { return d_->shape; }
int Tensor::rank() const { return static_cast<int>(d_->shape.size()); }
std::int64_t Tensor::dim(int axis) const {
  if (axis < 0) axis += rank();
  return d_->shape[static_cast<std::size_t>(axis)];
}
std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(d_->values.size()); }

std::vector<double>& Tensor::values() { return d_->values; }
const std::vector<double>& Tensor::values() const { return d_->values; }
double* Tensor::data() { return d_->values.data(); }
const double* Tensor::data() const { return d_->values.data(); }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item: tensor has " + std::to_string(numel()) + " elements");
  return d_->values[0];
}

bool Tensor::requires_grad() const { return d_ && d_->requires_grad; }
void Tensor::set_requires_grad(bool rg) { d_->requires_grad = rg; }

bool Tensor::has_grad() const { return d_ && d_->grad != nullptr; }

Tensor Tensor::grad() const {
  if (!has_grad()) return Tensor();
  return TensorData::wrap(d_->grad);
}

Tensor Tensor::ensure_grad() {
  if (!d_->grad) {
    auto g = std::make_shared<TensorData>();
    g->shape = d_->shape;
    g->values.assign(d_->values.size(), 0.0);
    d_->grad = std::move(g);
  }
  return TensorData::wrap(d_->grad);
}

void Tensor::zero_grad() {
  if (d_ && d_->grad) std::fill(d_->grad->values.begin(), d_->grad->values.end(), 0.0);
}

void Tensor::drop_grad() {
  if (d_) d_->grad.reset();
}

void Tensor::accumulate_grad(const double* g, std::int64_t n) {
  if (n != numel()) {
    throw ShapeError("accumulate_grad: got " + std::to_string(n) + " values for shape " +
                     shape_str(shape()));
  }
  ensure_grad();
  double* dst = d_->grad->values.data();
  for (std::int64_t i = 0; i < n; ++i) dst[i] += g[i];
}

// ---- Tape ---------------------------------------------------------------

Tape& Tape::current() {
  static thread_local Tape tape;
  return tape;
}

void Tape::record(const char* op_name, std::function<void()> backward_fn) {
  entries_.push_back({op_name, std::move(backward_fn)});
}

void Tape::clear() { entries_.clear(); }

void backward(const Tensor& root) {
  check_defined("backward", root);
  for (auto d : root.shape()) {
    if (d != 1) {
      throw ContractError("backward: root must be scalar, got shape " + shape_str(root.shape()));
    }
  }
  Tensor r = root;
  r.ensure_grad();
  r.grad().values()[0] += 1.0;
  auto& tape = Tape::current();
  for (auto it = tape.entries_.rbegin(); it != tape.entries_.rend(); ++it) {
    it->backward_fn();
  }
  tape.clear();
}

// ---- Elementwise --------------------------------------------------------

namespace {

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

template <typename Fwd>
Tensor unary_op(const char* name, const Tensor& x, Fwd fwd,
                std::function<double(double /*x*/, double /*y*/)> dydx) {
  check_defined(name, x);
  Tensor out = Tensor::zeros(x.shape());
  const double* xv = x.data();
  double* ov = out.data();
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) ov[i] = fwd(xv[i]);
  if (recording_for({&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    Tape::current().record(name, [xc, oc, dydx]() {
      if (!oc.has_grad()) return;
      const auto& g = oc.grad().values();
      std::vector<double> gx(g.size());
      const double* xv = xc.data();
      const double* ov = oc.data();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * dydx(xv[i], ov[i]);
      accum(xc, gx);
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_defined("add", a);
  check_defined("add", b);
  check_same_shape("add", a, b);
  Tensor out = Tensor::zeros(a.shape());
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (recording_for({&a, &b})) {
    out.set_requires_grad(true);
    Tensor ac = a, bc = b, oc = out;
    Tape::current().record("add", [ac, bc, oc]() {
      if (!oc.has_grad()) return;
      const auto& g = oc.grad().values();
      if (ac.requires_grad()) accum(ac, g);
      if (bc.requires_grad()) accum(bc, g);
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_defined("sub", a);
  check_defined("sub", b);
  check_same_shape("sub", a, b);
  Tensor out = Tensor::zeros(a.shape());
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
  if (recording_for({&a, &b})) {
    out.set_requires_grad(true);
    Tensor ac = a, bc = b, oc = out;
    Tape::current().record("sub", [ac, bc, oc]() {
      if (!oc.has_grad()) return;
      const auto& g = oc.grad().values();
      if (ac.requires_grad()) accum(ac, g);
      if (bc.requires_grad()) {
        std::vector<double> neg(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) neg[i] = -g[i];
        accum(bc, neg);
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_defined("mul", a);
  check_defined("mul", b);
  check_same_shape("mul", a, b);
  Tensor out = Tensor::zeros(a.shape());
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (recording_for({&a, &b})) {
    out.set_requires_grad(true);
    Tensor ac = a, bc = b, oc = out;
    Tape::current().record("mul", [ac, bc, oc]() {
      if (!oc.has_grad()) return;
      const auto& g = oc.grad().values();
      std::vector<double> buf(g.size());
      if (ac.requires_grad()) {
        for (std::size_t i = 0; i < g.size(); ++i) buf[i] = g[i] * bc.data()[i];
        accum(ac, buf);
      }
      if (bc.requires_grad()) {
        for (std::size_t i = 0; i < g.size(); ++i) buf[i] = g[i] * ac.data()[i];
        accum(bc, buf);
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& x, double c) { return affine(x, c, 0.0); }

Tensor affine(const Tensor& x, double a, double b) {
  check_defined("affine", x);
  Tensor out = Tensor::zeros(x.shape());
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) out.data()[i] = a * x.data()[i] + b;
  if (recording_for({&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    Tape::current().record("affine", [xc, oc, a]() {
      if (!oc.has_grad()) return;
      const auto& g = oc.grad().values();
      std::vector<double> gx(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] = a * g[i];
      accum(xc, gx);
    });
  }
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  check_defined("add_bias", x);
  check_defined("add_bias", bias);
  if (bias.rank() != 1 || bias.dim(0) != x.dim(-1)) {
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not match last axis of " +
                     shape_str(x.shape()));
  }
  const std::int64_t c = bias.dim(0);
  const std::int64_t rows = x.numel() / c;
  Tensor out = Tensor::zeros(x.shape());
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * c;
    double* orow = out.data() + r * c;
    for (std::int64_t j = 0; j < c; ++j) orow[j] = xr[j] + bias.data()[j];
  }
  if (recording_for({&x, &bias})) {
    out.set_requires_grad(true);
    Tensor xc = x, bc = bias, oc = out;
    Tape::current().record("add_bias", [xc, bc, oc, rows, c]() {
      if (!oc.has_grad()) return;
      const auto& g = oc.grad().values();
      if (xc.requires_grad()) accum(xc, g);
      if (bc.requires_grad()) {
        std::vector<double> gb(static_cast<std::size_t>(c), 0.0);
        for (std::int64_t r = 0; r < rows; ++r) {
          const double* gr = g.data() + r * c;
          for (std::int64_t j = 0; j < c; ++j) gb[static_cast<std::size_t>(j)] += gr[j];
        }
        accum(bc, gb);
      }
    });
  }
  return out;
}

Tensor relu(const Tensor& x) {
  return unary_op(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double xv, double) { return xv > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      "sigmoid", x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh_op(const Tensor& x) {
  return unary_op(
      "tanh", x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor abs_op(const Tensor& x) {
  return unary_op(
      "abs", x, [](double v) { return std::abs(v); },
      [](double xv, double) { return xv > 0.0 ? 1.0 : (xv < 0.0 ? -1.0 : 0.0); });
}

// ---- Softmax ------------------------------------------------------------

Tensor softmax_lastdim(const Tensor& x) {
  check_defined("softmax", x);
  const std::int64_t c = x.dim(-1);
  const std::int64_t rows = x.numel() / c;
  Tensor out = Tensor::zeros(x.shape());
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * c;
    double* orow = out.data() + r * c;
    double mx = xr[0];
    for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, xr[j]);
    double sum = 0.0;
    for (std::int64_t j = 0; j < c; ++j) {
      orow[j] = std::exp(xr[j] - mx);
      sum += orow[j];
    }
    for (std::int64_t j = 0; j < c; ++j) orow[j] /= sum;
  }
  if (recording_for({&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    Tape::current().record("softmax", [xc, oc, rows, c]() {
      if (!oc.has_grad()) return;
      const auto& g = oc.grad().values();
      std::vector<double> gx(g.size());
      for (std::int64_t r = 0; r < rows; ++r) {
        const double* s = oc.data() + r * c;
        const double* gr = g.data() + r * c;
        double dot = 0.0;
        for (std::int64_t j = 0; j < c; ++j) dot += gr[j] * s[j];
        for (std::int64_t j = 0; j < c; ++j) gx[static_cast<std::size_t>(r * c + j)] = s[j] * (gr[j] - dot);
      }
      accum(xc, gx);
    });
  }
  return out;
}

// ---- Matmul -------------------------------------------------------------

namespace {

struct MatmulPlan {
  std::int64_t n, k, m;
  std::vector<std::int64_t> a_off, b_off, o_off;  // per output batch
};

MatmulPlan plan_matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw ShapeError("matmul: operands must have rank >= 2, got " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  }
  MatmulPlan plan;
  plan.n = a.dim(-2);
  plan.k = a.dim(-1);
  plan.m = b.dim(-1);
  if (b.dim(-2) != plan.k) {
    throw ShapeError("matmul: inner axes differ, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const int la = a.rank() - 2, lb = b.rank() - 2;
  const int lead = std::max(la, lb);
  Shape lead_a(static_cast<std::size_t>(lead), 1), lead_b(static_cast<std::size_t>(lead), 1);
  for (int i = 0; i < la; ++i) lead_a[static_cast<std::size_t>(lead - la + i)] = a.dim(i);
  for (int i = 0; i < lb; ++i) lead_b[static_cast<std::size_t>(lead - lb + i)] = b.dim(i);
  Shape lead_o(static_cast<std::size_t>(lead));
  for (int i = 0; i < lead; ++i) {
    const auto da = lead_a[static_cast<std::size_t>(i)], db = lead_b[static_cast<std::size_t>(i)];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("matmul: batch axis " + std::to_string(i) + " mismatch, " +
                       shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    lead_o[static_cast<std::size_t>(i)] = std::max(da, db);
  }
  const std::int64_t batches = numel_of(lead_o);
  plan.a_off.resize(static_cast<std::size_t>(batches));
  plan.b_off.resize(static_cast<std::size_t>(batches));
  plan.o_off.resize(static_cast<std::size_t>(batches));
  auto sa = row_strides(lead_a), sb = row_strides(lead_b), so = row_strides(lead_o);
  const std::int64_t a_block = plan.n * plan.k, b_block = plan.k * plan.m, o_block = plan.n * plan.m;
  for (std::int64_t idx = 0; idx < batches; ++idx) {
    std::int64_t rem = idx, ao = 0, bo = 0;
    for (int i = 0; i < lead; ++i) {
      const std::int64_t coord = rem / so[static_cast<std::size_t>(i)];
      rem %= so[static_cast<std::size_t>(i)];
      if (lead_a[static_cast<std::size_t>(i)] != 1) ao += coord * sa[static_cast<std::size_t>(i)];
      if (lead_b[static_cast<std::size_t>(i)] != 1) bo += coord * sb[static_cast<std::size_t>(i)];
    }
    plan.a_off[static_cast<std::size_t>(idx)] = ao * a_block;
    plan.b_off[static_cast<std::size_t>(idx)] = bo * b_block;
    plan.o_off[static_cast<std::size_t>(idx)] = idx * o_block;
  }
  return plan;
}

Shape matmul_out_shape(const Tensor& a, const Tensor& b) {
  const int la = a.rank() - 2, lb = b.rank() - 2;
  const int lead = std::max(la, lb);
  Shape out;
  for (int i = 0; i < lead; ++i) {
    const std::int64_t da = i - (lead - la) >= 0 ? a.dim(i - (lead - la)) : 1;
    const std::int64_t db = i - (lead - lb) >= 0 ? b.dim(i - (lead - lb)) : 1;
    out.push_back(std::max(da, db));
  }
  out.push_back(a.dim(-2));
  out.push_back(b.dim(-1));
  return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_defined("matmul", a);
  check_defined("matmul", b);
  const MatmulPlan plan = plan_matmul(a, b);
  Tensor out = Tensor::zeros(matmul_out_shape(a, b));
  const std::size_t batches = plan.a_off.size();
  for (std::size_t i = 0; i < batches; ++i) {
    gemm_nn_acc(a.data() + plan.a_off[i], b.data() + plan.b_off[i], out.data() + plan.o_off[i],
                plan.n, plan.k, plan.m);
  }
  if (recording_for({&a, &b})) {
    out.set_requires_grad(true);
    Tensor ac = a, bc = b, oc = out;
    Tape::current().record("matmul", [ac, bc, oc, plan]() {
      if (!oc.has_grad()) return;
      const double* g = oc.grad().data();
      const std::size_t batches = plan.a_off.size();
      if (ac.requires_grad()) {
        std::vector<double> ga(static_cast<std::size_t>(ac.numel()), 0.0);
        for (std::size_t i = 0; i < batches; ++i) {
          gemm_nt_acc(g + plan.o_off[i], bc.data() + plan.b_off[i], ga.data() + plan.a_off[i],
                      plan.n, plan.k, plan.m);
        }
        accum(ac, ga);
      }
      if (bc.requires_grad()) {
        std::vector<double> gb(static_cast<std::size_t>(bc.numel()), 0.0);
        for (std::size_t i = 0; i < batches; ++i) {
          gemm_tn_acc(ac.data() + plan.a_off[i], g + plan.o_off[i], gb.data() + plan.b_off[i],
                      plan.n, plan.k, plan.m);
        }
        accum(bc, gb);
      }
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  Tensor y = matmul(x, w);
  if (bias.defined()) y = add_bias(y, bias);
  return y;
}

// ---- Structure ops ------------------------------------------------------

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  for (const auto& p : parts) check_defined("concat", p);
  const int rank = parts[0].rank();
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ShapeError("concat: axis out of range");
  Shape out_shape = parts[0].shape();
  std::int64_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != rank) throw ShapeError("concat: rank mismatch");
    for (int i = 0; i < rank; ++i) {
      if (i != axis && p.dim(i) != out_shape[static_cast<std::size_t>(i)]) {
        throw ShapeError("concat: axis " + std::to_string(i) + " mismatch, " +
                         shape_str(p.shape()) + " vs " + shape_str(parts[0].shape()));
      }
    }
    total += p.dim(axis);
  }
  out_shape[static_cast<std::size_t>(axis)] = total;
  Tensor out = Tensor::zeros(out_shape);

  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= out_shape[static_cast<std::size_t>(i)];
  for (int i = axis + 1; i < rank; ++i) inner *= out_shape[static_cast<std::size_t>(i)];
  const std::int64_t out_row = total * inner;
  std::int64_t at = 0;
  std::vector<std::int64_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(at);
    const std::int64_t block = p.dim(axis) * inner;
    for (std::int64_t o = 0; o < outer; ++o) {
      std::memcpy(out.data() + o * out_row + at, p.data() + o * block,
                  static_cast<std::size_t>(block) * sizeof(double));
    }
    at += block;
  }
  bool rec = Tape::current().recording();
  bool any = false;
  for (const auto& p : parts)
    if (p.requires_grad()) any = true;
  if (rec && any) {
    out.set_requires_grad(true);
    Tensor oc = out;
    std::vector<Tensor> pc = parts;
    Tape::current().record("concat", [pc, oc, offsets, outer, inner, out_row]() {
      if (!oc.has_grad()) return;
      const double* g = oc.grad().data();
      for (std::size_t pi = 0; pi < pc.size(); ++pi) {
        if (!pc[pi].requires_grad()) continue;
        const std::int64_t block = pc[pi].numel() / outer;
        std::vector<double> gp(static_cast<std::size_t>(pc[pi].numel()));
        for (std::int64_t o = 0; o < outer; ++o) {
          std::memcpy(gp.data() + o * block, g + o * out_row + offsets[pi],
                      static_cast<std::size_t>(block) * sizeof(double));
        }
        accum(pc[pi], gp);
      }
    });
  }
  return out;
}

Tensor slice_axis(const Tensor& x, int axis, std::int64_t start, std::int64_t len) {
  check_defined("slice_axis", x);
  const int rank = x.rank();
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ShapeError("slice_axis: axis out of range");
  if (start < 0 || len <= 0 || start + len > x.dim(axis)) {
    throw ShapeError("slice_axis: range [" + std::to_string(start) + ", " +
                     std::to_string(start + len) + ") out of bounds for axis " +
                     std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(axis)] = len;
  Tensor out = Tensor::zeros(out_shape);
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < rank; ++i) inner *= x.dim(i);
  const std::int64_t x_row = x.dim(axis) * inner, o_row = len * inner;
  for (std::int64_t o = 0; o < outer; ++o) {
    std::memcpy(out.data() + o * o_row, x.data() + o * x_row + start * inner,
                static_cast<std::size_t>(o_row) * sizeof(double));
  }
  if (recording_for({&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    Tape::current().record("slice_axis", [xc, oc, outer, inner, x_row, o_row, start]() {
      if (!oc.has_grad()) return;
      const double* g = oc.grad().data();
      std::vector<double> gx(static_cast<std::size_t>(xc.numel()), 0.0);
      for (std::int64_t o = 0; o < outer; ++o) {
        double* dst = gx.data() + o * x_row + start * inner;
        const double* src = g + o * o_row;
        for (std::int64_t i = 0; i < o_row; ++i) dst[i] += src[i];
      }
      accum(xc, gx);
    });
  }
  return out;
}

Tensor transpose(const Tensor& x, int axis_a, int axis_b) {
  check_defined("transpose", x);
  const int rank = x.rank();
  if (axis_a < 0) axis_a += rank;
  if (axis_b < 0) axis_b += rank;
  if (axis_a < 0 || axis_a >= rank || axis_b < 0 || axis_b >= rank) {
    throw ShapeError("transpose: axes out of range for " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  std::swap(out_shape[static_cast<std::size_t>(axis_a)], out_shape[static_cast<std::size_t>(axis_b)]);
  Tensor out = Tensor::zeros(out_shape);
  const auto xs = row_strides(x.shape());
  auto os = row_strides(out_shape);
  // Map output index -> input index by swapping the two coordinates.
  std::vector<std::int64_t> perm_strides(static_cast<std::size_t>(rank));
  for (int i = 0; i < rank; ++i) perm_strides[static_cast<std::size_t>(i)] = xs[static_cast<std::size_t>(i)];
  std::swap(perm_strides[static_cast<std::size_t>(axis_a)], perm_strides[static_cast<std::size_t>(axis_b)]);
  const std::int64_t n = x.numel();
  for (std::int64_t oi = 0; oi < n; ++oi) {
    std::int64_t rem = oi, xi = 0;
    for (int i = 0; i < rank; ++i) {
      const std::int64_t coord = rem / os[static_cast<std::size_t>(i)];
      rem %= os[static_cast<std::size_t>(i)];
      xi += coord * perm_strides[static_cast<std::size_t>(i)];
    }
    out.data()[oi] = x.data()[xi];
  }
  if (recording_for({&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    const int aa = axis_a, bb = axis_b;
    Tape::current().record("transpose", [xc, oc, aa, bb]() {
      if (!oc.has_grad()) return;
      NoGradGuard ng;
      Tensor gt = transpose(oc.grad(), aa, bb);
      accum(xc, gt.values());
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape new_shape) {
  check_defined("reshape", x);
  check_positive_shape("reshape", new_shape);
  if (numel_of(new_shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(new_shape));
  }
  Tensor out = Tensor::from_values(std::move(new_shape), x.values());
  if (recording_for({&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    Tape::current().record("reshape", [xc, oc]() {
      if (!oc.has_grad()) return;
      accum(xc, oc.grad().values());
    });
  }
  return out;
}

Tensor sum_axis(const Tensor& x, int axis) {
  check_defined("sum_axis", x);
  const int rank = x.rank();
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ShapeError("sum_axis: axis out of range");
  Shape out_shape;
  for (int i = 0; i < rank; ++i)
    if (i != axis) out_shape.push_back(x.dim(i));
  if (out_shape.empty()) out_shape.push_back(1);
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < rank; ++i) inner *= x.dim(i);
  const std::int64_t count = x.dim(axis);
  Tensor out = Tensor::zeros(out_shape);
  for (std::int64_t o = 0; o < outer; ++o) {
    const double* base = x.data() + o * count * inner;
    double* orow = out.data() + o * inner;
    for (std::int64_t c = 0; c < count; ++c) {
      const double* src = base + c * inner;
      for (std::int64_t i = 0; i < inner; ++i) orow[i] += src[i];
    }
  }
  if (recording_for({&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    Tape::current().record("sum_axis", [xc, oc, outer, inner, count]() {
      if (!oc.has_grad()) return;
      const double* g = oc.grad().data();
      std::vector<double> gx(static_cast<std::size_t>(xc.numel()));
      for (std::int64_t o = 0; o < outer; ++o) {
        const double* grow = g + o * inner;
        double* base = gx.data() + o * count * inner;
        for (std::int64_t c = 0; c < count; ++c) {
          for (std::int64_t i = 0; i < inner; ++i) base[c * inner + i] = grow[i];
        }
      }
      accum(xc, gx);
    });
  }
  return out;
}

Tensor mean_axis(const Tensor& x, int axis) {
  const int rank = x.rank();
  int ax = axis < 0 ? axis + rank : axis;
  if (ax < 0 || ax >= rank) throw ShapeError("mean_axis: axis out of range");
  return scale(sum_axis(x, ax), 1.0 / static_cast<double>(x.dim(ax)));
}

Tensor sum_all(const Tensor& x) {
  check_defined("sum_all", x);
  double s = 0.0;
  for (double v : x.values()) s += v;
  Tensor out = Tensor::scalar(s);
  if (recording_for({&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    Tape::current().record("sum_all", [xc, oc]() {
      if (!oc.has_grad()) return;
      const double g = oc.grad().values()[0];
      std::vector<double> gx(static_cast<std::size_t>(xc.numel()), g);
      accum(xc, gx);
    });
  }
  return out;
}

// ---- Temporal convolution ----------------------------------------------

Tensor conv1d_time(const Tensor& x, const Tensor& w, const Tensor& bias, std::int64_t stride,
                   std::int64_t pad) {
  check_defined("conv1d_time", x);
  check_defined("conv1d_time", w);
  if (x.rank() != 4 || w.rank() != 3) {
    throw ShapeError("conv1d_time: expected x [B,T,M,C] and w [k,Cin,Cout], got " +
                     shape_str(x.shape()) + " and " + shape_str(w.shape()));
  }
  if (stride < 1 || pad < 0) throw ContractError("conv1d_time: bad stride/pad");
  const std::int64_t B = x.dim(0), T = x.dim(1), M = x.dim(2), Ci = x.dim(3);
  const std::int64_t k = w.dim(0), Co = w.dim(2);
  if (w.dim(1) != Ci) {
    throw ShapeError("conv1d_time: channel mismatch, x has " + std::to_string(Ci) +
                     " channels, w expects " + std::to_string(w.dim(1)));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != Co)) {
    throw ShapeError("conv1d_time: bias shape " + shape_str(bias.shape()));
  }
  const std::int64_t To = (T + 2 * pad - k) / stride + 1;
  if (T + 2 * pad < k || To < 1) {
    throw ShapeError("conv1d_time: output length " + std::to_string(To) +
                     " < 1 for T=" + std::to_string(T) + " k=" + std::to_string(k));
  }
  Tensor out = Tensor::zeros({B, To, M, Co});
  const double* xv = x.data();
  const double* wv = w.data();
  double* ov = out.data();
  if (bias.defined()) {
    const std::int64_t rows = out.numel() / Co;
    for (std::int64_t r = 0; r < rows; ++r) {
      for (std::int64_t co = 0; co < Co; ++co) ov[r * Co + co] = bias.data()[co];
    }
  }
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t to = 0; to < To; ++to) {
      const std::int64_t t0 = to * stride - pad;
      for (std::int64_t dt = 0; dt < k; ++dt) {
        const std::int64_t t = t0 + dt;
        if (t < 0 || t >= T) continue;
        const double* xrow_base = xv + ((b * T + t) * M) * Ci;
        const double* wmat = wv + dt * Ci * Co;
        double* orow_base = ov + ((b * To + to) * M) * Co;
        // One (M x Ci) * (Ci x Co) product per tap.
        gemm_nn_acc(xrow_base, wmat, orow_base, M, Ci, Co);
      }
    }
  }
  if (recording_for({&x, &w, &bias})) {
    out.set_requires_grad(true);
    Tensor xc = x, wc = w, bc = bias, oc = out;
    Tape::current().record("conv1d_time", [xc, wc, bc, oc, B, T, M, Ci, Co, k, To, stride, pad]() {
      if (!oc.has_grad()) return;
      const double* g = oc.grad().data();
      std::vector<double> gx, gw, gb;
      const bool need_x = xc.requires_grad(), need_w = wc.requires_grad();
      const bool need_b = bc.defined() && bc.requires_grad();
      if (need_x) gx.assign(static_cast<std::size_t>(xc.numel()), 0.0);
      if (need_w) gw.assign(static_cast<std::size_t>(wc.numel()), 0.0);
      if (need_b) gb.assign(static_cast<std::size_t>(Co), 0.0);
      for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t to = 0; to < To; ++to) {
          const std::int64_t t0 = to * stride - pad;
          const double* grow = g + ((b * To + to) * M) * Co;
          for (std::int64_t dt = 0; dt < k; ++dt) {
            const std::int64_t t = t0 + dt;
            if (t < 0 || t >= T) continue;
            const double* xrow = xc.data() + ((b * T + t) * M) * Ci;
            const double* wmat = wc.data() + dt * Ci * Co;
            if (need_x) {
              gemm_nt_acc(grow, wmat, gx.data() + ((b * T + t) * M) * Ci, M, Ci, Co);
            }
            if (need_w) {
              gemm_tn_acc(xrow, grow, gw.data() + dt * Ci * Co, M, Ci, Co);
            }
          }
          if (need_b) {
            for (std::int64_t mm = 0; mm < M; ++mm) {
              for (std::int64_t co = 0; co < Co; ++co) gb[static_cast<std::size_t>(co)] += grow[mm * Co + co];
            }
          }
        }
      }
      if (need_x) accum(xc, gx);
      if (need_w) accum(wc, gw);
      if (need_b) accum(bc, gb);
    });
  }
  return out;
}

// ---- cross_add ----------------------------------------------------------

Tensor cross_add(const Tensor& u, const Tensor& v) {
  check_defined("cross_add", u);
  check_defined("cross_add", v);
  if (u.rank() != v.rank() || u.rank() < 2) {
    throw ShapeError("cross_add: rank mismatch " + shape_str(u.shape()) + " vs " +
                     shape_str(v.shape()));
  }
  const int rank = u.rank();
  if (u.dim(-1) != v.dim(-1)) {
    throw ShapeError("cross_add: feature axis mismatch " + shape_str(u.shape()) + " vs " +
                     shape_str(v.shape()));
  }
  for (int i = 0; i < rank - 2; ++i) {
    if (u.dim(i) != v.dim(i)) {
      throw ShapeError("cross_add: batch axis " + std::to_string(i) + " mismatch");
    }
  }
  const std::int64_t h = u.dim(-1), m1 = u.dim(-2), m2 = v.dim(-2);
  std::int64_t batch = 1;
  for (int i = 0; i < rank - 2; ++i) batch *= u.dim(i);
  Shape out_shape = u.shape();
  out_shape[static_cast<std::size_t>(rank - 2)] = m1 * m2;
  Tensor out = Tensor::zeros(out_shape);
  for (std::int64_t b = 0; b < batch; ++b) {
    const double* ub = u.data() + b * m1 * h;
    const double* vb = v.data() + b * m2 * h;
    double* ob = out.data() + b * m1 * m2 * h;
    for (std::int64_t i = 0; i < m1; ++i) {
      const double* urow = ub + i * h;
      for (std::int64_t j = 0; j < m2; ++j) {
        const double* vrow = vb + j * h;
        double* orow = ob + (i * m2 + j) * h;
        for (std::int64_t c = 0; c < h; ++c) orow[c] = urow[c] + vrow[c];
      }
    }
  }
  if (recording_for({&u, &v})) {
    out.set_requires_grad(true);
    Tensor ucpy = u, vc = v, oc = out;
    Tape::current().record("cross_add", [ucpy, vc, oc, batch, m1, m2, h]() {
      if (!oc.has_grad()) return;
      const double* g = oc.grad().data();
      if (ucpy.requires_grad()) {
        std::vector<double> gu(static_cast<std::size_t>(ucpy.numel()), 0.0);
        for (std::int64_t b = 0; b < batch; ++b) {
          for (std::int64_t i = 0; i < m1; ++i) {
            double* dst = gu.data() + (b * m1 + i) * h;
            for (std::int64_t j = 0; j < m2; ++j) {
              const double* src = g + ((b * m1 + i) * m2 + j) * h;
              for (std::int64_t c = 0; c < h; ++c) dst[c] += src[c];
            }
          }
        }
        accum(ucpy, gu);
      }
      if (vc.requires_grad()) {
        std::vector<double> gv(static_cast<std::size_t>(vc.numel()), 0.0);
        for (std::int64_t b = 0; b < batch; ++b) {
          for (std::int64_t i = 0; i < m1; ++i) {
            for (std::int64_t j = 0; j < m2; ++j) {
              const double* src = g + ((b * m1 + i) * m2 + j) * h;
              double* dst = gv.data() + (b * m2 + j) * h;
              for (std::int64_t c = 0; c < h; ++c) dst[c] += src[c];
            }
          }
        }
        accum(vc, gv);
      }
    });
  }
  return out;
}

// ---- Dropout ------------------------------------------------------------

Tensor dropout(const Tensor& x, double p, Rng& rng, bool training) {
  check_defined("dropout", x);
  if (p < 0.0 || p >= 1.0) {
    throw ConfigError("dropout: probability " + std::to_string(p) + " outside [0, 1)");
  }
  if (!training || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  auto mask = std::make_shared<std::vector<double>>(static_cast<std::size_t>(x.numel()));
  for (auto& mv : *mask) mv = (rng.uniform() >= p) ? keep_scale : 0.0;
  Tensor out = Tensor::zeros(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) out.data()[i] = x.data()[i] * (*mask)[static_cast<std::size_t>(i)];
  if (recording_for({&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    Tape::current().record("dropout", [xc, oc, mask]() {
      if (!oc.has_grad()) return;
      const auto& g = oc.grad().values();
      std::vector<double> gx(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * (*mask)[i];
      accum(xc, gx);
    });
  }
  return out;
}

// ---- Batch normalization -------------------------------------------------

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                  bool training) {
  check_defined("batch_norm", x);
  check_defined("batch_norm", gamma);
  check_defined("batch_norm", beta);
  const std::int64_t c = x.dim(-1);
  if (gamma.rank() != 1 || gamma.dim(0) != c || beta.rank() != 1 || beta.dim(0) != c) {
    throw ShapeError("batch_norm: gamma/beta must be [" + std::to_string(c) + "], got " +
                     shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
  }
  if (static_cast<std::int64_t>(state.running_mean.size()) != c) {
    throw ContractError("batch_norm: state tracks " + std::to_string(state.running_mean.size()) +
                        " channels, input has " + std::to_string(c));
  }
  const std::int64_t rows = x.numel() / c;
  auto mean = std::make_shared<std::vector<double>>(static_cast<std::size_t>(c), 0.0);
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(c), 0.0);
  if (training) {
    std::vector<double> var(static_cast<std::size_t>(c), 0.0);
    for (std::int64_t r = 0; r < rows; ++r) {
      const double* xr = x.data() + r * c;
      for (std::int64_t j = 0; j < c; ++j) (*mean)[static_cast<std::size_t>(j)] += xr[j];
    }
    for (auto& mv : *mean) mv /= static_cast<double>(rows);
    for (std::int64_t r = 0; r < rows; ++r) {
      const double* xr = x.data() + r * c;
      for (std::int64_t j = 0; j < c; ++j) {
        const double d = xr[j] - (*mean)[static_cast<std::size_t>(j)];
        var[static_cast<std::size_t>(j)] += d * d;
      }
    }
    for (auto& vv : var) vv /= static_cast<double>(rows);
    for (std::int64_t j = 0; j < c; ++j) {
      const auto js = static_cast<std::size_t>(j);
      (*inv_std)[js] = 1.0 / std::sqrt(var[js] + state.eps);
      state.running_mean[js] = (1.0 - state.momentum) * state.running_mean[js] + state.momentum * (*mean)[js];
      state.running_var[js] = (1.0 - state.momentum) * state.running_var[js] + state.momentum * var[js];
    }
  } else {
    for (std::int64_t j = 0; j < c; ++j) {
      const auto js = static_cast<std::size_t>(j);
      (*mean)[js] = state.running_mean[js];
      (*inv_std)[js] = 1.0 / std::sqrt(state.running_var[js] + state.eps);
    }
  }
  Tensor out = Tensor::zeros(x.shape());
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * c;
    double* orow = out.data() + r * c;
    for (std::int64_t j = 0; j < c; ++j) {
      const auto js = static_cast<std::size_t>(j);
      orow[j] = gamma.data()[j] * ((xr[j] - (*mean)[js]) * (*inv_std)[js]) + beta.data()[j];
    }
  }
  if (recording_for({&x, &gamma, &beta})) {
    out.set_requires_grad(true);
    Tensor xc = x, gc = gamma, bc = beta, oc = out;
    Tape::current().record("batch_norm", [xc, gc, bc, oc, mean, inv_std, rows, c, training]() {
      if (!oc.has_grad()) return;
      const double* g = oc.grad().data();
      // dgamma/dbeta are common to both modes.
      std::vector<double> dgamma(static_cast<std::size_t>(c), 0.0), dbeta(static_cast<std::size_t>(c), 0.0);
      for (std::int64_t r = 0; r < rows; ++r) {
        const double* xr = xc.data() + r * c;
        const double* grow = g + r * c;
        for (std::int64_t j = 0; j < c; ++j) {
          const auto js = static_cast<std::size_t>(j);
          const double xhat = (xr[j] - (*mean)[js]) * (*inv_std)[js];
          dgamma[js] += grow[j] * xhat;
          dbeta[js] += grow[j];
        }
      }
      if (xc.requires_grad()) {
        std::vector<double> gx(static_cast<std::size_t>(xc.numel()));
        const double n = static_cast<double>(rows);
        for (std::int64_t r = 0; r < rows; ++r) {
          const double* xr = xc.data() + r * c;
          const double* grow = g + r * c;
          double* dst = gx.data() + r * c;
          for (std::int64_t j = 0; j < c; ++j) {
            const auto js = static_cast<std::size_t>(j);
            const double scale_j = gc.data()[j] * (*inv_std)[js];
            if (training) {
              const double xhat = (xr[j] - (*mean)[js]) * (*inv_std)[js];
              dst[j] = scale_j * (grow[j] - dbeta[js] / n - xhat * dgamma[js] / n);
            } else {
              dst[j] = scale_j * grow[j];
            }
          }
        }
        accum(xc, gx);
      }
      if (gc.requires_grad()) accum(gc, dgamma);
      if (bc.requires_grad()) accum(bc, dbeta);
    });
  }
  return out;
}

// ---- Optimizer ------------------------------------------------------------

double clip_global_norm(const std::vector<Tensor>& grads, double max_norm) {
  if (max_norm <= 0.0) throw ContractError("clip_global_norm: max_norm must be positive");
  double sq = 0.0;
  for (const auto& g : grads) {
    if (!g.defined()) continue;
    for (double v : g.values()) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return 1.0;
  const double factor = max_norm / norm;
  for (const auto& g : grads) {
    if (!g.defined()) continue;
    Tensor t = g;
    for (double& v : t.values()) v *= factor;
  }
  return factor;
}

void adam_step(std::vector<Tensor>& params, AdamState& state) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(static_cast<std::size_t>(params[i].numel()), 0.0);
      state.v[i].assign(static_cast<std::size_t>(params[i].numel()), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw ContractError("adam_step: state tracks " + std::to_string(state.m.size()) +
                        " parameters, got " + std::to_string(params.size()));
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    if (state.m[i].size() != static_cast<std::size_t>(p.numel())) {
      throw ContractError("adam_step: moment shape mismatch for parameter " + std::to_string(i));
    }
    const Tensor g = p.grad();
    const double* gv = g.defined() ? g.data() : nullptr;
    double* pv = p.data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const std::int64_t n = p.numel();
    for (std::int64_t j = 0; j < n; ++j) {
      const double gj = gv ? gv[j] : 0.0;
      m[static_cast<std::size_t>(j)] = state.beta1 * m[static_cast<std::size_t>(j)] + (1.0 - state.beta1) * gj;
      v[static_cast<std::size_t>(j)] = state.beta2 * v[static_cast<std::size_t>(j)] + (1.0 - state.beta2) * gj * gj;
      const double mhat = m[static_cast<std::size_t>(j)] / bc1;
      const double vhat = v[static_cast<std::size_t>(j)] / bc2;
      pv[j] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
    p.zero_grad();
  }
}

}  // namespace dmgnn
