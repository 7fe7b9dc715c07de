#include <doctest.h>

#include <cmath>
#include <numeric>

#include "dmgnn/tensor.hpp"
#include "gradcheck.hpp"

using namespace dmgnn;
using testutil::gradcheck;
using testutil::random_tensor;

namespace {

// Sensitize every output entry with fixed random weights so the scalar
// loss exercises the whole jacobian.
Tensor weighted_sum(const Tensor& out, const Tensor& weights) {
  return sum_all(mul(out, weights));
}

Tensor const_like_shape(const Shape& shape, Rng& rng) {
  Tensor w = Tensor::zeros(shape);
  for (auto& v : w.values()) v = rng.uniform(-1.0, 1.0);
  return w;
}

}  // namespace

TEST_CASE("relu forward matches definition") {
  Tensor x = Tensor::from_values({1, 2}, {1.0, -2.0});
  Tensor y = relu(x);
  CHECK(y.values()[0] == 1.0);
  CHECK(y.values()[1] == 0.0);
}

TEST_CASE("row softmax of equal values is uniform") {
  Tensor x = Tensor::full({1, 4}, 0.7);
  Tensor y = softmax_lastdim(x);
  for (double v : y.values()) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one with entries in [0,1]") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor({5, 6}, rng, false, -4.0, 4.0);
    Tensor y = softmax_lastdim(x);
    for (std::int64_t r = 0; r < 5; ++r) {
      double sum = 0.0;
      for (std::int64_t c = 0; c < 6; ++c) {
        const double v = y.values()[static_cast<std::size_t>(r * 6 + c)];
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        sum += v;
      }
      CHECK(std::abs(sum - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("softmax is invariant to a constant shift per row") {
  Rng rng(8);
  Tensor x = random_tensor({3, 5}, rng, false, -2.0, 2.0);
  Tensor shifted = affine(x, 1.0, 0.37);
  Tensor a = softmax_lastdim(x), b = softmax_lastdim(shifted);
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    CHECK(a.values()[static_cast<std::size_t>(i)] ==
          doctest::Approx(b.values()[static_cast<std::size_t>(i)]).epsilon(1e-12));
  }
}

TEST_CASE("temporal conv output length follows the stride rule") {
  // 49 -> 25 with kernel 5, stride 2, pad 2; then 13 and 7.
  Rng rng(3);
  Tensor w = random_tensor({5, 2, 3}, rng, false);
  Tensor x = random_tensor({1, 49, 4, 2}, rng, false);
  Tensor y = conv1d_time(x, w, Tensor(), 2, 2);
  CHECK(y.dim(1) == 25);
  Tensor w2 = random_tensor({5, 3, 3}, rng, false);
  Tensor y2 = conv1d_time(y, w2, Tensor(), 2, 2);
  CHECK(y2.dim(1) == 13);
  CHECK(conv1d_time(y2, w2, Tensor(), 2, 2).dim(1) == 7);
  CHECK(conv1d_time(x, w, Tensor(), 1, 2).dim(1) == 49);

  for (int trial = 0; trial < 30; ++trial) {
    const std::int64_t t = 1 + static_cast<std::int64_t>(rng.below(30));
    const std::int64_t k = 1 + static_cast<std::int64_t>(rng.below(5));
    const std::int64_t s = 1 + static_cast<std::int64_t>(rng.below(3));
    const std::int64_t p = static_cast<std::int64_t>(rng.below(3));
    if (t + 2 * p < k) continue;
    Tensor xin = random_tensor({1, t, 2, 2}, rng, false);
    Tensor ww = random_tensor({k, 2, 2}, rng, false);
    const std::int64_t expect = (t + 2 * p - k) / s + 1;
    if (expect < 1) continue;
    CHECK(conv1d_time(xin, ww, Tensor(), s, p).dim(1) == expect);
  }
}

TEST_CASE("backward of sum of squares") {
  Tensor x = Tensor::from_values({1}, {3.0}, true);
  Tensor loss = sum_all(mul(x, x));
  backward(loss);
  CHECK(x.grad().values()[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("backward of l1 norm of difference") {
  Tensor x = Tensor::from_values({1}, {2.0}, true);
  Tensor y = Tensor::from_values({1}, {5.0});
  Tensor loss = sum_all(abs_op(sub(x, y)));
  backward(loss);
  CHECK(x.grad().values()[0] == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("backward requires a scalar root and consumes the tape") {
  Tensor x = Tensor::from_values({2}, {1.0, 2.0}, true);
  Tensor y = relu(x);
  CHECK_THROWS_AS(backward(y), ContractError);
  Tensor loss = sum_all(y);
  backward(loss);
  CHECK(Tape::current().size() == 0);
}

TEST_CASE("gradients accumulate across backward passes") {
  Tensor x = Tensor::from_values({1}, {1.5}, true);
  for (int pass = 0; pass < 2; ++pass) backward(sum_all(mul(x, x)));
  CHECK(x.grad().values()[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("shape violations raise dimension errors naming the op") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 2});
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("matmul"), ShapeError);
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK_THROWS_AS(concat({a, b}, 0), ShapeError);
  CHECK_THROWS_AS(reshape(a, {5}), ShapeError);
  CHECK_THROWS_AS(slice_axis(a, 0, 1, 5), ShapeError);
}

// ---- Finite-difference suite across every differentiable op ----------------

TEST_CASE("finite differences: elementwise and activations") {
  Rng rng(11);
  const Shape shape{2, 3, 4};
  Tensor a = random_tensor(shape, rng, true, -1.0, 1.0, 1e-3);
  Tensor b = random_tensor(shape, rng, true, -1.0, 1.0, 1e-3);
  Tensor w = const_like_shape(shape, rng);

  auto check = [&](const char* name, const std::function<Tensor()>& f) {
    auto rep = gradcheck({a, b}, f);
    INFO(name, ": ", rep.worst);
    CHECK(rep.max_rel_err < 1e-4);
  };
  check("add", [&] { return weighted_sum(add(a, b), w); });
  check("sub", [&] { return weighted_sum(sub(a, b), w); });
  check("mul", [&] { return weighted_sum(mul(a, b), w); });
  check("affine", [&] { return weighted_sum(affine(a, 1.7, -0.3), w); });
  check("relu", [&] { return weighted_sum(relu(a), w); });
  check("sigmoid", [&] { return weighted_sum(sigmoid(a), w); });
  check("tanh", [&] { return weighted_sum(tanh_op(a), w); });
  check("abs", [&] { return weighted_sum(abs_op(a), w); });
  check("softmax", [&] { return weighted_sum(softmax_lastdim(a), w); });
}

TEST_CASE("finite differences: matmul variants") {
  Rng rng(12);
  {
    Tensor a = random_tensor({4, 3}, rng, true);
    Tensor b = random_tensor({3, 5}, rng, true);
    Tensor w = const_like_shape({4, 5}, rng);
    auto rep = gradcheck({a, b}, [&] { return weighted_sum(matmul(a, b), w); });
    CHECK(rep.max_rel_err < 1e-4);
  }
  {
    // 2-D broadcast over a batched right operand.
    Tensor a = random_tensor({4, 4}, rng, true);
    Tensor b = random_tensor({3, 4, 2}, rng, true);
    Tensor w = const_like_shape({3, 4, 2}, rng);
    auto rep = gradcheck({a, b}, [&] { return weighted_sum(matmul(a, b), w); });
    CHECK(rep.max_rel_err < 1e-4);
  }
  {
    // Batched left, shared right (the linear-layer case).
    Tensor a = random_tensor({2, 3, 4}, rng, true);
    Tensor b = random_tensor({4, 5}, rng, true);
    Tensor w = const_like_shape({2, 3, 5}, rng);
    auto rep = gradcheck({a, b}, [&] { return weighted_sum(matmul(a, b), w); });
    CHECK(rep.max_rel_err < 1e-4);
  }
  {
    // Equal batch dims plus a broadcast middle axis.
    Tensor a = random_tensor({2, 1, 3, 4}, rng, true);
    Tensor b = random_tensor({2, 5, 4, 2}, rng, true);
    Tensor w = const_like_shape({2, 5, 3, 2}, rng);
    auto rep = gradcheck({a, b}, [&] { return weighted_sum(matmul(a, b), w); });
    CHECK(rep.max_rel_err < 1e-4);
  }
}

TEST_CASE("finite differences: structure ops") {
  Rng rng(13);
  Tensor a = random_tensor({2, 3, 4}, rng, true);
  Tensor b = random_tensor({2, 2, 4}, rng, true);
  {
    Tensor w = const_like_shape({2, 5, 4}, rng);
    auto rep = gradcheck({a, b}, [&] { return weighted_sum(concat({a, b}, 1), w); });
    CHECK(rep.max_rel_err < 1e-4);
  }
  {
    Tensor w = const_like_shape({2, 2, 4}, rng);
    auto rep = gradcheck({a}, [&] { return weighted_sum(slice_axis(a, 1, 1, 2), w); });
    CHECK(rep.max_rel_err < 1e-4);
  }
  {
    Tensor w = const_like_shape({4, 3, 2}, rng);
    auto rep = gradcheck({a}, [&] { return weighted_sum(transpose(a, 0, 2), w); });
    CHECK(rep.max_rel_err < 1e-4);
  }
  {
    Tensor w = const_like_shape({6, 4}, rng);
    auto rep = gradcheck({a}, [&] { return weighted_sum(reshape(a, {6, 4}), w); });
    CHECK(rep.max_rel_err < 1e-4);
  }
  {
    Tensor w = const_like_shape({2, 4}, rng);
    auto rep = gradcheck({a}, [&] { return weighted_sum(sum_axis(a, 1), w); });
    CHECK(rep.max_rel_err < 1e-4);
    rep = gradcheck({a}, [&] { return weighted_sum(mean_axis(a, 1), w); });
    CHECK(rep.max_rel_err < 1e-4);
  }
  {
    Tensor bias = random_tensor({4}, rng, true);
    Tensor w = const_like_shape({2, 3, 4}, rng);
    auto rep = gradcheck({a, bias}, [&] { return weighted_sum(add_bias(a, bias), w); });
    CHECK(rep.max_rel_err < 1e-4);
  }
  {
    // cross_add pairs every row of u with every row of v.
    Tensor u = random_tensor({2, 3, 4}, rng, true);
    Tensor v = random_tensor({2, 2, 4}, rng, true);
    Tensor w = const_like_shape({2, 6, 4}, rng);
    auto rep = gradcheck({u, v}, [&] { return weighted_sum(cross_add(u, v), w); });
    CHECK(rep.max_rel_err < 1e-4);
  }
}

TEST_CASE("finite differences: temporal convolution") {
  Rng rng(14);
  for (std::int64_t stride : {std::int64_t(1), std::int64_t(2)}) {
    Tensor x = random_tensor({2, 6, 3, 2}, rng, true);
    Tensor w = random_tensor({5, 2, 4}, rng, true);
    Tensor bias = random_tensor({4}, rng, true);
    const std::int64_t t_out = (6 + 4 - 5) / stride + 1;
    Tensor lw = const_like_shape({2, t_out, 3, 4}, rng);
    auto rep = gradcheck({x, w, bias},
                         [&] { return weighted_sum(conv1d_time(x, w, bias, stride, 2), lw); });
    INFO("stride ", stride, ": ", rep.worst);
    CHECK(rep.max_rel_err < 1e-4);
  }
}

TEST_CASE("finite differences: batch norm in both modes") {
  Rng rng(15);
  Tensor x = random_tensor({6, 3}, rng, true);
  Tensor gamma = random_tensor({3}, rng, true, 0.5, 1.5);
  Tensor beta = random_tensor({3}, rng, true);
  Tensor w = const_like_shape({6, 3}, rng);
  {
    auto rep = gradcheck({x, gamma, beta}, [&] {
      BatchNormState state(3);  // fresh each eval: stats must not leak into the value
      return weighted_sum(batch_norm(x, gamma, beta, state, true), w);
    });
    INFO("train mode: ", rep.worst);
    CHECK(rep.max_rel_err < 1e-4);
  }
  {
    BatchNormState state(3);
    for (std::size_t c = 0; c < 3; ++c) {
      state.running_mean[c] = 0.1 * static_cast<double>(c);
      state.running_var[c] = 1.0 + 0.2 * static_cast<double>(c);
    }
    auto rep = gradcheck({x, gamma, beta}, [&] {
      return weighted_sum(batch_norm(x, gamma, beta, state, false), w);
    });
    INFO("eval mode: ", rep.worst);
    CHECK(rep.max_rel_err < 1e-4);
  }
}

TEST_CASE("batch norm eval mode is a deterministic affine map") {
  Rng rng(16);
  Tensor x = random_tensor({4, 8, 2, 3}, rng, false);
  Tensor gamma = Tensor::full({3}, 1.3);
  Tensor beta = Tensor::full({3}, -0.2);
  BatchNormState state(3);
  state.running_mean = {0.1, -0.4, 0.0};
  state.running_var = {1.5, 0.7, 2.0};
  Tensor y1 = batch_norm(x, gamma, beta, state, false);
  Tensor y2 = batch_norm(x, gamma, beta, state, false);
  for (std::int64_t i = 0; i < y1.numel(); ++i) {
    CHECK(y1.values()[static_cast<std::size_t>(i)] == y2.values()[static_cast<std::size_t>(i)]);
  }
  // Running statistics untouched by eval passes.
  CHECK(state.running_mean[0] == 0.1);
  CHECK(state.running_var[1] == 0.7);
}

TEST_CASE("dropout: eval identity, train mask scaling and gradient") {
  Rng rng(17);
  Tensor x = random_tensor({3, 5}, rng, true, 0.5, 1.5);
  Rng stream(100);
  Tensor eval_out = dropout(x, 0.4, stream, false);
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    CHECK(eval_out.values()[static_cast<std::size_t>(i)] == x.values()[static_cast<std::size_t>(i)]);
  }
  Tape::current().clear();
  Tensor train_out = dropout(x, 0.4, stream, true);
  backward(sum_all(train_out));
  const double keep = 1.0 / 0.6;
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const auto iu = static_cast<std::size_t>(i);
    const double ratio = train_out.values()[iu] / x.values()[iu];
    const bool kept = std::abs(ratio - keep) < 1e-12;
    const bool zeroed = train_out.values()[iu] == 0.0;
    CHECK((kept || zeroed));
    CHECK(x.grad().values()[iu] == doctest::Approx(kept ? keep : 0.0).epsilon(1e-12));
  }
  CHECK_THROWS_AS(dropout(x, 1.0, stream, true), ConfigError);
}

// ---- clip_global_norm -------------------------------------------------------

TEST_CASE("clip keeps gradients at or below the threshold") {
  Tensor g1 = Tensor::from_values({2}, {0.3, 0.4});
  CHECK(clip_global_norm({g1}, 0.5) == 1.0);
  CHECK(g1.values()[0] == 0.3);
  CHECK(g1.values()[1] == 0.4);

  Tensor g2 = Tensor::from_values({2}, {0.6, 0.8});
  CHECK(clip_global_norm({g2}, 0.5) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(g2.values()[0] == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(g2.values()[1] == doctest::Approx(0.4).epsilon(1e-12));

  CHECK(clip_global_norm({}, 0.5) == 1.0);
}

TEST_CASE("multi-tensor clip matches the concatenate-clip-split oracle") {
  Rng rng(19);
  std::vector<Tensor> grads;
  std::vector<double> flat;
  for (int i = 0; i < 4; ++i) {
    Tensor g = random_tensor({2, 3}, rng, false, -2.0, 2.0);
    for (double v : g.values()) flat.push_back(v);
    grads.push_back(g);
  }
  const double max_norm = 0.7;
  double sq = 0.0;
  for (double v : flat) sq += v * v;
  const double norm = std::sqrt(sq);
  const double factor = norm > max_norm ? max_norm / norm : 1.0;
  for (auto& v : flat) v *= factor;

  CHECK(clip_global_norm(grads, max_norm) == doctest::Approx(factor).epsilon(1e-12));
  std::size_t at = 0;
  double clipped_sq = 0.0;
  for (const auto& g : grads) {
    for (double v : g.values()) {
      CHECK(v == doctest::Approx(flat[at++]).epsilon(1e-12));
      clipped_sq += v * v;
    }
  }
  CHECK(std::sqrt(clipped_sq) <= max_norm + 1e-12);
}

// ---- Adam -------------------------------------------------------------------

namespace {

// Scalar reference recurrence, kept independent of the implementation.
struct ScalarAdam {
  double m = 0.0, v = 0.0;
  int t = 0;
  double step(double p, double g, double lr, double b1, double b2, double eps) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    return p - lr * mhat / (std::sqrt(vhat) + eps);
  }
};

}  // namespace

TEST_CASE("adam: zero gradient leaves the parameter unchanged") {
  Tensor p = Tensor::from_values({2}, {1.0, -2.0}, true);
  p.ensure_grad();  // zeros
  std::vector<Tensor> params{p};
  AdamState state;
  adam_step(params, state);
  CHECK(p.values()[0] == 1.0);
  CHECK(p.values()[1] == -2.0);
  CHECK(state.step == 1);
}

TEST_CASE("adam: one and two steps match the scalar recurrence") {
  Tensor p = Tensor::from_values({1}, {1.0}, true);
  std::vector<Tensor> params{p};
  AdamState state;
  state.lr = 1e-4;

  ScalarAdam oracle;
  double expect = oracle.step(1.0, 1.0, 1e-4, 0.9, 0.999, 1e-8);
  p.ensure_grad();
  p.grad().values()[0] = 1.0;
  adam_step(params, state);
  CHECK(p.values()[0] == doctest::Approx(expect).epsilon(1e-14));
  // Gradient was zeroed by the step.
  CHECK(p.grad().values()[0] == 0.0);

  expect = oracle.step(expect, -0.5, 1e-4, 0.9, 0.999, 1e-8);
  p.grad().values()[0] = -0.5;
  adam_step(params, state);
  CHECK(p.values()[0] == doctest::Approx(expect).epsilon(1e-14));
  CHECK(state.step == 2);
}

TEST_CASE("adam rejects mismatched state") {
  Tensor p = Tensor::from_values({2}, {0.0, 0.0}, true);
  std::vector<Tensor> params{p};
  AdamState state;
  adam_step(params, state);
  Tensor q = Tensor::from_values({3}, {0.0, 0.0, 0.0}, true);
  std::vector<Tensor> swapped{q};
  CHECK_THROWS_AS(adam_step(swapped, state), ContractError);
}

TEST_CASE("clip never increases the global norm (random property)") {
  Rng rng(23);
  for (int trial = 0; trial < 25; ++trial) {
    std::vector<Tensor> grads;
    double sq = 0.0;
    const int n = 1 + static_cast<int>(rng.below(4));
    for (int i = 0; i < n; ++i) {
      Tensor g = random_tensor({1 + static_cast<std::int64_t>(rng.below(6))}, rng, false, -3.0, 3.0);
      for (double v : g.values()) sq += v * v;
      grads.push_back(g);
    }
    const double before = std::sqrt(sq);
    const double max_norm = rng.uniform(0.1, 3.0);
    const double factor = clip_global_norm(grads, max_norm);
    double after_sq = 0.0;
    for (const auto& g : grads) {
      for (double v : g.values()) after_sq += v * v;
    }
    const double after = std::sqrt(after_sq);
    CHECK(after <= std::max(before, max_norm) + 1e-12);
    if (before <= max_norm) CHECK(factor == 1.0);
  }
}
