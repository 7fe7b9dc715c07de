#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dmgnn/tensor.hpp"

namespace testutil {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst;
};

// Central finite-difference oracle, independent of the autodiff path.
// `forward` must rebuild the computation from the current values of
// `inputs` and return a scalar. Relative error uses max(1, |a|, |n|) as
// denominator so near-zero gradients are compared absolutely.
inline GradCheckReport gradcheck(std::vector<dmgnn::Tensor> inputs,
                                 const std::function<dmgnn::Tensor()>& forward,
                                 double h = 1e-5) {
  using namespace dmgnn;
  Tape::current().clear();
  Tensor loss = forward();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) {
    analytic.push_back(t.has_grad() ? t.grad().values()
                                    : std::vector<double>(static_cast<std::size_t>(t.numel()), 0.0));
    t.drop_grad();
  }

  GradCheckReport rep;
  NoGradGuard ng;
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    Tensor& t = inputs[ti];
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      const double saved = t.values()[static_cast<std::size_t>(i)];
      t.values()[static_cast<std::size_t>(i)] = saved + h;
      const double fp = forward().item();
      t.values()[static_cast<std::size_t>(i)] = saved - h;
      const double fm = forward().item();
      t.values()[static_cast<std::size_t>(i)] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double ana = analytic[ti][static_cast<std::size_t>(i)];
      const double denom = std::max({1.0, std::abs(numeric), std::abs(ana)});
      const double rel = std::abs(numeric - ana) / denom;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst = "input " + std::to_string(ti) + " entry " + std::to_string(i) + ": analytic " +
                    std::to_string(ana) + " vs numeric " + std::to_string(numeric);
      }
    }
  }
  return rep;
}

// Uniform values in [lo, hi], kept at least `margin` away from zero when
// margin > 0 (for kinked ops like relu/abs).
inline dmgnn::Tensor random_tensor(dmgnn::Shape shape, dmgnn::Rng& rng, bool requires_grad,
                                   double lo = -1.0, double hi = 1.0, double margin = 0.0) {
  dmgnn::Tensor t = dmgnn::Tensor::zeros(std::move(shape), requires_grad);
  for (auto& v : t.values()) {
    do {
      v = rng.uniform(lo, hi);
    } while (margin > 0.0 && std::abs(v) < margin);
  }
  return t;
}

}  // namespace testutil
