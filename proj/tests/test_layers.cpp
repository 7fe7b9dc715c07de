#include <doctest.h>

#include <cmath>
#include <vector>

#include "dmgnn/layers.hpp"
#include "gradcheck.hpp"

using namespace dmgnn;
using testutil::gradcheck;
using testutil::random_tensor;

namespace {

Tensor weighted_sum(const Tensor& out, const Tensor& w) { return sum_all(mul(out, w)); }

Tensor rand_const(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(shape);
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

ForwardCtx train_ctx(Rng& rng) { return ForwardCtx{true, &rng}; }

}  // namespace

// ---- graph_conv --------------------------------------------------------------

TEST_CASE("graph conv with zero adjacency and identity self-weight is identity") {
  Rng rng(1);
  Tensor x = random_tensor({4, 3}, rng, false, 0.0, 1.0);  // non-negative
  Tensor a = Tensor::zeros({4, 4});
  Tensor w = Tensor::zeros({3, 3});
  Tensor u = Tensor::identity(3);
  Tensor y = graph_conv(x, a, w, u);
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    CHECK(y.values()[static_cast<std::size_t>(i)] == x.values()[static_cast<std::size_t>(i)]);
  }
}

TEST_CASE("graph conv clamps negatives through the relu") {
  Tensor x = Tensor::from_values({1, 2}, {1.0, -2.0});
  Tensor a = Tensor::identity(1);
  Tensor w = Tensor::identity(2);
  Tensor u = Tensor::zeros({2, 2});
  Tensor y = graph_conv(x, a, w, u);
  CHECK(y.values()[0] == 1.0);
  CHECK(y.values()[1] == 0.0);
}

TEST_CASE("graph conv matches the dense matmul oracle") {
  Rng rng(2);
  const std::int64_t m = 4, ci = 3, co = 2;
  Tensor x = random_tensor({m, ci}, rng, false);
  Tensor a = random_tensor({m, m}, rng, false);
  Tensor w = random_tensor({ci, co}, rng, false);
  Tensor u = random_tensor({ci, co}, rng, false);
  Tensor y = graph_conv(x, a, w, u);
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < co; ++j) {
      double ax_w = 0.0;
      for (std::int64_t k = 0; k < ci; ++k) {
        double ax = 0.0;
        for (std::int64_t n = 0; n < m; ++n) {
          ax += a.values()[static_cast<std::size_t>(i * m + n)] *
                x.values()[static_cast<std::size_t>(n * ci + k)];
        }
        ax_w += ax * w.values()[static_cast<std::size_t>(k * co + j)];
      }
      double xu = 0.0;
      for (std::int64_t k = 0; k < ci; ++k) {
        xu += x.values()[static_cast<std::size_t>(i * ci + k)] *
              u.values()[static_cast<std::size_t>(k * co + j)];
      }
      const double expect = std::max(0.0, ax_w + xu);
      CHECK(y.values()[static_cast<std::size_t>(i * co + j)] ==
            doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("graph conv is permutation equivariant") {
  Rng rng(3);
  const std::int64_t m = 5, c = 3;
  Tensor x = random_tensor({m, c}, rng, false);
  Tensor a = random_tensor({m, m}, rng, false);
  Tensor w = random_tensor({c, c}, rng, false);
  Tensor u = random_tensor({c, c}, rng, false);
  const std::vector<std::int64_t> perm{3, 0, 4, 1, 2};
  Tensor px = Tensor::zeros({m, c});
  Tensor pa = Tensor::zeros({m, m});
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < c; ++j) {
      px.values()[static_cast<std::size_t>(i * c + j)] =
          x.values()[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)] * c + j)];
    }
    for (std::int64_t j = 0; j < m; ++j) {
      pa.values()[static_cast<std::size_t>(i * m + j)] =
          a.values()[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)] * m +
                                              perm[static_cast<std::size_t>(j)])];
    }
  }
  Tensor y = graph_conv(x, a, w, u);
  Tensor py = graph_conv(px, pa, w, u);
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < c; ++j) {
      CHECK(py.values()[static_cast<std::size_t>(i * c + j)] ==
            doctest::Approx(
                y.values()[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)] * c + j)])
                .epsilon(1e-12));
    }
  }
}

// ---- SsGcb -------------------------------------------------------------------

TEST_CASE("single-scale block reproduces the staged temporal lengths") {
  Rng rng(4);
  const std::int64_t m = 3;
  // Stage-2 analog: stride 2 halves 49 to 25 while doubling channels.
  SsGcb stage2 = SsGcb::make(random_tensor({m, m}, rng, true), 32, 64, 2, 0.0, 0.1, rng);
  Tensor x = random_tensor({2, 49, m, 32}, rng, false);
  ForwardCtx ctx = train_ctx(rng);
  Tensor y = stage2.forward(x, ctx);
  CHECK(y.shape() == Shape{2, 25, m, 64});

  SsGcb stage1 = SsGcb::make(random_tensor({m, m}, rng, true), 9, 8, 1, 0.0, 0.1, rng);
  Tensor x1 = random_tensor({2, 49, m, 9}, rng, false);
  Tensor y1 = stage1.forward(x1, ctx);
  CHECK(y1.shape() == Shape{2, 49, m, 8});

  SsGcb tight = SsGcb::make(random_tensor({m, m}, rng, true), 4, 4, 2, 0.0, 0.1, rng);
  Tensor tiny = random_tensor({1, 1, m, 4}, rng, false);
  CHECK(tight.forward(tiny, ctx).dim(1) == 1);  // (1 + 4 - 5)/2 + 1
}

TEST_CASE("single-scale block is permutation equivariant over nodes") {
  Rng rng(5);
  const std::int64_t m = 5, c = 4;
  SsGcb block = SsGcb::make(random_tensor({m, m}, rng, true), c, c, 1, 0.0, 0.1, rng);
  Tensor x = random_tensor({2, 7, m, c}, rng, false);
  const std::vector<std::int64_t> perm{2, 4, 1, 3, 0};

  Tensor px = Tensor::zeros(x.shape());
  for (std::int64_t b = 0; b < 2; ++b) {
    for (std::int64_t t = 0; t < 7; ++t) {
      for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t ch = 0; ch < c; ++ch) {
          px.values()[static_cast<std::size_t>(((b * 7 + t) * m + i) * c + ch)] =
              x.values()[static_cast<std::size_t>(
                  ((b * 7 + t) * m + perm[static_cast<std::size_t>(i)]) * c + ch)];
        }
      }
    }
  }
  SsGcb conj = block;  // shared weights; adjacency conjugated
  conj.adjacency = Tensor::zeros({m, m});
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < m; ++j) {
      conj.adjacency.values()[static_cast<std::size_t>(i * m + j)] =
          block.adjacency.values()[static_cast<std::size_t>(
              perm[static_cast<std::size_t>(i)] * m + perm[static_cast<std::size_t>(j)])];
    }
  }
  // Train mode: batch stats are permutation invariant over nodes. Copies
  // share no running-state mutation concerns for the value comparison.
  ForwardCtx ctx{true, nullptr};
  Tensor y = block.forward(x, ctx);
  ForwardCtx ctx2{true, nullptr};
  Tensor py = conj.forward(px, ctx2);
  for (std::int64_t b = 0; b < 2; ++b) {
    for (std::int64_t t = 0; t < 7; ++t) {
      for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t ch = 0; ch < c; ++ch) {
          CHECK(py.values()[static_cast<std::size_t>(((b * 7 + t) * m + i) * c + ch)] ==
                doctest::Approx(y.values()[static_cast<std::size_t>(
                                    ((b * 7 + t) * m + perm[static_cast<std::size_t>(i)]) * c +
                                    ch)])
                    .epsilon(1e-9));
        }
      }
    }
  }
}

TEST_CASE("finite differences through a small single-scale block") {
  Rng rng(6);
  const std::int64_t m = 3;
  SsGcb block = SsGcb::make(random_tensor({m, m}, rng, true), 2, 3, 2, 0.0, 0.1, rng);
  Tensor x = random_tensor({2, 6, m, 2}, rng, true);
  Rng wrng(7);
  Tensor lw = rand_const({2, 3, m, 3}, wrng);
  std::vector<Tensor> inputs{x,
                             block.adjacency,
                             block.w_neigh,
                             block.w_self,
                             block.gc_gamma,
                             block.gc_beta,
                             block.t_weight,
                             block.t_bias,
                             block.tc_gamma,
                             block.tc_beta};
  auto rep = gradcheck(inputs, [&] {
    ForwardCtx ctx{true, nullptr};
    return weighted_sum(block.forward(x, ctx), lw);
  });
  INFO(rep.worst);
  CHECK(rep.max_rel_err < 1e-4);
}

// ---- CsFb --------------------------------------------------------------------

namespace {

// Literal, loop-based evaluation of the cross-scale inference path,
// independent of the tensor engine.
struct CsFbOracle {
  static std::vector<double> conv_compress(const std::vector<double>& x, std::int64_t t_len,
                                           std::int64_t m, std::int64_t c, const Tensor& w,
                                           const Tensor& b, std::int64_t stride, std::int64_t pad,
                                           std::int64_t& t_out) {
    const std::int64_t k = w.dim(0);
    t_out = (t_len + 2 * pad - k) / stride + 1;
    std::vector<double> out(static_cast<std::size_t>(t_out * m * c), 0.0);
    for (std::int64_t to = 0; to < t_out; ++to) {
      for (std::int64_t mm = 0; mm < m; ++mm) {
        for (std::int64_t co = 0; co < c; ++co) {
          double acc = b.values()[static_cast<std::size_t>(co)];
          for (std::int64_t dt = 0; dt < k; ++dt) {
            const std::int64_t t = to * stride - pad + dt;
            if (t < 0 || t >= t_len) continue;
            for (std::int64_t ci = 0; ci < c; ++ci) {
              acc += x[static_cast<std::size_t>((t * m + mm) * c + ci)] *
                     w.values()[static_cast<std::size_t>((dt * c + ci) * c + co)];
            }
          }
          out[static_cast<std::size_t>((to * m + mm) * c + co)] = acc;
        }
      }
    }
    return out;
  }

  static std::vector<double> linear(const std::vector<double>& x, std::int64_t rows,
                                    std::int64_t in, const Tensor& w, const Tensor& b) {
    const std::int64_t out_w = w.dim(1);
    std::vector<double> out(static_cast<std::size_t>(rows * out_w), 0.0);
    for (std::int64_t r = 0; r < rows; ++r) {
      for (std::int64_t j = 0; j < out_w; ++j) {
        double acc = b.defined() ? b.values()[static_cast<std::size_t>(j)] : 0.0;
        for (std::int64_t i = 0; i < in; ++i) {
          acc += x[static_cast<std::size_t>(r * in + i)] *
                 w.values()[static_cast<std::size_t>(i * out_w + j)];
        }
        out[static_cast<std::size_t>(r * out_w + j)] = acc;
      }
    }
    return out;
  }

  static void relu_inplace(std::vector<double>& x) {
    for (auto& v : x) v = std::max(0.0, v);
  }

  // Train-mode batch norm over rows (biased variance, eps 1e-5).
  static void bn_inplace(std::vector<double>& x, std::int64_t rows, std::int64_t c,
                         const Tensor& gamma, const Tensor& beta) {
    for (std::int64_t j = 0; j < c; ++j) {
      double mean = 0.0;
      for (std::int64_t r = 0; r < rows; ++r) mean += x[static_cast<std::size_t>(r * c + j)];
      mean /= static_cast<double>(rows);
      double var = 0.0;
      for (std::int64_t r = 0; r < rows; ++r) {
        const double d = x[static_cast<std::size_t>(r * c + j)] - mean;
        var += d * d;
      }
      var /= static_cast<double>(rows);
      const double inv = 1.0 / std::sqrt(var + 1e-5);
      for (std::int64_t r = 0; r < rows; ++r) {
        auto& v = x[static_cast<std::size_t>(r * c + j)];
        v = gamma.values()[static_cast<std::size_t>(j)] * ((v - mean) * inv) +
            beta.values()[static_cast<std::size_t>(j)];
      }
    }
  }

  // Relation term: f on explicit [p_i, p_j - p_i] pairs, summed over j.
  static std::vector<double> relation(const std::vector<double>& p, std::int64_t m,
                                      std::int64_t p_width, Mlp2& f) {
    const std::int64_t h = f.w1.dim(1);
    std::vector<double> pairs(static_cast<std::size_t>(m * m * 2 * p_width));
    for (std::int64_t i = 0; i < m; ++i) {
      for (std::int64_t j = 0; j < m; ++j) {
        double* row = pairs.data() + (i * m + j) * 2 * p_width;
        for (std::int64_t k = 0; k < p_width; ++k) {
          row[k] = p[static_cast<std::size_t>(i * p_width + k)];
          row[p_width + k] = p[static_cast<std::size_t>(j * p_width + k)] -
                             p[static_cast<std::size_t>(i * p_width + k)];
        }
      }
    }
    auto z = linear(pairs, m * m, 2 * p_width, f.w1, f.b1);
    relu_inplace(z);
    z = linear(z, m * m, h, f.w2, f.b2);
    relu_inplace(z);
    bn_inplace(z, m * m, h, f.gamma, f.beta);
    std::vector<double> r(static_cast<std::size_t>(m * h), 0.0);
    for (std::int64_t i = 0; i < m; ++i) {
      for (std::int64_t j = 0; j < m; ++j) {
        for (std::int64_t k = 0; k < h; ++k) {
          r[static_cast<std::size_t>(i * h + k)] +=
              z[static_cast<std::size_t>((i * m + j) * h + k)];
        }
      }
    }
    return r;
  }

  static std::vector<double> embed(const std::vector<double>& x, std::int64_t t_len,
                                   std::int64_t m, std::int64_t c, CsFb::Endpoint& ep,
                                   std::int64_t stride, std::int64_t pad) {
    std::int64_t t_c = 0;
    auto comp = conv_compress(x, t_len, m, c, ep.conv_w, ep.conv_b, stride, pad, t_c);
    const std::int64_t p_width = t_c * c;
    std::vector<double> p(static_cast<std::size_t>(m * p_width));
    for (std::int64_t mm = 0; mm < m; ++mm) {
      for (std::int64_t t = 0; t < t_c; ++t) {
        for (std::int64_t ch = 0; ch < c; ++ch) {
          p[static_cast<std::size_t>(mm * p_width + t * c + ch)] =
              comp[static_cast<std::size_t>((t * m + mm) * c + ch)];
        }
      }
    }
    auto r = relation(p, m, p_width, ep.f);
    auto pp = linear(p, m, p_width, ep.proj_w, ep.proj_b);
    const std::int64_t h = ep.proj_w.dim(1);
    std::vector<double> gin(static_cast<std::size_t>(m * 2 * h));
    for (std::int64_t mm = 0; mm < m; ++mm) {
      for (std::int64_t k = 0; k < h; ++k) {
        gin[static_cast<std::size_t>(mm * 2 * h + k)] = pp[static_cast<std::size_t>(mm * h + k)];
        gin[static_cast<std::size_t>(mm * 2 * h + h + k)] =
            r[static_cast<std::size_t>(mm * h + k)];
      }
    }
    auto g1 = linear(gin, m, 2 * h, ep.g.w1, ep.g.b1);
    relu_inplace(g1);
    auto g2 = linear(g1, m, h, ep.g.w2, ep.g.b2);
    relu_inplace(g2);
    bn_inplace(g2, m, h, ep.g.gamma, ep.g.beta);
    return g2;
  }
};

}  // namespace

TEST_CASE("identical node features give uniform cross-scale rows") {
  Rng rng(8);
  const std::int64_t t = 7, m1 = 4, m2 = 2, c = 3;
  CsFb fb = CsFb::make(c, t, 5, 0.0, 0.1, false, rng);
  Tensor xf = Tensor::zeros({1, t, m1, c});
  Tensor xc = Tensor::zeros({1, t, m2, c});
  for (std::int64_t tt = 0; tt < t; ++tt) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const double vf = rng.uniform(-1.0, 1.0), vc = rng.uniform(-1.0, 1.0);
      for (std::int64_t i = 0; i < m1; ++i) {
        xf.values()[static_cast<std::size_t>((tt * m1 + i) * c + ch)] = vf;
      }
      for (std::int64_t i = 0; i < m2; ++i) {
        xc.values()[static_cast<std::size_t>((tt * m2 + i) * c + ch)] = vc;
      }
    }
  }
  ForwardCtx ctx{true, nullptr};
  auto [a_up, a_down] = fb.infer_graphs(xf, xc, ctx);
  for (double v : a_up.values()) CHECK(v == doctest::Approx(1.0 / m1).epsilon(1e-9));
  for (double v : a_down.values()) CHECK(v == doctest::Approx(1.0 / m2).epsilon(1e-9));
}

TEST_CASE("inferred cross-scale adjacency is row-stochastic") {
  Rng rng(9);
  const std::int64_t t = 9, m1 = 5, m2 = 3, c = 4;
  CsFb fb = CsFb::make(c, t, 6, 0.0, 0.1, false, rng);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor xf = random_tensor({2, t, m1, c}, rng, false);
    Tensor xc = random_tensor({2, t, m2, c}, rng, false);
    ForwardCtx ctx{true, nullptr};
    auto [a_up, a_down] = fb.infer_graphs(xf, xc, ctx);
    CHECK(a_up.shape() == Shape{2, m2, m1});
    for (std::int64_t b = 0; b < 2; ++b) {
      for (std::int64_t i = 0; i < m2; ++i) {
        double sum = 0.0;
        for (std::int64_t j = 0; j < m1; ++j) {
          const double v = a_up.values()[static_cast<std::size_t>((b * m2 + i) * m1 + j)];
          CHECK(v >= 0.0);
          CHECK(v <= 1.0);
          sum += v;
        }
        CHECK(std::abs(sum - 1.0) < 1e-9);
      }
      for (std::int64_t i = 0; i < m1; ++i) {
        double sum = 0.0;
        for (std::int64_t j = 0; j < m2; ++j) {
          sum += a_down.values()[static_cast<std::size_t>((b * m1 + i) * m2 + j)];
        }
        CHECK(std::abs(sum - 1.0) < 1e-9);
      }
    }
  }
}

TEST_CASE("cross-scale inference matches the loop oracle on a 3-joint/2-part case") {
  Rng rng(10);
  const std::int64_t t = 6, m1 = 3, m2 = 2, c = 2, hidden = 4;
  CsFb fb = CsFb::make(c, t, hidden, 0.0, 0.1, false, rng);
  Tensor xf = random_tensor({1, t, m1, c}, rng, false);
  Tensor xc = random_tensor({1, t, m2, c}, rng, false);
  ForwardCtx ctx{true, nullptr};
  Tensor a_up = fb.infer_graphs(xf, xc, ctx).first;

  auto hf = CsFbOracle::embed(xf.values(), t, m1, c, fb.fine, fb.stride, fb.pad);
  auto hc = CsFbOracle::embed(xc.values(), t, m2, c, fb.coarse, fb.stride, fb.pad);
  for (std::int64_t i = 0; i < m2; ++i) {
    std::vector<double> scores(static_cast<std::size_t>(m1));
    double mx = -1e300;
    for (std::int64_t j = 0; j < m1; ++j) {
      double dot = 0.0;
      for (std::int64_t k = 0; k < hidden; ++k) {
        dot += hc[static_cast<std::size_t>(i * hidden + k)] *
               hf[static_cast<std::size_t>(j * hidden + k)];
      }
      scores[static_cast<std::size_t>(j)] = dot;
      mx = std::max(mx, dot);
    }
    double denom = 0.0;
    for (auto& s : scores) {
      s = std::exp(s - mx);
      denom += s;
    }
    for (std::int64_t j = 0; j < m1; ++j) {
      const double expect = scores[static_cast<std::size_t>(j)] / denom;
      const double got = a_up.values()[static_cast<std::size_t>(i * m1 + j)];
      CHECK(std::abs(got - expect) / std::max(1.0, std::abs(expect)) < 1e-9);
    }
  }
}

TEST_CASE("temporal length mismatch is a contract error") {
  Rng rng(11);
  CsFb fb = CsFb::make(2, 6, 4, 0.0, 0.1, false, rng);
  Tensor xf = random_tensor({1, 6, 3, 2}, rng, false);
  Tensor xc = random_tensor({1, 5, 2, 2}, rng, false);
  ForwardCtx ctx{false, nullptr};
  CHECK_THROWS_AS(fb.infer_graphs(xf, xc, ctx), ContractError);
}

TEST_CASE("single-direction inference surface returns the fine->coarse graph") {
  Rng rng(12);
  CsFb fb = CsFb::make(2, 6, 4, 0.0, 0.1, false, rng);
  Tensor xf = random_tensor({6, 3, 2}, rng, false);
  Tensor xc = random_tensor({6, 2, 2}, rng, false);
  ForwardCtx ctx{true, nullptr};
  Tensor a = infer_cross_graph(xf, xc, fb, ctx);
  CHECK(a.shape() == Shape{2, 3});
  for (std::int64_t i = 0; i < 2; ++i) {
    double sum = 0.0;
    for (std::int64_t j = 0; j < 3; ++j) sum += a.values()[static_cast<std::size_t>(i * 3 + j)];
    CHECK(std::abs(sum - 1.0) < 1e-9);
  }
}

TEST_CASE("fusion with zero weight is a pure residual") {
  Rng rng(13);
  Tensor xf = random_tensor({4, 3}, rng, false);
  Tensor xc = random_tensor({2, 3}, rng, false);
  Tensor a = random_tensor({2, 4}, rng, false, 0.0, 1.0);
  Tensor w = Tensor::zeros({3, 3});
  Tensor y = fuse_cross_scale(xf, xc, a, w);
  for (std::int64_t i = 0; i < xc.numel(); ++i) {
    CHECK(y.values()[static_cast<std::size_t>(i)] == xc.values()[static_cast<std::size_t>(i)]);
  }
}

TEST_CASE("uniform fusion adds the mean fine feature") {
  Rng rng(14);
  const std::int64_t m1 = 4, m2 = 2, c = 3;
  Tensor xf = random_tensor({m1, c}, rng, false);
  Tensor xc = random_tensor({m2, c}, rng, false);
  Tensor a = Tensor::full({m2, m1}, 1.0 / static_cast<double>(m1));
  Tensor w = Tensor::identity(c);
  Tensor y = fuse_cross_scale(xf, xc, a, w);
  for (std::int64_t i = 0; i < m2; ++i) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      double mean = 0.0;
      for (std::int64_t j = 0; j < m1; ++j) {
        mean += xf.values()[static_cast<std::size_t>(j * c + ch)];
      }
      mean /= static_cast<double>(m1);
      CHECK(y.values()[static_cast<std::size_t>(i * c + ch)] ==
            doctest::Approx(mean + xc.values()[static_cast<std::size_t>(i * c + ch)])
                .epsilon(1e-12));
    }
  }
}

TEST_CASE("fusion matches the matmul oracle") {
  Rng rng(15);
  const std::int64_t m1 = 5, m2 = 3, c = 4;
  Tensor xf = random_tensor({m1, c}, rng, false);
  Tensor xc = random_tensor({m2, c}, rng, false);
  Tensor a = random_tensor({m2, m1}, rng, false, 0.0, 1.0);
  Tensor w = random_tensor({c, c}, rng, false);
  Tensor y = fuse_cross_scale(xf, xc, a, w);
  for (std::int64_t i = 0; i < m2; ++i) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      double acc = xc.values()[static_cast<std::size_t>(i * c + ch)];
      for (std::int64_t j = 0; j < m1; ++j) {
        for (std::int64_t k = 0; k < c; ++k) {
          acc += a.values()[static_cast<std::size_t>(i * m1 + j)] *
                 xf.values()[static_cast<std::size_t>(j * c + k)] *
                 w.values()[static_cast<std::size_t>(k * c + ch)];
        }
      }
      CHECK(y.values()[static_cast<std::size_t>(i * c + ch)] ==
            doctest::Approx(acc).epsilon(1e-11));
    }
  }
}

TEST_CASE("finite differences through the full cross-scale path") {
  Rng rng(16);
  const std::int64_t t = 7, m1 = 3, m2 = 2, c = 2, hidden = 3;
  CsFb fb = CsFb::make(c, t, hidden, 0.0, 0.1, false, rng);
  Tensor xf = random_tensor({1, t, m1, c}, rng, true);
  Tensor xc = random_tensor({1, t, m2, c}, rng, true);
  Rng wrng(17);
  Tensor w_up = rand_const({1, m2, m1}, wrng);
  Tensor w_down = rand_const({1, m1, m2}, wrng);

  std::vector<Tensor> inputs{xf, xc};
  fb.visit(
      "fb", [&](const std::string&, Tensor& p) { inputs.push_back(p); },
      [](const std::string&, std::vector<double>&) {});
  auto rep = gradcheck(inputs, [&] {
    ForwardCtx ctx{true, nullptr};
    auto [a_up, a_down] = fb.infer_graphs(xf, xc, ctx);
    return add(weighted_sum(a_up, w_up), weighted_sum(a_down, w_down));
  });
  INFO(rep.worst);
  CHECK(rep.max_rel_err < 1e-4);
}

// ---- GGru --------------------------------------------------------------------

TEST_CASE("zeroed gates halve the hidden state") {
  Rng rng(18);
  const std::int64_t m = 3, h = 4, d = 2;
  GGru cell = GGru::make(Tensor::zeros({m, m}, true), d, h, false, rng);
  for (auto* t : {&cell.w_graph, &cell.r_in_w, &cell.r_in_b, &cell.r_hid_w, &cell.r_hid_b,
                  &cell.u_in_w, &cell.u_in_b, &cell.u_hid_w, &cell.u_hid_b, &cell.c_in_w,
                  &cell.c_in_b, &cell.c_hid_w, &cell.c_hid_b}) {
    std::fill(t->values().begin(), t->values().end(), 0.0);
  }
  Tensor input = random_tensor({m, d}, rng, false);
  Tensor hidden = random_tensor({m, h}, rng, false);
  Tensor next = g_gru_step(input, hidden, cell);
  for (std::int64_t i = 0; i < hidden.numel(); ++i) {
    CHECK(next.values()[static_cast<std::size_t>(i)] ==
          doctest::Approx(0.5 * hidden.values()[static_cast<std::size_t>(i)]).epsilon(1e-12));
  }
}

TEST_CASE("gated update matches the loop oracle and stays convex") {
  Rng rng(19);
  const std::int64_t m = 2, h = 3, d = 2;
  GGru cell = GGru::make(random_tensor({m, m}, rng, true), d, h, false, rng);
  Tensor input = random_tensor({m, d}, rng, false);
  Tensor hidden = random_tensor({m, h}, rng, false);
  Tensor next = g_gru_step(input, hidden, cell);

  auto lin = [&](const Tensor& w, const Tensor& b, const std::vector<double>& x,
                 std::int64_t rows, std::int64_t in) {
    const std::int64_t out_w = w.dim(1);
    std::vector<double> out(static_cast<std::size_t>(rows * out_w));
    for (std::int64_t r = 0; r < rows; ++r) {
      for (std::int64_t j = 0; j < out_w; ++j) {
        double acc = b.values()[static_cast<std::size_t>(j)];
        for (std::int64_t i = 0; i < in; ++i) {
          acc += x[static_cast<std::size_t>(r * in + i)] *
                 w.values()[static_cast<std::size_t>(i * out_w + j)];
        }
        out[static_cast<std::size_t>(r * out_w + j)] = acc;
      }
    }
    return out;
  };
  std::vector<double> ah(static_cast<std::size_t>(m * h), 0.0);
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < h; ++j) {
      for (std::int64_t k = 0; k < m; ++k) {
        ah[static_cast<std::size_t>(i * h + j)] +=
            cell.adjacency.values()[static_cast<std::size_t>(i * m + k)] *
            hidden.values()[static_cast<std::size_t>(k * h + j)];
      }
    }
  }
  std::vector<double> g(static_cast<std::size_t>(m * h), 0.0);
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < h; ++j) {
      for (std::int64_t k = 0; k < h; ++k) {
        g[static_cast<std::size_t>(i * h + j)] +=
            ah[static_cast<std::size_t>(i * h + k)] *
            cell.w_graph.values()[static_cast<std::size_t>(k * h + j)];
      }
    }
  }
  const auto& iv = input.values();
  auto r_pre_in = lin(cell.r_in_w, cell.r_in_b, iv, m, d);
  auto r_pre_hid = lin(cell.r_hid_w, cell.r_hid_b, g, m, h);
  auto u_pre_in = lin(cell.u_in_w, cell.u_in_b, iv, m, d);
  auto u_pre_hid = lin(cell.u_hid_w, cell.u_hid_b, g, m, h);
  auto c_pre_in = lin(cell.c_in_w, cell.c_in_b, iv, m, d);
  auto c_pre_hid = lin(cell.c_hid_w, cell.c_hid_b, g, m, h);
  for (std::int64_t i = 0; i < m * h; ++i) {
    const auto iu = static_cast<std::size_t>(i);
    const double r = 1.0 / (1.0 + std::exp(-(r_pre_in[iu] + r_pre_hid[iu])));
    const double u = 1.0 / (1.0 + std::exp(-(u_pre_in[iu] + u_pre_hid[iu])));
    const double cgate = std::tanh(c_pre_in[iu] + r * c_pre_hid[iu]);
    const double hv = hidden.values()[iu];
    const double expect = u * hv + (1.0 - u) * cgate;
    CHECK(next.values()[iu] == doctest::Approx(expect).epsilon(1e-11));
    CHECK(next.values()[iu] >= std::min(hv, cgate) - 1e-12);
    CHECK(next.values()[iu] <= std::max(hv, cgate) + 1e-12);
  }
}

TEST_CASE("plain mode drops the graph preconditioning") {
  Rng rng(20);
  const std::int64_t m = 3, h = 2, d = 2;
  GGru cell = GGru::make(Tensor(), d, h, true, rng);
  Tensor input = random_tensor({m, d}, rng, false);
  Tensor hidden = random_tensor({m, h}, rng, false);
  Tensor next = g_gru_step(input, hidden, cell);
  CHECK(next.shape() == Shape{m, h});
  bool saw_adjacency = false;
  cell.visit(
      "cell",
      [&](const std::string& name, Tensor&) {
        if (name.find("adjacency") != std::string::npos) saw_adjacency = true;
      },
      [](const std::string&, std::vector<double>&) {});
  CHECK(!saw_adjacency);
}

TEST_CASE("finite differences through the gated cell") {
  Rng rng(21);
  const std::int64_t m = 2, h = 3, d = 2;
  GGru cell = GGru::make(random_tensor({m, m}, rng, true), d, h, false, rng);
  Tensor input = random_tensor({m, d}, rng, true);
  Tensor hidden = random_tensor({m, h}, rng, true);
  Rng wrng(22);
  Tensor lw = rand_const({m, h}, wrng);
  std::vector<Tensor> inputs{input, hidden};
  cell.visit(
      "cell", [&](const std::string&, Tensor& p) { inputs.push_back(p); },
      [](const std::string&, std::vector<double>&) {});
  auto rep = gradcheck(inputs, [&] { return weighted_sum(cell.step(input, hidden), lw); });
  INFO(rep.worst);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("every layer parameter participates in gradient flow") {
  Rng rng(23);
  auto check_all_nonzero = [](auto& layer, const char* label) {
    layer.visit(
        label,
        [&](const std::string& name, Tensor& p) {
          bool nonzero = false;
          if (p.has_grad()) {
            for (double v : p.grad().values()) {
              if (v != 0.0) nonzero = true;
            }
          }
          INFO(name);
          CHECK(nonzero);
        },
        [](const std::string&, std::vector<double>&) {});
  };
  {
    SsGcb block = SsGcb::make(random_tensor({3, 3}, rng, true), 2, 3, 1, 0.0, 0.1, rng);
    Tensor x = random_tensor({2, 6, 3, 2}, rng, false);
    Tape::current().clear();
    ForwardCtx ctx{true, nullptr};
    backward(sum_all(block.forward(x, ctx)));
    check_all_nonzero(block, "gcb");
  }
  {
    CsFb fb = CsFb::make(2, 6, 3, 0.0, 0.1, false, rng);
    Tensor xf = random_tensor({1, 6, 3, 2}, rng, false);
    Tensor xc = random_tensor({1, 6, 2, 2}, rng, false);
    Tape::current().clear();
    ForwardCtx ctx{true, nullptr};
    auto [a_up, a_down] = fb.infer_graphs(xf, xc, ctx);
    Tensor up = fuse_cross_scale(reshape(xf, {6, 3, 2}), reshape(xc, {6, 2, 2}),
                                 reshape(a_up, {2, 3}), fb.w_fuse_up);
    Tensor down = fuse_cross_scale(reshape(xc, {6, 2, 2}), reshape(xf, {6, 3, 2}),
                                   reshape(a_down, {3, 2}), fb.w_fuse_down);
    backward(add(sum_all(up), sum_all(down)));
    check_all_nonzero(fb, "fb");
  }
  {
    GGru cell = GGru::make(random_tensor({2, 2}, rng, true), 2, 3, false, rng);
    Tensor input = random_tensor({2, 2}, rng, false);
    Tensor hidden = random_tensor({2, 3}, rng, false);
    Tape::current().clear();
    backward(sum_all(cell.step(input, hidden)));
    check_all_nonzero(cell, "cell");
  }
}
