#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dmgnn/rng.hpp"
#include "dmgnn/tensor.hpp"

namespace dmgnn {

// Mode flags plus the dropout stream, threaded through every forward pass.
struct ForwardCtx {
  bool training = false;
  Rng* rng = nullptr;
};

using ParamVisitor = std::function<void(const std::string&, Tensor&)>;
using BufferVisitor = std::function<void(const std::string&, std::vector<double>&)>;

// linear -> relu -> dropout -> linear -> relu -> bn
struct Mlp2 {
  Tensor w1, b1, w2, b2, gamma, beta;
  BatchNormState bn;
  double dropout_p = 0.1;

  static Mlp2 make(std::int64_t in, std::int64_t hidden, std::int64_t out, double dropout,
                   double bn_momentum, Rng& rng);
  Tensor forward(const Tensor& x, ForwardCtx& ctx);
  // Everything after the first linear; lets callers supply the first-layer
  // pre-activation through an equivalent factored computation.
  Tensor tail(const Tensor& pre, ForwardCtx& ctx);
  void visit(const std::string& prefix, const ParamVisitor& pv, const BufferVisitor& bv);
};

// Single-scale block: spatial graph convolution (trainable adjacency,
// neighbor + self weights), then a per-node temporal convolution, each with
// batch norm; dropout before the final activation.
struct SsGcb {
  Tensor adjacency;            // A_s
  Tensor w_neigh;              // W_s
  Tensor w_self;               // U_s
  Tensor gc_gamma, gc_beta;
  BatchNormState gc_bn;
  Tensor t_weight;             // [k, Cout, Cout]
  Tensor t_bias;
  Tensor tc_gamma, tc_beta;
  BatchNormState tc_bn;
  std::int64_t kernel = 5, stride = 1, pad = 2;
  double dropout_p = 0.1;

  static SsGcb make(Tensor adjacency, std::int64_t c_in, std::int64_t c_out, std::int64_t stride,
                    double dropout, double bn_momentum, Rng& rng);
  // x [B, T, M, Cin] -> [B, T', M, Cout] with T' = floor((T+2*pad-k)/stride)+1.
  Tensor forward(const Tensor& x, ForwardCtx& ctx);
  std::int64_t out_len(std::int64_t t_in) const { return (t_in + 2 * pad - kernel) / stride + 1; }
  void visit(const std::string& prefix, const ParamVisitor& pv, const BufferVisitor& bv);
};

// Spatial graph convolution alone: ReLU(A X W + X U).
Tensor graph_conv(const Tensor& x, const Tensor& adjacency, const Tensor& w_neigh,
                  const Tensor& w_self);
Tensor graph_conv(const Tensor& x, const SsGcb& layer);

// Cross-scale fusion between one fine and one coarse scale. Embeddings
// (temporal compressor, projection, relation MLP f, embedding MLP g) are
// shared by both fusion directions; each direction has its own fusion
// weight and softmax orientation over the shared score matrix.
struct CsFb {
  struct Endpoint {
    Tensor conv_w, conv_b;  // temporal compressor [k, C, C]
    Tensor proj_w, proj_b;  // P -> hidden
    Mlp2 f;                 // 2P -> hidden -> hidden, summed over partners
    Mlp2 g;                 // [proj(p), r] (2*hidden) -> hidden -> hidden
    void visit(const std::string& prefix, const ParamVisitor& pv, const BufferVisitor& bv);
  };
  Endpoint fine, coarse;
  Tensor w_fuse_up;    // fine -> coarse
  Tensor w_fuse_down;  // coarse -> fine
  std::int64_t kernel = 5, stride = 2, pad = 2;
  bool softmax_over_coarse = false;  // flips the normalization orientation

  static CsFb make(std::int64_t channels, std::int64_t t_in, std::int64_t hidden, double dropout,
                   double bn_momentum, bool softmax_over_coarse, Rng& rng);
  std::int64_t compressed_len(std::int64_t t_in) const { return (t_in + 2 * pad - kernel) / stride + 1; }

  // x_fine [B, T, M1, C], x_coarse [B, T, M2, C] ->
  // A_up [B, M2, M1] (rows sum to 1 in the default orientation) and
  // A_down [B, M1, M2].
  std::pair<Tensor, Tensor> infer_graphs(const Tensor& x_fine, const Tensor& x_coarse,
                                         ForwardCtx& ctx);
  void visit(const std::string& prefix, const ParamVisitor& pv, const BufferVisitor& bv);

 private:
  // Per-node descriptor p and its g-embedding for one endpoint.
  Tensor embed(const Tensor& x, Endpoint& ep, ForwardCtx& ctx);
};

// Spec-level single-direction surface: the fine->coarse bipartite adjacency
// for inputs without a batch axis ([T, M, C]).
Tensor infer_cross_graph(const Tensor& x_fine, const Tensor& x_coarse, CsFb& layer,
                         ForwardCtx& ctx);
// One fusion application A X_fine W + X_coarse; accepts per-timestamp rank-2
// features or batched rank-4 features with A [B, M2, M1].
Tensor fuse_cross_scale(const Tensor& x_fine, const Tensor& x_coarse, const Tensor& cross_adj,
                        const Tensor& w_fuse);

// Gated recurrent cell whose hidden path is preconditioned by a trainable
// graph convolution A_H * H * W_H; `plain` swaps A_H for the identity.
struct GGru {
  Tensor adjacency;  // A_H
  Tensor w_graph;    // W_H
  Tensor r_in_w, r_in_b, r_hid_w, r_hid_b;
  Tensor u_in_w, u_in_b, u_hid_w, u_hid_b;
  Tensor c_in_w, c_in_b, c_hid_w, c_hid_b;
  bool plain = false;

  static GGru make(Tensor adjacency, std::int64_t input_dim, std::int64_t hidden, bool plain,
                   Rng& rng);
  // input [.., M, d], hidden [.., M, h] -> new hidden [.., M, h].
  Tensor step(const Tensor& input, const Tensor& hidden) const;
  void visit(const std::string& prefix, const ParamVisitor& pv, const BufferVisitor& bv);
};

Tensor g_gru_step(const Tensor& input, const Tensor& hidden, const GGru& cell);

}  // namespace dmgnn
