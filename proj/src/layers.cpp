#include "dmgnn/layers.hpp"

namespace dmgnn {

namespace {

Tensor zero_bias(std::int64_t n) { return Tensor::zeros({n}, /*requires_grad=*/true); }

Rng& ctx_rng(ForwardCtx& ctx) {
  static Rng fallback(0);
  return ctx.rng ? *ctx.rng : fallback;
}

}  // namespace

// ---- Mlp2 -----------------------------------------------------------------

Mlp2 Mlp2::make(std::int64_t in, std::int64_t hidden, std::int64_t out, double dropout,
                double bn_momentum, Rng& rng) {
  Mlp2 m;
  m.w1 = Tensor::uniform_init({in, hidden}, in, rng);
  m.b1 = zero_bias(hidden);
  m.w2 = Tensor::uniform_init({hidden, out}, hidden, rng);
  m.b2 = zero_bias(out);
  m.gamma = Tensor::full({out}, 1.0, true);
  m.beta = zero_bias(out);
  m.bn = BatchNormState(out);
  m.bn.momentum = bn_momentum;
  m.dropout_p = dropout;
  return m;
}

Tensor Mlp2::tail(const Tensor& pre, ForwardCtx& ctx) {
  Tensor h = relu(pre);
  h = dropout(h, dropout_p, ctx_rng(ctx), ctx.training);
  h = linear(h, w2, b2);
  h = relu(h);
  return batch_norm(h, gamma, beta, bn, ctx.training);
}

Tensor Mlp2::forward(const Tensor& x, ForwardCtx& ctx) { return tail(linear(x, w1, b1), ctx); }

void Mlp2::visit(const std::string& prefix, const ParamVisitor& pv, const BufferVisitor& bv) {
  pv(prefix + ".w1", w1);
  pv(prefix + ".b1", b1);
  pv(prefix + ".w2", w2);
  pv(prefix + ".b2", b2);
  pv(prefix + ".gamma", gamma);
  pv(prefix + ".beta", beta);
  bv(prefix + ".running_mean", bn.running_mean);
  bv(prefix + ".running_var", bn.running_var);
}

// ---- SsGcb ------------------------------------------------------------------

SsGcb SsGcb::make(Tensor adjacency, std::int64_t c_in, std::int64_t c_out, std::int64_t stride,
                  double dropout, double bn_momentum, Rng& rng) {
  SsGcb l;
  l.adjacency = std::move(adjacency);
  l.w_neigh = Tensor::uniform_init({c_in, c_out}, c_in, rng);
  l.w_self = Tensor::uniform_init({c_in, c_out}, c_in, rng);
  l.gc_gamma = Tensor::full({c_out}, 1.0, true);
  l.gc_beta = zero_bias(c_out);
  l.gc_bn = BatchNormState(c_out);
  l.gc_bn.momentum = bn_momentum;
  l.t_weight = Tensor::uniform_init({l.kernel, c_out, c_out}, l.kernel * c_out, rng);
  l.t_bias = zero_bias(c_out);
  l.tc_gamma = Tensor::full({c_out}, 1.0, true);
  l.tc_beta = zero_bias(c_out);
  l.tc_bn = BatchNormState(c_out);
  l.tc_bn.momentum = bn_momentum;
  l.stride = stride;
  l.dropout_p = dropout;
  return l;
}

Tensor SsGcb::forward(const Tensor& x, ForwardCtx& ctx) {
  Tensor s = add(matmul(matmul(adjacency, x), w_neigh), matmul(x, w_self));
  s = batch_norm(s, gc_gamma, gc_beta, gc_bn, ctx.training);
  s = relu(s);
  Tensor t = conv1d_time(s, t_weight, t_bias, stride, pad);
  t = batch_norm(t, tc_gamma, tc_beta, tc_bn, ctx.training);
  t = dropout(t, dropout_p, ctx_rng(ctx), ctx.training);
  return relu(t);
}

void SsGcb::visit(const std::string& prefix, const ParamVisitor& pv, const BufferVisitor& bv) {
  pv(prefix + ".adjacency", adjacency);
  pv(prefix + ".w_neigh", w_neigh);
  pv(prefix + ".w_self", w_self);
  pv(prefix + ".gc_gamma", gc_gamma);
  pv(prefix + ".gc_beta", gc_beta);
  pv(prefix + ".t_weight", t_weight);
  pv(prefix + ".t_bias", t_bias);
  pv(prefix + ".tc_gamma", tc_gamma);
  pv(prefix + ".tc_beta", tc_beta);
  bv(prefix + ".gc_running_mean", gc_bn.running_mean);
  bv(prefix + ".gc_running_var", gc_bn.running_var);
  bv(prefix + ".tc_running_mean", tc_bn.running_mean);
  bv(prefix + ".tc_running_var", tc_bn.running_var);
}

Tensor graph_conv(const Tensor& x, const Tensor& adjacency, const Tensor& w_neigh,
                  const Tensor& w_self) {
  return relu(add(matmul(matmul(adjacency, x), w_neigh), matmul(x, w_self)));
}

Tensor graph_conv(const Tensor& x, const SsGcb& layer) {
  return graph_conv(x, layer.adjacency, layer.w_neigh, layer.w_self);
}

// ---- CsFb -------------------------------------------------------------------

CsFb CsFb::make(std::int64_t channels, std::int64_t t_in, std::int64_t hidden, double dropout,
                double bn_momentum, bool softmax_over_coarse, Rng& rng) {
  CsFb l;
  l.softmax_over_coarse = softmax_over_coarse;
  const std::int64_t t_c = l.compressed_len(t_in);
  if (t_c < 1) throw ConfigError("cross-scale fusion: compressed length < 1");
  const std::int64_t p_width = t_c * channels;
  auto make_ep = [&](Endpoint& ep) {
    ep.conv_w = Tensor::uniform_init({l.kernel, channels, channels}, l.kernel * channels, rng);
    ep.conv_b = zero_bias(channels);
    ep.proj_w = Tensor::uniform_init({p_width, hidden}, p_width, rng);
    ep.proj_b = zero_bias(hidden);
    ep.f = Mlp2::make(2 * p_width, hidden, hidden, dropout, bn_momentum, rng);
    ep.g = Mlp2::make(2 * hidden, hidden, hidden, dropout, bn_momentum, rng);
  };
  make_ep(l.fine);
  make_ep(l.coarse);
  l.w_fuse_up = Tensor::uniform_init({channels, channels}, channels, rng);
  l.w_fuse_down = Tensor::uniform_init({channels, channels}, channels, rng);
  return l;
}

Tensor CsFb::embed(const Tensor& x, Endpoint& ep, ForwardCtx& ctx) {
  const std::int64_t b = x.dim(0), m = x.dim(2), c = x.dim(3);
  Tensor comp = conv1d_time(x, ep.conv_w, ep.conv_b, stride, pad);  // [B, Tc, M, C]
  const std::int64_t t_c = comp.dim(1);
  Tensor p = reshape(transpose(comp, 1, 2), {b, m, t_c * c});  // [B, M, P]
  const std::int64_t p_width = t_c * c;
  if (ep.f.w1.dim(0) != 2 * p_width) {
    throw ShapeError("cross-scale fusion: descriptor width " + std::to_string(p_width) +
                     " does not match relation MLP input " + std::to_string(ep.f.w1.dim(0) / 2));
  }
  // First f layer on pairs [p_i, p_j - p_i], factored exactly:
  // pre_ij = p_i (Wa - Wb) + p_j Wb + b1 with W1 = [Wa; Wb].
  Tensor wa = slice_axis(ep.f.w1, 0, 0, p_width);
  Tensor wb = slice_axis(ep.f.w1, 0, p_width, p_width);
  Tensor v = matmul(p, wb);
  Tensor s = sub(matmul(p, wa), v);
  Tensor pre = add_bias(cross_add(s, v), ep.f.b1);          // [B, M*M, h]
  Tensor z = ep.f.tail(pre, ctx);                           // [B, M*M, h]
  Tensor r = sum_axis(reshape(z, {b, m, m, z.dim(-1)}), 2); // sum over partners j
  Tensor pp = linear(p, ep.proj_w, ep.proj_b);              // [B, M, h]
  return ep.g.forward(concat({pp, r}, -1), ctx);            // [B, M, h]
}

std::pair<Tensor, Tensor> CsFb::infer_graphs(const Tensor& x_fine, const Tensor& x_coarse,
                                             ForwardCtx& ctx) {
  if (x_fine.rank() != 4 || x_coarse.rank() != 4) {
    throw ShapeError("cross-scale fusion: expected [B, T, M, C] inputs, got " +
                     shape_str(x_fine.shape()) + " and " + shape_str(x_coarse.shape()));
  }
  if (x_fine.dim(1) != x_coarse.dim(1)) {
    throw ContractError("cross-scale fusion: temporal lengths differ (" +
                        std::to_string(x_fine.dim(1)) + " vs " + std::to_string(x_coarse.dim(1)) +
                        ")");
  }
  Tensor h_fine = embed(x_fine, fine, ctx);      // [B, M1, h]
  Tensor h_coarse = embed(x_coarse, coarse, ctx);  // [B, M2, h]
  Tensor scores = matmul(h_coarse, transpose(h_fine, 1, 2));  // [B, M2, M1]
  Tensor a_up, a_down;
  if (!softmax_over_coarse) {
    a_up = softmax_lastdim(scores);
    a_down = softmax_lastdim(transpose(scores, 1, 2));
  } else {
    a_up = transpose(softmax_lastdim(transpose(scores, 1, 2)), 1, 2);
    a_down = transpose(softmax_lastdim(scores), 1, 2);
  }
  return {a_up, a_down};
}

void CsFb::Endpoint::visit(const std::string& prefix, const ParamVisitor& pv,
                           const BufferVisitor& bv) {
  pv(prefix + ".conv_w", conv_w);
  pv(prefix + ".conv_b", conv_b);
  pv(prefix + ".proj_w", proj_w);
  pv(prefix + ".proj_b", proj_b);
  f.visit(prefix + ".f", pv, bv);
  g.visit(prefix + ".g", pv, bv);
}

void CsFb::visit(const std::string& prefix, const ParamVisitor& pv, const BufferVisitor& bv) {
  fine.visit(prefix + ".fine", pv, bv);
  coarse.visit(prefix + ".coarse", pv, bv);
  pv(prefix + ".w_fuse_up", w_fuse_up);
  pv(prefix + ".w_fuse_down", w_fuse_down);
}

Tensor infer_cross_graph(const Tensor& x_fine, const Tensor& x_coarse, CsFb& layer,
                         ForwardCtx& ctx) {
  if (x_fine.rank() != 3 || x_coarse.rank() != 3) {
    throw ShapeError("infer_cross_graph: expected [T, M, C] inputs, got " +
                     shape_str(x_fine.shape()) + " and " + shape_str(x_coarse.shape()));
  }
  Tensor xf = reshape(x_fine, {1, x_fine.dim(0), x_fine.dim(1), x_fine.dim(2)});
  Tensor xc = reshape(x_coarse, {1, x_coarse.dim(0), x_coarse.dim(1), x_coarse.dim(2)});
  Tensor a = layer.infer_graphs(xf, xc, ctx).first;  // [1, M2, M1]
  return reshape(a, {a.dim(1), a.dim(2)});
}

Tensor fuse_cross_scale(const Tensor& x_fine, const Tensor& x_coarse, const Tensor& cross_adj,
                        const Tensor& w_fuse) {
  Tensor a = cross_adj;
  if (x_fine.rank() == 4) {
    if (a.rank() != 3) {
      throw ShapeError("fuse_cross_scale: batched features need [B, M2, M1] adjacency, got " +
                       shape_str(a.shape()));
    }
    a = reshape(a, {a.dim(0), 1, a.dim(1), a.dim(2)});  // broadcast over time
  }
  Tensor moved = matmul(matmul(a, x_fine), w_fuse);
  return add(moved, x_coarse);
}

// ---- GGru -------------------------------------------------------------------

GGru GGru::make(Tensor adjacency, std::int64_t input_dim, std::int64_t hidden, bool plain,
                Rng& rng) {
  GGru g;
  g.plain = plain;
  g.adjacency = std::move(adjacency);
  g.w_graph = Tensor::uniform_init({hidden, hidden}, hidden, rng);
  auto lin = [&](Tensor& w, Tensor& bias, std::int64_t in) {
    w = Tensor::uniform_init({in, hidden}, in, rng);
    bias = zero_bias(hidden);
  };
  lin(g.r_in_w, g.r_in_b, input_dim);
  lin(g.r_hid_w, g.r_hid_b, hidden);
  lin(g.u_in_w, g.u_in_b, input_dim);
  lin(g.u_hid_w, g.u_hid_b, hidden);
  lin(g.c_in_w, g.c_in_b, input_dim);
  lin(g.c_hid_w, g.c_hid_b, hidden);
  return g;
}

Tensor GGru::step(const Tensor& input, const Tensor& hidden) const {
  Tensor graph_h = plain ? hidden : matmul(adjacency, hidden);
  Tensor g = matmul(graph_h, w_graph);  // A_H H W_H
  Tensor r = sigmoid(add(linear(input, r_in_w, r_in_b), linear(g, r_hid_w, r_hid_b)));
  Tensor u = sigmoid(add(linear(input, u_in_w, u_in_b), linear(g, u_hid_w, u_hid_b)));
  Tensor c = tanh_op(add(linear(input, c_in_w, c_in_b), mul(r, linear(g, c_hid_w, c_hid_b))));
  return add(mul(u, hidden), mul(affine(u, -1.0, 1.0), c));
}

void GGru::visit(const std::string& prefix, const ParamVisitor& pv, const BufferVisitor&) {
  pv(prefix + ".adjacency", adjacency);
  pv(prefix + ".w_graph", w_graph);
  pv(prefix + ".r_in_w", r_in_w);
  pv(prefix + ".r_in_b", r_in_b);
  pv(prefix + ".r_hid_w", r_hid_w);
  pv(prefix + ".r_hid_b", r_hid_b);
  pv(prefix + ".u_in_w", u_in_w);
  pv(prefix + ".u_in_b", u_in_b);
  pv(prefix + ".u_hid_w", u_hid_w);
  pv(prefix + ".u_hid_b", u_hid_b);
  pv(prefix + ".c_in_w", c_in_w);
  pv(prefix + ".c_in_b", c_in_b);
  pv(prefix + ".c_hid_w", c_hid_w);
  pv(prefix + ".c_hid_b", c_hid_b);
}

Tensor g_gru_step(const Tensor& input, const Tensor& hidden, const GGru& cell) {
  return cell.step(input, hidden);
}

}  // namespace dmgnn
