#include "dmgnn/model.hpp"

#include <cmath>

namespace dmgnn {

Model::Model(const ModelConfig& cfg)
    : Model(cfg, cfg.scale_library_path.empty() ? default_scale_library()
                                                : load_scale_library(cfg.scale_library_path)) {}

Model::Model(const ModelConfig& cfg, const ScaleLibrary& lib) : cfg_(cfg), rng_(cfg.seed) {
  cfg_.validate();
  joints_ = lib.joints;

  for (int sid : cfg_.scales) {
    const ScaleSpec& spec = lib.at(sid);
    ScaleSlot slot;
    slot.scale_id = sid;
    slot.nodes = spec.nodes();
    if (sid != 1) {
      ScaleMap maps = build_scale_maps(spec, joints_);
      slot.aggregate = maps.aggregate;
      slot.broadcast = maps.broadcast;
    }
    slots_.push_back(std::move(slot));
  }

  const std::int64_t input_ch = 3 * (cfg_.beta_max + 1);
  for (int stage = 0; stage < cfg_.n_mgcu; ++stage) {
    const std::int64_t c_in = stage == 0 ? input_ch : cfg_.channels[static_cast<std::size_t>(stage - 1)];
    const std::int64_t c_out = cfg_.channels[static_cast<std::size_t>(stage)];
    const std::int64_t stride = stage == 0 ? 1 : 2;
    std::vector<SsGcb> row;
    for (int sid : cfg_.scales) {
      Tensor adj = init_adjacency(lib.at(sid));
      if (cfg_.freeze_adjacency) adj.set_requires_grad(false);
      row.push_back(SsGcb::make(std::move(adj), c_in, c_out, stride, cfg_.dropout,
                                cfg_.bn_momentum, rng_));
    }
    stages_.push_back(std::move(row));
  }

  for (int pos : cfg_.csfb_positions) {
    if (fusions_.count(pos)) continue;
    const std::int64_t t_here = cfg_.stage_input_len(pos);
    const std::int64_t c_here = cfg_.channels[static_cast<std::size_t>(pos - 1)];
    std::vector<CsFb> pairs;
    for (std::size_t k = 0; k + 1 < slots_.size(); ++k) {
      pairs.push_back(CsFb::make(c_here, t_here, cfg_.csfb_hidden, cfg_.dropout, cfg_.bn_momentum,
                                 cfg_.csfb_softmax_over_coarse, rng_));
    }
    fusions_[pos] = std::move(pairs);
  }

  {
    Tensor adj = init_adjacency(lib.at(1));
    if (cfg_.freeze_adjacency) adj.set_requires_grad(false);
    final_block_ = SsGcb::make(std::move(adj), cfg_.channels.back(), cfg_.hidden, 1, cfg_.dropout,
                               cfg_.bn_momentum, rng_);
  }

  cell_ = GGru::make(cfg_.plain_gru ? Tensor() : init_adjacency(lib.at(1)), input_ch, cfg_.hidden,
                     cfg_.plain_gru, rng_);
  head_w1_ = Tensor::uniform_init({cfg_.hidden, cfg_.hidden}, cfg_.hidden, rng_, true);
  head_b1_ = Tensor::zeros({cfg_.hidden}, true);
  head_w2_ = Tensor::uniform_init({cfg_.hidden, 3}, cfg_.hidden, rng_, true);
  head_b2_ = Tensor::zeros({3}, true);
}

Tensor Model::encode(const Tensor& window) { return encode_impl(window, false); }

Tensor Model::encode_joint_branch_only(const Tensor& window) { return encode_impl(window, true); }

Tensor Model::encode_impl(const Tensor& window, bool joint_branch_only) {
  if (!window.defined() || window.rank() != 4 || window.dim(3) != 3) {
    throw ContractError("encode: expected window [B, T, M, 3]");
  }
  if (window.dim(1) != cfg_.history) {
    throw ContractError("encode: window length " + std::to_string(window.dim(1)) +
                        " does not match configured history " + std::to_string(cfg_.history));
  }
  if (window.dim(2) != joints_) {
    throw ContractError("encode: window has " + std::to_string(window.dim(2)) +
                        " joints, model expects " + std::to_string(joints_));
  }
  const std::int64_t b = window.dim(0), t = window.dim(1), m = window.dim(2);
  const std::int64_t c0 = 3 * (cfg_.beta_max + 1);

  // Difference channels are a fixed transform of the input window.
  Tensor x0 = Tensor::zeros({b, t, m, c0});
  for (std::int64_t i = 0; i < b; ++i) {
    Tensor one = difference_transform(window.data() + i * t * m * 3, t, m, cfg_.beta_max);
    std::copy(one.values().begin(), one.values().end(),
              x0.values().begin() + static_cast<std::ptrdiff_t>(i * t * m * c0));
  }

  ForwardCtx ctx{training_, &rng_};

  std::vector<Tensor> feats;
  for (const auto& slot : slots_) {
    feats.push_back(slot.scale_id == 1 ? x0 : matmul(slot.aggregate, x0));
  }

  for (int stage = 0; stage < cfg_.n_mgcu; ++stage) {
    for (std::size_t s = 0; s < feats.size(); ++s) {
      feats[s] = stages_[static_cast<std::size_t>(stage)][s].forward(feats[s], ctx);
    }
    auto fit = fusions_.find(stage + 1);
    if (fit == fusions_.end()) continue;
    // All fusion updates are computed from the pre-fusion features and
    // applied together.
    std::vector<Tensor> delta(feats.size());
    for (std::size_t k = 0; k + 1 < feats.size(); ++k) {
      CsFb& fb = fit->second[k];
      auto [a_up, a_down] = fb.infer_graphs(feats[k], feats[k + 1], ctx);
      Tensor up = matmul(matmul(reshape(a_up, {b, 1, a_up.dim(1), a_up.dim(2)}), feats[k]),
                         fb.w_fuse_up);
      delta[k + 1] = delta[k + 1].defined() ? add(delta[k + 1], up) : up;
      if (cfg_.csfb_bidirectional) {
        Tensor down = matmul(
            matmul(reshape(a_down, {b, 1, a_down.dim(1), a_down.dim(2)}), feats[k + 1]),
            fb.w_fuse_down);
        delta[k] = delta[k].defined() ? add(delta[k], down) : down;
      }
    }
    for (std::size_t s = 0; s < feats.size(); ++s) {
      if (delta[s].defined()) feats[s] = add(feats[s], delta[s]);
    }
  }

  Tensor fused = feats[0];
  if (!joint_branch_only && feats.size() > 1) {
    Tensor coarse_sum;
    for (std::size_t s = 1; s < feats.size(); ++s) {
      Tensor up = matmul(slots_[s].broadcast, feats[s]);
      coarse_sum = coarse_sum.defined() ? add(coarse_sum, up) : up;
    }
    fused = add(fused, scale(coarse_sum, cfg_.lambda));
  }

  Tensor out = final_block_.forward(fused, ctx);
  return mean_axis(out, 1);
}

Tensor Model::decoder_input(const Tensor& x0, const Tensor& x1, const Tensor& x2) const {
  std::vector<Tensor> parts{x0};
  if (cfg_.beta_max >= 1) parts.push_back(sub(x0, x1));
  if (cfg_.beta_max >= 2) parts.push_back(sub(sub(x0, x1), sub(x1, x2)));
  return parts.size() == 1 ? parts[0] : concat(parts, -1);
}

Tensor Model::head(const Tensor& h) {
  return linear(relu(linear(h, head_w1_, head_b1_)), head_w2_, head_b2_);
}

Tensor Model::decode(const Tensor& seed, const Tensor& h0, std::int64_t horizon,
                     const Tensor* teacher) {
  if (horizon < 1) throw ConfigError("decode: horizon must be >= 1");
  if (!seed.defined() || seed.rank() != 4 || seed.dim(1) < 3 || seed.dim(3) != 3) {
    throw ContractError("decode: need the 3 most recent observed frames [B, 3, M, 3]");
  }
  const std::int64_t b = seed.dim(0), m = seed.dim(2);
  const std::int64_t last = seed.dim(1) - 1;
  auto frame = [&](const Tensor& src, std::int64_t idx) {
    return reshape(slice_axis(src, 1, idx, 1), {b, m, 3});
  };
  Tensor x2 = frame(seed, last - 2);
  Tensor x1 = frame(seed, last - 1);
  Tensor x0 = frame(seed, last);
  Tensor h = h0;
  std::vector<Tensor> preds;
  for (std::int64_t step = 0; step < horizon; ++step) {
    Tensor input = decoder_input(x0, x1, x2);
    h = cell_.step(input, h);
    Tensor next = add(x0, head(h));
    preds.push_back(reshape(next, {b, 1, m, 3}));
    x2 = x1;
    x1 = x0;
    x0 = (teacher != nullptr) ? frame(*teacher, step) : next;
  }
  return preds.size() == 1 ? preds[0] : concat(preds, 1);
}

Tensor Model::forward(const Tensor& window, const Tensor* teacher) {
  Tensor h0 = encode(window);
  Tensor seed = slice_axis(window, 1, cfg_.history - 3, 3);
  return decode(seed, h0, cfg_.horizon, teacher);
}

std::vector<std::pair<std::string, Tensor>> Model::named_params() {
  std::vector<std::pair<std::string, Tensor>> out;
  ParamVisitor pv = [&](const std::string& name, Tensor& t) { out.emplace_back(name, t); };
  BufferVisitor ignore = [](const std::string&, std::vector<double>&) {};
  for (std::size_t stage = 0; stage < stages_.size(); ++stage) {
    for (std::size_t s = 0; s < stages_[stage].size(); ++s) {
      stages_[stage][s].visit("encoder.mgcu" + std::to_string(stage + 1) + ".s" +
                                  std::to_string(slots_[s].scale_id),
                              pv, ignore);
    }
  }
  for (auto& [pos, pairs] : fusions_) {
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      pairs[k].visit("encoder.mgcu" + std::to_string(pos) + ".fuse_s" +
                         std::to_string(slots_[k].scale_id) + "s" +
                         std::to_string(slots_[k + 1].scale_id),
                     pv, ignore);
    }
  }
  final_block_.visit("encoder.final", pv, ignore);
  cell_.visit("decoder.ggru", pv, ignore);
  pv("decoder.head.w1", head_w1_);
  pv("decoder.head.b1", head_b1_);
  pv("decoder.head.w2", head_w2_);
  pv("decoder.head.b2", head_b2_);
  return out;
}

std::vector<Tensor> Model::params() {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_params()) out.push_back(t);
  return out;
}

void Model::visit_buffers(const BufferVisitor& bv) {
  ParamVisitor ignore = [](const std::string&, Tensor&) {};
  for (std::size_t stage = 0; stage < stages_.size(); ++stage) {
    for (std::size_t s = 0; s < stages_[stage].size(); ++s) {
      stages_[stage][s].visit("encoder.mgcu" + std::to_string(stage + 1) + ".s" +
                                  std::to_string(slots_[s].scale_id),
                              ignore, bv);
    }
  }
  for (auto& [pos, pairs] : fusions_) {
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      pairs[k].visit("encoder.mgcu" + std::to_string(pos) + ".fuse_s" +
                         std::to_string(slots_[k].scale_id) + "s" +
                         std::to_string(slots_[k + 1].scale_id),
                     ignore, bv);
    }
  }
  final_block_.visit("encoder.final", ignore, bv);
  cell_.visit("decoder.ggru", ignore, bv);
}

std::vector<std::int64_t> Model::stage_lengths() const {
  std::vector<std::int64_t> out;
  for (int stage = 0; stage <= cfg_.n_mgcu; ++stage) out.push_back(cfg_.stage_input_len(stage));
  return out;
}

Tensor l1_loss(const Tensor& pred, const Tensor& target) {
  if (!pred.defined() || !target.defined() || pred.shape() != target.shape()) {
    throw ShapeError("l1_loss: shape mismatch " +
                     (pred.defined() ? shape_str(pred.shape()) : std::string("<undef>")) + " vs " +
                     (target.defined() ? shape_str(target.shape()) : std::string("<undef>")));
  }
  const double batch = static_cast<double>(pred.dim(0));
  return scale(sum_all(abs_op(sub(pred, target))), 1.0 / batch);
}

double train_step(Model& model, const Tensor& inputs, const Tensor& targets, AdamState& opt) {
  model.set_training(true);
  Tape::current().clear();
  const Tensor* teacher = model.config().teacher_forcing ? &targets : nullptr;
  Tensor pred = model.forward(inputs, teacher);
  Tensor loss = l1_loss(pred, targets);
  const double loss_value = loss.item();
  if (!std::isfinite(loss_value)) {
    Tape::current().clear();
    throw NumericError("train_step: non-finite loss " + std::to_string(loss_value) +
                       " at optimizer step " + std::to_string(opt.step + 1));
  }
  backward(loss);
  auto params = model.params();
  std::vector<Tensor> grads;
  for (auto& p : params) {
    if (p.has_grad()) grads.push_back(p.grad());
  }
  clip_global_norm(grads, model.config().clip_norm);
  adam_step(params, opt);
  return loss_value;
}

}  // namespace dmgnn
