#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dmgnn/config.hpp"
#include "dmgnn/layers.hpp"
#include "dmgnn/scales.hpp"
#include "dmgnn/tensor.hpp"

namespace dmgnn {

// Encoder-decoder motion predictor: a cascade of multiscale graph stages
// feeding a graph-gated recurrent decoder that emits per-frame pose
// displacements.
class Model {
 public:
  explicit Model(const ModelConfig& cfg);
  Model(const ModelConfig& cfg, const ScaleLibrary& lib);

  const ModelConfig& config() const { return cfg_; }
  std::int64_t joints() const { return joints_; }

  void set_training(bool on) { training_ = on; }
  bool training() const { return training_; }
  Rng& rng() { return rng_; }

  // window [B, T_h, M, 3] -> predictions [B, T_f, M, 3]. When `teacher`
  // is non-null (training with teacher forcing), the decoder's rolling
  // pose buffer advances on ground-truth frames instead of predictions.
  Tensor forward(const Tensor& window, const Tensor* teacher = nullptr);

  // window [B, T_h, M, 3] -> initial decoder state [B, M, hidden].
  Tensor encode(const Tensor& window);
  // seed [B, 3, M, 3]: the three most recent observed poses.
  Tensor decode(const Tensor& seed, const Tensor& h0, std::int64_t horizon,
                const Tensor* teacher = nullptr);

  // Stable parameter ordering shared by the optimizer and checkpoints.
  std::vector<std::pair<std::string, Tensor>> named_params();
  std::vector<Tensor> params();
  void visit_buffers(const BufferVisitor& bv);

  // Temporal lengths seen by scale features entering each stage plus the
  // pooled stage; used by shape-conformance checks.
  std::vector<std::int64_t> stage_lengths() const;

  // Encoder feature of the joint-scale branch alone after the final block
  // and pooling (lambda = 0 path), for isolation checks.
  Tensor encode_joint_branch_only(const Tensor& window);

 private:
  struct ScaleSlot {
    int scale_id = 1;
    std::int64_t nodes = 0;
    Tensor aggregate;   // [M_s, M] (undefined for the joint scale)
    Tensor broadcast;   // [M, M_s]
  };

  Tensor encode_impl(const Tensor& window, bool joint_branch_only);
  Tensor head(const Tensor& h);
  Tensor decoder_input(const Tensor& x0, const Tensor& x1, const Tensor& x2) const;

  ModelConfig cfg_;
  std::int64_t joints_ = 0;
  bool training_ = false;
  Rng rng_;

  std::vector<ScaleSlot> slots_;
  std::vector<std::vector<SsGcb>> stages_;     // [mgcu][scale index]
  std::map<int, std::vector<CsFb>> fusions_;   // 1-based MGCU -> adjacent pairs
  SsGcb final_block_;
  GGru cell_;
  Tensor head_w1_, head_b1_, head_w2_, head_b2_;
};

// Batch mean of per-sample summed absolute error.
Tensor l1_loss(const Tensor& pred, const Tensor& target);

// One optimization step: forward, l1 loss, backward, global-norm clip,
// Adam update. Returns the pre-step loss; throws NumericError on
// non-finite loss.
double train_step(Model& model, const Tensor& inputs, const Tensor& targets, AdamState& opt);

}  // namespace dmgnn
