#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dmgnn {

// Every architectural and training knob, serializable as JSON. Defaults are
// the full-size configuration (4 MGCUs at 32/64/128/256 channels, scales
// {1,2,3}, fusion at MGCUs 1 and 2, lambda 0.6, Adam at 1e-4, batch 32,
// gradient clip 0.5).
struct ModelConfig {
  // encoder
  std::vector<int> scales{1, 2, 3};
  int n_mgcu = 4;
  std::vector<int> csfb_positions{1, 2};  // 1-based MGCU indices
  std::vector<std::int64_t> channels{32, 64, 128, 256};
  double lambda = 0.6;
  int beta_max = 2;
  bool freeze_adjacency = false;
  bool plain_gru = false;
  bool csfb_bidirectional = true;
  bool csfb_softmax_over_coarse = false;
  std::int64_t hidden = 256;
  std::int64_t csfb_hidden = 256;
  double dropout = 0.1;
  double bn_momentum = 0.1;

  // window geometry
  std::int64_t history = 49;  // observed frames fed to the encoder
  std::int64_t horizon = 10;  // frames to generate
  double frame_interval_ms = 40.0;

  // training
  double lr = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::int64_t batch_size = 32;
  double clip_norm = 0.5;
  std::int64_t steps = 2000;
  std::int64_t checkpoint_every = 0;  // 0: final checkpoint only
  std::int64_t log_every = 1;
  bool teacher_forcing = false;
  std::uint64_t seed = 1;

  // empty: use the built-in 20-joint library
  std::string scale_library_path;

  // Throws ConfigError naming the offending field.
  void validate() const;

  // Temporal length entering MGCU `stage` (0-based; stage n_mgcu = output
  // of the last MGCU). Stage 1 keeps the length, later stages halve it.
  std::int64_t stage_input_len(int stage) const;

  std::string to_json_string(int indent = 2) const;
  static ModelConfig from_json_string(const std::string& text);
  static ModelConfig load(const std::string& path);
  void save(const std::string& path) const;
};

// FNV-1a of the canonical JSON form, as a hex string; used to fingerprint
// configs in reports.
std::string config_fingerprint(const ModelConfig& cfg);

}  // namespace dmgnn
