#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dmgnn/data.hpp"
#include "dmgnn/model.hpp"
#include "dmgnn/tensor.hpp"

namespace dmgnn {

// Mean angle error: at each horizon, both poses are converted joint-wise
// from exponential maps to ZYX Euler angles and the l2 norm of the
// full-pose Euler difference is averaged over samples.
// pred/target are [N, T_f, M, 3]; horizons must land on whole frames.
std::vector<double> mae_at_horizons(const Tensor& pred, const Tensor& target,
                                    const std::vector<double>& horizons_ms,
                                    double frame_interval_ms);

// Constant-last-pose predictor over the same protocol.
std::vector<double> zerov_baseline(const Tensor& inputs, const Tensor& targets,
                                   const std::vector<double>& horizons_ms,
                                   double frame_interval_ms);

// Repeats the last observed pose of each input window across t_f frames.
Tensor tile_last_pose(const Tensor& inputs, std::int64_t t_f);

// ---- Evaluation report -----------------------------------------------------

struct EvalReport {
  std::vector<double> horizons_ms;
  struct Row {
    std::string action;
    std::string predictor;  // "model" or "zerov"
    std::vector<double> mae;
  };
  std::vector<Row> rows;

  std::string to_csv() const;
  static EvalReport from_csv(const std::string& text);
  std::string to_text() const;
  void save_csv(const std::string& path) const;
};

// Per-action and average MAE for the model and the constant-pose baseline.
EvalReport evaluate_model(Model& model, const std::vector<WindowedSample>& samples,
                          const std::vector<double>& horizons_ms);

// ---- Timing harness -----------------------------------------------------------

struct BenchReport {
  std::string config_fingerprint;
  std::int64_t batch = 0;
  std::int64_t horizon_frames = 0;
  int repetitions = 0;
  int warmup = 0;
  std::vector<double> samples_ms;
  double mean_ms = 0.0;
  double median_ms = 0.0;
  double min_ms = 0.0;
  double max_ms = 0.0;

  std::string to_json_string() const;
  static BenchReport from_json_string(const std::string& text);
  void save(const std::string& path) const;
  static BenchReport load(const std::string& path);
};

// Wall-clock distribution of frozen-model inference over `repetitions`
// runs after `warmup` discarded runs. Single-threaded.
BenchReport bench_inference(Model& model, const Tensor& batch, std::int64_t horizon_frames,
                            int repetitions, int warmup = 1);

}  // namespace dmgnn
