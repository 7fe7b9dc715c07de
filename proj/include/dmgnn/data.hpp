#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dmgnn/scales.hpp"
#include "dmgnn/tensor.hpp"

namespace dmgnn {

// One entry of a dataset manifest: a motion CSV plus its split tags.
struct ManifestFile {
  std::string path;
  std::string subject;
  std::string action;
};

// Manifest JSON: root, frame_interval_ms (source rate), downsample,
// optional joint_mask (joint indices into the CSV joint order),
// train/test subject tags, and the file list.
struct DatasetManifest {
  std::string root;
  double frame_interval_ms = 40.0;
  int downsample = 1;
  std::vector<std::int64_t> joint_mask;  // empty: keep all joints
  std::vector<std::string> train_subjects;
  std::vector<std::string> test_subjects;
  std::vector<ManifestFile> files;

  static DatasetManifest load(const std::string& path);
  static DatasetManifest from_json_string(const std::string& text);
  std::string to_json_string() const;
  void save(const std::string& path) const;
  void validate() const;
};

struct LoadedSequence {
  MotionSequence seq;
  std::string subject;
  std::string action;
  std::string source;
};

// Sequence CSV: header row naming joint/axis (j<i>_<x|y|z>), then one
// frame per row with 3*M numeric columns.
MotionSequence read_motion_csv(const std::string& path, double frame_interval_ms = 40.0);
void write_motion_csv(const std::string& path, const MotionSequence& seq);

// split: "train", "test" or "all". Applies the joint mask, then
// downsampling; frame_interval is scaled by the downsample factor.
std::vector<LoadedSequence> load_dataset(const DatasetManifest& manifest,
                                         const std::string& split);

struct WindowedSample {
  std::vector<double> input;   // [T_h, M, 3]
  std::vector<double> target;  // [T_f, M, 3]
  std::string action;
  std::int64_t source_index = 0;
  std::int64_t offset = 0;
};

// Sliding windows; a too-short sequence yields an empty list.
std::vector<WindowedSample> make_windows(const MotionSequence& seq, std::int64_t t_h,
                                         std::int64_t t_f, std::int64_t stride,
                                         const std::string& action = std::string(),
                                         std::int64_t source_index = 0);

// Stacks sample fields as [N, T, M, 3] tensors for batched evaluation.
Tensor stack_inputs(const std::vector<WindowedSample>& samples, std::int64_t t_h, std::int64_t m);
Tensor stack_targets(const std::vector<WindowedSample>& samples, std::int64_t t_f, std::int64_t m);

// Synthetic motion generator: each joint-axis channel is a seeded sum of
// up to max_sinusoids sinusoids (total amplitude capped at 0.8 rad) plus
// gaussian noise.
struct SynthSpec {
  std::int64_t joints = 20;
  std::int64_t frame_count = 120;
  double frame_interval_ms = 40.0;
  int max_sinusoids = 3;
  double freq_min_hz = 0.1;
  double freq_max_hz = 1.0;
  double amp_min = 0.05;
  double amp_max = 0.3;
  double noise_std = 0.0;

  static SynthSpec from_json_string(const std::string& text);
  static SynthSpec load(const std::string& path);
  std::string to_json_string() const;
  void validate() const;
};

MotionSequence synth_motion(const SynthSpec& spec, std::uint64_t seed);

// Prediction export: one row per predicted frame with sample id, frame
// index and the 3*M pose values. preds is [N, T_f, M, 3].
void write_predictions_csv(const std::string& path, const Tensor& preds);

}  // namespace dmgnn
