#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dmgnn/tensor.hpp"

namespace dmgnn {

// One body scale: a partition of the joint set into components plus the
// physical skeleton edges between those components.
struct ScaleSpec {
  int scale_id = 1;  // 1..5
  std::vector<std::vector<std::int64_t>> groups;
  std::vector<std::pair<std::int64_t, std::int64_t>> edges;

  std::int64_t nodes() const { return static_cast<std::int64_t>(groups.size()); }
  // Checks that groups partition {0..n_joints-1} and edges are in range
  // with no self-loops; throws ConfigError listing the offending joints.
  void validate(std::int64_t n_joints) const;
};

// Joint<->component maps for one scale. aggregate is row-stochastic group
// averaging (M_s x M_1); broadcast selects each joint's parent component
// (M_1 x M_s, one 1 per row).
struct ScaleMap {
  Tensor aggregate;
  Tensor broadcast;
};

// Raw motion data: T frames of M joints with 3 exponential-map angles.
struct MotionSequence {
  std::int64_t joints = 0;
  double frame_interval_ms = 40.0;
  std::vector<double> frames;  // row-major [T, M, 3]

  std::int64_t frame_count() const {
    return joints == 0 ? 0 : static_cast<std::int64_t>(frames.size()) / (joints * 3);
  }
  double at(std::int64_t t, std::int64_t j, std::int64_t a) const {
    return frames[static_cast<std::size_t>((t * joints + j) * 3 + a)];
  }
  void validate() const;
};

// Named set of scales over a common joint count.
struct ScaleLibrary {
  std::int64_t joints = 0;
  std::map<int, ScaleSpec> scales;

  const ScaleSpec& at(int scale_id) const;
};

ScaleLibrary parse_scale_library(const std::string& json_text);
ScaleLibrary load_scale_library(const std::string& path);
// The 20-joint library shipped in data/scales/h36m_20joint.json, compiled in.
const ScaleLibrary& default_scale_library();

ScaleMap build_scale_maps(const ScaleSpec& spec, std::int64_t n_joints);

// Symmetric 0/1 adjacency with zero diagonal, returned as a trainable
// parameter (requires_grad = true).
Tensor init_adjacency(const ScaleSpec& spec);

// Stacks difference orders 0..beta_max along the channel axis:
// out[t, j, 3*b + a] = (order-b difference at t), zero for t < b.
// Output shape [T, M, 3*(beta_max+1)], no grad.
Tensor difference_transform(const double* frames, std::int64_t t_len, std::int64_t joints,
                            int beta_max);
Tensor difference_transform(const MotionSequence& seq, int beta_max);

// Rotation utilities. Euler convention is ZYX intrinsic throughout:
// R = Rz(ez) * Ry(ey) * Rx(ex), vectors ordered (ex, ey, ez).
std::array<double, 9> expmap_to_rotmat(const double v[3]);
std::array<double, 9> euler_zyx_to_rotmat(const double e[3]);
std::array<double, 3> expmap_to_euler(const double v[3]);

}  // namespace dmgnn
