#include "dmgnn/scales.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "scale_data.inc"

namespace dmgnn {

using nlohmann::json;

void ScaleSpec::validate(std::int64_t n_joints) const {
  if (scale_id < 1 || scale_id > 5) {
    throw ConfigError("scale spec: scale_id " + std::to_string(scale_id) + " outside 1..5");
  }
  if (groups.empty()) throw ConfigError("scale spec: no groups");
  std::vector<int> seen(static_cast<std::size_t>(n_joints), 0);
  std::vector<std::int64_t> bad;
  for (const auto& g : groups) {
    if (g.empty()) throw ConfigError("scale " + std::to_string(scale_id) + ": empty group");
    for (auto j : g) {
      if (j < 0 || j >= n_joints) {
        throw ConfigError("scale " + std::to_string(scale_id) + ": joint index " +
                          std::to_string(j) + " outside 0.." + std::to_string(n_joints - 1));
      }
      ++seen[static_cast<std::size_t>(j)];
    }
  }
  std::string dup, missing;
  for (std::int64_t j = 0; j < n_joints; ++j) {
    if (seen[static_cast<std::size_t>(j)] > 1) dup += (dup.empty() ? "" : ", ") + std::to_string(j);
    if (seen[static_cast<std::size_t>(j)] == 0) missing += (missing.empty() ? "" : ", ") + std::to_string(j);
  }
  if (!dup.empty() || !missing.empty()) {
    throw ConfigError("scale " + std::to_string(scale_id) + ": groups do not partition the joints" +
                      (dup.empty() ? "" : " (duplicated: " + dup + ")") +
                      (missing.empty() ? "" : " (missing: " + missing + ")"));
  }
  const std::int64_t m = nodes();
  for (const auto& [a, b] : edges) {
    if (a < 0 || a >= m || b < 0 || b >= m) {
      throw ConfigError("scale " + std::to_string(scale_id) + ": edge (" + std::to_string(a) +
                        ", " + std::to_string(b) + ") outside 0.." + std::to_string(m - 1));
    }
    if (a == b) {
      throw ConfigError("scale " + std::to_string(scale_id) + ": self-loop at node " +
                        std::to_string(a));
    }
  }
}

void MotionSequence::validate() const {
  if (joints < 1) throw DataError("motion sequence: joint count must be positive");
  if (frame_interval_ms <= 0.0) throw DataError("motion sequence: frame interval must be positive");
  if (frames.empty() || frames.size() % static_cast<std::size_t>(joints * 3) != 0) {
    throw DataError("motion sequence: value count " + std::to_string(frames.size()) +
                    " is not a multiple of 3*joints");
  }
  for (double v : frames) {
    if (!std::isfinite(v)) throw DataError("motion sequence: non-finite value");
  }
}

const ScaleSpec& ScaleLibrary::at(int scale_id) const {
  auto it = scales.find(scale_id);
  if (it == scales.end()) {
    throw ConfigError("scale library has no scale " + std::to_string(scale_id));
  }
  return it->second;
}

ScaleLibrary parse_scale_library(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scale library: invalid JSON: ") + e.what());
  }
  ScaleLibrary lib;
  try {
    lib.joints = doc.at("joints").get<std::int64_t>();
    for (const auto& s : doc.at("scales")) {
      ScaleSpec spec;
      spec.scale_id = s.at("scale_id").get<int>();
      for (const auto& g : s.at("groups")) {
        spec.groups.push_back(g.get<std::vector<std::int64_t>>());
      }
      for (const auto& e : s.at("edges")) {
        if (!e.is_array() || e.size() != 2) throw ConfigError("scale library: edge is not a pair");
        spec.edges.emplace_back(e[0].get<std::int64_t>(), e[1].get<std::int64_t>());
      }
      spec.validate(lib.joints);
      lib.scales[spec.scale_id] = std::move(spec);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scale library: ") + e.what());
  }
  if (!lib.scales.count(1)) throw ConfigError("scale library: scale 1 (joint scale) is required");
  if (lib.scales.at(1).nodes() != lib.joints) {
    throw ConfigError("scale library: scale 1 must have one node per joint");
  }
  return lib;
}

ScaleLibrary load_scale_library(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("scale library: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_scale_library(ss.str());
}

const ScaleLibrary& default_scale_library() {
  static const ScaleLibrary lib = parse_scale_library(kDefaultScaleLibraryJson);
  return lib;
}

ScaleMap build_scale_maps(const ScaleSpec& spec, std::int64_t n_joints) {
  spec.validate(n_joints);
  const std::int64_t m = spec.nodes();
  ScaleMap maps;
  maps.aggregate = Tensor::zeros({m, n_joints});
  maps.broadcast = Tensor::zeros({n_joints, m});
  for (std::int64_t p = 0; p < m; ++p) {
    const auto& g = spec.groups[static_cast<std::size_t>(p)];
    const double w = 1.0 / static_cast<double>(g.size());
    for (auto j : g) {
      maps.aggregate.values()[static_cast<std::size_t>(p * n_joints + j)] = w;
      maps.broadcast.values()[static_cast<std::size_t>(j * m + p)] = 1.0;
    }
  }
  return maps;
}

Tensor init_adjacency(const ScaleSpec& spec) {
  const std::int64_t m = spec.nodes();
  Tensor adj = Tensor::zeros({m, m}, /*requires_grad=*/true);
  for (const auto& [a, b] : spec.edges) {
    if (a < 0 || a >= m || b < 0 || b >= m) {
      throw ConfigError("init_adjacency: edge (" + std::to_string(a) + ", " + std::to_string(b) +
                        ") outside 0.." + std::to_string(m - 1));
    }
    adj.values()[static_cast<std::size_t>(a * m + b)] = 1.0;
    adj.values()[static_cast<std::size_t>(b * m + a)] = 1.0;
  }
  return adj;
}

Tensor difference_transform(const double* frames, std::int64_t t_len, std::int64_t joints,
                            int beta_max) {
  if (beta_max < 0 || beta_max > 2) {
    throw ConfigError("difference_transform: beta_max " + std::to_string(beta_max) +
                      " outside {0, 1, 2}");
  }
  if (t_len < 1) throw ContractError("difference_transform: empty sequence");
  const std::int64_t chans = 3 * (beta_max + 1);
  const std::int64_t width = joints * 3;
  Tensor out = Tensor::zeros({t_len, joints, chans});
  // diffs[b] holds the order-b sequence, zero for t < b.
  std::vector<std::vector<double>> diffs(static_cast<std::size_t>(beta_max) + 1);
  diffs[0].assign(frames, frames + t_len * width);
  for (int b = 1; b <= beta_max; ++b) {
    const auto& prev = diffs[static_cast<std::size_t>(b - 1)];
    auto& cur = diffs[static_cast<std::size_t>(b)];
    cur.assign(static_cast<std::size_t>(t_len * width), 0.0);
    for (std::int64_t t = b; t < t_len; ++t) {
      for (std::int64_t i = 0; i < width; ++i) {
        cur[static_cast<std::size_t>(t * width + i)] =
            prev[static_cast<std::size_t>(t * width + i)] -
            prev[static_cast<std::size_t>((t - 1) * width + i)];
      }
    }
  }
  for (std::int64_t t = 0; t < t_len; ++t) {
    for (std::int64_t j = 0; j < joints; ++j) {
      for (int b = 0; b <= beta_max; ++b) {
        for (std::int64_t a = 0; a < 3; ++a) {
          out.values()[static_cast<std::size_t>((t * joints + j) * chans + 3 * b + a)] =
              diffs[static_cast<std::size_t>(b)][static_cast<std::size_t>(t * width + j * 3 + a)];
        }
      }
    }
  }
  return out;
}

Tensor difference_transform(const MotionSequence& seq, int beta_max) {
  seq.validate();
  return difference_transform(seq.frames.data(), seq.frame_count(), seq.joints, beta_max);
}

std::array<double, 9> expmap_to_rotmat(const double v[3]) {
  const double theta2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
  const double theta = std::sqrt(theta2);
  double a, b;
  if (theta < 1e-8) {
    a = 1.0 - theta2 / 6.0;
    b = 0.5 - theta2 / 24.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta2;
  }
  // R = I + a*[v]x + b*[v]x^2
  const double x = v[0], y = v[1], z = v[2];
  std::array<double, 9> r{};
  r[0] = 1.0 + b * (-z * z - y * y);
  r[1] = -a * z + b * x * y;
  r[2] = a * y + b * x * z;
  r[3] = a * z + b * x * y;
  r[4] = 1.0 + b * (-z * z - x * x);
  r[5] = -a * x + b * y * z;
  r[6] = -a * y + b * x * z;
  r[7] = a * x + b * y * z;
  r[8] = 1.0 + b * (-y * y - x * x);
  return r;
}

std::array<double, 9> euler_zyx_to_rotmat(const double e[3]) {
  const double sx = std::sin(e[0]), cx = std::cos(e[0]);
  const double sy = std::sin(e[1]), cy = std::cos(e[1]);
  const double sz = std::sin(e[2]), cz = std::cos(e[2]);
  return {cy * cz, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx,
          sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx,
          -sy,     cy * sx,                cy * cx};
}

std::array<double, 3> expmap_to_euler(const double v[3]) {
  const auto r = expmap_to_rotmat(v);
  std::array<double, 3> e{};
  const double lock = 1.0 - 1e-9;
  if (r[6] <= -lock) {  // ry = +pi/2
    e[1] = 1.5707963267948966;
    e[2] = 0.0;
    e[0] = std::atan2(r[1], r[4]);
  } else if (r[6] >= lock) {  // ry = -pi/2
    e[1] = -1.5707963267948966;
    e[2] = 0.0;
    e[0] = std::atan2(-r[1], r[4]);
  } else {
    e[1] = std::asin(-r[6]);
    e[0] = std::atan2(r[7], r[8]);
    e[2] = std::atan2(r[3], r[0]);
  }
  return e;
}

}  // namespace dmgnn
