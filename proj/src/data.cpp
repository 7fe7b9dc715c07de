#include "dmgnn/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace dmgnn {

using nlohmann::json;
namespace fs = std::filesystem;

// ---- Manifest ---------------------------------------------------------------

DatasetManifest DatasetManifest::from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("manifest: invalid JSON: ") + e.what());
  }
  DatasetManifest m;
  try {
    m.root = j.value("root", std::string());
    m.frame_interval_ms = j.value("frame_interval_ms", 40.0);
    m.downsample = j.value("downsample", 1);
    if (j.contains("joint_mask")) m.joint_mask = j.at("joint_mask").get<std::vector<std::int64_t>>();
    if (j.contains("train_subjects"))
      m.train_subjects = j.at("train_subjects").get<std::vector<std::string>>();
    if (j.contains("test_subjects"))
      m.test_subjects = j.at("test_subjects").get<std::vector<std::string>>();
    for (const auto& f : j.at("files")) {
      ManifestFile mf;
      mf.path = f.at("path").get<std::string>();
      mf.subject = f.value("subject", std::string());
      mf.action = f.value("action", std::string());
      m.files.push_back(std::move(mf));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("manifest: ") + e.what());
  }
  m.validate();
  return m;
}

DatasetManifest DatasetManifest::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("manifest: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  DatasetManifest m = from_json_string(ss.str());
  if (m.root.empty() || fs::path(m.root).is_relative()) {
    // Relative roots resolve against the manifest location.
    m.root = (fs::path(path).parent_path() / m.root).string();
  }
  return m;
}

std::string DatasetManifest::to_json_string() const {
  json j;
  j["root"] = root;
  j["frame_interval_ms"] = frame_interval_ms;
  j["downsample"] = downsample;
  if (!joint_mask.empty()) j["joint_mask"] = joint_mask;
  j["train_subjects"] = train_subjects;
  j["test_subjects"] = test_subjects;
  j["files"] = json::array();
  for (const auto& f : files) {
    j["files"].push_back({{"path", f.path}, {"subject", f.subject}, {"action", f.action}});
  }
  return j.dump(2);
}

void DatasetManifest::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("manifest: cannot write " + path);
  out << to_json_string() << "\n";
}

void DatasetManifest::validate() const {
  if (downsample < 1) throw ConfigError("manifest: downsample must be >= 1");
  if (frame_interval_ms <= 0.0) throw ConfigError("manifest: frame_interval_ms must be positive");
  if (files.empty()) throw ConfigError("manifest: no files listed");
  for (std::size_t i = 0; i < joint_mask.size(); ++i) {
    if (joint_mask[i] < 0) throw ConfigError("manifest: joint_mask entries must be >= 0");
  }
}

// ---- CSV --------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  cells.push_back(cur);
  return cells;
}

double parse_cell(const std::string& cell, const std::string& path, std::size_t line_no,
                  std::size_t col) {
  const char* b = cell.data();
  const char* e = b + cell.size();
  while (b < e && (*b == ' ' || *b == '\t')) ++b;
  while (e > b && (*(e - 1) == ' ' || *(e - 1) == '\t')) --e;
  double v = 0.0;
  auto res = std::from_chars(b, e, v);
  if (res.ec != std::errc() || res.ptr != e || b == e) {
    throw DataError(path + ":" + std::to_string(line_no) + ": column " + std::to_string(col + 1) +
                    " is not numeric ('" + cell + "')");
  }
  return v;
}

}  // namespace

MotionSequence read_motion_csv(const std::string& path, double frame_interval_ms) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::string line;
  std::size_t line_no = 0;
  // Header names the joint/axis columns.
  if (!std::getline(in, line)) throw DataError(path + ": empty file");
  ++line_no;
  const std::size_t cols = split_csv_line(line).size();
  if (cols == 0 || cols % 3 != 0) {
    throw DataError(path + ":1: header has " + std::to_string(cols) +
                    " columns, expected a multiple of 3");
  }
  MotionSequence seq;
  seq.joints = static_cast<std::int64_t>(cols / 3);
  seq.frame_interval_ms = frame_interval_ms;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != cols) {
      throw DataError(path + ":" + std::to_string(line_no) + ": row has " +
                      std::to_string(cells.size()) + " columns, expected " + std::to_string(cols));
    }
    for (std::size_t c = 0; c < cells.size(); ++c) {
      seq.frames.push_back(parse_cell(cells[c], path, line_no, c));
    }
  }
  if (seq.frames.empty()) throw DataError(path + ": no frames");
  seq.validate();
  return seq;
}

void write_motion_csv(const std::string& path, const MotionSequence& seq) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  for (std::int64_t j = 0; j < seq.joints; ++j) {
    for (const char* axis : {"x", "y", "z"}) {
      if (j || axis[0] != 'x') out << ",";
      out << "j" << j << "_" << axis;
    }
  }
  out << "\n";
  out.precision(17);
  const std::int64_t t_len = seq.frame_count();
  for (std::int64_t t = 0; t < t_len; ++t) {
    for (std::int64_t c = 0; c < seq.joints * 3; ++c) {
      if (c) out << ",";
      out << seq.frames[static_cast<std::size_t>(t * seq.joints * 3 + c)];
    }
    out << "\n";
  }
}

// ---- Dataset loading ----------------------------------------------------------

namespace {

MotionSequence apply_mask_and_downsample(const MotionSequence& raw,
                                         const std::vector<std::int64_t>& mask, int downsample,
                                         const std::string& source) {
  const MotionSequence* cur = &raw;
  MotionSequence masked;
  if (!mask.empty()) {
    for (auto j : mask) {
      if (j < 0 || j >= raw.joints) {
        throw DataError(source + ": joint mask index " + std::to_string(j) +
                        " outside 0.." + std::to_string(raw.joints - 1));
      }
    }
    masked.joints = static_cast<std::int64_t>(mask.size());
    masked.frame_interval_ms = raw.frame_interval_ms;
    const std::int64_t t_len = raw.frame_count();
    masked.frames.reserve(static_cast<std::size_t>(t_len * masked.joints * 3));
    for (std::int64_t t = 0; t < t_len; ++t) {
      for (auto j : mask) {
        for (std::int64_t a = 0; a < 3; ++a) masked.frames.push_back(raw.at(t, j, a));
      }
    }
    cur = &masked;
  }
  if (downsample == 1) return *cur;
  MotionSequence out;
  out.joints = cur->joints;
  out.frame_interval_ms = cur->frame_interval_ms * downsample;
  const std::int64_t t_len = cur->frame_count();
  const std::int64_t width = cur->joints * 3;
  for (std::int64_t t = 0; t < t_len; t += downsample) {
    for (std::int64_t c = 0; c < width; ++c) {
      out.frames.push_back(cur->frames[static_cast<std::size_t>(t * width + c)]);
    }
  }
  return out;
}

}  // namespace

std::vector<LoadedSequence> load_dataset(const DatasetManifest& manifest,
                                         const std::string& split) {
  if (split != "train" && split != "test" && split != "all") {
    throw ConfigError("load_dataset: split must be train/test/all, got '" + split + "'");
  }
  const auto& want = split == "train" ? manifest.train_subjects : manifest.test_subjects;
  std::vector<LoadedSequence> out;
  for (const auto& f : manifest.files) {
    if (split != "all" && !want.empty() &&
        std::find(want.begin(), want.end(), f.subject) == want.end()) {
      continue;
    }
    fs::path p = fs::path(f.path).is_absolute() || manifest.root.empty()
                     ? fs::path(f.path)
                     : fs::path(manifest.root) / f.path;
    LoadedSequence ls;
    ls.seq = apply_mask_and_downsample(read_motion_csv(p.string(), manifest.frame_interval_ms),
                                       manifest.joint_mask, manifest.downsample, p.string());
    ls.subject = f.subject;
    ls.action = f.action;
    ls.source = p.string();
    out.push_back(std::move(ls));
  }
  if (out.empty()) throw DataError("load_dataset: split '" + split + "' matched no files");
  return out;
}

// ---- Windowing ----------------------------------------------------------------

std::vector<WindowedSample> make_windows(const MotionSequence& seq, std::int64_t t_h,
                                         std::int64_t t_f, std::int64_t stride,
                                         const std::string& action, std::int64_t source_index) {
  if (t_h < 1 || t_f < 1 || stride < 1) throw ContractError("make_windows: bad window geometry");
  std::vector<WindowedSample> out;
  const std::int64_t t_len = seq.frame_count();
  const std::int64_t width = seq.joints * 3;
  const std::int64_t need = t_h + t_f;
  for (std::int64_t start = 0; start + need <= t_len; start += stride) {
    WindowedSample w;
    w.action = action;
    w.source_index = source_index;
    w.offset = start;
    const double* base = seq.frames.data() + start * width;
    w.input.assign(base, base + t_h * width);
    w.target.assign(base + t_h * width, base + need * width);
    out.push_back(std::move(w));
  }
  return out;
}

Tensor stack_inputs(const std::vector<WindowedSample>& samples, std::int64_t t_h, std::int64_t m) {
  if (samples.empty()) throw ContractError("stack_inputs: empty sample list");
  Tensor out = Tensor::zeros({static_cast<std::int64_t>(samples.size()), t_h, m, 3});
  const std::int64_t block = t_h * m * 3;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (static_cast<std::int64_t>(samples[i].input.size()) != block) {
      throw ShapeError("stack_inputs: sample " + std::to_string(i) + " has " +
                       std::to_string(samples[i].input.size()) + " values, expected " +
                       std::to_string(block));
    }
    std::copy(samples[i].input.begin(), samples[i].input.end(),
              out.values().begin() + static_cast<std::ptrdiff_t>(i * block));
  }
  return out;
}

Tensor stack_targets(const std::vector<WindowedSample>& samples, std::int64_t t_f, std::int64_t m) {
  if (samples.empty()) throw ContractError("stack_targets: empty sample list");
  Tensor out = Tensor::zeros({static_cast<std::int64_t>(samples.size()), t_f, m, 3});
  const std::int64_t block = t_f * m * 3;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (static_cast<std::int64_t>(samples[i].target.size()) != block) {
      throw ShapeError("stack_targets: sample " + std::to_string(i) + " has " +
                       std::to_string(samples[i].target.size()) + " values, expected " +
                       std::to_string(block));
    }
    std::copy(samples[i].target.begin(), samples[i].target.end(),
              out.values().begin() + static_cast<std::ptrdiff_t>(i * block));
  }
  return out;
}

// ---- Synthetic motion -----------------------------------------------------------

SynthSpec SynthSpec::from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("synth spec: invalid JSON: ") + e.what());
  }
  SynthSpec s;
  s.joints = j.value("joints", s.joints);
  s.frame_count = j.value("frame_count", s.frame_count);
  s.frame_interval_ms = j.value("frame_interval_ms", s.frame_interval_ms);
  s.max_sinusoids = j.value("max_sinusoids", s.max_sinusoids);
  s.freq_min_hz = j.value("freq_min_hz", s.freq_min_hz);
  s.freq_max_hz = j.value("freq_max_hz", s.freq_max_hz);
  s.amp_min = j.value("amp_min", s.amp_min);
  s.amp_max = j.value("amp_max", s.amp_max);
  s.noise_std = j.value("noise_std", s.noise_std);
  s.validate();
  return s;
}

SynthSpec SynthSpec::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("synth spec: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_json_string(ss.str());
}

std::string SynthSpec::to_json_string() const {
  json j;
  j["joints"] = joints;
  j["frame_count"] = frame_count;
  j["frame_interval_ms"] = frame_interval_ms;
  j["max_sinusoids"] = max_sinusoids;
  j["freq_min_hz"] = freq_min_hz;
  j["freq_max_hz"] = freq_max_hz;
  j["amp_min"] = amp_min;
  j["amp_max"] = amp_max;
  j["noise_std"] = noise_std;
  return j.dump(2);
}

void SynthSpec::validate() const {
  if (joints < 1) throw ConfigError("synth spec: joints must be >= 1");
  if (frame_count < 1) throw ConfigError("synth spec: frame_count must be >= 1");
  if (frame_interval_ms <= 0.0) throw ConfigError("synth spec: frame_interval_ms must be > 0");
  if (max_sinusoids < 1 || max_sinusoids > 3) throw ConfigError("synth spec: max_sinusoids in 1..3");
  if (freq_min_hz < 0.0 || freq_max_hz < freq_min_hz) throw ConfigError("synth spec: bad freq range");
  if (amp_min < 0.0 || amp_max < amp_min) throw ConfigError("synth spec: bad amp range");
  if (noise_std < 0.0) throw ConfigError("synth spec: noise_std must be >= 0");
}

MotionSequence synth_motion(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  MotionSequence seq;
  seq.joints = spec.joints;
  seq.frame_interval_ms = spec.frame_interval_ms;
  const std::int64_t width = spec.joints * 3;
  seq.frames.assign(static_cast<std::size_t>(spec.frame_count * width), 0.0);
  const double dt = spec.frame_interval_ms / 1000.0;
  const double two_pi = 6.283185307179586476925286766559;
  for (std::int64_t ch = 0; ch < width; ++ch) {
    const int n_sin = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.max_sinusoids)));
    std::vector<double> amp(static_cast<std::size_t>(n_sin)), freq(amp.size()), phase(amp.size());
    double total = 0.0;
    for (int s = 0; s < n_sin; ++s) {
      amp[static_cast<std::size_t>(s)] = rng.uniform(spec.amp_min, spec.amp_max);
      freq[static_cast<std::size_t>(s)] = rng.uniform(spec.freq_min_hz, spec.freq_max_hz);
      phase[static_cast<std::size_t>(s)] = rng.uniform(0.0, two_pi);
      total += amp[static_cast<std::size_t>(s)];
    }
    if (total > 0.8) {
      const double shrink = 0.8 / total;
      for (auto& a : amp) a *= shrink;
    }
    for (std::int64_t t = 0; t < spec.frame_count; ++t) {
      double v = 0.0;
      for (int s = 0; s < n_sin; ++s) {
        const auto si = static_cast<std::size_t>(s);
        v += amp[si] * std::sin(two_pi * freq[si] * (static_cast<double>(t) * dt) + phase[si]);
      }
      if (spec.noise_std > 0.0) v += spec.noise_std * rng.normal();
      seq.frames[static_cast<std::size_t>(t * width + ch)] = v;
    }
  }
  return seq;
}

void write_predictions_csv(const std::string& path, const Tensor& preds) {
  if (!preds.defined() || preds.rank() != 4 || preds.dim(3) != 3) {
    throw ShapeError("write_predictions_csv: expected [N, T, M, 3] predictions");
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  const std::int64_t n = preds.dim(0), t_len = preds.dim(1), m = preds.dim(2);
  out << "sample_id,frame";
  for (std::int64_t j = 0; j < m; ++j) out << ",j" << j << "_x,j" << j << "_y,j" << j << "_z";
  out << "\n";
  out.precision(17);
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t t = 0; t < t_len; ++t) {
      out << i << "," << (t + 1);
      const double* row = preds.data() + ((i * t_len + t) * m) * 3;
      for (std::int64_t c = 0; c < m * 3; ++c) out << "," << row[c];
      out << "\n";
    }
  }
}

}  // namespace dmgnn
