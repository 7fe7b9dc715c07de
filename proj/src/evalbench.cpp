#include "dmgnn/evalbench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "dmgnn/scales.hpp"

namespace dmgnn {

using nlohmann::json;

namespace {

std::vector<std::int64_t> horizon_frames_of(const std::vector<double>& horizons_ms,
                                            double frame_interval_ms, std::int64_t t_f) {
  if (frame_interval_ms <= 0.0) throw ConfigError("mae: frame interval must be positive");
  std::vector<std::int64_t> frames;
  for (double h : horizons_ms) {
    const double f = h / frame_interval_ms;
    const double rounded = std::round(f);
    if (std::abs(f - rounded) > 1e-9 || rounded < 1.0) {
      throw ConfigError("mae: horizon " + std::to_string(h) + " ms is not a whole frame at " +
                        std::to_string(frame_interval_ms) + " ms/frame");
    }
    if (static_cast<std::int64_t>(rounded) > t_f) {
      throw ConfigError("mae: horizon " + std::to_string(h) + " ms needs frame " +
                        std::to_string(static_cast<std::int64_t>(rounded)) +
                        " but only " + std::to_string(t_f) + " frames are predicted");
    }
    frames.push_back(static_cast<std::int64_t>(rounded));
  }
  return frames;
}

}  // namespace

std::vector<double> mae_at_horizons(const Tensor& pred, const Tensor& target,
                                    const std::vector<double>& horizons_ms,
                                    double frame_interval_ms) {
  if (!pred.defined() || !target.defined() || pred.shape() != target.shape() ||
      pred.rank() != 4 || pred.dim(3) != 3) {
    throw ShapeError("mae: prediction/target must be matching [N, T_f, M, 3] tensors");
  }
  const std::int64_t n = pred.dim(0), t_f = pred.dim(1), m = pred.dim(2);
  const auto frames = horizon_frames_of(horizons_ms, frame_interval_ms, t_f);
  std::vector<double> out;
  out.reserve(frames.size());
  for (auto f : frames) {
    const std::int64_t t = f - 1;  // frame k is the k-th predicted pose
    double total = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      double sq = 0.0;
      for (std::int64_t j = 0; j < m; ++j) {
        const double* pv = pred.data() + ((i * t_f + t) * m + j) * 3;
        const double* tv = target.data() + ((i * t_f + t) * m + j) * 3;
        const auto pe = expmap_to_euler(pv);
        const auto te = expmap_to_euler(tv);
        for (int a = 0; a < 3; ++a) {
          const double d = pe[static_cast<std::size_t>(a)] - te[static_cast<std::size_t>(a)];
          sq += d * d;
        }
      }
      total += std::sqrt(sq);
    }
    out.push_back(total / static_cast<double>(n));
  }
  return out;
}

Tensor tile_last_pose(const Tensor& inputs, std::int64_t t_f) {
  if (!inputs.defined() || inputs.rank() != 4 || inputs.dim(3) != 3) {
    throw ShapeError("tile_last_pose: expected [N, T_h, M, 3] inputs");
  }
  const std::int64_t n = inputs.dim(0), t_h = inputs.dim(1), m = inputs.dim(2);
  Tensor out = Tensor::zeros({n, t_f, m, 3});
  for (std::int64_t i = 0; i < n; ++i) {
    const double* last = inputs.data() + ((i * t_h + (t_h - 1)) * m) * 3;
    for (std::int64_t t = 0; t < t_f; ++t) {
      std::copy(last, last + m * 3, out.data() + ((i * t_f + t) * m) * 3);
    }
  }
  return out;
}

std::vector<double> zerov_baseline(const Tensor& inputs, const Tensor& targets,
                                   const std::vector<double>& horizons_ms,
                                   double frame_interval_ms) {
  return mae_at_horizons(tile_last_pose(inputs, targets.dim(1)), targets, horizons_ms,
                         frame_interval_ms);
}

// ---- EvalReport -------------------------------------------------------------

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "action,predictor,horizon_ms,mae\n";
  for (const auto& row : rows) {
    for (std::size_t h = 0; h < horizons_ms.size(); ++h) {
      os << row.action << "," << row.predictor << "," << horizons_ms[h] << "," << row.mae[h]
         << "\n";
    }
  }
  return os.str();
}

EvalReport EvalReport::from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DataError("eval report: empty CSV");
  EvalReport rep;
  std::map<std::pair<std::string, std::string>, std::size_t> row_of;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string action, predictor, horizon_s, mae_s;
    if (!std::getline(ls, action, ',') || !std::getline(ls, predictor, ',') ||
        !std::getline(ls, horizon_s, ',') || !std::getline(ls, mae_s)) {
      throw DataError("eval report: malformed line " + std::to_string(line_no));
    }
    const double horizon = std::stod(horizon_s);
    const double mae = std::stod(mae_s);
    if (std::find(rep.horizons_ms.begin(), rep.horizons_ms.end(), horizon) ==
        rep.horizons_ms.end()) {
      rep.horizons_ms.push_back(horizon);
    }
    auto key = std::make_pair(action, predictor);
    if (!row_of.count(key)) {
      row_of[key] = rep.rows.size();
      rep.rows.push_back({action, predictor, {}});
    }
    rep.rows[row_of[key]].mae.push_back(mae);
  }
  return rep;
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os << "action / predictor";
  for (double h : horizons_ms) os << "\t" << h << "ms";
  os << "\n";
  for (const auto& row : rows) {
    os << row.action << " / " << row.predictor;
    os.precision(4);
    for (double v : row.mae) os << "\t" << std::fixed << v;
    os.unsetf(std::ios_base::floatfield);
    os << "\n";
  }
  return os.str();
}

void EvalReport::save_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << to_csv();
}

EvalReport evaluate_model(Model& model, const std::vector<WindowedSample>& samples,
                          const std::vector<double>& horizons_ms) {
  if (samples.empty()) throw ContractError("evaluate_model: no samples");
  model.set_training(false);
  NoGradGuard ng;
  const auto& cfg = model.config();

  std::map<std::string, std::vector<const WindowedSample*>> by_action;
  for (const auto& s : samples) {
    by_action[s.action.empty() ? "all" : s.action].push_back(&s);
    by_action["average"].push_back(&s);
  }
  if (by_action.size() == 2) by_action.erase("average");  // single action: one row is enough

  EvalReport rep;
  rep.horizons_ms = horizons_ms;
  for (auto& [action, group] : by_action) {
    std::vector<WindowedSample> copy;
    copy.reserve(group.size());
    for (auto* p : group) copy.push_back(*p);
    Tensor inputs = stack_inputs(copy, cfg.history, model.joints());
    Tensor targets = stack_targets(copy, cfg.horizon, model.joints());
    // Predict in manageable batches to bound tape-free memory use.
    Tensor preds = Tensor::zeros(targets.shape());
    const std::int64_t n = inputs.dim(0);
    const std::int64_t chunk = std::max<std::int64_t>(1, cfg.batch_size);
    for (std::int64_t at = 0; at < n; at += chunk) {
      const std::int64_t len = std::min(chunk, n - at);
      Tensor part = model.forward(slice_axis(inputs, 0, at, len));
      std::copy(part.values().begin(), part.values().end(),
                preds.values().begin() +
                    static_cast<std::ptrdiff_t>(at * cfg.horizon * model.joints() * 3));
    }
    rep.rows.push_back({action, "model",
                        mae_at_horizons(preds, targets, horizons_ms, cfg.frame_interval_ms)});
    rep.rows.push_back({action, "zerov",
                        zerov_baseline(inputs, targets, horizons_ms, cfg.frame_interval_ms)});
  }
  return rep;
}

// ---- BenchReport ---------------------------------------------------------------

std::string BenchReport::to_json_string() const {
  json j;
  j["config_fingerprint"] = config_fingerprint;
  j["batch"] = batch;
  j["horizon_frames"] = horizon_frames;
  j["repetitions"] = repetitions;
  j["warmup"] = warmup;
  j["samples_ms"] = samples_ms;
  j["mean_ms"] = mean_ms;
  j["median_ms"] = median_ms;
  j["min_ms"] = min_ms;
  j["max_ms"] = max_ms;
  return j.dump(2);
}

BenchReport BenchReport::from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("bench report: invalid JSON: ") + e.what());
  }
  BenchReport r;
  r.config_fingerprint = j.value("config_fingerprint", std::string());
  r.batch = j.value("batch", std::int64_t(0));
  r.horizon_frames = j.value("horizon_frames", std::int64_t(0));
  r.repetitions = j.value("repetitions", 0);
  r.warmup = j.value("warmup", 0);
  if (j.contains("samples_ms")) r.samples_ms = j.at("samples_ms").get<std::vector<double>>();
  r.mean_ms = j.value("mean_ms", 0.0);
  r.median_ms = j.value("median_ms", 0.0);
  r.min_ms = j.value("min_ms", 0.0);
  r.max_ms = j.value("max_ms", 0.0);
  return r;
}

void BenchReport::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << to_json_string() << "\n";
}

BenchReport BenchReport::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_json_string(ss.str());
}

BenchReport bench_inference(Model& model, const Tensor& batch, std::int64_t horizon_frames,
                            int repetitions, int warmup) {
  if (repetitions < 1) throw ContractError("bench_inference: repetitions must be >= 1");
  model.set_training(false);
  NoGradGuard ng;
  BenchReport rep;
  rep.config_fingerprint = config_fingerprint(model.config());
  rep.batch = batch.dim(0);
  rep.horizon_frames = horizon_frames;
  rep.repetitions = repetitions;
  rep.warmup = warmup;

  auto run_once = [&]() {
    Tensor h0 = model.encode(batch);
    Tensor seed = slice_axis(batch, 1, model.config().history - 3, 3);
    (void)model.decode(seed, h0, horizon_frames);
  };
  for (int i = 0; i < warmup; ++i) run_once();
  for (int i = 0; i < repetitions; ++i) {
    const auto start = std::chrono::steady_clock::now();
    run_once();
    const auto stop = std::chrono::steady_clock::now();
    rep.samples_ms.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
  }
  std::vector<double> sorted = rep.samples_ms;
  std::sort(sorted.begin(), sorted.end());
  rep.min_ms = sorted.front();
  rep.max_ms = sorted.back();
  double sum = 0.0;
  for (double v : sorted) sum += v;
  rep.mean_ms = sum / static_cast<double>(sorted.size());
  const std::size_t mid = sorted.size() / 2;
  rep.median_ms = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
  return rep;
}

}  // namespace dmgnn
