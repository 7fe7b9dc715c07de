#include "dmgnn/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dmgnn/tensor.hpp"

namespace dmgnn {

using nlohmann::json;

void ModelConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("config field '" + field + "': " + why);
  };
  if (scales.empty()) fail("scales", "must not be empty");
  if (scales.front() != 1) fail("scales", "must start with the joint scale (1)");
  std::set<int> seen;
  for (int s : scales) {
    if (s < 1 || s > 5) fail("scales", "scale id " + std::to_string(s) + " outside 1..5");
    if (!seen.insert(s).second) fail("scales", "duplicate scale id " + std::to_string(s));
  }
  if (n_mgcu < 1 || n_mgcu > 6) fail("n_mgcu", "must be in 1..6");
  for (int p : csfb_positions) {
    if (p < 1 || p > n_mgcu) {
      fail("csfb_positions", "position " + std::to_string(p) + " outside 1.." +
                                 std::to_string(n_mgcu));
    }
  }
  if (static_cast<int>(channels.size()) != n_mgcu) {
    fail("channels", "need exactly n_mgcu (" + std::to_string(n_mgcu) + ") entries, got " +
                         std::to_string(channels.size()));
  }
  for (auto c : channels) {
    if (c < 1) fail("channels", "channel counts must be positive");
  }
  if (lambda < 0.0) fail("lambda", "must be non-negative");
  if (beta_max < 0 || beta_max > 2) fail("beta_max", "must be in 0..2");
  if (hidden < 1) fail("hidden", "must be positive");
  if (csfb_hidden < 1) fail("csfb_hidden", "must be positive");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout", "must lie in [0, 1)");
  if (bn_momentum <= 0.0 || bn_momentum > 1.0) fail("bn_momentum", "must lie in (0, 1]");
  if (history < 3) fail("history", "need at least 3 observed frames");
  if (horizon < 1) fail("horizon", "must be positive");
  if (frame_interval_ms <= 0.0) fail("frame_interval_ms", "must be positive");
  if (lr <= 0.0) fail("lr", "must be positive");
  if (adam_beta1 < 0.0 || adam_beta1 >= 1.0) fail("adam_beta1", "must lie in [0, 1)");
  if (adam_beta2 < 0.0 || adam_beta2 >= 1.0) fail("adam_beta2", "must lie in [0, 1)");
  if (adam_eps <= 0.0) fail("adam_eps", "must be positive");
  if (batch_size < 1) fail("batch_size", "must be positive");
  if (clip_norm <= 0.0) fail("clip_norm", "must be positive");
  if (steps < 1) fail("steps", "must be positive");
  if (checkpoint_every < 0) fail("checkpoint_every", "must be non-negative");
  if (log_every < 1) fail("log_every", "must be positive");
  // Temporal lengths must stay >= kernel support through the whole stack.
  for (int stage = 0; stage <= n_mgcu; ++stage) {
    if (stage_input_len(stage) < 1) {
      fail("history", "temporal length collapses below 1 at MGCU " + std::to_string(stage) +
                          " (history too short for n_mgcu)");
    }
  }
  const std::int64_t t_last = stage_input_len(n_mgcu);
  if ((t_last + 4 - 5) / 2 + 1 < 1) {
    fail("history", "too short for the final fusion stage");
  }
}

std::int64_t ModelConfig::stage_input_len(int stage) const {
  std::int64_t t = history;
  for (int i = 1; i <= stage; ++i) {
    const std::int64_t stride = (i == 1) ? 1 : 2;
    t = (t + 4 - 5) / stride + 1;  // kernel 5, pad 2
  }
  return t;
}

namespace {

json to_json(const ModelConfig& c) {
  json j;
  j["scales"] = c.scales;
  j["n_mgcu"] = c.n_mgcu;
  j["csfb_positions"] = c.csfb_positions;
  j["channels"] = c.channels;
  j["lambda"] = c.lambda;
  j["beta_max"] = c.beta_max;
  j["freeze_adjacency"] = c.freeze_adjacency;
  j["plain_gru"] = c.plain_gru;
  j["csfb_bidirectional"] = c.csfb_bidirectional;
  j["csfb_softmax_over_coarse"] = c.csfb_softmax_over_coarse;
  j["hidden"] = c.hidden;
  j["csfb_hidden"] = c.csfb_hidden;
  j["dropout"] = c.dropout;
  j["bn_momentum"] = c.bn_momentum;
  j["history"] = c.history;
  j["horizon"] = c.horizon;
  j["frame_interval_ms"] = c.frame_interval_ms;
  j["lr"] = c.lr;
  j["adam_beta1"] = c.adam_beta1;
  j["adam_beta2"] = c.adam_beta2;
  j["adam_eps"] = c.adam_eps;
  j["batch_size"] = c.batch_size;
  j["clip_norm"] = c.clip_norm;
  j["steps"] = c.steps;
  j["checkpoint_every"] = c.checkpoint_every;
  j["log_every"] = c.log_every;
  j["teacher_forcing"] = c.teacher_forcing;
  j["seed"] = c.seed;
  j["scale_library_path"] = c.scale_library_path;
  return j;
}

template <typename T>
void read_field(const json& j, const char* key, T& out, std::set<std::string>& consumed) {
  consumed.insert(key);
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config field '") + key + "': wrong type");
  }
}

}  // namespace

std::string ModelConfig::to_json_string(int indent) const { return to_json(*this).dump(indent); }

ModelConfig ModelConfig::from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  ModelConfig c;
  std::set<std::string> consumed;
  read_field(j, "scales", c.scales, consumed);
  read_field(j, "n_mgcu", c.n_mgcu, consumed);
  read_field(j, "csfb_positions", c.csfb_positions, consumed);
  read_field(j, "channels", c.channels, consumed);
  read_field(j, "lambda", c.lambda, consumed);
  read_field(j, "beta_max", c.beta_max, consumed);
  read_field(j, "freeze_adjacency", c.freeze_adjacency, consumed);
  read_field(j, "plain_gru", c.plain_gru, consumed);
  read_field(j, "csfb_bidirectional", c.csfb_bidirectional, consumed);
  read_field(j, "csfb_softmax_over_coarse", c.csfb_softmax_over_coarse, consumed);
  read_field(j, "hidden", c.hidden, consumed);
  read_field(j, "csfb_hidden", c.csfb_hidden, consumed);
  read_field(j, "dropout", c.dropout, consumed);
  read_field(j, "bn_momentum", c.bn_momentum, consumed);
  read_field(j, "history", c.history, consumed);
  read_field(j, "horizon", c.horizon, consumed);
  read_field(j, "frame_interval_ms", c.frame_interval_ms, consumed);
  read_field(j, "lr", c.lr, consumed);
  read_field(j, "adam_beta1", c.adam_beta1, consumed);
  read_field(j, "adam_beta2", c.adam_beta2, consumed);
  read_field(j, "adam_eps", c.adam_eps, consumed);
  read_field(j, "batch_size", c.batch_size, consumed);
  read_field(j, "clip_norm", c.clip_norm, consumed);
  read_field(j, "steps", c.steps, consumed);
  read_field(j, "checkpoint_every", c.checkpoint_every, consumed);
  read_field(j, "log_every", c.log_every, consumed);
  read_field(j, "teacher_forcing", c.teacher_forcing, consumed);
  read_field(j, "seed", c.seed, consumed);
  read_field(j, "scale_library_path", c.scale_library_path, consumed);
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!consumed.count(it.key())) {
      throw ConfigError("config field '" + it.key() + "': unknown field");
    }
  }
  c.validate();
  return c;
}

ModelConfig ModelConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_json_string(ss.str());
}

void ModelConfig::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("config: cannot write " + path);
  out << to_json_string() << "\n";
}

std::string config_fingerprint(const ModelConfig& cfg) {
  const std::string text = cfg.to_json_string(-1);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

}  // namespace dmgnn
