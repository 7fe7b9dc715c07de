#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dmgnn/model.hpp"
#include "dmgnn/tensor.hpp"

namespace dmgnn {

// Binary checkpoint: versioned header, embedded resolved config JSON,
// named parameter tensors, named buffers (batch-norm running statistics),
// and an optional Adam section. Byte layout documented in
// docs/checkpoint_format.md.
struct Checkpoint {
  std::string config_json;
  std::vector<std::pair<std::string, Tensor>> params;
  std::vector<std::pair<std::string, std::vector<double>>> buffers;
  bool has_optimizer = false;
  AdamState optimizer;
};

void save_checkpoint(const std::string& path, Model& model, const AdamState* opt = nullptr);
Checkpoint read_checkpoint(const std::string& path);

// Copies checkpoint params/buffers into the model, matching by name;
// throws DataError naming any missing/extra/mis-shaped entry.
void load_into(Model& model, const Checkpoint& ck);

// Rebuilds the model from the embedded config and restores weights
// (and the optimizer when requested and present).
Model load_model(const std::string& path, AdamState* opt = nullptr);

}  // namespace dmgnn
