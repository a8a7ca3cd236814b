#pragma once

#include <string>
#include <utility>

#include "tgnn/model.hpp"

namespace tgnn {

/// Versioned binary checkpoint: config block, config hash, then named
/// parameter arrays with shapes. Loading verifies the recorded hash and, when
/// `expected` is given, rejects a config mismatch.
void save_model_checkpoint(const std::string& path, const ModelConfig& config,
                           const ModelParams& params);

std::pair<ModelConfig, ModelParams> load_model_checkpoint(const std::string& path,
                                                          const ModelConfig* expected = nullptr);

}  // namespace tgnn
