#pragma once

#include <cstdint>
#include <string>

#include "tgnn/model.hpp"
#include "tgnn/training.hpp"

namespace tgnn {

/// Everything a pipeline run needs: model and trainer hyperparameters plus
/// the graph knobs. File form is key=value lines; '#' starts a comment.
struct RunConfig {
  ModelConfig model;
  TrainerConfig trainer;
  std::size_t partition_size_target = 50;  // outfits per graph partition

  std::string canonical_text() const;
  std::uint64_t hash() const;
};

/// Applies the file on top of `base` (flags > file > defaults is the caller's
/// job: parse the file first, then overwrite with flags).
RunConfig load_run_config(const std::string& path, RunConfig base = {});

void save_run_config(const std::string& path, const RunConfig& config);

/// Parses one key=value assignment into the config; throws on unknown keys.
void apply_config_entry(RunConfig& config, const std::string& key, const std::string& value);

}  // namespace tgnn
