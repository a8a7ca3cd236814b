#include "tgnn/config.hpp"

#include <cstdio>
#include <fstream>

#include "tgnn/error.hpp"

namespace tgnn {

namespace {

bool parse_bool(const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw Error("config", "expected a boolean, got '" + value + "'");
}

}  // namespace

std::string RunConfig::canonical_text() const {
  char buf[1024];
  std::snprintf(
      buf, sizeof(buf),
      "embed_dim=%zu\nmodel_dim=%zu\nheads=%zu\nencoder_modules=%zu\ndecoder_modules=%zu\n"
      "ffn_dim=%zu\ndropout=%.17g\nmax_generation_len=%zu\n"
      "same_category_negatives=%zu\nrandom_distractors=%zu\nlearning_rate=%.17g\n"
      "weight_decay=%.17g\nplateau_factor=%.17g\nplateau_patience=%zu\n"
      "early_stop_patience=%zu\nmax_epochs=%zu\nseed=%llu\naccumulate_outfits=%zu\n"
      "augment_permutations=%s\nimprovement_threshold=%.17g\nthreads=%zu\n"
      "partition_size_target=%zu\n",
      model.embed_dim, model.model_dim, model.heads, model.encoder_modules,
      model.decoder_modules, model.resolved_ffn_dim(), trainer.dropout,
      model.max_generation_len, trainer.same_category_negatives, trainer.random_distractors,
      trainer.learning_rate, trainer.weight_decay, trainer.plateau_factor,
      trainer.plateau_patience, trainer.early_stop_patience, trainer.max_epochs,
      static_cast<unsigned long long>(trainer.seed), trainer.accumulate_outfits,
      trainer.augment_permutations ? "true" : "false", trainer.improvement_threshold,
      trainer.threads, partition_size_target);
  return buf;
}

std::uint64_t RunConfig::hash() const {
  const std::string text = canonical_text();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void apply_config_entry(RunConfig& config, const std::string& key, const std::string& value) {
  if (key == "embed_dim") config.model.embed_dim = std::stoul(value);
  else if (key == "model_dim") config.model.model_dim = std::stoul(value);
  else if (key == "heads") config.model.heads = std::stoul(value);
  else if (key == "encoder_modules") config.model.encoder_modules = std::stoul(value);
  else if (key == "decoder_modules") config.model.decoder_modules = std::stoul(value);
  else if (key == "ffn_dim") config.model.ffn_dim = std::stoul(value);
  else if (key == "dropout") {
    config.model.dropout = std::stod(value);
    config.trainer.dropout = config.model.dropout;
  } else if (key == "max_generation_len") config.model.max_generation_len = std::stoul(value);
  else if (key == "same_category_negatives") config.trainer.same_category_negatives = std::stoul(value);
  else if (key == "random_distractors") config.trainer.random_distractors = std::stoul(value);
  else if (key == "learning_rate") config.trainer.learning_rate = std::stod(value);
  else if (key == "weight_decay") config.trainer.weight_decay = std::stod(value);
  else if (key == "plateau_factor") config.trainer.plateau_factor = std::stod(value);
  else if (key == "plateau_patience") config.trainer.plateau_patience = std::stoul(value);
  else if (key == "early_stop_patience") config.trainer.early_stop_patience = std::stoul(value);
  else if (key == "max_epochs") config.trainer.max_epochs = std::stoul(value);
  else if (key == "seed") config.trainer.seed = std::stoull(value);
  else if (key == "accumulate_outfits") config.trainer.accumulate_outfits = std::stoul(value);
  else if (key == "augment_permutations") config.trainer.augment_permutations = parse_bool(value);
  else if (key == "improvement_threshold") config.trainer.improvement_threshold = std::stod(value);
  else if (key == "threads") config.trainer.threads = std::stoul(value);
  else if (key == "partition_size_target") config.partition_size_target = std::stoul(value);
  else throw Error("config", "unknown config key '" + key + "'");
}

RunConfig load_run_config(const std::string& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw Error("io", "cannot open '" + path + "'");
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line.resize(hash_pos);
    while (!line.empty() && (line.back() == ' ' || line.back() == '\r')) line.pop_back();
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error("parse", path + ":" + std::to_string(line_no) + ": expected key=value");
    }
    try {
      apply_config_entry(base, line.substr(0, eq), line.substr(eq + 1));
    } catch (const Error& e) {
      throw Error("parse", path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

void save_run_config(const std::string& path, const RunConfig& config) {
  std::ofstream out(path);
  if (!out) throw Error("io", "cannot open '" + path + "' for writing");
  out << config.canonical_text();
  if (!out) throw Error("io", "failed writing '" + path + "'");
}

}  // namespace tgnn
