#include "tgnn/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "tgnn/error.hpp"

namespace tgnn {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

constexpr char kMagic[] = "TGNNPARAMS v1\n";

void write_u64(std::ofstream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t read_u64(std::ifstream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw Error("checkpoint", "truncated checkpoint");
  return v;
}

ModelConfig parse_config_block(const std::string& text) {
  ModelConfig config;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "embed_dim") config.embed_dim = std::stoul(value);
    else if (key == "model_dim") config.model_dim = std::stoul(value);
    else if (key == "heads") config.heads = std::stoul(value);
    else if (key == "encoder_modules") config.encoder_modules = std::stoul(value);
    else if (key == "decoder_modules") config.decoder_modules = std::stoul(value);
    else if (key == "ffn_dim") config.ffn_dim = std::stoul(value);
    else if (key == "dropout") config.dropout = std::stod(value);
    else if (key == "max_generation_len") config.max_generation_len = std::stoul(value);
    else throw Error("checkpoint", "unknown config key '" + key + "'");
  }
  return config;
}

}  // namespace

void save_model_checkpoint(const std::string& path, const ModelConfig& config,
                           const ModelParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("io", "cannot open '" + path + "' for writing");
  out.write(kMagic, sizeof(kMagic) - 1);

  const std::string config_text = config.canonical_text();
  write_u64(out, config_text.size());
  out.write(config_text.data(), static_cast<std::streamsize>(config_text.size()));
  write_u64(out, config.hash());

  const auto named = params.named();
  write_u64(out, named.size());
  for (const auto& [name, tensor] : named) {
    write_u64(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u64(out, tensor.rank());
    for (std::size_t d : tensor.shape()) write_u64(out, d);
    const auto value = tensor.value();
    out.write(reinterpret_cast<const char*>(value.data()),
              static_cast<std::streamsize>(value.size() * sizeof(double)));
  }
  if (!out) throw Error("io", "failed writing '" + path + "'");
}

std::pair<ModelConfig, ModelParams> load_model_checkpoint(const std::string& path,
                                                          const ModelConfig* expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io", "cannot open '" + path + "'");
  char magic[sizeof(kMagic) - 1];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw Error("checkpoint", path + ": not a TGNNPARAMS v1 file");
  }

  const std::uint64_t config_len = read_u64(in);
  std::string config_text(config_len, '\0');
  in.read(config_text.data(), static_cast<std::streamsize>(config_len));
  if (!in) throw Error("checkpoint", "truncated config block");
  const std::uint64_t stored_hash = read_u64(in);

  ModelConfig config = parse_config_block(config_text);
  if (config.hash() != stored_hash) {
    throw Error("checkpoint", "config hash mismatch (corrupted or edited checkpoint)");
  }
  if (expected != nullptr && expected->hash() != stored_hash) {
    throw Error("checkpoint", "checkpoint config does not match the requested config");
  }

  // Build a skeleton with the right shapes, then fill values by name.
  Rng rng(0);
  ModelParams params = ModelParams::init(config, rng);
  auto named = params.named();

  const std::uint64_t count = read_u64(in);
  if (count != named.size()) throw Error("checkpoint", "parameter count mismatch");
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t name_len = read_u64(in);
    std::string name(name_len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(name_len));
    if (!in) throw Error("checkpoint", "truncated parameter name");
    if (name != named[i].first) {
      throw Error("checkpoint", "unexpected parameter '" + name + "'");
    }
    const std::uint64_t rank = read_u64(in);
    ad::Shape shape(rank);
    for (auto& d : shape) d = read_u64(in);
    if (shape != named[i].second.shape()) {
      throw Error("checkpoint", "shape mismatch for parameter '" + name + "'");
    }
    auto value = named[i].second.mutable_value();
    in.read(reinterpret_cast<char*>(value.data()),
            static_cast<std::streamsize>(value.size() * sizeof(double)));
    if (!in) throw Error("checkpoint", "truncated parameter data");
  }
  return {config, std::move(params)};
}

}  // namespace tgnn
