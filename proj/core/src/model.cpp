#include "tgnn/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "tgnn/error.hpp"

namespace tgnn {

namespace {

ad::Tensor glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> values(fan_in * fan_out);
  for (double& v : values) v = rng.uniform(-limit, limit);
  return ad::Tensor::leaf({fan_in, fan_out}, std::move(values), true);
}

TransitionParams init_transition(std::size_t in, std::size_t out, Rng& rng) {
  return TransitionParams{glorot(in, out, rng), ad::Tensor::zeros({out}, true)};
}

AttentionParams init_attention(std::size_t dim, Rng& rng) {
  AttentionParams p;
  p.wq = glorot(dim, dim, rng);
  p.bq = ad::Tensor::zeros({dim}, true);
  p.wk = glorot(dim, dim, rng);
  p.bk = ad::Tensor::zeros({dim}, true);
  p.wv = glorot(dim, dim, rng);
  p.bv = ad::Tensor::zeros({dim}, true);
  p.wo = glorot(dim, dim, rng);
  p.bo = ad::Tensor::zeros({dim}, true);
  return p;
}

FfnParams init_ffn(std::size_t dim, std::size_t hidden, Rng& rng) {
  FfnParams p;
  p.w1 = glorot(dim, hidden, rng);
  p.b1 = ad::Tensor::zeros({hidden}, true);
  p.w2 = glorot(hidden, dim, rng);
  p.b2 = ad::Tensor::zeros({dim}, true);
  return p;
}

LayerNormParams init_layer_norm(std::size_t dim) {
  return LayerNormParams{ad::Tensor::full({dim}, 1.0, true), ad::Tensor::zeros({dim}, true)};
}

void collect_attention(const std::string& prefix, const AttentionParams& p,
                       std::vector<std::pair<std::string, ad::Tensor>>& out) {
  out.emplace_back(prefix + ".wq", p.wq);
  out.emplace_back(prefix + ".bq", p.bq);
  out.emplace_back(prefix + ".wk", p.wk);
  out.emplace_back(prefix + ".bk", p.bk);
  out.emplace_back(prefix + ".wv", p.wv);
  out.emplace_back(prefix + ".bv", p.bv);
  out.emplace_back(prefix + ".wo", p.wo);
  out.emplace_back(prefix + ".bo", p.bo);
}

void collect_ffn(const std::string& prefix, const FfnParams& p,
                 std::vector<std::pair<std::string, ad::Tensor>>& out) {
  out.emplace_back(prefix + ".w1", p.w1);
  out.emplace_back(prefix + ".b1", p.b1);
  out.emplace_back(prefix + ".w2", p.w2);
  out.emplace_back(prefix + ".b2", p.b2);
}

void collect_ln(const std::string& prefix, const LayerNormParams& p,
                std::vector<std::pair<std::string, ad::Tensor>>& out) {
  out.emplace_back(prefix + ".gain", p.gain);
  out.emplace_back(prefix + ".bias", p.bias);
}

// Projection with bias: x W + b.
ad::Tensor project(ad::Tape& tape, const ad::Tensor& x, const ad::Tensor& w, const ad::Tensor& b) {
  return tape.add(tape.matmul(x, w), b);
}

ad::Tensor feed_forward(ad::Tape& tape, const ad::Tensor& x, const FfnParams& ffn,
                        double dropout_rate, Rng* rng) {
  ad::Tensor hidden = tape.relu(project(tape, x, ffn.w1, ffn.b1));
  if (rng != nullptr) hidden = tape.dropout(hidden, dropout_rate, *rng, true);
  return project(tape, hidden, ffn.w2, ffn.b2);
}

// Leaf {count, embed_dim} with the embeddings of the listed garments.
ad::Tensor gather_embeddings(std::span<const int> garments, const Catalog& catalog) {
  const std::size_t dim = catalog.embed_dim();
  std::vector<double> values;
  values.reserve(garments.size() * dim);
  for (int g : garments) {
    const auto emb = catalog.embedding(g);
    values.insert(values.end(), emb.begin(), emb.end());
  }
  return ad::Tensor::leaf({garments.size(), dim}, std::move(values), false);
}

bool share_an_outfit(int a, int b, const Catalog& catalog) {
  const auto& oa = catalog.outfits_of(a);
  const auto& ob = catalog.outfits_of(b);
  std::size_t i = 0, j = 0;
  while (i < oa.size() && j < ob.size()) {
    if (oa[i] == ob[j]) return true;
    if (oa[i] < ob[j]) ++i;
    else ++j;
  }
  return false;
}

// C^(t): pool minus already-chosen garments and everything sharing an outfit
// with one of them; the stop token always survives.
std::vector<int> filter_pool(std::span<const int> pool, std::span<const int> chosen,
                             const Catalog& catalog) {
  std::vector<int> out;
  out.reserve(pool.size());
  for (int g : pool) {
    if (g == kStopToken) {
      out.push_back(g);
      continue;
    }
    bool drop = false;
    for (int c : chosen) {
      if (g == c || share_an_outfit(g, c, catalog)) {
        drop = true;
        break;
      }
    }
    if (!drop) out.push_back(g);
  }
  return out;
}

}  // namespace

void ModelConfig::validate() const {
  if (embed_dim == 0 || model_dim == 0 || heads == 0 || max_generation_len == 0) {
    throw Error("config", "model dimensions must be positive");
  }
  if (model_dim % heads != 0) throw Error("config", "model_dim must be divisible by heads");
  if (dropout < 0.0 || dropout >= 1.0) throw Error("config", "dropout must be in [0, 1)");
}

std::string ModelConfig::canonical_text() const {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "embed_dim=%zu\nmodel_dim=%zu\nheads=%zu\nencoder_modules=%zu\n"
                "decoder_modules=%zu\nffn_dim=%zu\ndropout=%.17g\nmax_generation_len=%zu\n",
                embed_dim, model_dim, heads, encoder_modules, decoder_modules,
                resolved_ffn_dim(), dropout, max_generation_len);
  return buf;
}

std::uint64_t ModelConfig::hash() const {
  const std::string text = canonical_text();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

ModelParams ModelParams::init(const ModelConfig& config, Rng& rng) {
  config.validate();
  const std::size_t de = config.embed_dim;
  const std::size_t dm = config.model_dim;
  const std::size_t dff = config.resolved_ffn_dim();

  ModelParams p;
  p.encoder_transition = init_transition(de, dm, rng);
  p.encoder.resize(config.encoder_modules);
  for (auto& module : p.encoder) {
    module.attention = init_attention(dm, rng);
    module.ln_attention = init_layer_norm(dm);
    module.ffn = init_ffn(dm, dff, rng);
    module.ln_ffn = init_layer_norm(dm);
  }
  p.decoder_transition = init_transition(de, dm, rng);
  p.decoder.resize(config.decoder_modules);
  for (auto& module : p.decoder) {
    module.self_attention = init_attention(dm, rng);
    module.ln_self = init_layer_norm(dm);
    module.cross_attention = init_attention(dm, rng);
    module.ln_cross = init_layer_norm(dm);
    module.ffn = init_ffn(dm, dff, rng);
    module.ln_ffn = init_layer_norm(dm);
  }
  std::vector<double> stop(de);
  const double scale = 1.0 / std::sqrt(static_cast<double>(de));
  for (double& v : stop) v = rng.normal(0.0, scale);
  p.stop_embedding = ad::Tensor::leaf({1, de}, std::move(stop), true);
  return p;
}

ModelParams ModelParams::uniform_scorer(const ModelConfig& config, Rng& rng) {
  ModelParams p = init(config, rng);
  for (auto v : {&p.decoder_transition.weight, &p.decoder_transition.bias, &p.stop_embedding}) {
    auto values = v->mutable_value();
    std::fill(values.begin(), values.end(), 0.0);
  }
  return p;
}

std::vector<std::pair<std::string, ad::Tensor>> ModelParams::named() const {
  std::vector<std::pair<std::string, ad::Tensor>> out;
  out.emplace_back("encoder_transition.weight", encoder_transition.weight);
  out.emplace_back("encoder_transition.bias", encoder_transition.bias);
  for (std::size_t i = 0; i < encoder.size(); ++i) {
    const std::string prefix = "encoder." + std::to_string(i);
    collect_attention(prefix + ".attention", encoder[i].attention, out);
    collect_ln(prefix + ".ln_attention", encoder[i].ln_attention, out);
    collect_ffn(prefix + ".ffn", encoder[i].ffn, out);
    collect_ln(prefix + ".ln_ffn", encoder[i].ln_ffn, out);
  }
  out.emplace_back("decoder_transition.weight", decoder_transition.weight);
  out.emplace_back("decoder_transition.bias", decoder_transition.bias);
  for (std::size_t i = 0; i < decoder.size(); ++i) {
    const std::string prefix = "decoder." + std::to_string(i);
    collect_attention(prefix + ".self_attention", decoder[i].self_attention, out);
    collect_ln(prefix + ".ln_self", decoder[i].ln_self, out);
    collect_attention(prefix + ".cross_attention", decoder[i].cross_attention, out);
    collect_ln(prefix + ".ln_cross", decoder[i].ln_cross, out);
    collect_ffn(prefix + ".ffn", decoder[i].ffn, out);
    collect_ln(prefix + ".ln_ffn", decoder[i].ln_ffn, out);
  }
  out.emplace_back("stop_embedding", stop_embedding);
  return out;
}

std::vector<ad::Tensor> ModelParams::tensors() const {
  std::vector<ad::Tensor> out;
  for (auto& [name, tensor] : named()) {
    (void)name;
    out.push_back(tensor);
  }
  return out;
}

ModelParams ModelParams::clone() const {
  ModelParams copy = *this;
  auto deep = [](ad::Tensor& t) {
    t = ad::Tensor::leaf(t.shape(), std::vector<double>(t.value().begin(), t.value().end()),
                         t.requires_grad());
  };
  deep(copy.encoder_transition.weight);
  deep(copy.encoder_transition.bias);
  deep(copy.decoder_transition.weight);
  deep(copy.decoder_transition.bias);
  for (auto& m : copy.encoder) {
    for (auto t : {&m.attention.wq, &m.attention.bq, &m.attention.wk, &m.attention.bk,
                   &m.attention.wv, &m.attention.bv, &m.attention.wo, &m.attention.bo,
                   &m.ln_attention.gain, &m.ln_attention.bias, &m.ffn.w1, &m.ffn.b1, &m.ffn.w2,
                   &m.ffn.b2, &m.ln_ffn.gain, &m.ln_ffn.bias}) {
      deep(*t);
    }
  }
  for (auto& m : copy.decoder) {
    for (auto t : {&m.self_attention.wq, &m.self_attention.bq, &m.self_attention.wk,
                   &m.self_attention.bk, &m.self_attention.wv, &m.self_attention.bv,
                   &m.self_attention.wo, &m.self_attention.bo, &m.ln_self.gain, &m.ln_self.bias,
                   &m.cross_attention.wq, &m.cross_attention.bq, &m.cross_attention.wk,
                   &m.cross_attention.bk, &m.cross_attention.wv, &m.cross_attention.bv,
                   &m.cross_attention.wo, &m.cross_attention.bo, &m.ln_cross.gain,
                   &m.ln_cross.bias, &m.ffn.w1, &m.ffn.b1, &m.ffn.w2, &m.ffn.b2, &m.ln_ffn.gain,
                   &m.ln_ffn.bias}) {
      deep(*t);
    }
  }
  deep(copy.stop_embedding);
  return copy;
}

void ModelParams::copy_values_from(const ModelParams& other) {
  auto dst = tensors();
  auto src = other.tensors();
  if (dst.size() != src.size()) throw Error("model", "parameter layout mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i].shape() != src[i].shape()) throw Error("model", "parameter shape mismatch");
    auto d = dst[i].mutable_value();
    const auto s = src[i].value();
    std::copy(s.begin(), s.end(), d.begin());
  }
}

EncoderInput make_encoder_input(const ItemRelationGraph& irg, const Catalog& catalog) {
  EncoderInput input;
  input.node_ids = irg.nodes;
  input.neighbors = irg.row_lists();
  input.embeddings = gather_embeddings(irg.nodes, catalog);
  return input;
}

ad::Tensor embedding_rows(std::span<const int> garments, const Catalog& catalog) {
  return gather_embeddings(garments, catalog);
}

ad::Tensor transition(ad::Tape& tape, const ad::Tensor& x, const TransitionParams& params,
                      double dropout_rate, Rng* dropout_rng) {
  if ((x.rank() == 2 ? x.cols() : x.numel()) != params.weight.rows()) {
    throw Error("model", "transition input width mismatch");
  }
  ad::Tensor out = tape.relu(project(tape, x, params.weight, params.bias));
  if (dropout_rng != nullptr) out = tape.dropout(out, dropout_rate, *dropout_rng, true);
  return out;
}

ad::Tensor neighborhood_attention(ad::Tape& tape, std::size_t row,
                                  const ad::NeighborLists& neighbors,
                                  const ad::Tensor& node_rows, const AttentionParams& params,
                                  std::size_t heads) {
  if (row >= neighbors.row_count()) throw Error("model", "node row out of range");
  ad::Tensor q = project(tape, tape.index_select(node_rows, std::vector<std::size_t>{row}),
                         params.wq, params.bq);
  ad::Tensor k = project(tape, node_rows, params.wk, params.bk);
  ad::Tensor v = project(tape, node_rows, params.wv, params.bv);
  ad::NeighborLists single;
  single.offsets = {0, neighbors.row(row).size()};
  single.items.assign(neighbors.row(row).begin(), neighbors.row(row).end());
  ad::Tensor mixed = tape.attention(q, k, v, heads, ad::AttentionPattern::kNeighbors, &single);
  return tape.select_row(project(tape, mixed, params.wo, params.bo), 0);
}

EncoderOutput encode_graph(ad::Tape& tape, const EncoderInput& input, const ModelParams& params,
                           const ModelConfig& config, Rng* dropout_rng) {
  if (input.embeddings.rows() != input.node_ids.size() ||
      input.neighbors.row_count() != input.node_ids.size()) {
    throw Error("model", "encoder input is inconsistent");
  }
  const double rate = config.dropout;
  ad::Tensor h = transition(tape, input.embeddings, params.encoder_transition, rate, dropout_rng);
  for (const auto& module : params.encoder) {
    ad::Tensor q = project(tape, h, module.attention.wq, module.attention.bq);
    ad::Tensor k = project(tape, h, module.attention.wk, module.attention.bk);
    ad::Tensor v = project(tape, h, module.attention.wv, module.attention.bv);
    ad::Tensor mixed =
        tape.attention(q, k, v, config.heads, ad::AttentionPattern::kNeighbors, &input.neighbors);
    mixed = project(tape, mixed, module.attention.wo, module.attention.bo);
    if (dropout_rng != nullptr) mixed = tape.dropout(mixed, rate, *dropout_rng, true);
    h = tape.layer_norm(tape.add(h, mixed), module.ln_attention.gain, module.ln_attention.bias, 1);
    ad::Tensor f = feed_forward(tape, h, module.ffn, rate, dropout_rng);
    h = tape.layer_norm(tape.add(h, f), module.ln_ffn.gain, module.ln_ffn.bias, 1);
  }
  return EncoderOutput{input.node_ids, h};
}

ad::Tensor decode_prefix(ad::Tape& tape, const ad::Tensor& prefix_embeddings,
                         const ad::Tensor& encoder_rows, const ModelParams& params,
                         const ModelConfig& config, Rng* dropout_rng) {
  if (prefix_embeddings.rows() == 0) throw Error("model", "empty decoder prefix");
  const double rate = config.dropout;
  ad::Tensor d = transition(tape, prefix_embeddings, params.decoder_transition, rate, dropout_rng);
  for (const auto& module : params.decoder) {
    ad::Tensor q = project(tape, d, module.self_attention.wq, module.self_attention.bq);
    ad::Tensor k = project(tape, d, module.self_attention.wk, module.self_attention.bk);
    ad::Tensor v = project(tape, d, module.self_attention.wv, module.self_attention.bv);
    ad::Tensor mixed = tape.attention(q, k, v, config.heads, ad::AttentionPattern::kCausal);
    mixed = project(tape, mixed, module.self_attention.wo, module.self_attention.bo);
    if (dropout_rng != nullptr) mixed = tape.dropout(mixed, rate, *dropout_rng, true);
    d = tape.layer_norm(tape.add(d, mixed), module.ln_self.gain, module.ln_self.bias, 1);

    ad::Tensor cq = project(tape, d, module.cross_attention.wq, module.cross_attention.bq);
    ad::Tensor ck = project(tape, encoder_rows, module.cross_attention.wk, module.cross_attention.bk);
    ad::Tensor cv = project(tape, encoder_rows, module.cross_attention.wv, module.cross_attention.bv);
    ad::Tensor cross = tape.attention(cq, ck, cv, config.heads, ad::AttentionPattern::kFull);
    cross = project(tape, cross, module.cross_attention.wo, module.cross_attention.bo);
    if (dropout_rng != nullptr) cross = tape.dropout(cross, rate, *dropout_rng, true);
    d = tape.layer_norm(tape.add(d, cross), module.ln_cross.gain, module.ln_cross.bias, 1);

    ad::Tensor f = feed_forward(tape, d, module.ffn, rate, dropout_rng);
    d = tape.layer_norm(tape.add(d, f), module.ln_ffn.gain, module.ln_ffn.bias, 1);
  }
  return d;
}

ad::Tensor decode_step(ad::Tape& tape, std::span<const int> prefix, const Catalog& catalog,
                       const EncoderOutput& encoder_out, const ModelParams& params,
                       const ModelConfig& config, Rng* dropout_rng) {
  if (prefix.empty()) throw Error("model", "empty decoder prefix");
  ad::Tensor rows = decode_prefix(tape, gather_embeddings(prefix, catalog), encoder_out.rows,
                                  params, config, dropout_rng);
  return tape.select_row(rows, prefix.size() - 1);
}

ad::Tensor score_candidates(ad::Tape& tape, const ad::Tensor& h, std::span<const int> candidates,
                            const Catalog& catalog, const ModelParams& params,
                            const ModelConfig& config, Rng* dropout_rng) {
  if (candidates.empty()) throw Error("model", "empty candidate set");
  std::set<int> distinct(candidates.begin(), candidates.end());
  if (distinct.size() != candidates.size()) throw Error("model", "duplicate candidate");

  std::vector<ad::Tensor> parts;
  std::vector<int> run;
  auto flush = [&] {
    if (!run.empty()) {
      parts.push_back(gather_embeddings(run, catalog));
      run.clear();
    }
  };
  for (int c : candidates) {
    if (c == kStopToken) {
      flush();
      parts.push_back(params.stop_embedding);
    } else {
      run.push_back(c);
    }
  }
  flush();
  ad::Tensor matrix = parts.size() == 1 ? parts[0] : tape.concat(parts, 0);
  ad::Tensor projected = transition(tape, matrix, params.decoder_transition, config.dropout,
                                    dropout_rng);
  ad::Tensor logits = tape.matmul(projected, h);
  return tape.softmax(logits, 0);
}

int next_garment(ad::Tape& tape, const ad::Tensor& h, std::span<const int> candidate_pool,
                 std::span<const int> already_chosen, const Catalog& catalog,
                 const ModelParams& params, const ModelConfig& config) {
  if (candidate_pool.empty()) throw Error("model", "empty candidate pool");
  const std::vector<int> pool = filter_pool(candidate_pool, already_chosen, catalog);
  std::vector<int> garments;
  for (int g : pool) {
    if (g != kStopToken) garments.push_back(g);
  }
  if (garments.empty()) return kStopToken;  // exhausted pool terminates generation

  ad::Tensor probs = score_candidates(tape, h, pool, catalog, params, config, nullptr);
  const auto values = probs.value();
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return pool[best];
}

GenerationResult generate_outfit(std::span<const int> seed, const ItemRelationGraph& irg,
                                 std::span<const int> candidate_pool, const Catalog& catalog,
                                 const ModelParams& params, const ModelConfig& config) {
  if (seed.empty()) throw Error("model", "empty garment seed");
  for (std::size_t i = 0; i < seed.size(); ++i) {
    for (std::size_t j = i + 1; j < seed.size(); ++j) {
      if (irg.has_edge(seed[i], seed[j])) {
        throw Error("model", "seed garments '" + catalog.garment(seed[i]).id + "' and '" +
                                 catalog.garment(seed[j]).id + "' are linked");
      }
    }
  }

  ad::Tape encode_tape(false);
  const EncoderInput input = make_encoder_input(irg, catalog);
  const EncoderOutput encoded = encode_graph(encode_tape, input, params, config, nullptr);

  GenerationResult result;
  std::vector<int> prefix(seed.begin(), seed.end());
  while (result.generated.size() < config.max_generation_len) {
    ad::Tape tape(false);
    ad::Tensor h = decode_step(tape, prefix, catalog, encoded, params, config, nullptr);

    std::vector<int> pool = filter_pool(candidate_pool, result.generated, catalog);
    if (std::find(pool.begin(), pool.end(), kStopToken) == pool.end()) {
      pool.push_back(kStopToken);
    }
    bool only_stop = true;
    for (int g : pool) {
      if (g != kStopToken) only_stop = false;
    }
    if (only_stop) {
      result.emitted_stop = true;
      break;
    }

    GenerationStep step;
    step.pool = pool;
    ad::Tensor probs = score_candidates(tape, h, pool, catalog, params, config, nullptr);
    step.probabilities.assign(probs.value().begin(), probs.value().end());
    std::size_t best = 0;
    for (std::size_t i = 1; i < step.probabilities.size(); ++i) {
      if (step.probabilities[i] > step.probabilities[best]) best = i;
    }
    step.chosen = pool[best];
    result.steps.push_back(step);
    if (step.chosen == kStopToken) {
      result.emitted_stop = true;
      break;
    }
    result.generated.push_back(step.chosen);
    prefix.push_back(step.chosen);
  }
  return result;
}

}  // namespace tgnn
