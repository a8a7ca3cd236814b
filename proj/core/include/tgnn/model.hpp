#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tgnn/catalog.hpp"
#include "tgnn/graph.hpp"
#include "tgnn/rng.hpp"
#include "tgnn/tensor.hpp"

namespace tgnn {

/// Sentinel id for the end-of-outfit token inside candidate lists.
inline constexpr int kStopToken = -1;

struct ModelConfig {
  std::size_t embed_dim = 128;       // input embedding width
  std::size_t model_dim = 256;       // hidden width
  std::size_t heads = 8;
  std::size_t encoder_modules = 4;   // aggregation radius of the encoder stack
  std::size_t decoder_modules = 4;
  std::size_t ffn_dim = 0;           // 0 selects 4 * model_dim
  double dropout = 0.35;
  std::size_t max_generation_len = 19;

  std::size_t resolved_ffn_dim() const { return ffn_dim == 0 ? 4 * model_dim : ffn_dim; }
  void validate() const;
  std::uint64_t hash() const;
  std::string canonical_text() const;
};

struct TransitionParams {
  ad::Tensor weight;  // {embed_dim, model_dim}
  ad::Tensor bias;    // {model_dim}
};

struct AttentionParams {
  ad::Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct FfnParams {
  ad::Tensor w1, b1, w2, b2;
};

struct LayerNormParams {
  ad::Tensor gain, bias;
};

struct EncoderModuleParams {
  AttentionParams attention;
  LayerNormParams ln_attention;
  FfnParams ffn;
  LayerNormParams ln_ffn;
};

struct DecoderModuleParams {
  AttentionParams self_attention;
  LayerNormParams ln_self;
  AttentionParams cross_attention;
  LayerNormParams ln_cross;
  FfnParams ffn;
  LayerNormParams ln_ffn;
};

/// Every learnable array. The decoder transition doubles as the candidate
/// projection; the stop token is a learned embedding that competes with
/// garment candidates but never enters decoder prefixes.
struct ModelParams {
  TransitionParams encoder_transition;
  TransitionParams decoder_transition;
  std::vector<EncoderModuleParams> encoder;
  std::vector<DecoderModuleParams> decoder;
  ad::Tensor stop_embedding;  // {1, embed_dim}

  static ModelParams init(const ModelConfig& config, Rng& rng);
  /// Zeroed decoder transition and stop embedding: every candidate scores
  /// identically, so probabilities are exactly uniform. Baseline/diagnostics.
  static ModelParams uniform_scorer(const ModelConfig& config, Rng& rng);

  /// Stable (name, tensor) listing used by the optimizer and checkpoints.
  std::vector<std::pair<std::string, ad::Tensor>> named() const;
  std::vector<ad::Tensor> tensors() const;
  ModelParams clone() const;
  void copy_values_from(const ModelParams& other);
};

/// Node rows of one partition graph, ready for the encoder.
struct EncoderInput {
  std::vector<int> node_ids;        // garment indices, row order
  ad::NeighborLists neighbors;      // row indices, self included
  ad::Tensor embeddings;            // leaf {|V|, embed_dim}
};

EncoderInput make_encoder_input(const ItemRelationGraph& irg, const Catalog& catalog);

/// Leaf {count, embed_dim} holding the embeddings of the listed garments.
ad::Tensor embedding_rows(std::span<const int> garments, const Catalog& catalog);

struct EncoderOutput {
  std::vector<int> node_ids;
  ad::Tensor rows;  // {|V|, model_dim}
};

/// ReLU(x W + b), with dropout in train mode (rng != nullptr).
ad::Tensor transition(ad::Tape& tape, const ad::Tensor& x, const TransitionParams& params,
                      double dropout_rate, Rng* dropout_rng);

/// Multi-head attention of one node over its neighborhood; reference entry
/// point for the encoder's per-node aggregation.
ad::Tensor neighborhood_attention(ad::Tape& tape, std::size_t row,
                                  const ad::NeighborLists& neighbors,
                                  const ad::Tensor& node_rows, const AttentionParams& params,
                                  std::size_t heads);

/// Stack of encoder modules; information propagates at most encoder_modules
/// hops. With zero modules the output is just the transitioned embeddings.
EncoderOutput encode_graph(ad::Tape& tape, const EncoderInput& input, const ModelParams& params,
                           const ModelConfig& config, Rng* dropout_rng);

/// Causally masked decoder over the whole prefix; row t is the decoder state
/// after consuming prefix positions 0..t.
ad::Tensor decode_prefix(ad::Tape& tape, const ad::Tensor& prefix_embeddings,
                         const ad::Tensor& encoder_rows, const ModelParams& params,
                         const ModelConfig& config, Rng* dropout_rng);

/// Decoder state for the full prefix (gathers embeddings, runs decode_prefix,
/// returns the last row).
ad::Tensor decode_step(ad::Tape& tape, std::span<const int> prefix, const Catalog& catalog,
                       const EncoderOutput& encoder_out, const ModelParams& params,
                       const ModelConfig& config, Rng* dropout_rng);

/// Probability of each candidate (kStopToken rows use the learned stop
/// embedding): softmax over h . tau(candidate).
ad::Tensor score_candidates(ad::Tape& tape, const ad::Tensor& h, std::span<const int> candidates,
                            const Catalog& catalog, const ModelParams& params,
                            const ModelConfig& config, Rng* dropout_rng);

/// Drops pool garments sharing an outfit with any already chosen garment,
/// then returns the argmax-scoring candidate (kStopToken allowed). Returns
/// kStopToken when the filtered pool is empty.
int next_garment(ad::Tape& tape, const ad::Tensor& h, std::span<const int> candidate_pool,
                 std::span<const int> already_chosen, const Catalog& catalog,
                 const ModelParams& params, const ModelConfig& config);

struct GenerationStep {
  std::vector<int> pool;             // surviving candidates, stop last
  std::vector<double> probabilities;
  int chosen = kStopToken;
};

struct GenerationResult {
  std::vector<int> generated;        // without the seed
  std::vector<GenerationStep> steps;
  bool emitted_stop = false;
};

/// Iterative generation from a seed of pairwise-unlinked garments. Stops on
/// the stop token, an exhausted pool, or max_generation_len.
GenerationResult generate_outfit(std::span<const int> seed, const ItemRelationGraph& irg,
                                 std::span<const int> candidate_pool, const Catalog& catalog,
                                 const ModelParams& params, const ModelConfig& config);

}  // namespace tgnn
