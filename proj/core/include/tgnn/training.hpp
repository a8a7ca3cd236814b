#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tgnn/catalog.hpp"
#include "tgnn/graph.hpp"
#include "tgnn/model.hpp"
#include "tgnn/partition.hpp"
#include "tgnn/rng.hpp"
#include "tgnn/tensor.hpp"

namespace tgnn {

struct TrainerConfig {
  std::size_t same_category_negatives = 3;  // per-step negatives of the truth's category
  std::size_t random_distractors = 5;
  double learning_rate = 5e-4;
  double weight_decay = 5e-5;
  double plateau_factor = 0.1;
  std::size_t plateau_patience = 5;
  std::size_t early_stop_patience = 10;
  std::size_t max_epochs = 1000;
  double dropout = 0.35;
  std::uint64_t seed = 0;
  std::size_t accumulate_outfits = 1;  // outfits per optimizer step
  bool augment_permutations = true;
  double improvement_threshold = 1e-4;  // relative decrease counting as progress
  std::size_t threads = 1;

  void validate() const;
};

/// One teacher-forcing triplet: the permuted outfit, the partition item graph
/// with the outfit's internal edges removed, and per-step candidate sets.
/// Step t (0-based) conditions on prefix 0..t; its ground truth is the next
/// garment, or the stop token at the last step.
struct TrainingSample {
  std::vector<int> outfit_permuted;
  ItemRelationGraph graph;
  std::vector<std::vector<int>> candidate_sets;  // kStopToken marks the stop entry
  std::vector<std::size_t> truth_positions;      // index of the truth in each set
};

/// Builds the sample for an arbitrary member list (train outfits pass their
/// assigned partition; validation/test pass a similarity-voted one).
TrainingSample build_sample(std::span<const int> members, int partition_index,
                            const Catalog& catalog, const PartitionSet& partitions,
                            const TrainerConfig& config, Rng& rng, bool permute,
                            std::vector<std::string>* warnings = nullptr);

/// Fresh random permutation and candidate draw for a catalog outfit.
TrainingSample build_training_sample(int outfit_index, const PartitionSet& partitions,
                                     const Catalog& catalog, const TrainerConfig& config,
                                     Rng& rng, std::vector<std::string>* warnings = nullptr);

/// Mean negative log-probability of the ground truth across all steps under
/// teacher forcing.
ad::Tensor sequence_loss(ad::Tape& tape, const TrainingSample& sample, const Catalog& catalog,
                         const ModelParams& params, const ModelConfig& config, Rng* dropout_rng);

struct EpochStats {
  double train_loss = 0.0;
  double val_loss = 0.0;
  double learning_rate = 0.0;
};

struct FitResult {
  ModelParams params;  // best-validation checkpoint
  std::vector<EpochStats> history;
  std::size_t best_epoch = 0;
  bool aborted_non_finite = false;
};

/// Full optimization loop: shuffled epochs with fresh permutations, Adam,
/// plateau learning-rate rule, early stopping on validation loss. A
/// non-finite loss aborts with the last good checkpoint.
FitResult fit(const Catalog& catalog, const std::vector<int>& train_outfits,
              const std::vector<OutfitRecord>& val_outfits, const PartitionSet& partitions,
              const TrainerConfig& trainer, ModelConfig model_config,
              const std::function<void(std::size_t, const EpochStats&)>& on_epoch = {});

}  // namespace tgnn
