#include "tgnn/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "tgnn/error.hpp"
#include "tgnn/optimizer.hpp"
#include "tgnn/parallel.hpp"

namespace tgnn {

namespace {

// Stream tags for deriving independent per-use rng states from one seed.
constexpr std::uint64_t kStreamInit = 1;
std::uint64_t shuffle_stream(std::size_t epoch) { return (2ULL << 56) + epoch; }
std::uint64_t sample_stream(std::size_t epoch, std::size_t index) {
  return (3ULL << 56) + (static_cast<std::uint64_t>(epoch) << 28) + index;
}
std::uint64_t val_stream(std::size_t index) { return (4ULL << 56) + index; }

// Draws `count` distinct entries from `pool` that are not in `exclude`.
// Returns fewer when the pool is too small.
std::vector<int> sample_distinct(const std::vector<int>& pool, std::size_t count,
                                 const std::set<int>& exclude, Rng& rng) {
  std::vector<int> eligible;
  eligible.reserve(pool.size());
  for (int g : pool) {
    if (exclude.count(g) == 0) eligible.push_back(g);
  }
  const std::size_t take = std::min(count, eligible.size());
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t j = i + rng.index(eligible.size() - i);
    std::swap(eligible[i], eligible[j]);
  }
  eligible.resize(take);
  return eligible;
}

}  // namespace

void TrainerConfig::validate() const {
  if (same_category_negatives + random_distractors < 1) {
    throw Error("config", "need at least one negative per candidate set");
  }
  if (plateau_factor <= 0.0 || plateau_factor >= 1.0) {
    throw Error("config", "plateau factor must be in (0,1)");
  }
  if (dropout < 0.0 || dropout >= 1.0) throw Error("config", "dropout must be in [0,1)");
  if (accumulate_outfits == 0) throw Error("config", "accumulate_outfits must be positive");
}

TrainingSample build_sample(std::span<const int> members, int partition_index,
                            const Catalog& catalog, const PartitionSet& partitions,
                            const TrainerConfig& config, Rng& rng, bool permute,
                            std::vector<std::string>* warnings) {
  if (members.size() < 2) throw Error("training", "outfit shorter than 2 garments");
  config.validate();

  TrainingSample sample;
  sample.outfit_permuted.assign(members.begin(), members.end());
  if (permute) rng.shuffle(sample.outfit_permuted);

  const auto& outfit_block =
      partitions.partitions[static_cast<std::size_t>(partition_index)];
  ItemRelationGraph irg = induce_irg(outfit_block, catalog);

  // Remove edges between the outfit's members; members outside the partition
  // graph (unseen test garments) have no edges to remove.
  std::vector<int> present;
  for (int g : members) {
    if (irg.row_of(g) >= 0) present.push_back(g);
  }
  sample.graph = present.empty() ? std::move(irg) : remove_outfit_edges(irg, present);

  // Candidate pool: partition garments that are not outfit members.
  const std::set<int> member_set(members.begin(), members.end());
  std::vector<int> pool;
  pool.reserve(sample.graph.nodes.size());
  std::vector<std::vector<int>> by_category(catalog.categories().size());
  for (int g : sample.graph.nodes) {
    if (member_set.count(g) != 0) continue;
    pool.push_back(g);
    by_category[static_cast<std::size_t>(catalog.garment(g).category)].push_back(g);
  }

  const std::size_t n = sample.outfit_permuted.size();
  sample.candidate_sets.resize(n);
  sample.truth_positions.resize(n);
  for (std::size_t t = 0; t < n; ++t) {
    const int truth = t + 1 < n ? sample.outfit_permuted[t + 1] : kStopToken;
    std::vector<int> set = {truth};
    std::set<int> taken = {truth};

    std::size_t missing_same_category = config.same_category_negatives;
    if (truth != kStopToken) {
      const auto& bucket =
          by_category[static_cast<std::size_t>(catalog.garment(truth).category)];
      const auto picked = sample_distinct(bucket, config.same_category_negatives, taken, rng);
      for (int g : picked) {
        set.push_back(g);
        taken.insert(g);
      }
      missing_same_category -= picked.size();
      if (missing_same_category > 0 && warnings != nullptr) {
        warnings->push_back(
            "step " + std::to_string(t) + ": only " +
            std::to_string(config.same_category_negatives - missing_same_category) +
            " same-category negatives available; topping up with distractors");
      }
    }

    const std::size_t distractors = config.random_distractors + missing_same_category;
    for (int g : sample_distinct(pool, distractors, taken, rng)) {
      set.push_back(g);
      taken.insert(g);
    }
    rng.shuffle(set);
    const auto it = std::find(set.begin(), set.end(), truth);
    sample.truth_positions[t] = static_cast<std::size_t>(it - set.begin());
    sample.candidate_sets[t] = std::move(set);
  }
  return sample;
}

TrainingSample build_training_sample(int outfit_index, const PartitionSet& partitions,
                                     const Catalog& catalog, const TrainerConfig& config,
                                     Rng& rng, std::vector<std::string>* warnings) {
  if (outfit_index < 0 || static_cast<std::size_t>(outfit_index) >= catalog.outfit_count()) {
    throw Error("training", "outfit index out of range");
  }
  const int partition = partitions.assignment[static_cast<std::size_t>(outfit_index)];
  return build_sample(catalog.outfit(outfit_index).members, partition, catalog, partitions,
                      config, rng, /*permute=*/config.augment_permutations, warnings);
}

ad::Tensor sequence_loss(ad::Tape& tape, const TrainingSample& sample, const Catalog& catalog,
                         const ModelParams& params, const ModelConfig& config, Rng* dropout_rng) {
  const EncoderInput input = make_encoder_input(sample.graph, catalog);
  const EncoderOutput encoded = encode_graph(tape, input, params, config, dropout_rng);
  ad::Tensor decoded = decode_prefix(tape, embedding_rows(sample.outfit_permuted, catalog),
                                     encoded.rows, params, config, dropout_rng);

  std::vector<ad::Tensor> step_logps;
  step_logps.reserve(sample.candidate_sets.size());
  for (std::size_t t = 0; t < sample.candidate_sets.size(); ++t) {
    ad::Tensor h = tape.select_row(decoded, t);
    ad::Tensor probs = score_candidates(tape, h, sample.candidate_sets[t], catalog, params,
                                        config, dropout_rng);
    const std::size_t truth = sample.truth_positions[t];
    ad::Tensor picked = tape.index_select(probs, std::vector<std::size_t>{truth});
    step_logps.push_back(tape.log(picked));
  }
  return tape.scale(tape.mean(tape.stack(step_logps)), -1.0);
}

FitResult fit(const Catalog& catalog, const std::vector<int>& train_outfits,
              const std::vector<OutfitRecord>& val_outfits, const PartitionSet& partitions,
              const TrainerConfig& trainer, ModelConfig model_config,
              const std::function<void(std::size_t, const EpochStats&)>& on_epoch) {
  trainer.validate();
  if (train_outfits.empty()) throw Error("training", "no training outfits");
  for (const auto& rec : val_outfits) {
    if (catalog.outfit_index(rec.id) >= 0) {
      throw Error("training", "validation outfit '" + rec.id + "' is also a training outfit");
    }
  }
  model_config.dropout = trainer.dropout;
  model_config.validate();

  Rng master(trainer.seed);
  Rng init_rng = master.fork(kStreamInit);
  ModelParams params = ModelParams::init(model_config, init_rng);
  Adam adam(params.tensors(), AdamConfig{trainer.learning_rate, 0.9, 0.999, 1e-8,
                                         trainer.weight_decay});
  PlateauScheduler plateau(trainer.plateau_factor, trainer.plateau_patience,
                           trainer.improvement_threshold);
  EarlyStopping stopper(trainer.early_stop_patience, trainer.improvement_threshold);

  // Validation outfits keep a fixed partition, drawn once by similarity.
  std::vector<int> val_partitions(val_outfits.size());
  for (std::size_t i = 0; i < val_outfits.size(); ++i) {
    val_partitions[i] = partition_for_outfit(val_outfits[i].members, partitions, catalog,
                                             PartitionLookup::kTest);
  }

  FitResult result;
  result.params = params.clone();
  double best_val = std::numeric_limits<double>::infinity();

  for (std::size_t epoch = 0; epoch < trainer.max_epochs; ++epoch) {
    std::vector<int> order = train_outfits;
    Rng shuffle_rng = master.fork(shuffle_stream(epoch));
    shuffle_rng.shuffle(order);

    double train_loss_sum = 0.0;
    bool aborted = false;
    std::size_t in_group = 0;
    for (std::size_t s = 0; s < order.size(); ++s) {
      Rng sample_rng =
          master.fork(sample_stream(epoch, static_cast<std::size_t>(order[s])));
      TrainingSample sample =
          build_training_sample(order[s], partitions, catalog, trainer, sample_rng);
      ad::Tape tape;
      ad::Tensor loss =
          sequence_loss(tape, sample, catalog, params, model_config, &sample_rng);
      const double loss_value = loss.item();
      if (!std::isfinite(loss_value)) {
        aborted = true;
        break;
      }
      train_loss_sum += loss_value;
      tape.backward(loss);
      ++in_group;
      if (in_group == trainer.accumulate_outfits || s + 1 == order.size()) {
        try {
          adam.step_scaled(static_cast<double>(in_group));
        } catch (const Error&) {
          aborted = true;
          break;
        }
        in_group = 0;
      }
    }
    if (aborted) {
      params.copy_values_from(result.params);  // roll back to last good checkpoint
      result.aborted_non_finite = true;
      break;
    }

    EpochStats stats;
    stats.train_loss = train_loss_sum / static_cast<double>(order.size());
    stats.learning_rate = adam.learning_rate();

    if (!val_outfits.empty()) {
      std::vector<double> losses(val_outfits.size(), 0.0);
      parallel_for(val_outfits.size(), trainer.threads, [&](std::size_t i) {
        Rng vr = master.fork(val_stream(i));
        TrainingSample sample = build_sample(val_outfits[i].members, val_partitions[i], catalog,
                                             partitions, trainer, vr, /*permute=*/false);
        ad::Tape tape(false);
        ad::Tensor loss = sequence_loss(tape, sample, catalog, params, model_config, nullptr);
        losses[i] = loss.item();
      });
      double sum = 0.0;
      for (double l : losses) sum += l;
      stats.val_loss = sum / static_cast<double>(losses.size());

      if (stats.val_loss < best_val * (1.0 - trainer.improvement_threshold)) {
        best_val = stats.val_loss;
        result.params.copy_values_from(params);
        result.best_epoch = epoch;
      }
      result.history.push_back(stats);
      if (on_epoch) on_epoch(epoch, stats);

      if (plateau.observe(stats.val_loss)) {
        adam.set_learning_rate(adam.learning_rate() * trainer.plateau_factor);
      }
      if (stopper.observe(stats.val_loss)) break;
    } else {
      stats.val_loss = std::numeric_limits<double>::quiet_NaN();
      result.params.copy_values_from(params);
      result.best_epoch = epoch;
      result.history.push_back(stats);
      if (on_epoch) on_epoch(epoch, stats);
    }
  }
  return result;
}

}  // namespace tgnn
