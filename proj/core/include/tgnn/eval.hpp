#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "tgnn/catalog.hpp"
#include "tgnn/model.hpp"
#include "tgnn/partition.hpp"
#include "tgnn/rng.hpp"
#include "tgnn/training.hpp"

namespace tgnn {

/// One teacher-forced step of an episode: condition on sequence[0..prefix_len)
/// and score `candidates` (kStopToken allowed); `truth_index` marks the
/// ground truth inside the candidate list.
struct EpisodeStep {
  std::size_t prefix_len = 0;
  std::vector<int> candidates;
  std::size_t truth_index = 0;
};

struct EpisodeSpec {
  std::string outfit_id;
  std::vector<int> sequence;       // full garment sequence the prefixes come from
  std::vector<int> remove_members; // outfit members whose mutual edges leave the graph
  int partition_index = 0;
  std::vector<EpisodeStep> steps;
};

/// Produces per-step candidate probabilities for an episode. The model-backed
/// implementation encodes the partition graph and decodes the sequence once;
/// test doubles bypass the model entirely.
class EpisodeScorer {
 public:
  virtual ~EpisodeScorer() = default;
  virtual std::vector<std::vector<double>> score(const EpisodeSpec& episode) const = 0;
};

class ModelEpisodeScorer final : public EpisodeScorer {
 public:
  ModelEpisodeScorer(const Catalog& catalog, const PartitionSet& partitions,
                     const ModelParams& params, const ModelConfig& config)
      : catalog_(&catalog), partitions_(&partitions), params_(&params), config_(&config) {}
  std::vector<std::vector<double>> score(const EpisodeSpec& episode) const override;

 private:
  const Catalog* catalog_;
  const PartitionSet* partitions_;
  const ModelParams* params_;
  const ModelConfig* config_;
};

/// Equal probability for every candidate; the untrained baseline.
class UniformEpisodeScorer final : public EpisodeScorer {
 public:
  std::vector<std::vector<double>> score(const EpisodeSpec& episode) const override;
};

/// Test double that reads the ground truth (probability 1 on the truth).
class OracleEpisodeScorer final : public EpisodeScorer {
 public:
  std::vector<std::vector<double>> score(const EpisodeSpec& episode) const override;
};

struct EvalConfig {
  std::size_t same_category_negatives = 3;
  std::size_t random_distractors = 5;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  bool per_episode_log = false;
};

struct EpisodeDecision {
  std::string outfit_id;
  std::size_t step = 0;
  std::size_t chosen_index = 0;
  std::size_t truth_index = 0;
  bool correct = false;
  double truth_probability = 0.0;
  double score = 0.0;  // CP outfit score
};

struct MetricReport {
  std::string task;
  std::size_t episodes = 0;
  std::size_t steps = 0;
  double metric = 0.0;              // accuracy (SIP/FITB) or AUROC (CP)
  double per_outfit_metric = 0.0;   // SIP: accuracy averaged per outfit first
  std::uint64_t seed = 0;
  std::vector<EpisodeDecision> log;
};

/// Builds the teacher-forced SIP episode of one outfit: steps t = 1..n-1
/// predict the next garment from a fresh candidate set (same construction as
/// training); the partition comes from the similarity vote.
EpisodeSpec make_sip_episode(const OutfitRecord& record, const Catalog& catalog,
                             const PartitionSet& partitions, const EvalConfig& config, Rng& rng);

MetricReport eval_sip(const std::vector<OutfitRecord>& test_outfits, const Catalog& catalog,
                      const PartitionSet& partitions, const EpisodeScorer& scorer,
                      const EvalConfig& config);

/// SIP over prebuilt episodes (fixture and equivalence testing).
MetricReport eval_sip_episodes(const std::vector<EpisodeSpec>& episodes,
                               const EpisodeScorer& scorer, const EvalConfig& config);

struct FitbQuery {
  std::string id;
  std::vector<int> incomplete;  // outfit without the blank, storage order
  std::vector<int> full;        // incomplete plus the answer (edge removal set)
  std::vector<int> candidates;  // exactly 4, containing the answer
  std::size_t truth_index = 0;
};

/// Derives queries from test outfits: the last item is blanked and three
/// partition garments join it as wrong answers.
std::vector<FitbQuery> make_fitb_queries(const std::vector<OutfitRecord>& test_outfits,
                                         const Catalog& catalog, const PartitionSet& partitions,
                                         const EvalConfig& config);

MetricReport eval_fitb(const std::vector<FitbQuery>& queries, const Catalog& catalog,
                       const PartitionSet& partitions, const EpisodeScorer& scorer,
                       const EvalConfig& config);

/// Compatibility score of one outfit: seeded random permutation, single
/// element seed, per-step candidate sets of the truth plus three random
/// partition garments; the score is the mean truth probability.
double cp_outfit_score(const OutfitRecord& record, const Catalog& catalog,
                       const PartitionSet& partitions, const EpisodeScorer& scorer,
                       const EvalConfig& config, std::uint64_t episode_stream);

/// Random garment combinations matching each positive outfit's size, one per
/// distinct category where possible.
std::vector<OutfitRecord> make_cp_negatives(const std::vector<OutfitRecord>& positives,
                                            const Catalog& catalog, const EvalConfig& config);

MetricReport eval_cp(const std::vector<OutfitRecord>& positives,
                     const std::vector<OutfitRecord>& negatives, const Catalog& catalog,
                     const PartitionSet& partitions, const EpisodeScorer& scorer,
                     const EvalConfig& config);

/// (#{p > n} + 0.5 #{p = n}) / (|P| |N|), computed exactly.
double auroc(const std::vector<double>& positive_scores, const std::vector<double>& negative_scores);

std::string render_metric_report(const MetricReport& report);

}  // namespace tgnn
