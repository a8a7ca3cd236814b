#include "tgnn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "tgnn/error.hpp"
#include "tgnn/parallel.hpp"

namespace tgnn {

namespace {

std::uint64_t sip_stream(std::size_t i) { return (10ULL << 56) + i; }
std::uint64_t fitb_stream(std::size_t i) { return (11ULL << 56) + i; }
std::uint64_t cp_stream(std::size_t i) { return (12ULL << 56) + i; }
std::uint64_t cp_negative_stream(std::size_t i) { return (13ULL << 56) + i; }

struct CandidatePool {
  std::vector<int> garments;                   // partition garments minus the outfit
  std::vector<std::vector<int>> by_category;
};

CandidatePool partition_pool(int partition_index, const PartitionSet& partitions,
                             const Catalog& catalog, std::span<const int> excluded) {
  const std::set<int> excluded_set(excluded.begin(), excluded.end());
  std::set<int> garment_set;
  for (int oi : partitions.partitions[static_cast<std::size_t>(partition_index)]) {
    for (int g : catalog.outfit(oi).members) {
      if (excluded_set.count(g) == 0) garment_set.insert(g);
    }
  }
  CandidatePool pool;
  pool.garments.assign(garment_set.begin(), garment_set.end());
  pool.by_category.resize(catalog.categories().size());
  for (int g : pool.garments) {
    pool.by_category[static_cast<std::size_t>(catalog.garment(g).category)].push_back(g);
  }
  return pool;
}

std::vector<int> draw_distinct(const std::vector<int>& from, std::size_t count,
                               const std::set<int>& taken, Rng& rng) {
  std::vector<int> eligible;
  eligible.reserve(from.size());
  for (int g : from) {
    if (taken.count(g) == 0) eligible.push_back(g);
  }
  const std::size_t take = std::min(count, eligible.size());
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t j = i + rng.index(eligible.size() - i);
    std::swap(eligible[i], eligible[j]);
  }
  eligible.resize(take);
  return eligible;
}

// Training-style candidate set: truth + same-category negatives + distractors,
// shuffled. Returns the candidate list and the truth position.
std::pair<std::vector<int>, std::size_t> draw_candidate_set(
    int truth, const CandidatePool& pool, const Catalog& catalog,
    std::size_t same_category, std::size_t distractors, Rng& rng) {
  std::vector<int> set = {truth};
  std::set<int> taken = {truth};
  std::size_t missing = same_category;
  if (truth != kStopToken) {
    const auto& bucket =
        pool.by_category[static_cast<std::size_t>(catalog.garment(truth).category)];
    for (int g : draw_distinct(bucket, same_category, taken, rng)) {
      set.push_back(g);
      taken.insert(g);
    }
    missing = same_category - (set.size() - 1);
  }
  for (int g : draw_distinct(pool.garments, distractors + missing, taken, rng)) {
    set.push_back(g);
    taken.insert(g);
  }
  rng.shuffle(set);
  const auto it = std::find(set.begin(), set.end(), truth);
  return {set, static_cast<std::size_t>(it - set.begin())};
}

std::vector<std::vector<std::vector<double>>> score_all(
    const std::vector<EpisodeSpec>& episodes, const EpisodeScorer& scorer, std::size_t threads) {
  std::vector<std::vector<std::vector<double>>> out(episodes.size());
  parallel_for(episodes.size(), threads,
               [&](std::size_t i) { out[i] = scorer.score(episodes[i]); });
  return out;
}

std::size_t argmax(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

}  // namespace

std::vector<std::vector<double>> ModelEpisodeScorer::score(const EpisodeSpec& episode) const {
  if (episode.sequence.empty()) throw Error("eval", "episode with empty sequence");
  ItemRelationGraph irg = induce_irg(
      partitions_->partitions[static_cast<std::size_t>(episode.partition_index)], *catalog_);
  std::vector<int> present;
  for (int g : episode.remove_members) {
    if (irg.row_of(g) >= 0) present.push_back(g);
  }
  if (!present.empty()) irg = remove_outfit_edges(irg, present);

  ad::Tape tape(false);
  const EncoderInput input = make_encoder_input(irg, *catalog_);
  const EncoderOutput encoded = encode_graph(tape, input, *params_, *config_, nullptr);
  ad::Tensor decoded = decode_prefix(tape, embedding_rows(episode.sequence, *catalog_),
                                     encoded.rows, *params_, *config_, nullptr);

  std::vector<std::vector<double>> out;
  out.reserve(episode.steps.size());
  for (const auto& step : episode.steps) {
    if (step.prefix_len == 0 || step.prefix_len > episode.sequence.size()) {
      throw Error("eval", "episode step prefix out of range");
    }
    ad::Tensor h = tape.select_row(decoded, step.prefix_len - 1);
    ad::Tensor probs =
        score_candidates(tape, h, step.candidates, *catalog_, *params_, *config_, nullptr);
    out.emplace_back(probs.value().begin(), probs.value().end());
  }
  return out;
}

std::vector<std::vector<double>> UniformEpisodeScorer::score(const EpisodeSpec& episode) const {
  std::vector<std::vector<double>> out;
  out.reserve(episode.steps.size());
  for (const auto& step : episode.steps) {
    out.emplace_back(step.candidates.size(),
                     1.0 / static_cast<double>(step.candidates.size()));
  }
  return out;
}

std::vector<std::vector<double>> OracleEpisodeScorer::score(const EpisodeSpec& episode) const {
  std::vector<std::vector<double>> out;
  out.reserve(episode.steps.size());
  for (const auto& step : episode.steps) {
    std::vector<double> probs(step.candidates.size(), 0.0);
    probs[step.truth_index] = 1.0;
    out.push_back(std::move(probs));
  }
  return out;
}

EpisodeSpec make_sip_episode(const OutfitRecord& record, const Catalog& catalog,
                             const PartitionSet& partitions, const EvalConfig& config, Rng& rng) {
  if (record.members.size() < 2) throw Error("eval", "test outfit shorter than 2 garments");
  EpisodeSpec episode;
  episode.outfit_id = record.id;
  episode.sequence = record.members;  // storage order, no permutation
  episode.remove_members = record.members;
  episode.partition_index =
      partition_for_outfit(record.members, partitions, catalog, PartitionLookup::kTest);
  const CandidatePool pool =
      partition_pool(episode.partition_index, partitions, catalog, record.members);
  for (std::size_t t = 1; t < record.members.size(); ++t) {
    EpisodeStep step;
    step.prefix_len = t;
    auto [candidates, truth_index] =
        draw_candidate_set(record.members[t], pool, catalog, config.same_category_negatives,
                           config.random_distractors, rng);
    step.candidates = std::move(candidates);
    step.truth_index = truth_index;
    episode.steps.push_back(std::move(step));
  }
  return episode;
}

MetricReport eval_sip_episodes(const std::vector<EpisodeSpec>& episodes,
                               const EpisodeScorer& scorer, const EvalConfig& config) {
  const auto scores = score_all(episodes, scorer, config.threads);
  MetricReport report;
  report.task = "sip";
  report.seed = config.seed;
  report.episodes = episodes.size();
  std::size_t correct = 0, total = 0;
  double outfit_acc_sum = 0.0;
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    std::size_t outfit_correct = 0;
    for (std::size_t s = 0; s < episodes[i].steps.size(); ++s) {
      const auto& probs = scores[i][s];
      const std::size_t chosen = argmax(probs);
      const bool ok = chosen == episodes[i].steps[s].truth_index;
      correct += ok ? 1 : 0;
      outfit_correct += ok ? 1 : 0;
      ++total;
      if (config.per_episode_log) {
        report.log.push_back(EpisodeDecision{episodes[i].outfit_id, s, chosen,
                                             episodes[i].steps[s].truth_index, ok,
                                             probs[episodes[i].steps[s].truth_index], 0.0});
      }
    }
    if (!episodes[i].steps.empty()) {
      outfit_acc_sum += static_cast<double>(outfit_correct) /
                        static_cast<double>(episodes[i].steps.size());
    }
  }
  report.steps = total;
  report.metric = total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  report.per_outfit_metric =
      episodes.empty() ? 0.0 : outfit_acc_sum / static_cast<double>(episodes.size());
  return report;
}

MetricReport eval_sip(const std::vector<OutfitRecord>& test_outfits, const Catalog& catalog,
                      const PartitionSet& partitions, const EpisodeScorer& scorer,
                      const EvalConfig& config) {
  if (test_outfits.empty()) throw Error("eval", "empty test set");
  Rng master(config.seed);
  std::vector<EpisodeSpec> episodes;
  episodes.reserve(test_outfits.size());
  for (std::size_t i = 0; i < test_outfits.size(); ++i) {
    Rng rng = master.fork(sip_stream(i));
    episodes.push_back(make_sip_episode(test_outfits[i], catalog, partitions, config, rng));
  }
  return eval_sip_episodes(episodes, scorer, config);
}

std::vector<FitbQuery> make_fitb_queries(const std::vector<OutfitRecord>& test_outfits,
                                         const Catalog& catalog, const PartitionSet& partitions,
                                         const EvalConfig& config) {
  Rng master(config.seed);
  std::vector<FitbQuery> queries;
  queries.reserve(test_outfits.size());
  for (std::size_t i = 0; i < test_outfits.size(); ++i) {
    const auto& record = test_outfits[i];
    if (record.members.size() < 2) continue;
    Rng rng = master.fork(fitb_stream(i));
    FitbQuery q;
    q.id = record.id;
    q.full = record.members;
    q.incomplete.assign(record.members.begin(), record.members.end() - 1);
    const int answer = record.members.back();
    const int partition =
        partition_for_outfit(q.incomplete, partitions, catalog, PartitionLookup::kTest);
    const CandidatePool pool = partition_pool(partition, partitions, catalog, record.members);
    auto [candidates, truth_index] = draw_candidate_set(answer, pool, catalog, 0, 3, rng);
    if (candidates.size() != 4) continue;  // partition too small to pose the question
    q.candidates = std::move(candidates);
    q.truth_index = truth_index;
    queries.push_back(std::move(q));
  }
  return queries;
}

MetricReport eval_fitb(const std::vector<FitbQuery>& queries, const Catalog& catalog,
                       const PartitionSet& partitions, const EpisodeScorer& scorer,
                       const EvalConfig& config) {
  if (queries.empty()) throw Error("eval", "no fill-in-the-blank queries");
  std::vector<EpisodeSpec> episodes;
  episodes.reserve(queries.size());
  for (const auto& q : queries) {
    if (q.candidates.size() != 4) throw Error("eval", "query must carry exactly 4 candidates");
    if (q.truth_index >= q.candidates.size()) throw Error("eval", "truth index out of range");
    for (int c : q.candidates) {
      if (c == kStopToken) throw Error("eval", "stop token is excluded from these candidates");
    }
    EpisodeSpec episode;
    episode.outfit_id = q.id;
    episode.sequence = q.incomplete;
    episode.remove_members = q.full;
    episode.partition_index =
        partition_for_outfit(q.incomplete, partitions, catalog, PartitionLookup::kTest);
    EpisodeStep step;
    step.prefix_len = q.incomplete.size();
    step.candidates = q.candidates;
    step.truth_index = q.truth_index;
    episode.steps.push_back(std::move(step));
    episodes.push_back(std::move(episode));
  }

  const auto scores = score_all(episodes, scorer, config.threads);
  MetricReport report;
  report.task = "fitb";
  report.seed = config.seed;
  report.episodes = episodes.size();
  report.steps = episodes.size();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    const std::size_t chosen = argmax(scores[i][0]);
    const bool ok = chosen == episodes[i].steps[0].truth_index;
    correct += ok ? 1 : 0;
    if (config.per_episode_log) {
      report.log.push_back(EpisodeDecision{episodes[i].outfit_id, 0, chosen,
                                           episodes[i].steps[0].truth_index, ok,
                                           scores[i][0][episodes[i].steps[0].truth_index], 0.0});
    }
  }
  report.metric = static_cast<double>(correct) / static_cast<double>(episodes.size());
  report.per_outfit_metric = report.metric;
  return report;
}

double cp_outfit_score(const OutfitRecord& record, const Catalog& catalog,
                       const PartitionSet& partitions, const EpisodeScorer& scorer,
                       const EvalConfig& config, std::uint64_t episode_stream) {
  if (record.members.size() < 2) throw Error("eval", "outfit too short to score");
  Rng rng = Rng(config.seed).fork(episode_stream);

  EpisodeSpec episode;
  episode.outfit_id = record.id;
  episode.sequence = record.members;
  rng.shuffle(episode.sequence);  // seeded random permutation, single-element seed
  episode.remove_members = record.members;
  episode.partition_index =
      partition_for_outfit(record.members, partitions, catalog, PartitionLookup::kTest);
  const CandidatePool pool =
      partition_pool(episode.partition_index, partitions, catalog, record.members);
  for (std::size_t t = 1; t < episode.sequence.size(); ++t) {
    EpisodeStep step;
    step.prefix_len = t;
    auto [candidates, truth_index] =
        draw_candidate_set(episode.sequence[t], pool, catalog, 0, 3, rng);
    step.candidates = std::move(candidates);
    step.truth_index = truth_index;
    episode.steps.push_back(std::move(step));
  }

  const auto scores = scorer.score(episode);
  double sum = 0.0;
  for (std::size_t s = 0; s < episode.steps.size(); ++s) {
    sum += scores[s][episode.steps[s].truth_index];
  }
  return sum / static_cast<double>(episode.steps.size());
}

std::vector<OutfitRecord> make_cp_negatives(const std::vector<OutfitRecord>& positives,
                                            const Catalog& catalog, const EvalConfig& config) {
  Rng master(config.seed);
  std::vector<OutfitRecord> negatives;
  negatives.reserve(positives.size());
  for (std::size_t i = 0; i < positives.size(); ++i) {
    Rng rng = master.fork(cp_negative_stream(i));
    const std::size_t size = positives[i].members.size();
    OutfitRecord neg;
    neg.id = positives[i].id + "-negative";
    // One garment per distinct category where possible.
    std::vector<std::size_t> categories(catalog.categories().size());
    for (std::size_t c = 0; c < categories.size(); ++c) categories[c] = c;
    rng.shuffle(categories);
    std::set<int> taken;
    for (std::size_t c = 0; c < categories.size() && neg.members.size() < size; ++c) {
      std::vector<int> bucket;
      for (std::size_t g = 0; g < catalog.garment_count(); ++g) {
        if (static_cast<std::size_t>(catalog.garment(static_cast<int>(g)).category) ==
            categories[c]) {
          bucket.push_back(static_cast<int>(g));
        }
      }
      if (bucket.empty()) continue;
      neg.members.push_back(bucket[rng.index(bucket.size())]);
      taken.insert(neg.members.back());
    }
    while (neg.members.size() < size) {  // fewer categories than the outfit size
      const int g = static_cast<int>(rng.index(catalog.garment_count()));
      if (taken.count(g) != 0) continue;
      taken.insert(g);
      neg.members.push_back(g);
    }
    negatives.push_back(std::move(neg));
  }
  return negatives;
}

MetricReport eval_cp(const std::vector<OutfitRecord>& positives,
                     const std::vector<OutfitRecord>& negatives, const Catalog& catalog,
                     const PartitionSet& partitions, const EpisodeScorer& scorer,
                     const EvalConfig& config) {
  if (positives.empty() || negatives.empty()) throw Error("eval", "empty compatibility pairs");
  std::vector<double> pos_scores(positives.size()), neg_scores(negatives.size());
  std::size_t total_steps = 0;
  parallel_for(positives.size() + negatives.size(), config.threads, [&](std::size_t i) {
    if (i < positives.size()) {
      pos_scores[i] =
          cp_outfit_score(positives[i], catalog, partitions, scorer, config, cp_stream(2 * i));
    } else {
      const std::size_t j = i - positives.size();
      neg_scores[j] = cp_outfit_score(negatives[j], catalog, partitions, scorer, config,
                                      cp_stream(2 * j + 1));
    }
  });
  for (const auto& r : positives) total_steps += r.members.size() - 1;
  for (const auto& r : negatives) total_steps += r.members.size() - 1;

  MetricReport report;
  report.task = "cp";
  report.seed = config.seed;
  report.episodes = positives.size() + negatives.size();
  report.steps = total_steps;
  report.metric = auroc(pos_scores, neg_scores);
  report.per_outfit_metric = report.metric;
  if (config.per_episode_log) {
    for (std::size_t i = 0; i < positives.size(); ++i) {
      report.log.push_back(
          EpisodeDecision{positives[i].id, 0, 0, 0, true, 0.0, pos_scores[i]});
    }
    for (std::size_t i = 0; i < negatives.size(); ++i) {
      report.log.push_back(
          EpisodeDecision{negatives[i].id, 0, 0, 0, false, 0.0, neg_scores[i]});
    }
  }
  return report;
}

double auroc(const std::vector<double>& positive_scores,
             const std::vector<double>& negative_scores) {
  if (positive_scores.empty() || negative_scores.empty()) {
    throw Error("eval", "auroc requires non-empty score lists");
  }
  std::vector<double> neg = negative_scores;
  std::sort(neg.begin(), neg.end());
  std::uint64_t half_pairs = 0;  // ordered pairs counted in halves
  for (double p : positive_scores) {
    const auto lower = std::lower_bound(neg.begin(), neg.end(), p);
    const auto upper = std::upper_bound(neg.begin(), neg.end(), p);
    const auto less = static_cast<std::uint64_t>(lower - neg.begin());
    const auto ties = static_cast<std::uint64_t>(upper - lower);
    half_pairs += 2 * less + ties;
  }
  return static_cast<double>(half_pairs) /
         (2.0 * static_cast<double>(positive_scores.size()) *
          static_cast<double>(negative_scores.size()));
}

std::string render_metric_report(const MetricReport& report) {
  char buf[160];
  std::string out;
  out += "tgnn-eval-report v1\n";
  out += "task " + report.task + "\n";
  std::snprintf(buf, sizeof(buf), "seed %llu\n", static_cast<unsigned long long>(report.seed));
  out += buf;
  std::snprintf(buf, sizeof(buf), "episodes %zu\n", report.episodes);
  out += buf;
  std::snprintf(buf, sizeof(buf), "steps %zu\n", report.steps);
  out += buf;
  const char* name = report.task == "cp" ? "auroc" : "accuracy";
  std::snprintf(buf, sizeof(buf), "%s %.6f\n", name, report.metric);
  out += buf;
  if (report.task == "sip") {
    std::snprintf(buf, sizeof(buf), "per_outfit_accuracy %.6f\n", report.per_outfit_metric);
    out += buf;
  }
  for (const auto& d : report.log) {
    if (report.task == "cp") {
      std::snprintf(buf, sizeof(buf), "episode %s label %d score %.6f\n", d.outfit_id.c_str(),
                    d.correct ? 1 : 0, d.score);
    } else {
      std::snprintf(buf, sizeof(buf), "episode %s step %zu chosen %zu truth %zu correct %d p %.6f\n",
                    d.outfit_id.c_str(), d.step, d.chosen_index, d.truth_index, d.correct ? 1 : 0,
                    d.truth_probability);
    }
    out += buf;
  }
  return out;
}

}  // namespace tgnn
