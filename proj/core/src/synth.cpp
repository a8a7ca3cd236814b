#include "tgnn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>
#include <set>

#include "tgnn/error.hpp"
#include "tgnn/rng.hpp"

namespace tgnn {

namespace {

// Orthonormal rows via Gram-Schmidt over seeded Gaussian draws.
std::vector<std::vector<double>> orthonormal_anchors(std::size_t count, std::size_t dim,
                                                     Rng& rng) {
  std::vector<std::vector<double>> rows;
  rows.reserve(count);
  while (rows.size() < count) {
    std::vector<double> v(dim);
    for (double& x : v) x = rng.normal();
    for (const auto& r : rows) {
      double dot = 0.0;
      for (std::size_t i = 0; i < dim; ++i) dot += r[i] * v[i];
      for (std::size_t i = 0; i < dim; ++i) v[i] -= dot * r[i];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-8) continue;  // rare degenerate draw
    for (double& x : v) x /= norm;
    rows.push_back(std::move(v));
  }
  return rows;
}

// Outfit sizes peaked around 5-7, clamped to the configured range.
std::size_t sample_outfit_size(const SynthConfig& config, Rng& rng) {
  static constexpr std::size_t kSizes[] = {2, 3, 4, 5, 6, 7, 8};
  static constexpr double kWeights[] = {0.02, 0.06, 0.15, 0.24, 0.26, 0.18, 0.09};
  const std::size_t lo = config.outfit_size_min;
  const std::size_t hi = std::min(config.outfit_size_max, config.categories);
  double total = 0.0;
  for (std::size_t i = 0; i < std::size(kSizes); ++i) {
    if (kSizes[i] >= lo && kSizes[i] <= hi) total += kWeights[i];
  }
  double draw = rng.uniform() * total;
  for (std::size_t i = 0; i < std::size(kSizes); ++i) {
    if (kSizes[i] < lo || kSizes[i] > hi) continue;
    draw -= kWeights[i];
    if (draw <= 0.0) return kSizes[i];
  }
  return hi;
}

struct CellPools {
  // Garment indices per (style, category); used/unused from the current
  // split's point of view.
  std::vector<std::vector<int>> unused;
  std::vector<std::vector<int>> used;
};

std::vector<int> build_outfit(int style, std::size_t size, const SynthConfig& config,
                              CellPools& pools, Rng& rng) {
  std::vector<std::size_t> cats(config.categories);
  std::iota(cats.begin(), cats.end(), 0);
  rng.shuffle(cats);
  cats.resize(size);

  std::vector<int> members;
  members.reserve(size);
  for (std::size_t c : cats) {
    const std::size_t cell = static_cast<std::size_t>(style) * config.categories + c;
    auto& unused = pools.unused[cell];
    auto& used = pools.used[cell];
    if (unused.empty() && used.empty()) {
      throw Error("synth", "garment cell exhausted; raise garments_per_cell");
    }
    const bool reuse = !used.empty() && (unused.empty() || rng.bernoulli(config.sharing_probability));
    if (reuse) {
      members.push_back(used[rng.index(used.size())]);
    } else {
      const std::size_t pick = rng.index(unused.size());
      const int g = unused[pick];
      unused.erase(unused.begin() + static_cast<std::ptrdiff_t>(pick));
      used.push_back(g);
      members.push_back(g);
    }
  }
  return members;
}

}  // namespace

void SynthConfig::validate() const {
  if (styles < 2 || categories < 2) throw Error("synth", "need at least 2 styles and categories");
  if (embedding_noise < 0.0) throw Error("synth", "noise must be non-negative");
  if (sharing_probability < 0.0 || sharing_probability > 1.0) {
    throw Error("synth", "sharing probability must be in [0,1]");
  }
  if (outfit_size_min < 2) throw Error("synth", "outfits need at least 2 garments");
  if (outfit_size_min > outfit_size_max) throw Error("synth", "empty outfit size range");
  if (outfit_size_min > categories) {
    throw Error("synth", "outfit size exceeds the category count");
  }
  if (raw_dim < styles + categories) {
    throw Error("synth", "raw_dim too small for orthogonal anchors");
  }
  if (garments_per_cell == 0) throw Error("synth", "need garments in every cell");
  if (train_fraction <= 0.0 || val_fraction < 0.0 || train_fraction + val_fraction >= 1.0) {
    throw Error("synth", "split fractions must leave room for a test set");
  }
}

bool SynthOracle::compatible(std::span<const int> garments) const {
  if (garments.empty()) return false;
  std::set<int> cats;
  for (int g : garments) {
    if (g < 0 || static_cast<std::size_t>(g) >= labels.size()) {
      throw Error("synth", "unknown garment index " + std::to_string(g));
    }
    if (labels[static_cast<std::size_t>(g)].first != labels[static_cast<std::size_t>(garments[0])].first) {
      return false;
    }
    if (!cats.insert(labels[static_cast<std::size_t>(g)].second).second) return false;
  }
  return true;
}

SynthDataset generate_synthetic_catalog(const SynthConfig& config) {
  config.validate();
  Rng master(config.seed);

  Rng anchor_rng = master.fork(1);
  const auto anchors = orthonormal_anchors(config.styles + config.categories, config.raw_dim,
                                           anchor_rng);

  // Garments: one block per (style, category) cell.
  SynthDataset dataset;
  std::vector<Garment> garments;
  std::vector<double> embeddings;
  std::vector<std::string> categories(config.categories);
  for (std::size_t c = 0; c < config.categories; ++c) categories[c] = "c" + std::to_string(c);

  Rng noise_rng = master.fork(2);
  const std::size_t total_garments =
      config.styles * config.categories * config.garments_per_cell;
  garments.reserve(total_garments);
  embeddings.reserve(total_garments * config.raw_dim);
  dataset.oracle.labels.reserve(total_garments);
  for (std::size_t s = 0; s < config.styles; ++s) {
    for (std::size_t c = 0; c < config.categories; ++c) {
      for (std::size_t j = 0; j < config.garments_per_cell; ++j) {
        Garment g;
        g.id = "g" + std::to_string(garments.size());
        g.category = static_cast<int>(c);
        garments.push_back(g);
        dataset.oracle.labels.emplace_back(static_cast<int>(s), static_cast<int>(c));
        const auto& style_anchor = anchors[s];
        const auto& cat_anchor = anchors[config.styles + c];
        for (std::size_t i = 0; i < config.raw_dim; ++i) {
          embeddings.push_back(style_anchor[i] + cat_anchor[i] +
                               config.embedding_noise * noise_rng.normal());
        }
      }
    }
  }

  // Split garment cells up front when splits must not share garments.
  const std::size_t n_train =
      static_cast<std::size_t>(std::round(config.train_fraction * static_cast<double>(config.outfit_count)));
  const std::size_t n_val =
      static_cast<std::size_t>(std::round(config.val_fraction * static_cast<double>(config.outfit_count)));
  const std::size_t counts[3] = {n_train, n_val, config.outfit_count - n_train - n_val};

  const std::size_t cells = config.styles * config.categories;
  std::vector<CellPools> pools(config.disjoint_garments ? 3 : 1);
  {
    Rng pool_rng = master.fork(3);
    for (auto& p : pools) {
      p.unused.resize(cells);
      p.used.resize(cells);
    }
    for (std::size_t cell = 0; cell < cells; ++cell) {
      std::vector<int> ids(config.garments_per_cell);
      const int base = static_cast<int>(cell * config.garments_per_cell);
      std::iota(ids.begin(), ids.end(), base);
      pool_rng.shuffle(ids);
      if (config.disjoint_garments) {
        const std::size_t per_train = ids.size() * 7 / 10;
        const std::size_t per_val = ids.size() * 15 / 100;
        for (std::size_t i = 0; i < ids.size(); ++i) {
          const std::size_t split = i < per_train ? 0 : (i < per_train + per_val ? 1 : 2);
          pools[split].unused[cell].push_back(ids[i]);
        }
      } else {
        pools[0].unused[cell] = std::move(ids);
      }
    }
  }

  Rng outfit_rng = master.fork(4);
  std::vector<Outfit> train_outfits;
  std::vector<OutfitRecord> splits[3];
  std::size_t outfit_serial = 0;
  for (std::size_t split = 0; split < 3; ++split) {
    CellPools& pool = pools[config.disjoint_garments ? split : 0];
    for (std::size_t i = 0; i < counts[split]; ++i) {
      const int style = static_cast<int>(outfit_rng.index(config.styles));
      const std::size_t size = sample_outfit_size(config, outfit_rng);
      OutfitRecord record;
      record.id = "o" + std::to_string(outfit_serial++);
      record.members = build_outfit(style, size, config, pool, outfit_rng);
      splits[split].push_back(std::move(record));
    }
  }
  for (const auto& record : splits[0]) {
    Outfit o;
    o.id = record.id;
    o.members = record.members;
    train_outfits.push_back(std::move(o));
  }

  dataset.catalog = Catalog::build(std::move(garments), std::move(embeddings), config.raw_dim,
                                   std::move(categories), std::move(train_outfits));
  dataset.val_outfits = std::move(splits[1]);
  dataset.test_outfits = std::move(splits[2]);
  return dataset;
}

double nearest_centroid_recovery(const SynthDataset& dataset) {
  const Catalog& catalog = dataset.catalog;
  const std::size_t dim = catalog.embed_dim();

  // Centroids per (style, category) from the oracle labels.
  int max_style = 0, max_cat = 0;
  for (const auto& [s, c] : dataset.oracle.labels) {
    max_style = std::max(max_style, s);
    max_cat = std::max(max_cat, c);
  }
  const std::size_t styles = static_cast<std::size_t>(max_style) + 1;
  const std::size_t cats = static_cast<std::size_t>(max_cat) + 1;
  std::vector<std::vector<double>> centroid(styles * cats, std::vector<double>(dim, 0.0));
  std::vector<std::size_t> count(styles * cats, 0);
  for (std::size_t g = 0; g < catalog.garment_count(); ++g) {
    const auto [s, c] = dataset.oracle.labels[g];
    const std::size_t cell = static_cast<std::size_t>(s) * cats + static_cast<std::size_t>(c);
    const auto emb = catalog.embedding(static_cast<int>(g));
    for (std::size_t i = 0; i < dim; ++i) centroid[cell][i] += emb[i];
    count[cell] += 1;
  }
  for (std::size_t cell = 0; cell < centroid.size(); ++cell) {
    if (count[cell] == 0) continue;
    for (double& v : centroid[cell]) v /= static_cast<double>(count[cell]);
  }

  std::size_t hits = 0;
  for (std::size_t g = 0; g < catalog.garment_count(); ++g) {
    const auto emb = catalog.embedding(static_cast<int>(g));
    std::size_t best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t cell = 0; cell < centroid.size(); ++cell) {
      if (count[cell] == 0) continue;
      double dist = 0.0;
      for (std::size_t i = 0; i < dim; ++i) {
        const double d = emb[i] - centroid[cell][i];
        dist += d * d;
      }
      if (dist < best_dist) {
        best_dist = dist;
        best = cell;
      }
    }
    const auto [s, c] = dataset.oracle.labels[g];
    if (best == static_cast<std::size_t>(s) * cats + static_cast<std::size_t>(c)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(catalog.garment_count());
}

void write_synth_files(const SynthDataset& dataset, const std::string& directory) {
  const Catalog& catalog = dataset.catalog;
  write_embeddings_file(directory + "/embeddings.tsv", catalog);

  auto to_pairs = [&](const std::vector<OutfitRecord>& records) {
    std::vector<std::pair<std::string, std::vector<std::string>>> out;
    out.reserve(records.size());
    for (const auto& r : records) {
      std::vector<std::string> ids;
      ids.reserve(r.members.size());
      for (int g : r.members) ids.push_back(catalog.garment(g).id);
      out.emplace_back(r.id, std::move(ids));
    }
    return out;
  };
  std::vector<std::pair<std::string, std::vector<std::string>>> train;
  for (std::size_t i = 0; i < catalog.outfit_count(); ++i) {
    const Outfit& o = catalog.outfit(static_cast<int>(i));
    std::vector<std::string> ids;
    for (int g : o.members) ids.push_back(catalog.garment(g).id);
    train.emplace_back(o.id, std::move(ids));
  }
  write_outfits_file(directory + "/outfits_train.tsv", train);
  write_outfits_file(directory + "/outfits_val.tsv", to_pairs(dataset.val_outfits));
  write_outfits_file(directory + "/outfits_test.tsv", to_pairs(dataset.test_outfits));

  std::ofstream oracle(directory + "/oracle.tsv");
  if (!oracle) throw Error("io", "cannot open oracle file for writing");
  for (std::size_t g = 0; g < catalog.garment_count(); ++g) {
    const auto [s, c] = dataset.oracle.labels[g];
    oracle << catalog.garment(static_cast<int>(g)).id << '\t' << "s" << s << '\t' << "c" << c
           << '\n';
  }
  if (!oracle) throw Error("io", "failed writing oracle file");
}

}  // namespace tgnn
