#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tgnn/catalog.hpp"

namespace tgnn {

struct SynthConfig {
  std::size_t styles = 4;
  std::size_t categories = 8;
  std::size_t garments_per_cell = 62;  // per (style, category)
  std::size_t outfit_count = 600;
  std::size_t outfit_size_min = 3;
  std::size_t outfit_size_max = 8;
  double embedding_noise = 0.2;        // sigma around the anchor sum
  double sharing_probability = 0.1;    // reuse of an already-worn same-style garment
  std::size_t raw_dim = 160;
  double train_fraction = 0.70;
  double val_fraction = 0.15;
  bool disjoint_garments = false;      // splits never share garments
  std::uint64_t seed = 42;

  void validate() const;
};

/// Ground-truth (style, category) labels of every generated garment.
struct SynthOracle {
  std::vector<std::pair<int, int>> labels;  // garment index -> (style, category)

  /// True iff all garments share one style and categories are pairwise
  /// distinct.
  bool compatible(std::span<const int> garments) const;
};

struct SynthDataset {
  Catalog catalog;  // all garments + the train outfits
  std::vector<OutfitRecord> val_outfits;
  std::vector<OutfitRecord> test_outfits;
  SynthOracle oracle;
};

/// Planted-compatibility catalog: garment embedding = style anchor + category
/// anchor + Gaussian noise (anchors orthonormal), outfits draw one garment
/// per sampled category subset from a single style, sharing per config.
SynthDataset generate_synthetic_catalog(const SynthConfig& config);

/// Fraction of garments whose nearest (style, category) centroid matches the
/// oracle label; close to 1 means the planted signal is learnable.
double nearest_centroid_recovery(const SynthDataset& dataset);

/// Writes embeddings.tsv, outfits_train.tsv, outfits_val.tsv,
/// outfits_test.tsv and oracle.tsv into the directory.
void write_synth_files(const SynthDataset& dataset, const std::string& directory);

}  // namespace tgnn
