#pragma once

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace tgnn {

struct Garment {
  std::string id;
  int category = -1;
};

struct Outfit {
  std::string id;
  std::vector<int> members;  // garment indices; storage order only, semantics are a set
};

/// Outfit resolved against a catalog without being part of it (validation and
/// test splits).
struct OutfitRecord {
  std::string id;
  std::vector<int> members;
};

/// Immutable garment/outfit store with the inverse membership index. All
/// lookups are by dense index; ids map to indices once at load time. Safe for
/// concurrent reads after construction.
class Catalog {
 public:
  Catalog() = default;

  /// Builds from in-memory parts and validates every invariant. Emits
  /// warnings (duplicate category within an outfit) instead of failing.
  static Catalog build(std::vector<Garment> garments, std::vector<double> embeddings,
                       std::size_t embed_dim, std::vector<std::string> categories,
                       std::vector<Outfit> outfits, std::vector<std::string>* warnings = nullptr);

  /// Loads the tab-separated outfits and embeddings files.
  static Catalog load(const std::string& outfits_path, const std::string& embeddings_path,
                      std::vector<std::string>* warnings = nullptr);

  std::size_t garment_count() const { return garments_.size(); }
  std::size_t outfit_count() const { return outfits_.size(); }
  std::size_t embed_dim() const { return embed_dim_; }

  const Garment& garment(int index) const { return garments_[index]; }
  const Outfit& outfit(int index) const { return outfits_[index]; }
  int garment_index(const std::string& id) const;
  int outfit_index(const std::string& id) const;

  std::span<const double> embedding(int garment) const {
    return {embeddings_.data() + static_cast<std::size_t>(garment) * embed_dim_, embed_dim_};
  }
  const std::vector<double>& embedding_matrix() const { return embeddings_; }

  /// Outfits containing the garment, ascending.
  const std::vector<int>& outfits_of(int garment) const { return outfits_of_[garment]; }

  const std::vector<std::string>& categories() const { return categories_; }
  int category_index(const std::string& id) const;

 private:
  std::vector<Garment> garments_;
  std::vector<double> embeddings_;  // row-major garment_count x embed_dim
  std::size_t embed_dim_ = 0;
  std::vector<std::string> categories_;
  std::vector<Outfit> outfits_;
  std::vector<std::vector<int>> outfits_of_;
  std::unordered_map<std::string, int> garment_by_id_;
  std::unordered_map<std::string, int> outfit_by_id_;
  std::unordered_map<std::string, int> category_by_id_;
};

/// Parses an outfits file and resolves member ids against an existing catalog
/// without inserting the outfits (used for validation/test splits).
std::vector<OutfitRecord> load_outfit_records(const std::string& path, const Catalog& catalog);

/// Writes catalog-format files.
void write_embeddings_file(const std::string& path, const Catalog& catalog);
void write_outfits_file(const std::string& path, const std::vector<std::pair<std::string, std::vector<std::string>>>& outfits);

}  // namespace tgnn
