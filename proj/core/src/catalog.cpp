#include "tgnn/catalog.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "tgnn/error.hpp"

namespace tgnn {

namespace {

[[noreturn]] void parse_fail(const std::string& path, std::size_t line, const std::string& what) {
  throw Error("parse", path + ":" + std::to_string(line) + ": " + what);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(s.substr(start));
      break;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

double parse_double(const std::string& path, std::size_t line, const std::string& token) {
  double v = 0.0;
  const char* begin = token.data();
  const char* end = begin + token.size();
  const auto result = std::from_chars(begin, end, v);
  if (result.ec != std::errc() || result.ptr != end) {
    parse_fail(path, line, "bad float '" + token + "'");
  }
  return v;
}

}  // namespace

Catalog Catalog::build(std::vector<Garment> garments, std::vector<double> embeddings,
                       std::size_t embed_dim, std::vector<std::string> categories,
                       std::vector<Outfit> outfits, std::vector<std::string>* warnings) {
  Catalog c;
  c.garments_ = std::move(garments);
  c.embeddings_ = std::move(embeddings);
  c.embed_dim_ = embed_dim;
  c.categories_ = std::move(categories);
  c.outfits_ = std::move(outfits);

  if (c.embeddings_.size() != c.garments_.size() * embed_dim) {
    throw Error("catalog", "embedding matrix does not match garment count");
  }
  for (double v : c.embeddings_) {
    if (!std::isfinite(v)) throw Error("catalog", "non-finite embedding value");
  }

  for (std::size_t i = 0; i < c.garments_.size(); ++i) {
    const auto& g = c.garments_[i];
    if (!c.garment_by_id_.emplace(g.id, static_cast<int>(i)).second) {
      throw Error("catalog", "duplicate garment id '" + g.id + "'");
    }
    if (g.category < 0 || static_cast<std::size_t>(g.category) >= c.categories_.size()) {
      throw Error("catalog", "garment '" + g.id + "' references unknown category");
    }
  }
  for (std::size_t i = 0; i < c.categories_.size(); ++i) {
    if (!c.category_by_id_.emplace(c.categories_[i], static_cast<int>(i)).second) {
      throw Error("catalog", "duplicate category id '" + c.categories_[i] + "'");
    }
  }

  c.outfits_of_.assign(c.garments_.size(), {});
  for (std::size_t oi = 0; oi < c.outfits_.size(); ++oi) {
    const Outfit& o = c.outfits_[oi];
    if (!c.outfit_by_id_.emplace(o.id, static_cast<int>(oi)).second) {
      throw Error("catalog", "duplicate outfit id '" + o.id + "'");
    }
    if (o.members.size() < 2) {
      throw Error("catalog", "outfit '" + o.id + "' has fewer than 2 members");
    }
    std::set<int> seen;
    std::set<int> seen_categories;
    for (int g : o.members) {
      if (g < 0 || static_cast<std::size_t>(g) >= c.garments_.size()) {
        throw Error("catalog", "outfit '" + o.id + "' references missing garment");
      }
      if (!seen.insert(g).second) {
        throw Error("catalog", "outfit '" + o.id + "' lists garment '" +
                                   c.garments_[g].id + "' twice");
      }
      if (!seen_categories.insert(c.garments_[g].category).second && warnings != nullptr) {
        warnings->push_back("outfit '" + o.id + "' holds more than one garment of category '" +
                            c.categories_[c.garments_[g].category] + "'");
      }
      c.outfits_of_[g].push_back(static_cast<int>(oi));
    }
  }
  for (auto& v : c.outfits_of_) std::sort(v.begin(), v.end());
  return c;
}

Catalog Catalog::load(const std::string& outfits_path, const std::string& embeddings_path,
                      std::vector<std::string>* warnings) {
  std::ifstream emb_in(embeddings_path);
  if (!emb_in) throw Error("io", "cannot open '" + embeddings_path + "'");

  std::vector<Garment> garments;
  std::vector<double> embeddings;
  std::vector<std::string> categories;
  std::unordered_map<std::string, int> category_by_id;
  std::unordered_map<std::string, int> garment_by_id;
  std::size_t embed_dim = 0;

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(emb_in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split(line, '\t');
    if (fields.size() != 3) {
      parse_fail(embeddings_path, line_no, "expected garment_id<TAB>category_id<TAB>values");
    }
    const auto values = split(fields[2], ',');
    if (embed_dim == 0) {
      embed_dim = values.size();
    } else if (values.size() != embed_dim) {
      parse_fail(embeddings_path, line_no,
                 "embedding length " + std::to_string(values.size()) + " differs from " +
                     std::to_string(embed_dim));
    }
    int cat;
    const auto it = category_by_id.find(fields[1]);
    if (it == category_by_id.end()) {
      cat = static_cast<int>(categories.size());
      category_by_id.emplace(fields[1], cat);
      categories.push_back(fields[1]);
    } else {
      cat = it->second;
    }
    if (garment_by_id.count(fields[0]) != 0) {
      parse_fail(embeddings_path, line_no, "duplicate garment id '" + fields[0] + "'");
    }
    garment_by_id.emplace(fields[0], static_cast<int>(garments.size()));
    garments.push_back(Garment{fields[0], cat});
    for (const auto& token : values) {
      embeddings.push_back(parse_double(embeddings_path, line_no, token));
    }
  }
  if (garments.empty()) throw Error("parse", embeddings_path + ": no garments");

  std::ifstream out_in(outfits_path);
  if (!out_in) throw Error("io", "cannot open '" + outfits_path + "'");
  std::vector<Outfit> outfits;
  line_no = 0;
  while (std::getline(out_in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split(line, '\t');
    if (fields.size() != 2) {
      parse_fail(outfits_path, line_no, "expected outfit_id<TAB>garment,garment,...");
    }
    Outfit o;
    o.id = fields[0];
    for (const auto& gid : split(fields[1], ',')) {
      const auto it = garment_by_id.find(gid);
      if (it == garment_by_id.end()) {
        parse_fail(outfits_path, line_no, "dangling garment reference '" + gid + "'");
      }
      o.members.push_back(it->second);
    }
    outfits.push_back(std::move(o));
  }

  return build(std::move(garments), std::move(embeddings), embed_dim, std::move(categories),
               std::move(outfits), warnings);
}

int Catalog::garment_index(const std::string& id) const {
  const auto it = garment_by_id_.find(id);
  return it == garment_by_id_.end() ? -1 : it->second;
}

int Catalog::outfit_index(const std::string& id) const {
  const auto it = outfit_by_id_.find(id);
  return it == outfit_by_id_.end() ? -1 : it->second;
}

int Catalog::category_index(const std::string& id) const {
  const auto it = category_by_id_.find(id);
  return it == category_by_id_.end() ? -1 : it->second;
}

std::vector<OutfitRecord> load_outfit_records(const std::string& path, const Catalog& catalog) {
  std::ifstream in(path);
  if (!in) throw Error("io", "cannot open '" + path + "'");
  std::vector<OutfitRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split(line, '\t');
    if (fields.size() != 2) {
      parse_fail(path, line_no, "expected outfit_id<TAB>garment,garment,...");
    }
    OutfitRecord r;
    r.id = fields[0];
    std::set<int> seen;
    for (const auto& gid : split(fields[1], ',')) {
      const int g = catalog.garment_index(gid);
      if (g < 0) parse_fail(path, line_no, "dangling garment reference '" + gid + "'");
      if (!seen.insert(g).second) {
        parse_fail(path, line_no, "garment '" + gid + "' listed twice");
      }
      r.members.push_back(g);
    }
    if (r.members.size() < 2) parse_fail(path, line_no, "outfit has fewer than 2 members");
    records.push_back(std::move(r));
  }
  return records;
}

void write_embeddings_file(const std::string& path, const Catalog& catalog) {
  std::ofstream out(path);
  if (!out) throw Error("io", "cannot open '" + path + "' for writing");
  char buf[64];
  for (std::size_t g = 0; g < catalog.garment_count(); ++g) {
    const auto& garment = catalog.garment(static_cast<int>(g));
    out << garment.id << '\t' << catalog.categories()[garment.category] << '\t';
    const auto emb = catalog.embedding(static_cast<int>(g));
    for (std::size_t i = 0; i < emb.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", emb[i]);
      if (i) out << ',';
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw Error("io", "failed writing '" + path + "'");
}

void write_outfits_file(const std::string& path,
                        const std::vector<std::pair<std::string, std::vector<std::string>>>& outfits) {
  std::ofstream out(path);
  if (!out) throw Error("io", "cannot open '" + path + "' for writing");
  for (const auto& [id, members] : outfits) {
    out << id << '\t';
    for (std::size_t i = 0; i < members.size(); ++i) {
      if (i) out << ',';
      out << members[i];
    }
    out << '\n';
  }
  if (!out) throw Error("io", "failed writing '" + path + "'");
}

}  // namespace tgnn
