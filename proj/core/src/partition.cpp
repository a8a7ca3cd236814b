#include "tgnn/partition.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>

#include "tgnn/error.hpp"
#include "tgnn/rng.hpp"

namespace tgnn {

namespace {

// One coarsening level: weighted nodes, weighted adjacency.
struct Level {
  std::vector<std::size_t> node_weight;
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> adj;  // (neighbor, weight)
  std::vector<std::size_t> fine_to_coarse;  // defined on the finer level below this one

  std::size_t size() const { return node_weight.size(); }
};

Level level_from_org(const OutfitRelationGraph& org) {
  Level level;
  level.node_weight.assign(org.node_count, 1);
  level.adj.assign(org.node_count, {});
  for (const auto& [a, b] : org.edges) {
    level.adj[a].emplace_back(b, 1);
    level.adj[b].emplace_back(a, 1);
  }
  return level;
}

// Heavy-edge matching; merged node weight is capped so partitions stay
// balanceable. Returns the coarse level and writes the projection map into
// `fine`.
Level coarsen(Level& fine, std::size_t max_node_weight, Rng& rng) {
  const std::size_t n = fine.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);

  constexpr std::size_t kUnmatched = ~std::size_t{0};
  std::vector<std::size_t> match(n, kUnmatched);
  for (std::size_t u : order) {
    if (match[u] != kUnmatched) continue;
    std::size_t best = kUnmatched;
    std::size_t best_weight = 0;
    for (const auto& [v, w] : fine.adj[u]) {
      if (match[v] != kUnmatched) continue;
      if (fine.node_weight[u] + fine.node_weight[v] > max_node_weight) continue;
      if (w > best_weight || (w == best_weight && (best == kUnmatched || v < best))) {
        best = v;
        best_weight = w;
      }
    }
    if (best == kUnmatched) {
      match[u] = u;
    } else {
      match[u] = best;
      match[best] = u;
    }
  }

  fine.fine_to_coarse.assign(n, kUnmatched);
  std::size_t next = 0;
  for (std::size_t u = 0; u < n; ++u) {
    if (fine.fine_to_coarse[u] != kUnmatched) continue;
    fine.fine_to_coarse[u] = next;
    fine.fine_to_coarse[match[u]] = next;
    ++next;
  }

  Level coarse;
  coarse.node_weight.assign(next, 0);
  coarse.adj.assign(next, {});
  for (std::size_t u = 0; u < n; ++u) coarse.node_weight[fine.fine_to_coarse[u]] += fine.node_weight[u];

  std::vector<std::map<std::size_t, std::size_t>> merged(next);
  for (std::size_t u = 0; u < n; ++u) {
    const std::size_t cu = fine.fine_to_coarse[u];
    for (const auto& [v, w] : fine.adj[u]) {
      const std::size_t cv = fine.fine_to_coarse[v];
      if (cu != cv) merged[cu][cv] += w;
    }
  }
  for (std::size_t c = 0; c < next; ++c) {
    coarse.adj[c].assign(merged[c].begin(), merged[c].end());
  }
  return coarse;
}

// BFS region growing with per-region recomputed weight targets; handles
// disconnected graphs by restarting from the smallest unassigned node.
std::vector<int> grow_regions(const Level& level, std::size_t parts) {
  const std::size_t n = level.size();
  std::vector<int> assign(n, -1);
  std::size_t remaining_weight = 0;
  for (std::size_t w : level.node_weight) remaining_weight += w;
  std::size_t next_seed = 0;

  for (std::size_t r = 0; r < parts; ++r) {
    const std::size_t remaining_regions = parts - r;
    const std::size_t target =
        (remaining_weight + remaining_regions - 1) / remaining_regions;
    std::size_t region_weight = 0;
    std::deque<std::size_t> queue;
    while (region_weight < target || r + 1 == parts) {
      if (queue.empty()) {
        while (next_seed < n && assign[next_seed] != -1) ++next_seed;
        if (next_seed == n) break;
        queue.push_back(next_seed);
        assign[next_seed] = static_cast<int>(r);
        region_weight += level.node_weight[next_seed];
        continue;
      }
      const std::size_t u = queue.front();
      queue.pop_front();
      for (const auto& [v, w] : level.adj[u]) {
        (void)w;
        if (assign[v] != -1) continue;
        if (region_weight >= target && r + 1 != parts) break;
        assign[v] = static_cast<int>(r);
        region_weight += level.node_weight[v];
        queue.push_back(v);
      }
      if (region_weight >= target && r + 1 != parts) break;
    }
    remaining_weight -= region_weight;
  }
  return assign;
}

std::vector<std::size_t> partition_weights(const Level& level, const std::vector<int>& assign,
                                           std::size_t parts) {
  std::vector<std::size_t> weights(parts, 0);
  for (std::size_t u = 0; u < level.size(); ++u) {
    weights[static_cast<std::size_t>(assign[u])] += level.node_weight[u];
  }
  return weights;
}

// Greedy boundary moves that reduce the cut while respecting size bounds.
void refine(const Level& level, std::vector<int>& assign, std::size_t parts, std::size_t lo,
            std::size_t hi) {
  if (parts < 2) return;
  auto weights = partition_weights(level, assign, parts);
  std::vector<std::size_t> conn(parts);
  for (int pass = 0; pass < 8; ++pass) {
    bool moved = false;
    for (std::size_t u = 0; u < level.size(); ++u) {
      const std::size_t cur = static_cast<std::size_t>(assign[u]);
      std::fill(conn.begin(), conn.end(), 0);
      for (const auto& [v, w] : level.adj[u]) conn[static_cast<std::size_t>(assign[v])] += w;
      std::size_t best = cur;
      for (std::size_t p = 0; p < parts; ++p) {
        if (p == cur || conn[p] <= conn[best]) continue;
        if (weights[p] + level.node_weight[u] > hi) continue;
        if (weights[cur] < lo + level.node_weight[u]) continue;
        best = p;
      }
      if (best != cur && conn[best] > conn[cur]) {
        weights[cur] -= level.node_weight[u];
        weights[best] += level.node_weight[u];
        assign[u] = static_cast<int>(best);
        moved = true;
      }
    }
    if (!moved) break;
  }
}

// Enforces the size contract: no partition above hi, at most one below lo.
void repair_balance(const Level& level, std::vector<int>& assign, std::size_t parts,
                    std::size_t lo, std::size_t hi) {
  if (parts < 2) return;
  auto weights = partition_weights(level, assign, parts);
  std::vector<std::size_t> conn(parts);

  auto best_move = [&](std::size_t from, std::size_t to) -> std::size_t {
    // Node of `from` with the highest connectivity to `to` (smallest index on
    // ties); returns size() when `from` is empty.
    std::size_t best = level.size();
    long long best_gain = std::numeric_limits<long long>::min();
    for (std::size_t u = 0; u < level.size(); ++u) {
      if (static_cast<std::size_t>(assign[u]) != from) continue;
      long long gain = 0;
      for (const auto& [v, w] : level.adj[u]) {
        const std::size_t p = static_cast<std::size_t>(assign[v]);
        if (p == to) gain += static_cast<long long>(w);
        if (p == from) gain -= static_cast<long long>(w);
      }
      if (gain > best_gain) {
        best_gain = gain;
        best = u;
      }
    }
    return best;
  };

  for (std::size_t guard = 0; guard < level.size() * 4; ++guard) {
    const auto heaviest = std::max_element(weights.begin(), weights.end()) - weights.begin();
    if (weights[heaviest] <= hi) break;
    const auto lightest = std::min_element(weights.begin(), weights.end()) - weights.begin();
    const std::size_t u = best_move(static_cast<std::size_t>(heaviest),
                                    static_cast<std::size_t>(lightest));
    if (u == level.size()) break;
    weights[heaviest] -= level.node_weight[u];
    weights[lightest] += level.node_weight[u];
    assign[u] = static_cast<int>(lightest);
  }

  for (std::size_t guard = 0; guard < level.size() * 4; ++guard) {
    std::size_t under = 0;
    for (std::size_t w : weights) under += w < lo ? 1 : 0;
    if (under < 2) break;
    const auto lightest = std::min_element(weights.begin(), weights.end()) - weights.begin();
    std::size_t donor = parts;
    for (std::size_t p = 0; p < parts; ++p) {
      if (p == static_cast<std::size_t>(lightest)) continue;
      if (weights[p] > lo && (donor == parts || weights[p] > weights[donor])) donor = p;
    }
    if (donor == parts) break;
    const std::size_t u = best_move(donor, static_cast<std::size_t>(lightest));
    if (u == level.size()) break;
    weights[donor] -= level.node_weight[u];
    weights[lightest] += level.node_weight[u];
    assign[u] = static_cast<int>(lightest);
  }
}

}  // namespace

PartitionSet partition_org(const OutfitRelationGraph& org, std::size_t size_target,
                           std::uint64_t seed, std::vector<std::string>* warnings) {
  if (size_target < 2) throw Error("partition", "size target must be at least 2");
  const std::size_t n = org.node_count;

  PartitionSet result;
  result.size_target = size_target;
  if (n == 0) {
    result.partitions.emplace_back();
    return result;
  }
  if (size_target > n && warnings != nullptr) {
    warnings->push_back("size target exceeds node count; returning a single partition");
  }
  const std::size_t parts = std::max<std::size_t>(1, (2 * n + size_target) / (2 * size_target));
  const std::size_t lo = (size_target + 1) / 2;
  const std::size_t hi = (3 * size_target + 1) / 2;

  Rng rng(seed);
  std::vector<Level> levels;
  levels.push_back(level_from_org(org));
  const std::size_t coarse_target = std::max<std::size_t>(parts * 8, 64);
  const std::size_t max_node_weight = std::max<std::size_t>(2, size_target / 4);
  while (levels.back().size() > coarse_target) {
    Level coarse = coarsen(levels.back(), max_node_weight, rng);
    if (coarse.size() >= levels.back().size() * 95 / 100) break;  // matching stalled
    levels.push_back(std::move(coarse));
  }

  std::vector<int> assign = grow_regions(levels.back(), parts);
  refine(levels.back(), assign, parts, lo, hi);
  repair_balance(levels.back(), assign, parts, lo, hi);
  for (std::size_t l = levels.size() - 1; l-- > 0;) {
    std::vector<int> finer(levels[l].size());
    for (std::size_t u = 0; u < finer.size(); ++u) finer[u] = assign[levels[l].fine_to_coarse[u]];
    assign = std::move(finer);
    refine(levels[l], assign, parts, lo, hi);
    repair_balance(levels[l], assign, parts, lo, hi);
  }

  result.assignment = assign;
  result.partitions.assign(parts, {});
  for (std::size_t u = 0; u < n; ++u) {
    result.partitions[static_cast<std::size_t>(assign[u])].push_back(static_cast<int>(u));
  }
  result.edge_cut = partition_edge_cut(org, assign);
  return result;
}

std::size_t partition_edge_cut(const OutfitRelationGraph& org, const std::vector<int>& assignment) {
  std::size_t cut = 0;
  for (const auto& [a, b] : org.edges) {
    if (assignment[static_cast<std::size_t>(a)] != assignment[static_cast<std::size_t>(b)]) ++cut;
  }
  return cut;
}

int partition_for_outfit(std::span<const int> query_garments, const PartitionSet& partitions,
                         const Catalog& catalog, PartitionLookup mode) {
  if (query_garments.empty()) throw Error("partition", "empty query");
  if (partitions.partitions.empty()) throw Error("partition", "empty partition set");

  if (mode == PartitionLookup::kTrain) {
    std::vector<int> sorted(query_garments.begin(), query_garments.end());
    std::sort(sorted.begin(), sorted.end());
    for (int oi : catalog.outfits_of(query_garments[0])) {
      std::vector<int> members = catalog.outfit(oi).members;
      std::sort(members.begin(), members.end());
      if (members == sorted) return partitions.assignment[static_cast<std::size_t>(oi)];
    }
    throw Error("partition", "train-mode lookup requires the members of an existing outfit");
  }

  // Candidate neighbors are garments that appear in at least one outfit.
  const std::size_t dim = catalog.embed_dim();
  std::vector<double> norms(catalog.garment_count(), 0.0);
  for (std::size_t g = 0; g < catalog.garment_count(); ++g) {
    const auto emb = catalog.embedding(static_cast<int>(g));
    double acc = 0.0;
    for (double v : emb) acc += v * v;
    norms[g] = std::sqrt(acc);
  }

  std::vector<std::size_t> votes(partitions.partitions.size(), 0);
  for (int q : query_garments) {
    const auto qe = catalog.embedding(q);
    double qn = 0.0;
    for (double v : qe) qn += v * v;
    qn = std::sqrt(qn);
    int best = -1;
    double best_sim = -std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < catalog.garment_count(); ++g) {
      if (catalog.outfits_of(static_cast<int>(g)).empty()) continue;
      double dot = 0.0;
      const double* ge = catalog.embedding_matrix().data() + g * dim;
      for (std::size_t i = 0; i < dim; ++i) dot += ge[i] * qe[i];
      const double denom = norms[g] * qn;
      const double sim = denom > 0.0 ? dot / denom : 0.0;
      if (sim > best_sim) {
        best_sim = sim;
        best = static_cast<int>(g);
      }
    }
    if (best < 0) throw Error("partition", "no training garments available for lookup");
    std::vector<char> seen(partitions.partitions.size(), 0);
    for (int oi : catalog.outfits_of(best)) {
      const auto p = static_cast<std::size_t>(partitions.assignment[static_cast<std::size_t>(oi)]);
      if (!seen[p]) {
        seen[p] = 1;
        votes[p] += 1;
      }
    }
  }
  std::size_t best_partition = 0;
  for (std::size_t p = 1; p < votes.size(); ++p) {
    if (votes[p] > votes[best_partition]) best_partition = p;
  }
  return static_cast<int>(best_partition);
}

void save_partitions(const std::string& path, const PartitionSet& partitions,
                     const Catalog& catalog) {
  std::ofstream out(path);
  if (!out) throw Error("io", "cannot open '" + path + "' for writing");
  out << "# phi=" << partitions.size_target << " edge_cut=" << partitions.edge_cut << '\n';
  for (std::size_t oi = 0; oi < partitions.assignment.size(); ++oi) {
    out << catalog.outfit(static_cast<int>(oi)).id << '\t' << partitions.assignment[oi] << '\n';
  }
  if (!out) throw Error("io", "failed writing '" + path + "'");
}

PartitionSet load_partitions(const std::string& path, const Catalog& catalog) {
  std::ifstream in(path);
  if (!in) throw Error("io", "cannot open '" + path + "'");
  PartitionSet result;
  std::string line;
  std::size_t line_no = 0;
  result.assignment.assign(catalog.outfit_count(), -1);
  int max_partition = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::size_t pos = line.find("phi=");
      if (pos != std::string::npos) result.size_target = std::stoul(line.substr(pos + 4));
      pos = line.find("edge_cut=");
      if (pos != std::string::npos) result.edge_cut = std::stoul(line.substr(pos + 9));
      continue;
    }
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw Error("parse", path + ":" + std::to_string(line_no) + ": expected outfit_id<TAB>index");
    }
    const int oi = catalog.outfit_index(line.substr(0, tab));
    if (oi < 0) {
      throw Error("parse", path + ":" + std::to_string(line_no) + ": unknown outfit id");
    }
    const int p = std::stoi(line.substr(tab + 1));
    if (p < 0) throw Error("parse", path + ":" + std::to_string(line_no) + ": bad partition index");
    result.assignment[static_cast<std::size_t>(oi)] = p;
    max_partition = std::max(max_partition, p);
  }
  for (std::size_t oi = 0; oi < result.assignment.size(); ++oi) {
    if (result.assignment[oi] < 0) {
      throw Error("partition", "outfit '" + catalog.outfit(static_cast<int>(oi)).id +
                                   "' missing from partition file");
    }
  }
  result.partitions.assign(static_cast<std::size_t>(max_partition + 1), {});
  for (std::size_t oi = 0; oi < result.assignment.size(); ++oi) {
    result.partitions[static_cast<std::size_t>(result.assignment[oi])].push_back(
        static_cast<int>(oi));
  }
  return result;
}

}  // namespace tgnn
