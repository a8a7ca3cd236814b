#include "tgnn/graph.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <string>

#include "tgnn/error.hpp"

namespace tgnn {

int ItemRelationGraph::row_of(int garment) const {
  const auto it = row_index.find(garment);
  return it == row_index.end() ? -1 : it->second;
}

bool ItemRelationGraph::has_edge(int a, int b) const {
  const int row = row_of(a);
  if (row < 0) return false;
  const auto& nbrs = neighbors[row];
  return std::binary_search(nbrs.begin(), nbrs.end(), b);
}

std::size_t ItemRelationGraph::edge_count() const {
  std::size_t total = 0;
  for (const auto& nbrs : neighbors) total += nbrs.size() - 1;  // drop self
  return total / 2;
}

ad::NeighborLists ItemRelationGraph::row_lists() const {
  ad::NeighborLists lists;
  lists.offsets.reserve(nodes.size() + 1);
  lists.offsets.push_back(0);
  for (const auto& nbrs : neighbors) {
    for (int g : nbrs) lists.items.push_back(static_cast<std::size_t>(row_index.at(g)));
    lists.offsets.push_back(lists.items.size());
  }
  return lists;
}

OutfitRelationGraph build_org(const Catalog& catalog) {
  OutfitRelationGraph org;
  org.node_count = catalog.outfit_count();
  org.adjacency.assign(org.node_count, {});

  std::set<std::pair<int, int>> edges;
  for (std::size_t g = 0; g < catalog.garment_count(); ++g) {
    const auto& outfits = catalog.outfits_of(static_cast<int>(g));
    for (std::size_t a = 0; a < outfits.size(); ++a) {
      for (std::size_t b = a + 1; b < outfits.size(); ++b) {
        edges.emplace(outfits[a], outfits[b]);
      }
    }
  }
  org.edges.assign(edges.begin(), edges.end());
  for (const auto& [a, b] : org.edges) {
    org.adjacency[a].push_back(b);
    org.adjacency[b].push_back(a);
  }
  for (auto& nbrs : org.adjacency) std::sort(nbrs.begin(), nbrs.end());
  return org;
}

ItemRelationGraph induce_irg(std::span<const int> outfit_indices, const Catalog& catalog) {
  std::set<int> node_set;
  for (int oi : outfit_indices) {
    if (oi < 0 || static_cast<std::size_t>(oi) >= catalog.outfit_count()) {
      throw Error("graph", "unknown outfit index " + std::to_string(oi));
    }
    for (int g : catalog.outfit(oi).members) node_set.insert(g);
  }

  ItemRelationGraph irg;
  irg.nodes.assign(node_set.begin(), node_set.end());
  irg.row_index.reserve(irg.nodes.size());
  for (std::size_t i = 0; i < irg.nodes.size(); ++i) {
    irg.row_index.emplace(irg.nodes[i], static_cast<int>(i));
  }

  std::vector<std::set<int>> nbrs(irg.nodes.size());
  for (std::size_t i = 0; i < irg.nodes.size(); ++i) nbrs[i].insert(irg.nodes[i]);  // self edge
  for (int oi : outfit_indices) {
    const auto& members = catalog.outfit(oi).members;
    for (std::size_t a = 0; a < members.size(); ++a) {
      for (std::size_t b = a + 1; b < members.size(); ++b) {
        nbrs[irg.row_index.at(members[a])].insert(members[b]);
        nbrs[irg.row_index.at(members[b])].insert(members[a]);
      }
    }
  }
  irg.neighbors.resize(irg.nodes.size());
  for (std::size_t i = 0; i < irg.nodes.size(); ++i) {
    irg.neighbors[i].assign(nbrs[i].begin(), nbrs[i].end());
  }
  return irg;
}

ItemRelationGraph remove_outfit_edges(const ItemRelationGraph& irg, std::span<const int> members) {
  std::set<int> member_set;
  for (int g : members) {
    if (irg.row_of(g) < 0) {
      throw Error("graph", "outfit member " + std::to_string(g) + " is not a graph node");
    }
    member_set.insert(g);
  }

  ItemRelationGraph out;
  out.nodes = irg.nodes;
  out.row_index = irg.row_index;
  out.neighbors.resize(irg.neighbors.size());
  for (std::size_t i = 0; i < irg.nodes.size(); ++i) {
    const int node = irg.nodes[i];
    const bool node_in_outfit = member_set.count(node) != 0;
    for (int nbr : irg.neighbors[i]) {
      // Drop edges whose both endpoints are distinct outfit members.
      if (node_in_outfit && nbr != node && member_set.count(nbr) != 0) continue;
      out.neighbors[i].push_back(nbr);
    }
  }
  return out;
}

GraphStats graph_stats(const ItemRelationGraph& irg) {
  GraphStats stats;
  stats.node_count = irg.size();
  if (stats.node_count == 0) return stats;

  // Degrees exclude self edges.
  std::vector<std::size_t> degree(irg.size());
  for (std::size_t i = 0; i < irg.size(); ++i) degree[i] = irg.neighbors[i].size() - 1;
  std::size_t degree_sum = 0;
  for (std::size_t d : degree) degree_sum += d;
  stats.edge_count = degree_sum / 2;
  stats.avg_degree = static_cast<double>(degree_sum) / static_cast<double>(irg.size());

  std::vector<std::size_t> sorted = degree;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = sorted.size() / 2;
  stats.median_degree = sorted.size() % 2 == 1
                            ? static_cast<double>(sorted[mid])
                            : (static_cast<double>(sorted[mid - 1]) + static_cast<double>(sorted[mid])) / 2.0;

  // Components by traversal.
  std::vector<char> seen(irg.size(), 0);
  std::vector<std::size_t> stack;
  for (std::size_t i = 0; i < irg.size(); ++i) {
    if (seen[i]) continue;
    ++stats.connected_components;
    stack.push_back(i);
    seen[i] = 1;
    while (!stack.empty()) {
      const std::size_t cur = stack.back();
      stack.pop_back();
      for (int nbr : irg.neighbors[cur]) {
        const std::size_t row = static_cast<std::size_t>(irg.row_index.at(nbr));
        if (!seen[row]) {
          seen[row] = 1;
          stack.push_back(row);
        }
      }
    }
  }

  // Triangles and per-node clustering; self edges skipped.
  std::size_t triangles_times_3 = 0;
  double clustering_sum = 0.0;
  for (std::size_t i = 0; i < irg.size(); ++i) {
    const int node = irg.nodes[i];
    std::vector<int> others;
    others.reserve(irg.neighbors[i].size());
    for (int nbr : irg.neighbors[i]) {
      if (nbr != node) others.push_back(nbr);
    }
    std::size_t links = 0;
    for (std::size_t a = 0; a < others.size(); ++a) {
      for (std::size_t b = a + 1; b < others.size(); ++b) {
        if (irg.has_edge(others[a], others[b])) ++links;
      }
    }
    triangles_times_3 += links;  // each triangle counted once per corner
    if (others.size() >= 2) {
      clustering_sum += 2.0 * static_cast<double>(links) /
                        (static_cast<double>(others.size()) * static_cast<double>(others.size() - 1));
    }
  }
  std::size_t triples = 0;
  for (std::size_t d : degree) {
    if (d >= 2) triples += d * (d - 1) / 2;
  }
  stats.transitivity =
      triples > 0 ? static_cast<double>(triangles_times_3) / static_cast<double>(triples) : 0.0;
  stats.avg_clustering_coeff = clustering_sum / static_cast<double>(irg.size());
  return stats;
}

std::string render_graph_stats(const GraphStats& stats) {
  char buf[96];
  std::string out;
  auto line = [&](const char* fmt, auto value) {
    std::snprintf(buf, sizeof(buf), fmt, value);
    out += buf;
  };
  line("Nodes %zu\n", stats.node_count);
  line("Edges %zu\n", stats.edge_count);
  line("Avg. Degree %.6f\n", stats.avg_degree);
  line("Median Degree %.6f\n", stats.median_degree);
  line("Conn. Components %zu\n", stats.connected_components);
  line("Transitivity %.6f\n", stats.transitivity);
  line("Avg. Cluster Coeff. %.6f\n", stats.avg_clustering_coeff);
  return out;
}

}  // namespace tgnn
