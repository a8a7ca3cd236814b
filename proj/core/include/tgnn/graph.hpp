#pragma once

#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tgnn/catalog.hpp"
#include "tgnn/tensor.hpp"

namespace tgnn {

/// Undirected graph over outfits; an edge joins two outfits that share at
/// least one garment. No self edges.
struct OutfitRelationGraph {
  std::size_t node_count = 0;                // outfit indices 0..node_count-1
  std::vector<std::pair<int, int>> edges;    // i < j, lexicographically sorted
  std::vector<std::vector<int>> adjacency;   // sorted, no self entries
};

/// Undirected graph over garments with self edges; an edge joins garments
/// that co-occur in some outfit. Neighbor lists are sorted and always contain
/// the node itself.
struct ItemRelationGraph {
  std::vector<int> nodes;                    // garment indices, ascending
  std::vector<std::vector<int>> neighbors;   // parallel to nodes; garment indices

  std::size_t size() const { return nodes.size(); }
  /// Row of a garment in `nodes`, or -1 when absent.
  int row_of(int garment) const;
  bool has_edge(int a, int b) const;
  /// Edge count, self edges excluded.
  std::size_t edge_count() const;
  /// Neighbor lists converted to row indices for attention.
  ad::NeighborLists row_lists() const;

  std::unordered_map<int, int> row_index;    // garment -> row
};

struct GraphStats {
  std::size_t node_count = 0;
  std::size_t edge_count = 0;          // self edges excluded
  double avg_degree = 0.0;             // self edges excluded
  double median_degree = 0.0;
  std::size_t connected_components = 0;
  double transitivity = 0.0;           // 3 * triangles / connected triples
  double avg_clustering_coeff = 0.0;   // degree < 2 counted as 0
};

OutfitRelationGraph build_org(const Catalog& catalog);

/// Induces the item graph of the given outfits: nodes are all their garments,
/// edges join garments sharing any of the listed outfits, self edges on every
/// node.
ItemRelationGraph induce_irg(std::span<const int> outfit_indices, const Catalog& catalog);

/// Removes every edge between distinct members of the outfit; self edges and
/// all other edges are untouched. Every member must be a node of the graph.
ItemRelationGraph remove_outfit_edges(const ItemRelationGraph& irg, std::span<const int> members);

GraphStats graph_stats(const ItemRelationGraph& irg);

std::string render_graph_stats(const GraphStats& stats);

}  // namespace tgnn
