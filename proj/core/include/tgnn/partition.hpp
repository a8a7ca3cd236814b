#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tgnn/catalog.hpp"
#include "tgnn/graph.hpp"

namespace tgnn {

/// Disjoint covering split of the outfit graph into chunks of roughly
/// size_target outfits each.
struct PartitionSet {
  std::vector<std::vector<int>> partitions;  // outfit indices, each sorted
  std::vector<int> assignment;               // outfit index -> partition index
  std::size_t size_target = 0;
  std::size_t edge_cut = 0;
};

/// Deterministic greedy multilevel partitioner: heavy-edge matching
/// coarsening, BFS region growing on the coarsest graph, then greedy boundary
/// refinement at every level. Partition count is round(nodes / size_target),
/// at least 1. Appends a warning when size_target exceeds the node count.
PartitionSet partition_org(const OutfitRelationGraph& org, std::size_t size_target,
                           std::uint64_t seed, std::vector<std::string>* warnings = nullptr);

std::size_t partition_edge_cut(const OutfitRelationGraph& org, const std::vector<int>& assignment);

enum class PartitionLookup { kTrain, kTest };

/// kTrain: the query must be the member list of a catalog outfit; returns its
/// assigned partition. kTest: each query garment votes for every partition
/// holding an outfit of its nearest training garment (cosine similarity);
/// returns the partition with the most votes, ties broken by smallest index.
int partition_for_outfit(std::span<const int> query_garments, const PartitionSet& partitions,
                         const Catalog& catalog, PartitionLookup mode);

void save_partitions(const std::string& path, const PartitionSet& partitions,
                     const Catalog& catalog);
PartitionSet load_partitions(const std::string& path, const Catalog& catalog);

}  // namespace tgnn
