#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "phgcn/rng.hpp"
#include "phgcn/tensor.hpp"

namespace phgcn {

// Node-classification graph: CSR adjacency with self-loops, dense features,
// integer labels (-1 = unlabeled), and disjoint split masks. Immutable after
// construction; safe for shared concurrent reads.
struct Graph {
  int64_t num_nodes = 0;
  std::vector<int64_t> row_offsets;  // num_nodes + 1
  std::vector<int32_t> col_indices;  // sorted per row, self-loops included
  Tensor features;                   // [N x F]
  std::vector<int32_t> labels;       // length N, -1 = unlabeled
  std::vector<uint8_t> train_mask, val_mask, test_mask;

  int64_t num_edges() const { return int64_t(col_indices.size()); }
  int feature_dim() const { return int(features.dim(1)); }
  int num_classes() const;

  std::span<const int32_t> neighbors(int64_t i) const {
    return {col_indices.data() + row_offsets[size_t(i)],
            size_t(row_offsets[size_t(i) + 1] - row_offsets[size_t(i)])};
  }
  int64_t degree(int64_t i) const {
    return row_offsets[size_t(i) + 1] - row_offsets[size_t(i)];
  }
};

// Build CSR from an undirected-or-directed edge list; adds a self-loop to
// every node, sorts rows, drops duplicates.
Graph build_graph(int64_t num_nodes,
                  std::span<const std::pair<int32_t, int32_t>> edges,
                  Tensor features, std::vector<int32_t> labels,
                  bool symmetrize = true);

// TSV ingestion. Nodes file: id<TAB>label<TAB>f_1..f_F; edges file:
// src<TAB>dst. Malformed lines raise with the line number; unknown edge
// endpoints raise.
Graph load_graph(const std::string& nodes_path, const std::string& edges_path,
                 bool symmetrize = true);

// Writes the same TSV format back out (node ids are the row indices).
void save_graph(const Graph& g, const std::string& nodes_path,
                const std::string& edges_path);

// Per-class 60/20/20 split into train/test/val (train takes the rounding
// remainder). Deterministic per seed. Requires >= 5 labeled nodes per class.
void split_nodes(Graph& g, uint64_t seed);

// One chain-element motif: local edges, the red node to classify, and the
// port node bridged to neighboring elements.
struct MotifTopology {
  int num_nodes = 0;
  std::vector<std::pair<int, int>> edges;
  int red_node = 0;
  int port_node = 0;
};

// Synthetic chain-graph task: elements are motif_1, motif_2, or a spacer
// node; red nodes are labeled by whether their motif type is strictly
// dominant. Roles (red / motif_1 filler / motif_2 filler / spacer) carry
// one-hot features.
struct MotifSpec {
  MotifTopology motif1;  // 6-cycle around red node r
  MotifTopology motif2;  // 7-cycle around red node r
  int feature_dim = 4;

  static MotifSpec standard();
};

// Samples a chain of `length` elements (uniform over motif_1/motif_2/spacer),
// bridges consecutive ports, self-loops every node, labels red nodes by
// strict dominance. Chains with tied motif counts are rejected and resampled
// (up to 1000 attempts). Red nodes form the train mask.
Graph gen_motif_chain(const MotifSpec& spec, int length, Rng& rng);

// Element types of the most recent chain accepted by gen_motif_chain are not
// retained; recount motif membership from labels/features when verifying.
struct MotifChainInfo {
  int motif1_count = 0;
  int motif2_count = 0;
  std::vector<int32_t> red_nodes_motif1;  // node ids of red nodes in motif_1
  std::vector<int32_t> red_nodes_motif2;
};
Graph gen_motif_chain(const MotifSpec& spec, int length, Rng& rng,
                      MotifChainInfo* info);

// Divides each feature row by its sum (rows of all zeros pass through).
void row_normalize_features(Graph& g);

}  // namespace phgcn
