#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "phgcn/graph.hpp"
#include "phgcn/lattice.hpp"
#include "phgcn/ops.hpp"
#include "phgcn/tape.hpp"
#include "phgcn/tensor.hpp"

namespace phgcn::attention {

// Graph-structured ops hold a reference to the Graph inside their recorded
// backward closure; the graph must outlive any tape that touches it.

enum class Activation { Elu, Identity };

// Optional dropout on the normalized structural attention coefficients
// (GAT placement). Not applied inside the lattice pathway.
struct AttnDropout {
  double p = 0.0;
  Rng* rng = nullptr;
  bool training = false;
};

// e_ij = -lambda * |emb_i - emb_j| for explicit index pairs. Symmetric, zero
// iff the embeddings coincide.
std::vector<double> euclidean_logits(
    const Tensor& emb, std::span<const std::pair<int32_t, int32_t>> pairs,
    double lambda);

// Structural pathway, pre-activation: masked softmax of Euclidean-distance
// logits over each node's neighborhood, then attention-weighted aggregation
// of the projected features. Requires every node to have at least one
// neighbor (self-loops guarantee this). Differentiable w.r.t. emb and
// projected.
Tensor structural_attend(Tape* tape, const Graph& g, const Tensor& emb,
                         const Tensor& projected, double lambda,
                         const AttnDropout& dropout = {});

// Exact O(N^2) global pathway, pre-activation: softmax over all nodes of
// -lambda * pairwise embedding distances. The reference implementation the
// lattice path is checked against.
Tensor global_attend_exact(Tape* tape, const Tensor& emb,
                           const Tensor& projected, double lambda);

// O(N) approximate global pathway, pre-activation: appends a homogeneous
// 1-channel, runs the permutohedral filter over the embedding space, and
// divides by the filtered constant channel. Raises if a denominator falls
// below 1e-12 (signals a mis-calibrated scale).
Tensor global_attend_lattice(Tape* tape, const Tensor& emb,
                             const Tensor& projected, double lambda);

// Spec-level wrappers: aggregation followed by the pathway activation.
Tensor structural_aggregate(Tape* tape, const Graph& g, const Tensor& emb,
                            const Tensor& projected, double lambda,
                            Activation act = Activation::Elu,
                            const AttnDropout& dropout = {});
Tensor global_aggregate_exact(Tape* tape, const Tensor& emb,
                              const Tensor& projected, double lambda,
                              Activation act = Activation::Elu);
Tensor global_aggregate_lattice(Tape* tape, const Tensor& emb,
                                const Tensor& projected, double lambda,
                                Activation act = Activation::Elu);

// Original GAT attention, pre-activation: logits LeakyReLU(a_src.Wh_i +
// a_dst.Wh_j) with masked softmax over neighborhoods.
Tensor gat_attend(Tape* tape, const Graph& g, const Tensor& projected,
                  const Tensor& attn_src, const Tensor& attn_dst,
                  const AttnDropout& dropout = {}, double leaky_slope = 0.2);

// GCN propagation: out = D^{-1/2} (A+I) D^{-1/2} x over the CSR adjacency
// (self-loops included in the graph by construction).
Tensor gcn_propagate(Tape* tape, const Graph& g, const Tensor& x);

}  // namespace phgcn::attention
