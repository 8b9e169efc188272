#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "phgcn/graph.hpp"
#include "phgcn/layers.hpp"
#include "phgcn/tensor.hpp"

namespace phgcn {

// One metrics row per training iteration. test_acc is the test accuracy of
// the best-validation-loss checkpoint seen so far. wall_ms is written as 0
// in deterministic mode so metrics files compare byte-for-byte.
struct MetricsRecord {
  int64_t iteration = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  double test_acc = 0.0;
  uint64_t wall_ms = 0;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsRecord& r);
void write_metrics_csv(const std::vector<MetricsRecord>& rows,
                       const std::string& path);

struct TrainOptions {
  double lr = 0.005;
  int max_iters = 300;
  int patience = 50;
  uint64_t seed = 0;
  bool deterministic = false;
};

struct TrainResult {
  std::vector<MetricsRecord> metrics;
  double best_val_loss = 0.0;
  int64_t best_iteration = 0;
  double test_acc = 0.0;  // at the best-validation checkpoint
};

// Full-batch transductive training with best-validation-loss tracking and
// early stopping. The model is left at the best checkpoint. Raises on a
// non-finite training loss.
TrainResult train_transductive(Model& model, const Graph& g,
                               const TrainOptions& opt);

// --- Synthetic motif-chain experiment -------------------------------------

struct MotifOptions {
  LayerKind kind = LayerKind::PhGcn;
  int num_layers = 3;
  int head_dim = 8;
  int heads = 2;
  int embed_dim = 4;
  int chain_length = 10;
  double lr = 0.01;
  double lambda_struct = 1.0;
  // Chains have a few dozen nodes; the strong global decay the paper uses
  // for graph-scale selectivity starves the global pathway of gradient here.
  double lambda_global = 1.0;
  int iters = 3000;
  int eval_interval = 100;
  int eval_graphs = 100;
  uint64_t seed = 0;
  bool deterministic = false;
};

struct MotifEvalPoint {
  int64_t iteration = 0;
  double accuracy = 0.0;
  double loss = 0.0;
};

struct MotifResult {
  std::vector<MetricsRecord> metrics;    // one row per training iteration
  std::vector<MotifEvalPoint> evals;     // periodic 100-graph evaluations
  double best_eval_acc = 0.0;
};

// Inductive loop: a fresh chain graph per iteration, loss over its red
// nodes; periodic evaluation classifies two red nodes (one from each motif
// type when both occur) in eval_graphs fresh graphs.
MotifResult run_motif_experiment(const MotifOptions& opt);

// --- Clustered synthetic instances (calibration / oracle comparisons) -----

struct ClusteredInstance {
  Tensor positions;  // [N x D]
  Tensor features;   // [N x C]
};

// K Gaussian clusters with the given std; centers redrawn until pairwise
// separation >= min_sep. Feature entries are standard normal.
ClusteredInstance make_clustered_instance(int64_t n, int dim, int channels,
                                          int n_clusters, double cluster_std,
                                          double min_sep, Rng& rng);

// Per-row cosine similarity between two equally shaped matrices.
std::vector<double> rowwise_cosine(const Tensor& a, const Tensor& b);
double median(std::vector<double> v);

// --- Scaling benchmark -----------------------------------------------------

struct BenchRow {
  int64_t n = 0;
  double lattice_ms = 0.0;
  double exact_ms = 0.0;
  int threads = 1;
};

// Times the lattice and exact global aggregation paths on clustered
// instances of each size. Reporting only; asserts nothing.
std::vector<BenchRow> bench_global_aggregation(const std::vector<int64_t>& sizes,
                                               int dim, int channels,
                                               int threads, uint64_t seed);
std::string bench_csv(const std::vector<BenchRow>& rows);

// --- Kernel calibration ----------------------------------------------------

struct CalibrationResult {
  int dim = 0;
  double kappa = 0.0;
  double cd = 0.0;
  double rel_rmse = 0.0;       // at the optimum
  double median_cosine = 0.0;  // acceptance-style metric at the optimum
};

// Least-squares fit of the (kappa, c_D) pair mapping lambda onto the lattice
// scale, against the exact aggregation on clustered instances.
CalibrationResult calibrate_lattice(int dim, int trials, uint64_t seed);

// --- Gradient checking -----------------------------------------------------

struct GradCheckItem {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

// Finite-difference suites across all modules; `deep` additionally runs the
// end-to-end two-layer PH-GCN parameter check.
std::vector<GradCheckItem> gradcheck_all(uint64_t seed, bool deep = true);

}  // namespace phgcn
