// Acceptance suite: one pass/fail line per criterion. Exit code is nonzero
// if any non-stretch criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "phgcn/attention.hpp"
#include "phgcn/fdcheck.hpp"
#include "phgcn/harness.hpp"
#include "phgcn/lattice.hpp"
#include "phgcn/ops.hpp"

using namespace phgcn;

namespace {

struct Criterion {
  int number = 0;
  bool pass = false;
  bool skipped = false;
  bool stretch = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

Graph random_graph(int64_t n, int feat_dim, int classes, uint64_t seed) {
  Rng rng(seed);
  std::vector<std::pair<int32_t, int32_t>> edges;
  for (int32_t i = 0; i + 1 < n; ++i) edges.emplace_back(i, i + 1);
  for (int64_t k = 0; k < 2 * n; ++k)
    edges.emplace_back(int32_t(rng.uniform_int(n)), int32_t(rng.uniform_int(n)));
  Tensor features = Tensor::zeros({n, feat_dim});
  for (double& v : features.values()) v = rng.normal();
  std::vector<int32_t> labels(size_t(n), 0);
  for (auto& l : labels) l = int32_t(rng.uniform_int(classes));
  return build_graph(n, edges, std::move(features), std::move(labels), true);
}

// --- criterion 1: gradient suite ------------------------------------------

Criterion criterion_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  Criterion c;
  c.number = 1;

  // 2-layer PH-GCN, 30 nodes, D=4, F'=4, A=2; FD over every parameter.
  const uint64_t seed = 2024;
  Graph g = random_graph(30, 6, 3, seed);
  ModelConfig mc = make_stack_config(LayerKind::PhGcn, 2, 6, 4, 2, 3, 4, 1.0,
                                     10.0, 0.0, 0.0, seed);
  Model model = Model::init(mc);
  std::vector<uint8_t> mask(30, 1);

  auto loss_value = [&]() {
    Tensor logits = model.forward(nullptr, g, g.features, false, nullptr);
    return ops::nll_loss(nullptr, logits, g.labels, mask)[0];
  };
  Tape tape;
  Tensor logits = model.forward(&tape, g, g.features, false, nullptr);
  Tensor loss = ops::nll_loss(&tape, logits, g.labels, mask);
  tape.backward(loss);

  double worst_param = 0.0;
  for (auto& [name, p] : model.named_parameters()) {
    const auto numeric = fd::central_gradient(loss_value, p.values(), 1e-5);
    const std::vector<double> an(p.grad_view().begin(), p.grad_view().end());
    worst_param = std::max(worst_param, fd::max_rel_error(an, numeric));
  }

  // Lattice filter feature and (interior) position gradients.
  Rng rng(seed ^ 0xacce111);
  ClusteredInstance inst = make_clustered_instance(24, 4, 3, 3, 0.1, 1.0, rng);
  std::vector<double> weights(size_t(24 * 3));
  for (auto& v : weights) v = rng.normal();
  const int64_t n = 24;
  std::vector<double> positions(inst.positions.values().begin(),
                                inst.positions.values().end());
  std::vector<double> feats(inst.features.values().begin(),
                            inst.features.values().end());

  lattice::LatticeFilter filter(4, 3, 10.0);
  filter.forward(n, positions, feats);
  std::vector<double> gfeat(size_t(n * 3)), gpos(size_t(n * 4));
  filter.backward(weights, gfeat, gpos);

  auto filter_loss = [&]() {
    lattice::LatticeFilter f2(4, 3, 10.0);
    auto out = f2.forward(n, positions, feats);
    double s = 0.0;
    for (size_t i = 0; i < out.size(); ++i) s += out[i] * weights[i];
    return s;
  };
  const auto feat_numeric = fd::central_gradient(filter_loss, feats, 1e-5);
  const double worst_feat = fd::max_rel_error(gfeat, feat_numeric);

  std::vector<uint8_t> interior(size_t(n), 1);
  for (int64_t i = 0; i < n; ++i)
    for (double w : filter.embeddings()[size_t(i)].weights)
      if (w < 1e-3) interior[size_t(i)] = 0;
  const auto pos_numeric = fd::central_gradient(filter_loss, positions, 1e-5);
  double worst_pos = 0.0;
  int64_t interior_count = 0;
  for (int64_t i = 0; i < n; ++i) {
    if (!interior[size_t(i)]) continue;
    ++interior_count;
    for (int j = 0; j < 4; ++j) {
      const size_t k = size_t(i * 4 + j);
      const std::vector<double> an = {gpos[k]};
      const std::vector<double> nu = {pos_numeric[k]};
      worst_pos = std::max(worst_pos, fd::max_rel_error(an, nu));
    }
  }

  const double secs = seconds_since(t0);
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "param max rel err %.2e (<1e-3), lattice feature %.2e (<1e-5), "
                "lattice position %.2e (<1e-3, %lld interior pts), %.1fs (<120s)",
                worst_param, worst_feat, worst_pos, (long long)interior_count,
                secs);
  c.detail = buf;
  c.pass = worst_param < 1e-3 && worst_feat < 1e-5 && worst_pos < 1e-3 &&
           interior_count > 0 && secs < 120.0;
  return c;
}

// --- criterion 2: oracle agreement -----------------------------------------

Criterion criterion_oracle_agreement() {
  const auto t0 = std::chrono::steady_clock::now();
  Criterion c;
  c.number = 2;
  Rng rng(7321);
  std::vector<double> all_cosines;
  for (int trial = 0; trial < 20; ++trial) {
    ClusteredInstance inst = make_clustered_instance(200, 4, 8, 4, 0.1, 1.0,
                                                     rng);
    Tensor lat = attention::global_attend_lattice(nullptr, inst.positions,
                                                  inst.features, 10.0);
    Tensor ex = attention::global_attend_exact(nullptr, inst.positions,
                                               inst.features, 10.0);
    auto cos = rowwise_cosine(lat, ex);
    all_cosines.insert(all_cosines.end(), cos.begin(), cos.end());
  }
  const double med = median(all_cosines);
  const double secs = seconds_since(t0);
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "median per-node cosine %.4f (>=0.95) over 20 instances, "
                "%.1fs (<60s)",
                med, secs);
  c.detail = buf;
  c.pass = med >= 0.95 && secs < 60.0;
  return c;
}

// --- criterion 3: degenerate exactness --------------------------------------

Criterion criterion_degenerate() {
  Criterion c;
  c.number = 3;
  Rng rng(5150);
  bool ok = true;

  // Identical embeddings: lattice equals the exact mean.
  const int64_t n = 50;
  Tensor emb = Tensor::zeros({n, 4});
  for (int64_t i = 0; i < n; ++i)
    for (int j = 0; j < 4; ++j) emb.at(i, j) = -0.83;
  Tensor proj = Tensor::zeros({n, 8});
  for (double& v : proj.values()) v = rng.normal();
  Tensor lat = attention::global_attend_lattice(nullptr, emb, proj, 10.0);
  double worst_mean = 0.0;
  for (int c2 = 0; c2 < 8; ++c2) {
    double mean = 0.0;
    for (int64_t i = 0; i < n; ++i) mean += proj.at(i, c2) / double(n);
    for (int64_t i = 0; i < n; ++i)
      worst_mean = std::max(worst_mean, std::abs(lat.at(i, c2) - mean));
  }
  ok = ok && worst_mean < 1e-6;

  // N = 1: identity.
  Tensor emb1 = Tensor::from_values({1, 4}, {0.4, -1.2, 0.0, 2.2});
  Tensor proj1 = Tensor::from_values({1, 8},
                                     {1, -2, 3, -4, 5, -6, 7, -8});
  Tensor out1 = attention::global_attend_lattice(nullptr, emb1, proj1, 10.0);
  double worst_id = 0.0;
  for (int j = 0; j < 8; ++j)
    worst_id = std::max(worst_id, std::abs(out1[j] - proj1[j]));
  ok = ok && worst_id < 1e-6;

  char buf[160];
  std::snprintf(buf, sizeof buf,
                "identical-embedding deviation %.2e (<1e-6), n=1 deviation "
                "%.2e (<1e-6)",
                worst_mean, worst_id);
  c.detail = buf;
  c.pass = ok;
  return c;
}

// --- criterion 4: conservation / normalization suite ------------------------

Criterion criterion_conservation() {
  const auto t0 = std::chrono::steady_clock::now();
  Criterion c;
  c.number = 4;
  Rng rng(8844);
  double worst_unity = 0.0, worst_mass = 0.0, worst_adjoint = 0.0;
  double worst_rowsum = 0.0, worst_bounds = 0.0;

  for (int trial = 0; trial < 10; ++trial) {
    const int dim = 2 + int(rng.uniform_int(5));  // D in 2..6
    const int channels = 1 + int(rng.uniform_int(4));
    const int64_t n = 20 + rng.uniform_int(60);

    // Partition of unity.
    std::vector<double> positions;
    for (int64_t i = 0; i < n; ++i)
      for (int j = 0; j < dim; ++j) positions.push_back(rng.uniform(-2.0, 2.0));
    std::vector<lattice::SimplexEmbedding> embs;
    for (int64_t i = 0; i < n; ++i) {
      std::span<const double> p(positions.data() + i * dim, size_t(dim));
      embs.push_back(lattice::find_simplex(lattice::elevate(p, 3.7)));
      double s = 0.0;
      for (double w : embs.back().weights) {
        if (w < 0.0) worst_unity = std::max(worst_unity, -w);
        s += w;
      }
      worst_unity = std::max(worst_unity, std::abs(s - 1.0));
    }

    // Splat mass conservation.
    std::vector<double> feats(size_t(n * channels));
    for (auto& v : feats) v = rng.normal();
    auto table = lattice::splat(embs, feats, channels);
    for (int ch = 0; ch < channels; ++ch) {
      double in_mass = 0.0, out_mass = 0.0;
      for (int64_t i = 0; i < n; ++i) in_mass += feats[size_t(i * channels + ch)];
      for (int64_t e = 0; e < table.size(); ++e)
        out_mass += table.value(e)[size_t(ch)];
      worst_mass = std::max(worst_mass, std::abs(in_mass - out_mass));
    }

    // Splat/slice adjointness: <slice(T,P), F> == <T, splat(P,F)>.
    lattice::LatticeTable t2(dim, channels, table.size());
    for (int64_t e = 0; e < table.size(); ++e) t2.find_or_insert(table.key(e));
    for (auto& v : t2.values_flat()) v = rng.normal();
    auto sliced = lattice::slice(t2, embs);
    double lhs = 0.0, rhs = 0.0;
    for (size_t i = 0; i < sliced.size(); ++i) lhs += sliced[i] * feats[i];
    for (int64_t e = 0; e < table.size(); ++e) {
      auto tv = t2.value(t2.find(table.key(e)));
      auto sv = table.value(e);
      for (int ch = 0; ch < channels; ++ch) rhs += tv[size_t(ch)] * sv[size_t(ch)];
    }
    worst_adjoint = std::max(worst_adjoint, std::abs(lhs - rhs));
  }

  // Structural attention row sums (all-ones aggregation) and convex bounds.
  for (int trial = 0; trial < 5; ++trial) {
    Rng grng(rng.next_u64());
    MotifSpec spec = MotifSpec::standard();
    Graph g = gen_motif_chain(spec, 8, grng);
    const int64_t n = g.num_nodes;
    Tensor emb = Tensor::zeros({n, 4});
    for (double& v : emb.values()) v = grng.normal(0.0, 0.5);
    Tensor ones = Tensor::full({n, 1}, 1.0);
    Tensor row = attention::structural_attend(nullptr, g, emb, ones, 1.0);
    for (int64_t i = 0; i < n; ++i)
      worst_rowsum = std::max(worst_rowsum, std::abs(row[i] - 1.0));

    ClusteredInstance inst = make_clustered_instance(80, 4, 5, 3, 0.1, 1.0,
                                                     grng);
    for (bool use_lattice : {false, true}) {
      Tensor out = use_lattice
                       ? attention::global_attend_lattice(
                             nullptr, inst.positions, inst.features, 10.0)
                       : attention::global_attend_exact(
                             nullptr, inst.positions, inst.features, 10.0);
      for (int ch = 0; ch < 5; ++ch) {
        double lo = inst.features.at(0, ch), hi = lo;
        for (int64_t i = 1; i < 80; ++i) {
          lo = std::min(lo, inst.features.at(i, ch));
          hi = std::max(hi, inst.features.at(i, ch));
        }
        for (int64_t i = 0; i < 80; ++i) {
          worst_bounds = std::max(worst_bounds, lo - out.at(i, ch));
          worst_bounds = std::max(worst_bounds, out.at(i, ch) - hi);
        }
      }
    }
  }

  const double secs = seconds_since(t0);
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "unity %.1e (<1e-12), mass %.1e (<1e-9), adjoint %.1e (<1e-9), "
                "rowsum %.1e (<1e-12), bounds %.1e (<1e-9), %.1fs (<30s)",
                worst_unity, worst_mass, worst_adjoint, worst_rowsum,
                worst_bounds, secs);
  c.detail = buf;
  c.pass = worst_unity < 1e-12 && worst_mass < 1e-9 && worst_adjoint < 1e-9 &&
           worst_rowsum < 1e-12 && worst_bounds < 1e-9 && secs < 30.0;
  return c;
}

// --- criterion 5: motif reproduction ----------------------------------------

Criterion criterion_motif() {
  const auto t0 = std::chrono::steady_clock::now();
  Criterion c;
  c.number = 5;

  const int kSeeds = 5;
  const int kIters = 3000;
  const int kEvalInterval = 250;

  auto run_kind = [&](LayerKind kind) {
    std::vector<std::vector<double>> curves;
    for (int s = 0; s < kSeeds; ++s) {
      MotifOptions opt;
      opt.kind = kind;
      opt.iters = kIters;
      opt.eval_interval = kEvalInterval;
      opt.eval_graphs = 100;
      opt.seed = uint64_t(1000 + s);
      MotifResult res = run_motif_experiment(opt);
      std::vector<double> curve;
      for (const auto& pt : res.evals) curve.push_back(pt.accuracy);
      curves.push_back(curve);
    }
    // Mean accuracy across seeds at each eval point.
    std::vector<double> mean(curves[0].size(), 0.0);
    for (const auto& curve : curves)
      for (size_t i = 0; i < mean.size(); ++i) mean[i] += curve[i] / kSeeds;
    return mean;
  };

  const auto phgcn_mean = run_kind(LayerKind::PhGcn);
  const auto gat_mean = run_kind(LayerKind::Gat);

  double phgcn_best = 0.0;
  for (double v : phgcn_mean) phgcn_best = std::max(phgcn_best, v);
  double gat_worst = 0.0;
  for (double v : gat_mean) gat_worst = std::max(gat_worst, v);

  const double secs = seconds_since(t0);
  char buf[200];
  std::snprintf(buf, sizeof buf,
                "PH-GCN mean eval acc peak %.3f (>=0.75), GAT mean peak %.3f "
                "(<=0.60), %d seeds, %.0fs (<1800s)",
                phgcn_best, gat_worst, kSeeds, secs);
  c.detail = buf;
  c.pass = phgcn_best >= 0.75 && gat_worst <= 0.60 && secs < 1800.0;
  return c;
}

// --- criterion 6: scaling ----------------------------------------------------

Criterion criterion_scaling() {
  const auto t0 = std::chrono::steady_clock::now();
  Criterion c;
  c.number = 6;
  const std::vector<int64_t> sizes = {2000, 4000, 8000, 16000};
  auto rows = bench_global_aggregation(sizes, 4, 8, /*threads=*/1, 4242);
  const double lattice_ratio = rows[3].lattice_ms / rows[0].lattice_ms;
  const double exact_ratio = rows[3].exact_ms / rows[0].exact_ms;
  const double secs = seconds_since(t0);
  char buf[240];
  std::snprintf(buf, sizeof buf,
                "lattice t(16k)/t(2k) = %.1f (<=16), exact ratio = %.1f "
                "(>=32), single-threaded, %.0fs (<600s)",
                lattice_ratio, exact_ratio, secs);
  c.detail = buf;
  c.pass = lattice_ratio <= 16.0 && exact_ratio >= 32.0 && secs < 600.0;
  return c;
}

// --- criterion 7 (stretch): Cora reproduction --------------------------------

Criterion criterion_cora() {
  Criterion c;
  c.number = 7;
  c.stretch = true;

  const char* nodes_env = std::getenv("PHGCN_CORA_NODES");
  const char* edges_env = std::getenv("PHGCN_CORA_EDGES");
  std::string nodes = nodes_env ? nodes_env : "data/cora_nodes.tsv";
  std::string edges = edges_env ? edges_env : "data/cora_edges.tsv";
  if (!std::filesystem::exists(nodes) || !std::filesystem::exists(edges)) {
    c.skipped = true;
    c.detail = "Cora TSV files not supplied (set PHGCN_CORA_NODES/EDGES)";
    return c;
  }

  Graph base = load_graph(nodes, edges);
  row_normalize_features(base);
  double sum_acc = 0.0;
  const int kSplits = 10;
  for (int s = 0; s < kSplits; ++s) {
    Graph g = base;  // masks are reassigned per split
    split_nodes(g, uint64_t(100 + s));
    ModelConfig mc = make_stack_config(LayerKind::PhGcn, 2, g.feature_dim(), 8,
                                       8, g.num_classes(), 4, 1.0, 10.0, 0.6,
                                       0.6, uint64_t(100 + s));
    Model model = Model::init(mc);
    TrainOptions opt;
    opt.lr = 0.005;
    opt.max_iters = 300;
    opt.patience = 100;
    opt.seed = uint64_t(100 + s);
    TrainResult res = train_transductive(model, g, opt);
    sum_acc += res.test_acc;
    std::printf("  cora split %d: test acc %.4f\n", s, res.test_acc);
  }
  const double mean_acc = 100.0 * sum_acc / kSplits;
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "mean test accuracy %.1f%% over 10 splits (target 87.9 +/- 4)",
                mean_acc);
  c.detail = buf;
  c.pass = mean_acc >= 83.9 && mean_acc <= 91.9;
  return c;
}

}  // namespace

int main() {
  std::vector<Criterion> results;
  results.push_back(criterion_gradients());
  results.push_back(criterion_oracle_agreement());
  results.push_back(criterion_degenerate());
  results.push_back(criterion_conservation());
  results.push_back(criterion_motif());
  results.push_back(criterion_scaling());
  results.push_back(criterion_cora());

  bool all_pass = true;
  for (const auto& c : results) {
    const char* status = c.skipped ? "SKIP" : (c.pass ? "PASS" : "FAIL");
    std::printf("[%s] criterion %d%s: %s\n", status, c.number,
                c.stretch ? " (stretch)" : "", c.detail.c_str());
    if (!c.pass && !c.skipped && !c.stretch) all_pass = false;
  }
  return all_pass ? 0 : 1;
}
