#include "phgcn/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "phgcn/adam.hpp"
#include "phgcn/ops.hpp"

namespace phgcn {

namespace {

uint64_t now_ms() {
  using namespace std::chrono;
  return uint64_t(
      duration_cast<milliseconds>(steady_clock::now().time_since_epoch())
          .count());
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

std::string metrics_csv_header() {
  return "iteration,train_loss,val_loss,val_acc,test_acc,wall_ms";
}

std::string metrics_csv_row(const MetricsRecord& r) {
  std::string out = std::to_string(r.iteration);
  out += ',';
  out += fmt_double(r.train_loss);
  out += ',';
  out += fmt_double(r.val_loss);
  out += ',';
  out += fmt_double(r.val_acc);
  out += ',';
  out += fmt_double(r.test_acc);
  out += ',';
  out += std::to_string(r.wall_ms);
  return out;
}

void write_metrics_csv(const std::vector<MetricsRecord>& rows,
                       const std::string& path) {
  std::ofstream f(path);
  check(bool(f), "write_metrics_csv: cannot open file");
  f << metrics_csv_header() << '\n';
  for (const auto& r : rows) f << metrics_csv_row(r) << '\n';
}

TrainResult train_transductive(Model& model, const Graph& g,
                               const TrainOptions& opt) {
  check(opt.lr >= 0.0, "train: negative learning rate");
  check(opt.patience >= 1, "train: patience must be >= 1");
  bool has_val = false, has_test = false, has_train = false;
  for (size_t i = 0; i < size_t(g.num_nodes); ++i) {
    has_train = has_train || g.train_mask[i];
    has_val = has_val || g.val_mask[i];
    has_test = has_test || g.test_mask[i];
  }
  check(has_train && has_val && has_test, "train: empty split mask");

  Adam adam(model.parameters(), {.lr = opt.lr});
  Rng dropout_rng(opt.seed ^ 0xd509f3a1b2c4e687ULL);

  TrainResult res;
  res.best_val_loss = std::numeric_limits<double>::infinity();
  auto best_snap = model.snapshot();
  int since_best = 0;
  const uint64_t t0 = now_ms();

  for (int iter = 1; iter <= opt.max_iters; ++iter) {
    Tape tape;
    Tensor logits =
        model.forward(&tape, g, g.features, /*training=*/true, &dropout_rng);
    Tensor loss = ops::nll_loss(&tape, logits, g.labels, g.train_mask);
    const double train_loss = loss[0];
    check(std::isfinite(train_loss), "train: loss diverged");
    tape.backward(loss);
    adam.step();

    Tensor eval_logits =
        model.forward(nullptr, g, g.features, /*training=*/false, nullptr);
    const double val_loss =
        ops::nll_loss(nullptr, eval_logits, g.labels, g.val_mask)[0];
    const double val_acc =
        ops::masked_accuracy(eval_logits, g.labels, g.val_mask);

    if (val_loss < res.best_val_loss) {
      res.best_val_loss = val_loss;
      res.best_iteration = iter;
      best_snap = model.snapshot();
      res.test_acc = ops::masked_accuracy(eval_logits, g.labels, g.test_mask);
      since_best = 0;
    } else {
      ++since_best;
    }

    MetricsRecord rec;
    rec.iteration = iter;
    rec.train_loss = train_loss;
    rec.val_loss = val_loss;
    rec.val_acc = val_acc;
    rec.test_acc = res.test_acc;
    rec.wall_ms = opt.deterministic ? 0 : now_ms() - t0;
    res.metrics.push_back(rec);

    if (since_best >= opt.patience) break;
  }
  model.restore(best_snap);
  return res;
}

MotifResult run_motif_experiment(const MotifOptions& opt) {
  check(opt.kind == LayerKind::PhGcn || opt.kind == LayerKind::Gat ||
            opt.kind == LayerKind::GatEda || opt.kind == LayerKind::Gcn,
        "motif: unsupported model kind");
  const MotifSpec spec = MotifSpec::standard();
  ModelConfig mc = make_stack_config(
      opt.kind, opt.num_layers, spec.feature_dim, opt.head_dim, opt.heads,
      /*num_classes=*/2, opt.embed_dim, opt.lambda_struct, opt.lambda_global,
      /*dropout=*/0.0, /*attn_dropout=*/0.0, opt.seed);
  Model model = Model::init(mc);
  Adam adam(model.parameters(), {.lr = opt.lr});

  Rng train_rng(opt.seed ^ 0x7a51d00000000001ULL);
  Rng eval_seed_rng(opt.seed ^ 0xe7a1000000000002ULL);

  MotifResult res;
  double best_eval_loss = std::numeric_limits<double>::infinity();
  double test_at_best = 0.0;
  const uint64_t t0 = now_ms();

  for (int iter = 1; iter <= opt.iters; ++iter) {
    Graph g = gen_motif_chain(spec, opt.chain_length, train_rng);
    Tape tape;
    Tensor logits = model.forward(&tape, g, g.features, true, nullptr);
    Tensor loss = ops::nll_loss(&tape, logits, g.labels, g.train_mask);
    const double train_loss = loss[0];
    check(std::isfinite(train_loss), "motif: loss diverged");
    tape.backward(loss);
    adam.step();

    MetricsRecord rec;
    rec.iteration = iter;
    rec.train_loss = train_loss;
    rec.wall_ms = opt.deterministic ? 0 : now_ms() - t0;

    if (iter % opt.eval_interval == 0 || iter == opt.iters) {
      // Fresh evaluation stream per checkpoint, deterministic per seed.
      Rng eval_rng = eval_seed_rng.fork(uint64_t(iter));
      int64_t correct = 0, total = 0;
      double nll_sum = 0.0;
      int64_t nll_count = 0;
      for (int ge = 0; ge < opt.eval_graphs; ++ge) {
        MotifChainInfo info;
        Graph eg = gen_motif_chain(spec, opt.chain_length, eval_rng, &info);
        // Two red nodes per graph: one from each motif type when both
        // occur (the dominant/minority pair), otherwise two random red
        // nodes of the only type present.
        std::vector<int32_t> nodes;
        if (!info.red_nodes_motif1.empty() && !info.red_nodes_motif2.empty()) {
          nodes.push_back(info.red_nodes_motif1[size_t(
              eval_rng.uniform_int(int64_t(info.red_nodes_motif1.size())))]);
          nodes.push_back(info.red_nodes_motif2[size_t(
              eval_rng.uniform_int(int64_t(info.red_nodes_motif2.size())))]);
        } else {
          const auto& reds = info.red_nodes_motif1.empty()
                                 ? info.red_nodes_motif2
                                 : info.red_nodes_motif1;
          for (int k = 0; k < 2; ++k)
            nodes.push_back(reds[size_t(
                eval_rng.uniform_int(int64_t(reds.size())))]);
        }
        Tensor out = model.forward(nullptr, eg, eg.features, false, nullptr);
        std::vector<uint8_t> mask(size_t(eg.num_nodes), 0);
        for (int32_t v : nodes) mask[size_t(v)] = 1;
        auto pred = ops::argmax_rows(out);
        for (int32_t v : nodes) {
          ++total;
          if (pred[size_t(v)] == eg.labels[size_t(v)]) ++correct;
        }
        nll_sum += ops::nll_loss(nullptr, out, eg.labels, mask)[0];
        ++nll_count;
      }
      MotifEvalPoint pt;
      pt.iteration = iter;
      pt.accuracy = double(correct) / double(total);
      pt.loss = nll_sum / double(nll_count);
      res.evals.push_back(pt);
      res.best_eval_acc = std::max(res.best_eval_acc, pt.accuracy);
      if (pt.loss < best_eval_loss) {
        best_eval_loss = pt.loss;
        test_at_best = pt.accuracy;
      }
      rec.val_loss = pt.loss;
      rec.val_acc = pt.accuracy;
    } else if (!res.evals.empty()) {
      rec.val_loss = res.evals.back().loss;
      rec.val_acc = res.evals.back().accuracy;
    }
    rec.test_acc = test_at_best;
    res.metrics.push_back(rec);
  }
  return res;
}

ClusteredInstance make_clustered_instance(int64_t n, int dim, int channels,
                                          int n_clusters, double cluster_std,
                                          double min_sep, Rng& rng) {
  check(n >= 1 && n_clusters >= 1, "clustered instance: bad sizes");
  const double box = std::max(
      2.0, min_sep * (std::pow(double(n_clusters), 1.0 / dim) + 1.5));
  std::vector<double> centers;
  for (int attempt = 0; attempt < 10000 && int(centers.size()) < n_clusters * dim;
       ++attempt) {
    std::vector<double> c(size_t(dim), 0.0);
    for (auto& v : c) v = rng.uniform(0.0, box);
    bool ok = true;
    for (size_t k = 0; k + dim <= centers.size(); k += size_t(dim)) {
      double d2 = 0.0;
      for (int j = 0; j < dim; ++j) {
        const double diff = centers[k + size_t(j)] - c[size_t(j)];
        d2 += diff * diff;
      }
      if (d2 < min_sep * min_sep) {
        ok = false;
        break;
      }
    }
    if (ok) centers.insert(centers.end(), c.begin(), c.end());
  }
  check(int(centers.size()) == n_clusters * dim,
        "clustered instance: could not place separated centers");

  ClusteredInstance inst;
  inst.positions = Tensor::zeros({n, dim});
  inst.features = Tensor::zeros({n, channels});
  for (int64_t i = 0; i < n; ++i) {
    const int k = int(i % n_clusters);
    for (int j = 0; j < dim; ++j)
      inst.positions.at(i, j) =
          centers[size_t(k * dim + j)] + rng.normal(0.0, cluster_std);
    for (int c = 0; c < channels; ++c) inst.features.at(i, c) = rng.normal();
  }
  return inst;
}

std::vector<double> rowwise_cosine(const Tensor& a, const Tensor& b) {
  check(a.shape() == b.shape(), "rowwise_cosine: shape mismatch");
  const int64_t n = a.dim(0), c = a.dim(1);
  std::vector<double> out(size_t(n), 0.0);
  for (int64_t i = 0; i < n; ++i) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (int64_t j = 0; j < c; ++j) {
      dot += a.at(i, j) * b.at(i, j);
      na += a.at(i, j) * a.at(i, j);
      nb += b.at(i, j) * b.at(i, j);
    }
    const double denom = std::sqrt(na) * std::sqrt(nb);
    out[size_t(i)] = denom > 0.0 ? dot / denom : 1.0;
  }
  return out;
}

double median(std::vector<double> v) {
  check(!v.empty(), "median: empty input");
  std::sort(v.begin(), v.end());
  const size_t mid = v.size() / 2;
  return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

}  // namespace phgcn
