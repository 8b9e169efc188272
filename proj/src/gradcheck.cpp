#include <algorithm>
#include <cmath>
#include <functional>

#include "phgcn/attention.hpp"
#include "phgcn/fdcheck.hpp"
#include "phgcn/harness.hpp"
#include "phgcn/ops.hpp"

namespace phgcn {

namespace {

Tensor random_tensor(Rng& rng, std::vector<int64_t> shape,
                     bool requires_grad = true, double scale = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (double& v : t.values()) v = rng.normal(0.0, scale);
  return t;
}

double weighted_sum(const Tensor& out, const Tensor& weights) {
  double s = 0.0;
  auto ov = out.values();
  auto wv = weights.values();
  for (size_t i = 0; i < ov.size(); ++i) s += ov[i] * wv[i];
  return s;
}

// Compares analytic grads of loss = sum(weights * forward()) against central
// differences for each listed input.
GradCheckItem check_op(const std::string& name, double tolerance,
                       std::vector<Tensor> inputs,
                       const std::function<Tensor(Tape*)>& forward, Rng& rng) {
  // Fixed projection weights keep every output coordinate in play.
  Tensor weights;
  {
    Tensor probe = forward(nullptr);
    weights = Tensor::zeros(probe.shape());
    for (double& v : weights.values()) v = rng.normal();
  }

  Tape tape;
  Tensor out = forward(&tape);
  Tensor loss = ops::sum(&tape, ops::mul(&tape, out, weights));
  tape.backward(loss);

  GradCheckItem item;
  item.name = name;
  item.tolerance = tolerance;
  double worst = 0.0;
  for (Tensor& in : inputs) {
    auto fn = [&]() { return weighted_sum(forward(nullptr), weights); };
    const auto numeric = fd::central_gradient(fn, in.values());
    const auto analytic = in.grad_view();
    const std::vector<double> an(analytic.begin(), analytic.end());
    worst = std::max(worst, fd::max_rel_error(an, numeric));
  }
  item.max_rel_err = worst;
  item.pass = worst < tolerance;
  return item;
}

}  // namespace

std::vector<GradCheckItem> gradcheck_all(uint64_t seed, bool deep) {
  Rng rng(seed ^ 0x6badc0de12345678ULL);
  std::vector<GradCheckItem> items;

  // --- dense ops ---
  {
    Tensor a = random_tensor(rng, {3, 4});
    Tensor b = random_tensor(rng, {4, 2});
    items.push_back(check_op(
        "matmul", 1e-5, {a, b},
        [&](Tape* t) { return ops::matmul(t, a, b); }, rng));
  }
  {
    Tensor x = random_tensor(rng, {4, 5});
    items.push_back(check_op(
        "elu", 1e-5, {x}, [&](Tape* t) { return ops::elu(t, x); }, rng));
  }
  {
    Tensor x = random_tensor(rng, {3, 6});
    std::vector<uint8_t> mask(18, 1);
    mask[1] = mask[7] = mask[12] = 0;
    items.push_back(check_op(
        "softmax_rows", 1e-5, {x},
        [&](Tape* t) { return ops::softmax_rows(t, x, &mask); }, rng));
  }
  {
    Tensor x = random_tensor(rng, {5, 3});
    std::vector<int32_t> labels = {0, 2, 1, 1, 0};
    std::vector<uint8_t> mask = {1, 1, 0, 1, 1};
    items.push_back(check_op(
        "nll_loss", 1e-5, {x},
        [&](Tape* t) { return ops::nll_loss(t, x, labels, mask); }, rng));
  }
  {
    Tensor a = random_tensor(rng, {3, 2});
    Tensor b = random_tensor(rng, {3, 4});
    items.push_back(check_op(
        "concat_cols", 1e-5, {a, b},
        [&](Tape* t) { return ops::concat_cols(t, a, b); }, rng));
  }
  {
    Tensor x = random_tensor(rng, {4, 3});
    items.push_back(check_op(
        "transpose", 1e-5, {x},
        [&](Tape* t) { return ops::transpose(t, x); }, rng));
  }
  {
    Tensor a = random_tensor(rng, {3, 3});
    Tensor b = random_tensor(rng, {3, 3});
    items.push_back(check_op(
        "add_scale_square", 1e-5, {a, b},
        [&](Tape* t) {
          return ops::square(t, ops::scale(t, ops::add(t, a, b), 0.7));
        },
        rng));
  }
  {
    Tensor x = random_tensor(rng, {6, 2});
    std::vector<uint8_t> keep(12, 1);
    keep[2] = keep[5] = keep[9] = 0;
    items.push_back(check_op(
        "dropout", 1e-5, {x},
        [&](Tape* t) { return ops::dropout_masked(t, x, 0.3, keep); }, rng));
  }

  // --- graph attention ops on a small motif chain ---
  const MotifSpec spec = MotifSpec::standard();
  Rng graph_rng(seed ^ 0x9c0ffee000000001ULL);
  Graph g = gen_motif_chain(spec, 6, graph_rng);
  const int64_t n = g.num_nodes;
  {
    Tensor emb = random_tensor(rng, {n, 3}, true, 0.5);
    Tensor proj = random_tensor(rng, {n, 4});
    items.push_back(check_op(
        "structural_attend", 1e-5, {emb, proj},
        [&](Tape* t) {
          return attention::structural_attend(t, g, emb, proj, 1.0);
        },
        rng));
  }
  {
    Tensor emb = random_tensor(rng, {n, 3}, true, 0.5);
    Tensor proj = random_tensor(rng, {n, 4});
    items.push_back(check_op(
        "global_attend_exact", 1e-5, {emb, proj},
        [&](Tape* t) {
          return attention::global_attend_exact(t, emb, proj, 2.0);
        },
        rng));
  }
  {
    Tensor proj = random_tensor(rng, {n, 4});
    Tensor asrc = random_tensor(rng, {1, 4});
    Tensor adst = random_tensor(rng, {1, 4});
    items.push_back(check_op(
        "gat_attend", 1e-5, {proj, asrc, adst},
        [&](Tape* t) {
          return attention::gat_attend(t, g, proj, asrc, adst);
        },
        rng));
  }
  {
    Tensor x = random_tensor(rng, {n, 4});
    items.push_back(check_op(
        "gcn_propagate", 1e-5, {x},
        [&](Tape* t) { return attention::gcn_propagate(t, g, x); }, rng));
  }

  // --- lattice filter: feature path (linear, tight tolerance) ---
  {
    Rng inst_rng(seed ^ 0x1a771ce000000003ULL);
    ClusteredInstance inst =
        make_clustered_instance(24, 4, 3, 3, 0.1, 1.0, inst_rng);
    Tensor emb = inst.positions;
    Tensor proj = inst.features;
    proj.set_requires_grad(true);
    items.push_back(check_op(
        "lattice_features", 1e-5, {proj},
        [&](Tape* t) {
          return attention::global_attend_lattice(t, emb, proj, 10.0);
        },
        rng));
  }

  // --- lattice filter: position path, restricted to simplex-interior points
  // (the barycentric weights are piecewise linear; boundaries carry a
  // subgradient, so FD is only meaningful in simplex interiors) ---
  {
    Rng inst_rng(seed ^ 0x1a771ce000000004ULL);
    ClusteredInstance inst =
        make_clustered_instance(24, 4, 3, 3, 0.1, 1.0, inst_rng);
    const double lambda = 10.0;
    const int dim = 4;
    Tensor emb = inst.positions;
    emb.set_requires_grad(true);
    Tensor proj = inst.features;

    lattice::LatticeFilter probe(dim, 3, lambda);
    probe.forward(emb.dim(0), emb.values(), proj.values());
    std::vector<uint8_t> interior(size_t(emb.dim(0)), 1);
    for (int64_t i = 0; i < emb.dim(0); ++i)
      for (double w : probe.embeddings()[size_t(i)].weights)
        if (w < 1e-3) interior[size_t(i)] = 0;

    Tensor weights;
    {
      Tensor out = attention::global_attend_lattice(nullptr, emb, proj, lambda);
      weights = Tensor::zeros(out.shape());
      for (double& v : weights.values()) v = rng.normal();
    }
    Tape tape;
    Tensor out = attention::global_attend_lattice(&tape, emb, proj, lambda);
    Tensor loss = ops::sum(&tape, ops::mul(&tape, out, weights));
    tape.backward(loss);

    auto fn = [&]() {
      return weighted_sum(
          attention::global_attend_lattice(nullptr, emb, proj, lambda),
          weights);
    };
    const auto numeric = fd::central_gradient(fn, emb.values());
    const auto analytic = emb.grad_view();
    double worst = 0.0;
    int64_t checked = 0;
    for (int64_t i = 0; i < emb.dim(0); ++i) {
      if (!interior[size_t(i)]) continue;
      ++checked;
      for (int c = 0; c < dim; ++c) {
        const size_t k = size_t(i * dim + c);
        const std::vector<double> an = {analytic[k]};
        const std::vector<double> nu = {numeric[k]};
        worst = std::max(worst, fd::max_rel_error(an, nu));
      }
    }
    GradCheckItem item;
    item.name = "lattice_positions_interior";
    item.tolerance = 1e-3;
    item.max_rel_err = worst;
    item.pass = worst < 1e-3 && checked > 0;
    items.push_back(item);
  }

  if (deep) {
    // End-to-end: 2-layer PH-GCN, FD over every parameter tensor.
    Rng deep_rng(seed ^ 0xdeeb000000000005ULL);
    Graph big = gen_motif_chain(spec, 8, deep_rng);
    ModelConfig mc = make_stack_config(LayerKind::PhGcn, 2, spec.feature_dim,
                                       4, 2, 2, 4, 1.0, 10.0, 0.0, 0.0,
                                       seed ^ 0x51);
    Model model = Model::init(mc);
    std::vector<int32_t> labels(size_t(big.num_nodes), 0);
    std::vector<uint8_t> mask(size_t(big.num_nodes), 1);
    for (auto& l : labels) l = int32_t(deep_rng.uniform_int(2));

    auto loss_value = [&]() {
      Tensor logits = model.forward(nullptr, big, big.features, false, nullptr);
      return ops::nll_loss(nullptr, logits, labels, mask)[0];
    };
    Tape tape;
    Tensor logits = model.forward(&tape, big, big.features, false, nullptr);
    Tensor loss = ops::nll_loss(&tape, logits, labels, mask);
    tape.backward(loss);

    double worst = 0.0;
    for (auto& [pname, p] : model.named_parameters()) {
      const auto numeric = fd::central_gradient(loss_value, p.values());
      const auto analytic = p.grad_view();
      const std::vector<double> an(analytic.begin(), analytic.end());
      worst = std::max(worst, fd::max_rel_error(an, numeric));
    }
    GradCheckItem item;
    item.name = "phgcn_2layer_end_to_end";
    item.tolerance = 1e-3;
    item.max_rel_err = worst;
    item.pass = worst < 1e-3;
    items.push_back(item);
  }
  return items;
}

}  // namespace phgcn
