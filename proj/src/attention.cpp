#include "phgcn/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "phgcn/parallel.hpp"

namespace phgcn::attention {

namespace {

constexpr double kCoincidentEps = 1e-12;  // |p_i - p_j| below this: zero subgradient
constexpr double kHomogeneousEps = 1e-12;

double row_distance(const double* a, const double* b, int d) {
  double s = 0.0;
  for (int c = 0; c < d; ++c) {
    const double diff = a[c] - b[c];
    s += diff * diff;
  }
  return std::sqrt(s);
}

void post_check(const Tensor& t, const char* name) {
  if (debug_checks_enabled()) t.check_finite(name);
}

Tensor apply_activation(Tape* tape, const Tensor& x, Activation act) {
  return act == Activation::Elu ? ops::elu(tape, x) : x;
}

std::vector<uint8_t> draw_keep_mask(size_t n, const AttnDropout& dropout) {
  std::vector<uint8_t> keep;
  if (dropout.training && dropout.p > 0.0) {
    check(dropout.rng != nullptr, "attention dropout: rng required");
    check(dropout.p < 1.0, "attention dropout: p must be < 1");
    keep.resize(n);
    for (auto& k : keep) k = dropout.rng->uniform() >= dropout.p ? 1 : 0;
  }
  return keep;
}

}  // namespace

std::vector<double> euclidean_logits(
    const Tensor& emb, std::span<const std::pair<int32_t, int32_t>> pairs,
    double lambda) {
  check(emb.ndim() == 2, "euclidean_logits: emb must be 2-D");
  const int64_t n = emb.dim(0);
  const int d = int(emb.dim(1));
  const double* p = emb.values().data();
  std::vector<double> out(pairs.size());
  for (size_t k = 0; k < pairs.size(); ++k) {
    auto [i, j] = pairs[k];
    check(i >= 0 && i < n && j >= 0 && j < n,
          "euclidean_logits: pair index out of range");
    out[k] = -lambda * row_distance(p + int64_t(i) * d, p + int64_t(j) * d, d);
  }
  return out;
}

Tensor structural_attend(Tape* tape, const Graph& g, const Tensor& emb,
                         const Tensor& projected, double lambda,
                         const AttnDropout& dropout) {
  const int64_t n = g.num_nodes;
  check(emb.dim(0) == n && projected.dim(0) == n,
        "structural_attend: row count mismatch");
  const int d = int(emb.dim(1));
  const int f = int(projected.dim(1));
  for (int64_t i = 0; i < n; ++i)
    check(g.degree(i) >= 1, "structural_attend: node without neighbors");

  const bool rg =
      tape && (emb.requires_grad() || projected.requires_grad());
  Tensor out = Tensor::zeros({n, f}, rg);

  // Softmax coefficients saved pre-dropout: the dropped edges still carry
  // gradient through the softmax normalization.
  auto alpha = std::make_shared<std::vector<double>>(g.col_indices.size(), 0.0);
  auto keep = std::make_shared<std::vector<uint8_t>>(
      draw_keep_mask(g.col_indices.size(), dropout));
  const double keep_scale =
      keep->empty() ? 1.0 : 1.0 / (1.0 - dropout.p);

  const double* pe = emb.values().data();
  const double* pf = projected.values().data();
  double* po = out.values().data();
#pragma omp parallel for schedule(static) num_threads(par::threads())
  for (int64_t i = 0; i < n; ++i) {
    const int64_t begin = g.row_offsets[size_t(i)];
    const int64_t end = g.row_offsets[size_t(i) + 1];
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t e = begin; e < end; ++e) {
      const int32_t j = g.col_indices[size_t(e)];
      const double logit = -lambda * row_distance(pe + i * d, pe + int64_t(j) * d, d);
      (*alpha)[size_t(e)] = logit;
      mx = std::max(mx, logit);
    }
    double denom = 0.0;
    for (int64_t e = begin; e < end; ++e) {
      const double v = std::exp((*alpha)[size_t(e)] - mx);
      (*alpha)[size_t(e)] = v;
      denom += v;
    }
    double* oi = po + i * f;
    for (int64_t e = begin; e < end; ++e) {
      const double a = (*alpha)[size_t(e)] / denom;
      (*alpha)[size_t(e)] = a;
      const double aeff =
          keep->empty() ? a : ((*keep)[size_t(e)] ? a * keep_scale : 0.0);
      if (aeff == 0.0) continue;
      const double* fj = pf + int64_t(g.col_indices[size_t(e)]) * f;
      for (int c = 0; c < f; ++c) oi[c] += aeff * fj[c];
    }
  }
  post_check(out, "structural_attend");

  if (rg) {
    Tensor embc = emb, projc = projected, outc = out;
    const Graph* gp = &g;
    tape->record([embc, projc, outc, gp, alpha, keep, keep_scale,
                  lambda]() mutable {
      const int64_t n = gp->num_nodes;
      const int d = int(embc.dim(1));
      const int f = int(projc.dim(1));
      const double* pe = embc.values().data();
      const double* pf = projc.values().data();
      auto go = outc.grad_view();
      double* ge = embc.requires_grad() ? embc.grad().data() : nullptr;
      double* gf = projc.requires_grad() ? projc.grad().data() : nullptr;

      // Serial over nodes: scatters into neighbor rows of both grads.
      for (int64_t i = 0; i < n; ++i) {
        const int64_t begin = gp->row_offsets[size_t(i)];
        const int64_t end = gp->row_offsets[size_t(i) + 1];
        const double* gi = go.data() + i * f;

        // dL/de_ij = a_ij * (keep_ij * scale * <g_i, f_j> - dot_sum) with
        // dot_sum = sum_k a_ik * keep_ik * scale * <g_i, f_k>.
        double dot_sum = 0.0;
        for (int64_t e = begin; e < end; ++e) {
          const double m =
              keep->empty() ? 1.0 : ((*keep)[size_t(e)] ? keep_scale : 0.0);
          if (m == 0.0) continue;
          const double aeff = (*alpha)[size_t(e)] * m;
          const double* fj = pf + int64_t(gp->col_indices[size_t(e)]) * f;
          double dfj = 0.0;
          for (int c = 0; c < f; ++c) dfj += gi[c] * fj[c];
          dot_sum += aeff * dfj;
          if (gf) {
            double* gfj = gf + int64_t(gp->col_indices[size_t(e)]) * f;
            for (int c = 0; c < f; ++c) gfj[c] += aeff * gi[c];
          }
        }
        if (!ge) continue;
        for (int64_t e = begin; e < end; ++e) {
          const int32_t j = gp->col_indices[size_t(e)];
          const double a = (*alpha)[size_t(e)];
          const double m =
              keep->empty() ? 1.0 : ((*keep)[size_t(e)] ? keep_scale : 0.0);
          const double* fj = pf + int64_t(j) * f;
          double dfj = 0.0;
          for (int c = 0; c < f; ++c) dfj += gi[c] * fj[c];
          const double de = a * (m * dfj - dot_sum);
          if (de == 0.0) continue;
          const double dist = row_distance(pe + i * d, pe + int64_t(j) * d, d);
          if (dist < kCoincidentEps) continue;  // zero subgradient
          const double coef = -lambda * de / dist;
          double* gei = ge + i * d;
          double* gej = ge + int64_t(j) * d;
          for (int c = 0; c < d; ++c) {
            const double diff = pe[i * d + c] - pe[int64_t(j) * d + c];
            gei[c] += coef * diff;
            gej[c] -= coef * diff;
          }
        }
      }
    });
  }
  return out;
}

Tensor global_attend_exact(Tape* tape, const Tensor& emb,
                           const Tensor& projected, double lambda) {
  const int64_t n = emb.dim(0);
  check(projected.dim(0) == n, "global_attend_exact: row count mismatch");
  const int d = int(emb.dim(1));
  const int f = int(projected.dim(1));
  const bool rg = tape && (emb.requires_grad() || projected.requires_grad());

  Tensor out = Tensor::zeros({n, f}, rg);
  auto denom = std::make_shared<std::vector<double>>(size_t(n), 0.0);

  const double* pe = emb.values().data();
  const double* pf = projected.values().data();
  double* po = out.values().data();
#pragma omp parallel for schedule(static) num_threads(par::threads())
  for (int64_t i = 0; i < n; ++i) {
    double* oi = po + i * f;
    double s = 0.0;
    for (int64_t j = 0; j < n; ++j) {
      const double k =
          std::exp(-lambda * row_distance(pe + i * d, pe + j * d, d));
      s += k;
      const double* fj = pf + j * f;
      for (int c = 0; c < f; ++c) oi[c] += k * fj[c];
    }
    for (int c = 0; c < f; ++c) oi[c] /= s;
    (*denom)[size_t(i)] = s;
  }
  post_check(out, "global_attend_exact");

  if (rg) {
    Tensor embc = emb, projc = projected, outc = out;
    tape->record([embc, projc, outc, denom, lambda]() mutable {
      const int64_t n = embc.dim(0);
      const int d = int(embc.dim(1));
      const int f = int(projc.dim(1));
      const double* pe = embc.values().data();
      const double* pf = projc.values().data();
      const double* po = outc.values().data();
      auto go = outc.grad_view();
      const double* pg = go.data();

      if (projc.requires_grad()) {
        double* gf = projc.grad().data();
        // dL/df_j = sum_i alpha_ij g_i, parallel over j.
#pragma omp parallel for schedule(static) num_threads(par::threads())
        for (int64_t j = 0; j < n; ++j) {
          double* gfj = gf + j * f;
          for (int64_t i = 0; i < n; ++i) {
            const double k =
                std::exp(-lambda * row_distance(pe + i * d, pe + j * d, d));
            const double a = k / (*denom)[size_t(i)];
            const double* gi = pg + i * f;
            for (int c = 0; c < f; ++c) gfj[c] += a * gi[c];
          }
        }
      }
      if (embc.requires_grad()) {
        double* ge = embc.grad().data();
        // Row terms r_i = <g_i, out_i> cached once.
        std::vector<double> rdot(size_t(n), 0.0);
        for (int64_t i = 0; i < n; ++i) {
          double s = 0.0;
          for (int c = 0; c < f; ++c) s += pg[i * f + c] * po[i * f + c];
          rdot[size_t(i)] = s;
        }
        // dL/dp_i accumulates both directions of every pair, parallel over i.
#pragma omp parallel for schedule(static) num_threads(par::threads())
        for (int64_t i = 0; i < n; ++i) {
          double* gei = ge + i * d;
          for (int64_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const double dist = row_distance(pe + i * d, pe + j * d, d);
            if (dist < kCoincidentEps) continue;
            const double k = std::exp(-lambda * dist);
            double gfij = 0.0, gfji = 0.0;
            for (int c = 0; c < f; ++c) {
              gfij += pg[i * f + c] * pf[j * f + c];
              gfji += pg[j * f + c] * pf[i * f + c];
            }
            const double dkij = (gfij - rdot[size_t(i)]) / (*denom)[size_t(i)];
            const double dkji = (gfji - rdot[size_t(j)]) / (*denom)[size_t(j)];
            const double coef = -lambda * k * (dkij + dkji) / dist;
            for (int c = 0; c < d; ++c)
              gei[c] += coef * (pe[i * d + c] - pe[j * d + c]);
          }
        }
      }
    });
  }
  return out;
}

Tensor global_attend_lattice(Tape* tape, const Tensor& emb,
                             const Tensor& projected, double lambda) {
  const int64_t n = emb.dim(0);
  check(projected.dim(0) == n, "global_attend_lattice: row count mismatch");
  check(lambda > 0.0, "global_attend_lattice: lambda must be positive");
  const int d = int(emb.dim(1));
  const int f = int(projected.dim(1));
  const bool rg = tape && (emb.requires_grad() || projected.requires_grad());

  // Homogeneous-coordinate trick: filter [projected | 1] in one pass, then
  // divide the first f channels by the last.
  std::vector<double> homog(size_t(n) * size_t(f + 1));
  const double* pf = projected.values().data();
  for (int64_t i = 0; i < n; ++i) {
    for (int c = 0; c < f; ++c) homog[size_t(i * (f + 1) + c)] = pf[i * f + c];
    homog[size_t(i * (f + 1) + f)] = 1.0;
  }

  auto filter = std::make_shared<lattice::LatticeFilter>(d, f + 1, lambda);
  const std::vector<double> filtered =
      filter->forward(n, emb.values(), homog);

  Tensor out = Tensor::zeros({n, f}, rg);
  auto denom = std::make_shared<std::vector<double>>(size_t(n), 0.0);
  double* po = out.values().data();
  for (int64_t i = 0; i < n; ++i) {
    const double den = filtered[size_t(i * (f + 1) + f)];
    check(den >= kHomogeneousEps,
          "global_attend_lattice: homogeneous denominator below epsilon");
    (*denom)[size_t(i)] = den;
    for (int c = 0; c < f; ++c)
      po[i * f + c] = filtered[size_t(i * (f + 1) + c)] / den;
  }
  post_check(out, "global_attend_lattice");

  if (rg) {
    Tensor embc = emb, projc = projected, outc = out;
    tape->record([embc, projc, outc, denom, filter]() mutable {
      const int64_t n = embc.dim(0);
      const int d = int(embc.dim(1));
      const int f = int(projc.dim(1));
      auto go = outc.grad_view();
      const double* pg = go.data();
      const double* po = outc.values().data();

      // Gradient w.r.t. the filtered channels, through the division.
      std::vector<double> gfilt(size_t(n) * size_t(f + 1));
      for (int64_t i = 0; i < n; ++i) {
        const double inv = 1.0 / (*denom)[size_t(i)];
        double dot = 0.0;
        for (int c = 0; c < f; ++c) {
          gfilt[size_t(i * (f + 1) + c)] = pg[i * f + c] * inv;
          dot += pg[i * f + c] * po[i * f + c];
        }
        gfilt[size_t(i * (f + 1) + f)] = -dot * inv;
      }

      std::vector<double> gfeat(size_t(n) * size_t(f + 1));
      std::vector<double> gpos(size_t(n) * size_t(d));
      filter->backward(gfilt, gfeat, gpos);

      if (projc.requires_grad()) {
        double* gf = projc.grad().data();
        for (int64_t i = 0; i < n; ++i)
          for (int c = 0; c < f; ++c)
            gf[i * f + c] += gfeat[size_t(i * (f + 1) + c)];
      }
      if (embc.requires_grad()) {
        double* ge = embc.grad().data();
        for (size_t i = 0; i < gpos.size(); ++i) ge[i] += gpos[i];
      }
    });
  }
  return out;
}

Tensor structural_aggregate(Tape* tape, const Graph& g, const Tensor& emb,
                            const Tensor& projected, double lambda,
                            Activation act, const AttnDropout& dropout) {
  return apply_activation(
      tape, structural_attend(tape, g, emb, projected, lambda, dropout), act);
}

Tensor global_aggregate_exact(Tape* tape, const Tensor& emb,
                              const Tensor& projected, double lambda,
                              Activation act) {
  return apply_activation(tape, global_attend_exact(tape, emb, projected, lambda),
                          act);
}

Tensor global_aggregate_lattice(Tape* tape, const Tensor& emb,
                                const Tensor& projected, double lambda,
                                Activation act) {
  return apply_activation(
      tape, global_attend_lattice(tape, emb, projected, lambda), act);
}

Tensor gat_attend(Tape* tape, const Graph& g, const Tensor& projected,
                  const Tensor& attn_src, const Tensor& attn_dst,
                  const AttnDropout& dropout, double leaky_slope) {
  const int64_t n = g.num_nodes;
  const int f = int(projected.dim(1));
  check(projected.dim(0) == n, "gat_attend: row count mismatch");
  check(attn_src.numel() == f && attn_dst.numel() == f,
        "gat_attend: attention vector size mismatch");
  for (int64_t i = 0; i < n; ++i)
    check(g.degree(i) >= 1, "gat_attend: node without neighbors");

  const bool rg = tape && (projected.requires_grad() ||
                           attn_src.requires_grad() || attn_dst.requires_grad());

  // Per-node scores s_i = a_src . Wh_i, t_j = a_dst . Wh_j.
  std::vector<double> s(size_t(n), 0.0), t(size_t(n), 0.0);
  const double* pf = projected.values().data();
  const double* pas = attn_src.values().data();
  const double* pad = attn_dst.values().data();
  for (int64_t i = 0; i < n; ++i) {
    double si = 0.0, ti = 0.0;
    for (int c = 0; c < f; ++c) {
      si += pas[c] * pf[i * f + c];
      ti += pad[c] * pf[i * f + c];
    }
    s[size_t(i)] = si;
    t[size_t(i)] = ti;
  }

  auto alpha = std::make_shared<std::vector<double>>(g.col_indices.size(), 0.0);
  // Pre-activation logits saved for the LeakyReLU derivative.
  auto raw = std::make_shared<std::vector<double>>(g.col_indices.size(), 0.0);
  auto keep = std::make_shared<std::vector<uint8_t>>(
      draw_keep_mask(g.col_indices.size(), dropout));
  const double keep_scale = keep->empty() ? 1.0 : 1.0 / (1.0 - dropout.p);

  Tensor out = Tensor::zeros({n, f}, rg);
  double* po = out.values().data();
  for (int64_t i = 0; i < n; ++i) {
    const int64_t begin = g.row_offsets[size_t(i)];
    const int64_t end = g.row_offsets[size_t(i) + 1];
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t e = begin; e < end; ++e) {
      const int32_t j = g.col_indices[size_t(e)];
      const double pre = s[size_t(i)] + t[size_t(j)];
      (*raw)[size_t(e)] = pre;
      const double logit = pre > 0.0 ? pre : leaky_slope * pre;
      (*alpha)[size_t(e)] = logit;
      mx = std::max(mx, logit);
    }
    double denomv = 0.0;
    for (int64_t e = begin; e < end; ++e) {
      const double v = std::exp((*alpha)[size_t(e)] - mx);
      (*alpha)[size_t(e)] = v;
      denomv += v;
    }
    double* oi = po + i * f;
    for (int64_t e = begin; e < end; ++e) {
      const double a = (*alpha)[size_t(e)] / denomv;
      (*alpha)[size_t(e)] = a;
      const double aeff =
          keep->empty() ? a : ((*keep)[size_t(e)] ? a * keep_scale : 0.0);
      if (aeff == 0.0) continue;
      const double* fj = pf + int64_t(g.col_indices[size_t(e)]) * f;
      for (int c = 0; c < f; ++c) oi[c] += aeff * fj[c];
    }
  }
  post_check(out, "gat_attend");

  if (rg) {
    Tensor projc = projected, asc = attn_src, adc = attn_dst, outc = out;
    const Graph* gp = &g;
    tape->record([projc, asc, adc, outc, gp, alpha, raw, keep, keep_scale,
                  leaky_slope]() mutable {
      const int64_t n = gp->num_nodes;
      const int f = int(projc.dim(1));
      const double* pf = projc.values().data();
      const double* pas = asc.values().data();
      const double* pad = adc.values().data();
      auto go = outc.grad_view();
      double* gf = projc.requires_grad() ? projc.grad().data() : nullptr;
      double* gas = asc.requires_grad() ? asc.grad().data() : nullptr;
      double* gad = adc.requires_grad() ? adc.grad().data() : nullptr;

      for (int64_t i = 0; i < n; ++i) {
        const int64_t begin = gp->row_offsets[size_t(i)];
        const int64_t end = gp->row_offsets[size_t(i) + 1];
        const double* gi = go.data() + i * f;
        double dot_sum = 0.0;
        for (int64_t e = begin; e < end; ++e) {
          const double m =
              keep->empty() ? 1.0 : ((*keep)[size_t(e)] ? keep_scale : 0.0);
          if (m == 0.0) continue;
          const double aeff = (*alpha)[size_t(e)] * m;
          const double* fj = pf + int64_t(gp->col_indices[size_t(e)]) * f;
          double dfj = 0.0;
          for (int c = 0; c < f; ++c) dfj += gi[c] * fj[c];
          dot_sum += aeff * dfj;
          if (gf) {
            double* gfj = gf + int64_t(gp->col_indices[size_t(e)]) * f;
            for (int c = 0; c < f; ++c) gfj[c] += aeff * gi[c];
          }
        }
        for (int64_t e = begin; e < end; ++e) {
          const int32_t j = gp->col_indices[size_t(e)];
          const double a = (*alpha)[size_t(e)];
          const double m =
              keep->empty() ? 1.0 : ((*keep)[size_t(e)] ? keep_scale : 0.0);
          const double* fj = pf + int64_t(j) * f;
          double dfj = 0.0;
          for (int c = 0; c < f; ++c) dfj += gi[c] * fj[c];
          double de = a * (m * dfj - dot_sum);
          if (de == 0.0) continue;
          // LeakyReLU derivative at the saved pre-activation.
          if ((*raw)[size_t(e)] <= 0.0) de *= leaky_slope;
          // e_ij = a_src.Wh_i + a_dst.Wh_j
          if (gas)
            for (int c = 0; c < f; ++c) gas[c] += de * pf[i * f + c];
          if (gad)
            for (int c = 0; c < f; ++c) gad[c] += de * pf[int64_t(j) * f + c];
          if (gf) {
            double* gfi = gf + i * f;
            double* gfj = gf + int64_t(j) * f;
            for (int c = 0; c < f; ++c) {
              gfi[c] += de * pas[c];
              gfj[c] += de * pad[c];
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor gcn_propagate(Tape* tape, const Graph& g, const Tensor& x) {
  const int64_t n = g.num_nodes;
  check(x.dim(0) == n, "gcn_propagate: row count mismatch");
  const int f = int(x.dim(1));
  const bool rg = tape && x.requires_grad();

  std::vector<double> inv_sqrt_deg(size_t(n), 0.0);
  for (int64_t i = 0; i < n; ++i) {
    check(g.degree(i) >= 1, "gcn_propagate: node without neighbors");
    inv_sqrt_deg[size_t(i)] = 1.0 / std::sqrt(double(g.degree(i)));
  }

  auto propagate = [&g, &inv_sqrt_deg, n, f](const double* in, double* outp) {
#pragma omp parallel for schedule(static) num_threads(par::threads())
    for (int64_t i = 0; i < n; ++i) {
      double* oi = outp + i * f;
      const int64_t begin = g.row_offsets[size_t(i)];
      const int64_t end = g.row_offsets[size_t(i) + 1];
      for (int64_t e = begin; e < end; ++e) {
        const int32_t j = g.col_indices[size_t(e)];
        const double w = inv_sqrt_deg[size_t(i)] * inv_sqrt_deg[size_t(j)];
        const double* xj = in + int64_t(j) * f;
        for (int c = 0; c < f; ++c) oi[c] += w * xj[c];
      }
    }
  };

  Tensor out = Tensor::zeros({n, f}, rg);
  propagate(x.values().data(), out.values().data());
  post_check(out, "gcn_propagate");

  if (rg) {
    Tensor xc = x, outc = out;
    const Graph* gp = &g;
    auto isd = std::make_shared<std::vector<double>>(std::move(inv_sqrt_deg));
    tape->record([xc, outc, gp, isd]() mutable {
      const int64_t n = gp->num_nodes;
      const int f = int(xc.dim(1));
      auto go = outc.grad_view();
      double* gx = xc.grad().data();
      // The propagation matrix is symmetric, so the backward pass reuses it.
#pragma omp parallel for schedule(static) num_threads(par::threads())
      for (int64_t i = 0; i < n; ++i) {
        double* gxi = gx + i * f;
        const int64_t begin = gp->row_offsets[size_t(i)];
        const int64_t end = gp->row_offsets[size_t(i) + 1];
        for (int64_t e = begin; e < end; ++e) {
          const int32_t j = gp->col_indices[size_t(e)];
          const double w = (*isd)[size_t(i)] * (*isd)[size_t(j)];
          const double* gj = go.data() + int64_t(j) * f;
          for (int c = 0; c < f; ++c) gxi[c] += w * gj[c];
        }
      }
    });
  }
  return out;
}

}  // namespace phgcn::attention
