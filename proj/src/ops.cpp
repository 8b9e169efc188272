#include "phgcn/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>

#include "phgcn/parallel.hpp"

namespace phgcn {
namespace testing {
namespace {
std::atomic<bool> g_corrupt{false};
}
void set_corrupt_backward(bool on) { g_corrupt.store(on); }
bool corrupt_backward() { return g_corrupt.load(); }
}  // namespace testing
}  // namespace phgcn

namespace phgcn::ops {

namespace {

bool want_grad(const Tensor& t) { return t.requires_grad(); }

Tensor make_output(std::vector<int64_t> shape, bool requires_grad) {
  return Tensor::zeros(std::move(shape), requires_grad);
}

void post_op_check(const Tensor& out, const char* name) {
  if (debug_checks_enabled()) out.check_finite(name);
}

}  // namespace

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
  check(a.ndim() == 2 && b.ndim() == 2, "matmul: inputs must be 2-D");
  check(a.dim(1) == b.dim(0), "matmul: inner dimensions disagree");
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  const bool rg = tape && (want_grad(a) || want_grad(b));
  Tensor out = make_output({m, n}, rg);

  const double* pa = a.values().data();
  const double* pb = b.values().data();
  double* pc = out.values().data();
#pragma omp parallel for schedule(static) num_threads(par::threads())
  for (int64_t i = 0; i < m; ++i) {
    double* ci = pc + i * n;
    const double* ai = pa + i * k;
    for (int64_t kk = 0; kk < k; ++kk) {
      const double av = ai[kk];
      if (av == 0.0) continue;
      const double* bk = pb + kk * n;
      for (int64_t j = 0; j < n; ++j) ci[j] += av * bk[j];
    }
  }
  post_op_check(out, "matmul");

  if (rg) {
    Tensor ac = a, bc = b, oc = out;
    tape->record([ac, bc, oc]() mutable {
      const int64_t m = ac.dim(0), k = ac.dim(1), n = bc.dim(1);
      auto go = oc.grad_view();
      const double* pgo = go.data();
      const double* pa = ac.values().data();
      const double* pb = bc.values().data();
      if (ac.requires_grad()) {
        double* ga = ac.grad().data();
        const double corrupt = testing::corrupt_backward() ? 1.01 : 1.0;
#pragma omp parallel for schedule(static) num_threads(par::threads())
        for (int64_t i = 0; i < m; ++i) {
          for (int64_t kk = 0; kk < k; ++kk) {
            double s = 0.0;
            const double* goi = pgo + i * n;
            const double* bk = pb + kk * n;
            for (int64_t j = 0; j < n; ++j) s += goi[j] * bk[j];
            ga[i * k + kk] += corrupt * s;
          }
        }
      }
      if (bc.requires_grad()) {
        double* gb = bc.grad().data();
#pragma omp parallel for schedule(static) num_threads(par::threads())
        for (int64_t kk = 0; kk < k; ++kk) {
          for (int64_t i = 0; i < m; ++i) {
            const double av = pa[i * k + kk];
            if (av == 0.0) continue;
            const double* goi = pgo + i * n;
            double* gbk = gb + kk * n;
            for (int64_t j = 0; j < n; ++j) gbk[j] += av * goi[j];
          }
        }
      }
    });
  }
  return out;
}

Tensor transpose(Tape* tape, const Tensor& a) {
  check(a.ndim() == 2, "transpose: input must be 2-D");
  const int64_t m = a.dim(0), n = a.dim(1);
  const bool rg = tape && want_grad(a);
  Tensor out = make_output({n, m}, rg);
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
  if (rg) {
    Tensor ac = a, oc = out;
    tape->record([ac, oc]() mutable {
      const int64_t m = ac.dim(0), n = ac.dim(1);
      auto go = oc.grad_view();
      auto ga = ac.grad();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) ga[size_t(i * n + j)] += go[size_t(j * m + i)];
    });
  }
  return out;
}

Tensor elu(Tape* tape, const Tensor& x) {
  const bool rg = tape && want_grad(x);
  Tensor out = make_output(x.shape(), rg);
  const auto xs = x.values();
  auto os = out.values();
  for (size_t i = 0; i < xs.size(); ++i) {
    os[i] = xs[i] > 0.0 ? xs[i] : std::expm1(xs[i]);
  }
  post_op_check(out, "elu");
  if (rg) {
    Tensor xc = x, oc = out;
    tape->record([xc, oc]() mutable {
      auto go = oc.grad_view();
      auto ov = oc.values();
      auto xv = xc.values();
      auto gx = xc.grad();
      for (size_t i = 0; i < gx.size(); ++i) {
        // d/dx = 1 for x>0, exp(x) = elu(x)+1 otherwise
        gx[i] += go[i] * (xv[i] > 0.0 ? 1.0 : ov[i] + 1.0);
      }
    });
  }
  return out;
}

Tensor softmax_rows(Tape* tape, const Tensor& logits,
                    const std::vector<uint8_t>* mask) {
  check(logits.ndim() == 2, "softmax_rows: input must be 2-D");
  const int64_t m = logits.dim(0), n = logits.dim(1);
  if (mask) {
    check(int64_t(mask->size()) == m * n, "softmax_rows: mask size mismatch");
  }
  const bool rg = tape && want_grad(logits);
  Tensor out = make_output({m, n}, rg);
  for (int64_t i = 0; i < m; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    bool any_active = false;
    for (int64_t j = 0; j < n; ++j) {
      if (mask && !(*mask)[size_t(i * n + j)]) continue;
      any_active = true;
      mx = std::max(mx, logits.at(i, j));
    }
    check(any_active, "softmax_rows: fully masked row");
    double denom = 0.0;
    for (int64_t j = 0; j < n; ++j) {
      if (mask && !(*mask)[size_t(i * n + j)]) continue;
      const double e = std::exp(logits.at(i, j) - mx);
      out.at(i, j) = e;
      denom += e;
    }
    for (int64_t j = 0; j < n; ++j) out.at(i, j) /= denom;
  }
  post_op_check(out, "softmax_rows");
  if (rg) {
    Tensor lc = logits, oc = out;
    tape->record([lc, oc]() mutable {
      const int64_t m = lc.dim(0), n = lc.dim(1);
      auto go = oc.grad_view();
      auto gy = lc.grad();
      for (int64_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (int64_t j = 0; j < n; ++j)
          dot += go[size_t(i * n + j)] * oc.at(i, j);
        for (int64_t j = 0; j < n; ++j) {
          const double y = oc.at(i, j);
          gy[size_t(i * n + j)] += y * (go[size_t(i * n + j)] - dot);
        }
      }
    });
  }
  return out;
}

Tensor nll_loss(Tape* tape, const Tensor& logits,
                const std::vector<int32_t>& labels,
                const std::vector<uint8_t>& mask) {
  check(logits.ndim() == 2, "nll_loss: logits must be 2-D");
  const int64_t m = logits.dim(0), c = logits.dim(1);
  check(int64_t(labels.size()) == m, "nll_loss: labels size mismatch");
  check(int64_t(mask.size()) == m, "nll_loss: mask size mismatch");
  int64_t count = 0;
  for (int64_t i = 0; i < m; ++i) {
    if (!mask[size_t(i)]) continue;
    ++count;
    check(labels[size_t(i)] >= 0 && labels[size_t(i)] < c,
          "nll_loss: label out of range");
  }
  check(count > 0, "nll_loss: empty mask");

  const bool rg = tape && want_grad(logits);
  // Cache softmax rows for backward.
  std::vector<double> probs(rg ? size_t(m * c) : 0);
  double loss = 0.0;
  for (int64_t i = 0; i < m; ++i) {
    if (!mask[size_t(i)]) continue;
    double mx = logits.at(i, 0);
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, logits.at(i, j));
    double denom = 0.0;
    for (int64_t j = 0; j < c; ++j) denom += std::exp(logits.at(i, j) - mx);
    const double lse = mx + std::log(denom);
    loss += lse - logits.at(i, labels[size_t(i)]);
    if (rg) {
      for (int64_t j = 0; j < c; ++j)
        probs[size_t(i * c + j)] = std::exp(logits.at(i, j) - lse);
    }
  }
  loss /= double(count);
  Tensor out = Tensor::scalar(loss, rg);
  post_op_check(out, "nll_loss");
  if (rg) {
    Tensor lc = logits, oc = out;
    std::vector<int32_t> lab = labels;
    std::vector<uint8_t> msk = mask;
    auto pr = std::move(probs);
    const double inv = 1.0 / double(count);
    tape->record([lc, oc, lab, msk, pr, inv]() mutable {
      const int64_t m = lc.dim(0), c = lc.dim(1);
      const double g = oc.grad_view()[0];
      auto gl = lc.grad();
      for (int64_t i = 0; i < m; ++i) {
        if (!msk[size_t(i)]) continue;
        for (int64_t j = 0; j < c; ++j) {
          double p = pr[size_t(i * c + j)];
          if (j == lab[size_t(i)]) p -= 1.0;
          gl[size_t(i * c + j)] += g * inv * p;
        }
      }
    });
  }
  return out;
}

Tensor dropout_masked(Tape* tape, const Tensor& x, double p,
                      const std::vector<uint8_t>& keep) {
  check(p >= 0.0 && p < 1.0, "dropout: p must be in [0, 1)");
  check(keep.size() == size_t(x.numel()), "dropout: mask size mismatch");
  const double s = 1.0 / (1.0 - p);
  const bool rg = tape && want_grad(x);
  Tensor out = make_output(x.shape(), rg);
  auto xs = x.values();
  auto os = out.values();
  for (size_t i = 0; i < xs.size(); ++i) os[i] = keep[i] ? xs[i] * s : 0.0;
  if (rg) {
    Tensor xc = x, oc = out;
    std::vector<uint8_t> k = keep;
    tape->record([xc, oc, k, s]() mutable {
      auto go = oc.grad_view();
      auto gx = xc.grad();
      for (size_t i = 0; i < gx.size(); ++i)
        if (k[i]) gx[i] += go[i] * s;
    });
  }
  return out;
}

Tensor dropout(Tape* tape, const Tensor& x, double p, bool training, Rng& rng) {
  check(p >= 0.0 && p < 1.0, "dropout: p must be in [0, 1)");
  if (!training || p == 0.0) return x;
  std::vector<uint8_t> keep(size_t(x.numel()));
  for (auto& k : keep) k = rng.uniform() >= p ? 1 : 0;
  return dropout_masked(tape, x, p, keep);
}

Tensor concat_cols(Tape* tape, std::span<const Tensor> parts) {
  check(!parts.empty(), "concat_cols: no inputs");
  const int64_t m = parts[0].dim(0);
  int64_t total = 0;
  bool rg = false;
  for (const Tensor& t : parts) {
    check(t.ndim() == 2, "concat_cols: inputs must be 2-D");
    check(t.dim(0) == m, "concat_cols: row counts disagree");
    total += t.dim(1);
    rg = rg || (tape && want_grad(t));
  }
  Tensor out = make_output({m, total}, rg);
  int64_t off = 0;
  for (const Tensor& t : parts) {
    const int64_t n = t.dim(1);
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) out.at(i, off + j) = t.at(i, j);
    off += n;
  }
  if (rg) {
    std::vector<Tensor> ps(parts.begin(), parts.end());
    Tensor oc = out;
    tape->record([ps, oc]() mutable {
      const int64_t m = oc.dim(0), total = oc.dim(1);
      auto go = oc.grad_view();
      int64_t off = 0;
      for (Tensor& t : ps) {
        const int64_t n = t.dim(1);
        if (t.requires_grad()) {
          auto gt = t.grad();
          for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j)
              gt[size_t(i * n + j)] += go[size_t(i * total + off + j)];
        }
        off += n;
      }
    });
  }
  return out;
}

Tensor concat_cols(Tape* tape, const Tensor& a, const Tensor& b) {
  const Tensor parts[2] = {a, b};
  return concat_cols(tape, std::span<const Tensor>(parts, 2));
}

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  check(a.shape() == b.shape(), "add: shape mismatch");
  const bool rg = tape && (want_grad(a) || want_grad(b));
  Tensor out = make_output(a.shape(), rg);
  auto as = a.values();
  auto bs = b.values();
  auto os = out.values();
  for (size_t i = 0; i < os.size(); ++i) os[i] = as[i] + bs[i];
  post_op_check(out, "add");
  if (rg) {
    Tensor ac = a, bc = b, oc = out;
    tape->record([ac, bc, oc]() mutable {
      auto go = oc.grad_view();
      if (ac.requires_grad()) {
        auto ga = ac.grad();
        for (size_t i = 0; i < ga.size(); ++i) ga[i] += go[i];
      }
      if (bc.requires_grad()) {
        auto gb = bc.grad();
        for (size_t i = 0; i < gb.size(); ++i) gb[i] += go[i];
      }
    });
  }
  return out;
}

Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
  check(a.shape() == b.shape(), "mul: shape mismatch");
  const bool rg = tape && (want_grad(a) || want_grad(b));
  Tensor out = make_output(a.shape(), rg);
  auto as = a.values();
  auto bs = b.values();
  auto os = out.values();
  for (size_t i = 0; i < os.size(); ++i) os[i] = as[i] * bs[i];
  post_op_check(out, "mul");
  if (rg) {
    Tensor ac = a, bc = b, oc = out;
    tape->record([ac, bc, oc]() mutable {
      auto go = oc.grad_view();
      if (ac.requires_grad()) {
        auto ga = ac.grad();
        auto bv = bc.values();
        for (size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * bv[i];
      }
      if (bc.requires_grad()) {
        auto gb = bc.grad();
        auto av = ac.values();
        for (size_t i = 0; i < gb.size(); ++i) gb[i] += go[i] * av[i];
      }
    });
  }
  return out;
}

Tensor scale(Tape* tape, const Tensor& a, double c) {
  const bool rg = tape && want_grad(a);
  Tensor out = make_output(a.shape(), rg);
  auto as = a.values();
  auto os = out.values();
  for (size_t i = 0; i < os.size(); ++i) os[i] = as[i] * c;
  post_op_check(out, "scale");
  if (rg) {
    Tensor ac = a, oc = out;
    tape->record([ac, oc, c]() mutable {
      auto go = oc.grad_view();
      auto ga = ac.grad();
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * c;
    });
  }
  return out;
}

Tensor square(Tape* tape, const Tensor& x) {
  const bool rg = tape && want_grad(x);
  Tensor out = make_output(x.shape(), rg);
  auto xs = x.values();
  auto os = out.values();
  for (size_t i = 0; i < os.size(); ++i) os[i] = xs[i] * xs[i];
  post_op_check(out, "square");
  if (rg) {
    Tensor xc = x, oc = out;
    tape->record([xc, oc]() mutable {
      auto go = oc.grad_view();
      auto xv = xc.values();
      auto gx = xc.grad();
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += go[i] * 2.0 * xv[i];
    });
  }
  return out;
}

Tensor sum(Tape* tape, const Tensor& x) {
  const bool rg = tape && want_grad(x);
  double s = 0.0;
  for (double v : x.values()) s += v;
  Tensor out = Tensor::scalar(s, rg);
  post_op_check(out, "sum");
  if (rg) {
    Tensor xc = x, oc = out;
    tape->record([xc, oc]() mutable {
      const double g = oc.grad_view()[0];
      auto gx = xc.grad();
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
  }
  return out;
}

std::vector<int32_t> argmax_rows(const Tensor& x) {
  const int64_t m = x.dim(0), n = x.dim(1);
  std::vector<int32_t> out(size_t(m), 0);
  for (int64_t i = 0; i < m; ++i) {
    int32_t best = 0;
    for (int64_t j = 1; j < n; ++j)
      if (x.at(i, j) > x.at(i, best)) best = int32_t(j);
    out[size_t(i)] = best;
  }
  return out;
}

double masked_accuracy(const Tensor& logits, const std::vector<int32_t>& labels,
                       const std::vector<uint8_t>& mask) {
  auto pred = argmax_rows(logits);
  int64_t correct = 0, total = 0;
  for (size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    ++total;
    if (pred[i] == labels[i]) ++correct;
  }
  check(total > 0, "masked_accuracy: empty mask");
  return double(correct) / double(total);
}

}  // namespace phgcn::ops
