#include "phgcn/lattice.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "phgcn/parallel.hpp"
#include "phgcn/tensor.hpp"

namespace phgcn::lattice {

namespace {

// Per-coordinate elevation factors s_j = scale / sqrt(j*(j+1)). With these
// the elevation matrix has orthogonal columns of norm `scale`, so elevated
// distances are exactly scale * Euclidean distances.
std::vector<double> elevation_factors(int dim, double scale) {
  std::vector<double> s(size_t(dim), 0.0);
  for (int j = 1; j <= dim; ++j)
    s[size_t(j - 1)] = scale / std::sqrt(double(j) * double(j + 1));
  return s;
}

int64_t next_pow2(int64_t n) {
  int64_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace

BlurKernel BlurKernel::exponential(double kappa) {
  check(kappa > 0.0, "blur kernel: kappa must be positive");
  BlurKernel k;
  for (int i = 0; i < 7; ++i) k.taps[size_t(i)] = std::exp(-std::abs(i - 3) * kappa);
  return k;
}

BlurKernel BlurKernel::identity() {
  BlurKernel k;
  k.taps = {0, 0, 0, 1, 0, 0, 0};
  return k;
}

// Fitted by the `calibrate` CLI subcommand (least squares of lattice output
// against the exact filter on clustered data, 6 instances per dimension);
// mirrored in data/lattice_calibration.tsv.
LatticeCalibration calibration_for_dim(int dim) {
  switch (dim) {
    case 1: return {1.25, 1.9823};
    case 2: return {1.20, 2.5200};
    case 3: return {1.15, 2.8972};
    case 4: return {1.15, 3.1715};
    case 5: return {1.15, 3.4357};
    case 6: return {1.35, 3.4357};
    case 7: return {1.30, 3.8346};
    case 8: return {1.55, 3.7211};
    default:
      check(dim >= 1, "lattice: dim must be >= 1");
      // Beyond the fitted range, reuse the last calibrated pair.
      return {1.55, 3.7211};
  }
}

std::vector<double> elevate(std::span<const double> p, double scale) {
  const int dim = int(p.size());
  check(dim >= 1, "elevate: empty position");
  check(scale > 0.0, "elevate: scale must be positive");
  for (double v : p) check(std::isfinite(v), "elevate: non-finite input");
  const auto s = elevation_factors(dim, scale);
  std::vector<double> out(size_t(dim + 1), 0.0);
  // Cumulative-difference form of the hyperplane embedding.
  double sm = 0.0;
  for (int j = dim; j > 0; --j) {
    const double cf = p[size_t(j - 1)] * s[size_t(j - 1)];
    out[size_t(j)] = sm - double(j) * cf;
    sm += cf;
  }
  out[0] = sm;
  return out;
}

std::vector<double> elevate_transpose(std::span<const double> v, double scale) {
  const int dim = int(v.size()) - 1;
  check(dim >= 1, "elevate_transpose: input too short");
  const auto s = elevation_factors(dim, scale);
  std::vector<double> out(size_t(dim), 0.0);
  double prefix = 0.0;  // sum of v_0 .. v_{j-1}
  for (int j = 1; j <= dim; ++j) {
    prefix += v[size_t(j - 1)];
    out[size_t(j - 1)] = s[size_t(j - 1)] * (prefix - double(j) * v[size_t(j)]);
  }
  return out;
}

SimplexEmbedding find_simplex(std::span<const double> elevated) {
  const int d = int(elevated.size()) - 1;
  check(d >= 1, "find_simplex: input too short");

  SimplexEmbedding emb;
  emb.elevated.assign(elevated.begin(), elevated.end());
  emb.rank.assign(size_t(d + 1), 0);
  emb.weights.assign(size_t(d + 1), 0.0);
  emb.vertex_keys.assign(size_t((d + 1) * (d + 1)), 0);

  // Nearest remainder-0 point by per-coordinate rounding to multiples of d+1.
  std::vector<int64_t> rem0(size_t(d + 1), 0);
  int64_t sum = 0;
  for (int i = 0; i <= d; ++i) {
    const double v = elevated[size_t(i)] / double(d + 1);
    const double up = std::ceil(v) * double(d + 1);
    const double down = std::floor(v) * double(d + 1);
    rem0[size_t(i)] = int64_t(std::llround(
        (up - elevated[size_t(i)] < elevated[size_t(i)] - down) ? up : down));
    sum += rem0[size_t(i)];
  }
  sum /= d + 1;

  // Rank the rounding residuals (ties broken by index).
  for (int i = 0; i < d; ++i) {
    const double di = elevated[size_t(i)] - double(rem0[size_t(i)]);
    for (int j = i + 1; j <= d; ++j) {
      if (di < elevated[size_t(j)] - double(rem0[size_t(j)]))
        ++emb.rank[size_t(i)];
      else
        ++emb.rank[size_t(j)];
    }
  }

  // Repair the zero-sum constraint using the largest rounding errors.
  for (int i = 0; i <= d; ++i) {
    emb.rank[size_t(i)] += int32_t(sum);
    if (emb.rank[size_t(i)] < 0) {
      emb.rank[size_t(i)] += d + 1;
      rem0[size_t(i)] += d + 1;
    } else if (emb.rank[size_t(i)] > d) {
      emb.rank[size_t(i)] -= d + 1;
      rem0[size_t(i)] -= d + 1;
    }
  }

  // Barycentric weights from the ranked residuals.
  std::vector<double> bary(size_t(d + 2), 0.0);
  for (int i = 0; i <= d; ++i) {
    const double v =
        (elevated[size_t(i)] - double(rem0[size_t(i)])) / double(d + 1);
    bary[size_t(d - emb.rank[size_t(i)])] += v;
    bary[size_t(d + 1 - emb.rank[size_t(i)])] -= v;
  }
  bary[0] += 1.0 + bary[size_t(d + 1)];

  for (int k = 0; k <= d; ++k)
    emb.weights[size_t(k)] = std::max(bary[size_t(k)], 0.0);

  // Vertex of remainder k sits at rem0 + canonical simplex offsets permuted
  // by rank.
  for (int k = 0; k <= d; ++k) {
    int32_t* key = emb.vertex_keys.data() + size_t(k) * size_t(d + 1);
    for (int i = 0; i <= d; ++i) {
      const int r = emb.rank[size_t(i)];
      const int32_t off = (r < d + 1 - k) ? int32_t(k) : int32_t(k - (d + 1));
      key[i] = int32_t(rem0[size_t(i)]) + off;
    }
  }
  return emb;
}

LatticeTable::LatticeTable(int dim, int channels, int64_t max_entries)
    : dim_(dim), channels_(channels) {
  check(dim >= 1 && channels >= 1, "lattice table: bad dims");
  // Blur and backward use fixed (dim+1)-sized stack buffers.
  check(dim + 1 <= 32, "lattice table: dim must be < 32");
  const int64_t cap = next_pow2(std::max<int64_t>(2 * max_entries, 16));
  mask_ = uint64_t(cap - 1);
  slots_.assign(size_t(cap), -1);
  keys_.reserve(size_t(max_entries) * size_t(dim + 1));
  values_.reserve(size_t(max_entries) * size_t(channels));
}

uint64_t LatticeTable::hash_key(const int32_t* key) const {
  uint64_t h = 0x9368e53c2f6af274ULL;
  for (int i = 0; i < dim_; ++i) {
    h ^= uint64_t(uint32_t(key[i]));
    h *= 0xff51afd7ed558ccdULL;
    h ^= h >> 33;
  }
  return h;
}

bool LatticeTable::keys_equal(const int32_t* a, const int32_t* b) const {
  return std::memcmp(a, b, sizeof(int32_t) * size_t(dim_)) == 0;
}

int64_t LatticeTable::find_or_insert(const int32_t* key) {
  uint64_t slot = hash_key(key) & mask_;
  while (true) {
    const int64_t e = slots_[size_t(slot)];
    if (e < 0) {
      check(count_ < int64_t(slots_.size() / 2),
            "lattice table: capacity exceeded");
      slots_[size_t(slot)] = count_;
      keys_.insert(keys_.end(), key, key + dim_ + 1);
      values_.insert(values_.end(), size_t(channels_), 0.0);
      return count_++;
    }
    if (keys_equal(this->key(e), key)) return e;
    slot = (slot + 1) & mask_;
  }
}

int64_t LatticeTable::find(const int32_t* key) const {
  uint64_t slot = hash_key(key) & mask_;
  while (true) {
    const int64_t e = slots_[size_t(slot)];
    if (e < 0) return -1;
    if (keys_equal(this->key(e), key)) return e;
    slot = (slot + 1) & mask_;
  }
}

LatticeTable splat(std::span<const SimplexEmbedding> points,
                   std::span<const double> features, int channels) {
  check(!points.empty(), "splat: no points");
  const int d = points[0].dim();
  check(features.size() == points.size() * size_t(channels),
        "splat: feature size does not match channel count");
  LatticeTable table(d, channels, int64_t(points.size()) * (d + 1));
  for (size_t i = 0; i < points.size(); ++i) {
    const SimplexEmbedding& emb = points[i];
    const double* f = features.data() + i * size_t(channels);
    for (int k = 0; k <= d; ++k) {
      const int64_t e = table.find_or_insert(emb.vertex(k));
      const double w = emb.weights[size_t(k)];
      auto val = table.value(e);
      for (int c = 0; c < channels; ++c) val[size_t(c)] += w * f[c];
    }
  }
  return table;
}

void blur(LatticeTable& table, const BlurKernel& kernel, AxisOrder order) {
  const int d = table.dim();
  const int channels = table.channels();
  const int64_t entries = table.size();
  if (entries == 0) return;

  std::vector<double> scratch(table.values_flat().size());
  std::vector<double>& values = table.values_flat();

  for (int pass = 0; pass <= d; ++pass) {
    const int axis = (order == AxisOrder::Ascending) ? pass : d - pass;
#pragma omp parallel for schedule(static) num_threads(par::threads())
    for (int64_t e = 0; e < entries; ++e) {
      const int32_t* key = table.key(e);
      double* out = scratch.data() + e * channels;
      for (int c = 0; c < channels; ++c)
        out[c] = kernel.taps[3] * values[size_t(e * channels + c)];
      int32_t nkey[32];
      for (int off = -3; off <= 3; ++off) {
        if (off == 0) continue;
        // Neighbor along `axis`: all coordinates +off except `axis`,
        // which moves by -off*d.
        for (int i = 0; i <= d; ++i) nkey[i] = key[i] + int32_t(off);
        nkey[axis] = key[axis] - int32_t(off * d);
        const int64_t ne = table.find(nkey);
        if (ne < 0) continue;
        const double w = kernel.taps[size_t(off + 3)];
        const double* nv = values.data() + ne * channels;
        for (int c = 0; c < channels; ++c) out[c] += w * nv[c];
      }
    }
    values.swap(scratch);
  }
}

std::vector<double> slice(const LatticeTable& table,
                          std::span<const SimplexEmbedding> points) {
  const int channels = table.channels();
  const int d = table.dim();
  std::vector<double> out(points.size() * size_t(channels), 0.0);
#pragma omp parallel for schedule(static) num_threads(par::threads())
  for (int64_t i = 0; i < int64_t(points.size()); ++i) {
    const SimplexEmbedding& emb = points[size_t(i)];
    double* o = out.data() + i * channels;
    for (int k = 0; k <= d; ++k) {
      const int64_t e = table.find(emb.vertex(k));
      if (e < 0) continue;
      const double w = emb.weights[size_t(k)];
      auto val = table.value(e);
      for (int c = 0; c < channels; ++c) o[c] += w * val[size_t(c)];
    }
  }
  return out;
}

LatticeFilter::LatticeFilter(int dim, int channels, double lambda)
    : LatticeFilter(dim, channels,
                    lambda * calibration_for_dim(dim).cd,
                    BlurKernel::exponential(calibration_for_dim(dim).kappa)) {
  check(lambda > 0.0, "lattice filter: lambda must be positive");
}

LatticeFilter::LatticeFilter(int dim, int channels, double scale,
                             BlurKernel kernel)
    : dim_(dim), channels_(channels), scale_(scale), kernel_(kernel) {
  check(dim >= 1 && dim + 1 <= 32, "lattice filter: dim must be in [1, 31]");
  check(channels >= 1, "lattice filter: channels must be >= 1");
  check(scale > 0.0, "lattice filter: scale must be positive");
}

std::vector<double> LatticeFilter::forward(int64_t n,
                                           std::span<const double> positions,
                                           std::span<const double> features) {
  check(n >= 1, "lattice filter: need at least one point");
  check(positions.size() == size_t(n) * size_t(dim_),
        "lattice filter: positions size mismatch");
  check(features.size() == size_t(n) * size_t(channels_),
        "lattice filter: features size mismatch");
  for (double v : features)
    check(std::isfinite(v), "lattice filter: non-finite feature");

  n_ = n;
  features_.assign(features.begin(), features.end());

  points_.clear();
  points_.reserve(size_t(n));
  for (int64_t i = 0; i < n; ++i) {
    auto elevated = elevate(positions.subspan(size_t(i * dim_), size_t(dim_)),
                            scale_);
    points_.push_back(find_simplex(elevated));
  }

  table_ = std::make_unique<LatticeTable>(dim_, channels_, n * (dim_ + 1));
  entry_of_vertex_.assign(size_t(n) * size_t(dim_ + 1), -1);
  for (int64_t i = 0; i < n; ++i) {
    const SimplexEmbedding& emb = points_[size_t(i)];
    const double* f = features.data() + size_t(i * channels_);
    for (int k = 0; k <= dim_; ++k) {
      const int64_t e = table_->find_or_insert(emb.vertex(k));
      entry_of_vertex_[size_t(i) * size_t(dim_ + 1) + size_t(k)] = e;
      const double w = emb.weights[size_t(k)];
      auto val = table_->value(e);
      for (int c = 0; c < channels_; ++c) val[size_t(c)] += w * f[c];
    }
  }

  blur(*table_, kernel_, AxisOrder::Ascending);

  // Slice at the splat points; entry indices are cached, no hashing needed.
  std::vector<double> out(size_t(n) * size_t(channels_), 0.0);
  const std::vector<double>& tv = table_->values_flat();
#pragma omp parallel for schedule(static) num_threads(par::threads())
  for (int64_t i = 0; i < n; ++i) {
    const SimplexEmbedding& emb = points_[size_t(i)];
    double* o = out.data() + i * channels_;
    for (int k = 0; k <= dim_; ++k) {
      const int64_t e = entry_of_vertex_[size_t(i) * size_t(dim_ + 1) + size_t(k)];
      const double w = emb.weights[size_t(k)];
      const double* val = tv.data() + e * channels_;
      for (int c = 0; c < channels_; ++c) o[c] += w * val[c];
    }
  }
  return out;
}

void LatticeFilter::backward(std::span<const double> grad_out,
                             std::span<double> grad_features,
                             std::span<double> grad_positions) const {
  check(table_ != nullptr, "lattice filter: backward before forward");
  check(grad_out.size() == size_t(n_) * size_t(channels_),
        "lattice filter: grad_out size mismatch");
  check(grad_features.size() == size_t(n_) * size_t(channels_),
        "lattice filter: grad_features size mismatch");
  check(grad_positions.size() == size_t(n_) * size_t(dim_),
        "lattice filter: grad_positions size mismatch");

  const int d = dim_;
  const int64_t entries = table_->size();

  // Adjoint of slice: splat grad_out over the same key set.
  LatticeTable gtable(d, channels_, entries);
  std::vector<double>& gval = gtable.values_flat();
  for (int64_t e = 0; e < entries; ++e) gtable.find_or_insert(table_->key(e));
  for (int64_t i = 0; i < n_; ++i) {
    const SimplexEmbedding& emb = points_[size_t(i)];
    const double* g = grad_out.data() + size_t(i * channels_);
    for (int k = 0; k <= d; ++k) {
      const int64_t e = entry_of_vertex_[size_t(i) * size_t(d + 1) + size_t(k)];
      const double w = emb.weights[size_t(k)];
      for (int c = 0; c < channels_; ++c)
        gval[size_t(e * channels_ + c)] += w * g[c];
    }
  }

  // Adjoint of the ascending blur is the same taps in descending axis order.
  blur(gtable, kernel_, AxisOrder::Descending);

  // Adjoint of splat: slice the gradient table at the input points.
  const std::vector<double>& tv = table_->values_flat();
#pragma omp parallel for schedule(static) num_threads(par::threads())
  for (int64_t i = 0; i < n_; ++i) {
    const SimplexEmbedding& emb = points_[size_t(i)];
    const double* g = grad_out.data() + size_t(i * channels_);
    const double* f = features_.data() + size_t(i * channels_);
    double* gf = grad_features.data() + i * channels_;
    std::fill(gf, gf + channels_, 0.0);

    // Per-vertex weight gradients, slice site + splat site.
    double wgrad[32];
    for (int k = 0; k <= d; ++k) {
      const int64_t e = entry_of_vertex_[size_t(i) * size_t(d + 1) + size_t(k)];
      const double w = emb.weights[size_t(k)];
      const double* t1 = tv.data() + e * channels_;
      const double* g0 = gval.data() + e * channels_;
      double slice_site = 0.0, splat_site = 0.0;
      for (int c = 0; c < channels_; ++c) {
        gf[c] += w * g0[c];
        slice_site += g[c] * t1[c];
        splat_site += g0[c] * f[c];
      }
      wgrad[k] = slice_site + splat_site;
    }

    // Chain through the barycentric construction (fixed rank permutation):
    // coordinate c contributes +delta to weight d-rank[c] and -delta to
    // weight (d+1-rank[c]) mod (d+1), with delta = 1/(d+1).
    double ygrad[32];
    const double inv = 1.0 / double(d + 1);
    for (int c = 0; c <= d; ++c) {
      const int r = emb.rank[size_t(c)];
      const int plus = d - r;
      const int minus = (d + 1 - r) % (d + 1);
      ygrad[c] = inv * (wgrad[plus] - wgrad[minus]);
    }
    const auto gp = elevate_transpose(std::span<const double>(ygrad, size_t(d + 1)),
                                      scale_);
    std::copy(gp.begin(), gp.end(), grad_positions.begin() + size_t(i * d));
  }
}

}  // namespace phgcn::lattice
