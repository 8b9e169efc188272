#include <doctest.h>

#include <cmath>
#include <numeric>

#include "phgcn/fdcheck.hpp"
#include "phgcn/lattice.hpp"
#include "phgcn/parallel.hpp"
#include "phgcn/rng.hpp"

using namespace phgcn;
using namespace phgcn::lattice;

namespace {

std::vector<double> random_position(Rng& rng, int d, double spread = 2.0) {
  std::vector<double> p(size_t(d), 0.0);
  for (auto& v : p) v = rng.uniform(-spread, spread);
  return p;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::vector<SimplexEmbedding> embed_points(const std::vector<double>& positions,
                                           int64_t n, int d, double scale) {
  std::vector<SimplexEmbedding> out;
  for (int64_t i = 0; i < n; ++i) {
    std::span<const double> p(positions.data() + i * d, size_t(d));
    out.push_back(find_simplex(elevate(p, scale)));
  }
  return out;
}

}  // namespace

TEST_CASE("elevate: zero maps to zero, linearity, zero-sum") {
  Rng rng(11);
  for (int d : {1, 2, 4, 6}) {
    std::vector<double> zero(size_t(d), 0.0);
    for (double v : elevate(zero, 1.7)) CHECK(v == 0.0);

    for (int trial = 0; trial < 1000 / d; ++trial) {
      auto p = random_position(rng, d);
      auto e = elevate(p, 1.3);
      CHECK(std::abs(std::accumulate(e.begin(), e.end(), 0.0)) < 1e-9);

      auto p2 = p;
      for (auto& v : p2) v *= 2.0;
      auto e2 = elevate(p2, 1.3);
      for (size_t i = 0; i < e.size(); ++i)
        CHECK(e2[i] == doctest::Approx(2.0 * e[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("elevate: scale multiplies norms exactly (isometry up to scale)") {
  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    auto p = random_position(rng, 4);
    auto q = random_position(rng, 4);
    const double scale = rng.uniform(0.5, 20.0);
    auto ep = elevate(p, scale);
    auto eq = elevate(q, scale);
    double dp = 0.0, de = 0.0;
    for (int i = 0; i < 4; ++i) dp += (p[size_t(i)] - q[size_t(i)]) * (p[size_t(i)] - q[size_t(i)]);
    for (size_t i = 0; i < ep.size(); ++i) de += (ep[i] - eq[i]) * (ep[i] - eq[i]);
    CHECK(std::sqrt(de) == doctest::Approx(scale * std::sqrt(dp)).epsilon(1e-10));
  }
}

TEST_CASE("elevate rejects non-finite input") {
  std::vector<double> p = {1.0, std::nan(""), 0.0};
  CHECK_THROWS(elevate(p, 1.0));
}

TEST_CASE("elevate_transpose is the adjoint of elevate") {
  Rng rng(17);
  for (int d : {2, 4, 5}) {
    for (int trial = 0; trial < 50; ++trial) {
      auto p = random_position(rng, d);
      std::vector<double> v(size_t(d + 1), 0.0);
      for (auto& x : v) x = rng.normal();
      const double scale = rng.uniform(0.5, 10.0);
      auto ep = elevate(p, scale);
      auto etv = elevate_transpose(v, scale);
      CHECK(dot(ep, v) == doctest::Approx(dot(p, etv)).epsilon(1e-10));
    }
  }
}

TEST_CASE("find_simplex: barycentric partition of unity and nonnegativity") {
  Rng rng(19);
  for (int d : {2, 4, 7}) {
    for (int trial = 0; trial < 300; ++trial) {
      auto emb = find_simplex(elevate(random_position(rng, d), 3.0));
      double s = 0.0;
      for (double w : emb.weights) {
        CHECK(w >= 0.0);
        s += w;
      }
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("find_simplex: affine reproduction of the input point") {
  Rng rng(23);
  for (int d : {2, 4, 6}) {
    for (int trial = 0; trial < 200; ++trial) {
      auto elevated = elevate(random_position(rng, d, 5.0), 4.0);
      auto emb = find_simplex(elevated);
      for (int i = 0; i <= d; ++i) {
        double recon = 0.0;
        for (int k = 0; k <= d; ++k)
          recon += emb.weights[size_t(k)] * emb.vertex(k)[i];
        CHECK(std::abs(recon - elevated[size_t(i)]) < 1e-9);
      }
    }
  }
}

TEST_CASE("find_simplex: vertex keys sum to zero with distinct vertices") {
  Rng rng(29);
  const int d = 4;
  for (int trial = 0; trial < 100; ++trial) {
    auto emb = find_simplex(elevate(random_position(rng, d), 2.5));
    for (int k = 0; k <= d; ++k) {
      int64_t s = 0;
      for (int i = 0; i <= d; ++i) s += emb.vertex(k)[i];
      CHECK(s == 0);
      for (int k2 = k + 1; k2 <= d; ++k2) {
        bool same = true;
        for (int i = 0; i <= d; ++i)
          same = same && emb.vertex(k)[i] == emb.vertex(k2)[i];
        CHECK(!same);
      }
    }
  }
}

TEST_CASE("find_simplex: exact lattice vertex gets weight 1") {
  // Feed a known remainder-1 lattice point through as the query.
  Rng rng(31);
  const int d = 3;
  auto probe = find_simplex(elevate(random_position(rng, d), 2.0));
  for (int k = 0; k <= d; ++k) {
    std::vector<double> at_vertex(size_t(d + 1), 0.0);
    for (int i = 0; i <= d; ++i) at_vertex[size_t(i)] = double(probe.vertex(k)[i]);
    auto emb = find_simplex(at_vertex);
    // Exactly one weight is 1; the matching vertex equals the input.
    int unit = -1;
    for (int j = 0; j <= d; ++j) {
      if (std::abs(emb.weights[size_t(j)] - 1.0) < 1e-12) unit = j;
      else CHECK(std::abs(emb.weights[size_t(j)]) < 1e-12);
    }
    REQUIRE(unit >= 0);
    for (int i = 0; i <= d; ++i)
      CHECK(emb.vertex(unit)[i] == probe.vertex(k)[i]);
  }
}

TEST_CASE("find_simplex: simplex centroid gets uniform weights") {
  Rng rng(37);
  const int d = 4;
  auto base = find_simplex(elevate(random_position(rng, d), 2.0));
  std::vector<double> centroid(size_t(d + 1), 0.0);
  for (int k = 0; k <= d; ++k)
    for (int i = 0; i <= d; ++i)
      centroid[size_t(i)] += double(base.vertex(k)[i]) / double(d + 1);
  auto emb = find_simplex(centroid);
  for (double w : emb.weights)
    CHECK(w == doctest::Approx(1.0 / (d + 1)).epsilon(1e-9));
}

TEST_CASE("splat: single point at a vertex produces one entry") {
  const int d = 2;
  std::vector<double> zero(size_t(d), 0.0);
  auto emb = find_simplex(elevate(zero, 1.0));  // origin is a lattice point
  std::vector<double> feature = {2.5, -1.0};
  auto table = splat(std::span<const SimplexEmbedding>(&emb, 1), feature, 2);
  // All mass lands on the origin vertex.
  int64_t nonzero_entries = 0;
  for (int64_t e = 0; e < table.size(); ++e) {
    auto v = table.value(e);
    if (std::abs(v[0]) > 1e-15 || std::abs(v[1]) > 1e-15) {
      ++nonzero_entries;
      CHECK(v[0] == doctest::Approx(2.5));
      CHECK(v[1] == doctest::Approx(-1.0));
    }
  }
  CHECK(nonzero_entries == 1);
}

TEST_CASE("splat: coincident points add linearly") {
  Rng rng(41);
  const int d = 3;
  auto pos = random_position(rng, d);
  auto emb = find_simplex(elevate(pos, 2.0));
  std::vector<SimplexEmbedding> two = {emb, emb};
  std::vector<double> feats = {1.0, 2.0};
  auto table2 = splat(two, feats, 1);

  std::vector<SimplexEmbedding> one = {emb};
  std::vector<double> sum_feat = {3.0};
  auto table1 = splat(one, sum_feat, 1);

  CHECK(table1.size() == table2.size());
  for (int64_t e = 0; e < table1.size(); ++e)
    CHECK(table2.value(table2.find(table1.key(e)))[0] ==
          doctest::Approx(table1.value(e)[0]).epsilon(1e-12));
}

TEST_CASE("splat conserves per-channel mass (n=100)") {
  Rng rng(43);
  const int d = 4, c = 3;
  const int64_t n = 100;
  std::vector<double> positions, feats;
  for (int64_t i = 0; i < n; ++i) {
    auto p = random_position(rng, d);
    positions.insert(positions.end(), p.begin(), p.end());
    for (int j = 0; j < c; ++j) feats.push_back(rng.normal());
  }
  auto embs = embed_points(positions, n, d, 3.0);
  auto table = splat(embs, feats, c);

  for (int j = 0; j < c; ++j) {
    double in_mass = 0.0, out_mass = 0.0;
    for (int64_t i = 0; i < n; ++i) in_mass += feats[size_t(i * c + j)];
    for (int64_t e = 0; e < table.size(); ++e) out_mass += table.value(e)[size_t(j)];
    CHECK(std::abs(in_mass - out_mass) < 1e-9);
  }
}

TEST_CASE("blur: identity kernel leaves the table unchanged") {
  Rng rng(47);
  const int d = 3;
  const int64_t n = 20;
  std::vector<double> positions, feats;
  for (int64_t i = 0; i < n; ++i) {
    auto p = random_position(rng, d);
    positions.insert(positions.end(), p.begin(), p.end());
    feats.push_back(rng.normal());
  }
  auto embs = embed_points(positions, n, d, 2.0);
  auto table = splat(embs, feats, 1);
  std::vector<double> before = table.values_flat();
  blur(table, BlurKernel::identity());
  for (size_t i = 0; i < before.size(); ++i)
    CHECK(table.values_flat()[i] == doctest::Approx(before[i]).epsilon(1e-15));
}

TEST_CASE("blur: impulse response along one axis matches the tap profile") {
  // Pre-seed the 7-entry support of one axis line around the origin, put an
  // impulse at the center, and blur a 1-axis lattice (d = 1 has 2 axes; use
  // a single pass by choosing a kernel only for the check).
  const int d = 2;
  const auto kernel = BlurKernel::exponential(0.8);
  LatticeTable table(d, 1, 64);
  // Axis 0 neighbor step: (+1, ..., -d at axis 0) pattern.
  auto key_at = [&](int step) {
    std::vector<int32_t> key(size_t(d + 1), 0);
    for (int i = 0; i <= d; ++i) key[size_t(i)] = int32_t(step);
    key[0] = int32_t(-step * d);
    return key;
  };
  for (int s = -3; s <= 3; ++s) {
    auto key = key_at(s);
    table.find_or_insert(key.data());
  }
  table.value(table.find(key_at(0).data()))[0] = 1.0;

  // One ascending pass over axis 0 only: emulate by a width-7 kernel with
  // the other axes' action nullified via an identity-kernels trick is not
  // available, so apply the full blur with an impulse and check axis-0 line
  // values against the product structure instead.
  LatticeTable single(d, 1, 64);
  for (int s = -3; s <= 3; ++s) {
    auto key = key_at(s);
    single.find_or_insert(key.data());
  }
  single.value(single.find(key_at(0).data()))[0] = 1.0;
  blur(single, kernel);
  // After blurring all axes, the axis-0 line still shows the tap profile:
  // neighbors along other axes are absent, so only tap 0 contributes there.
  for (int s = -3; s <= 3; ++s) {
    const int64_t e = single.find(key_at(s).data());
    REQUIRE(e >= 0);
    const double expect =
        kernel.taps[size_t(s + 3)] * std::pow(kernel.taps[3], double(d));
    CHECK(single.value(e)[0] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("blur: each single-axis pass is linear; full pass pair is adjoint") {
  Rng rng(53);
  const int d = 4;
  const int64_t n = 40;
  std::vector<double> positions;
  for (int64_t i = 0; i < n; ++i) {
    auto p = random_position(rng, d);
    positions.insert(positions.end(), p.begin(), p.end());
  }
  auto embs = embed_points(positions, n, d, 2.0);
  std::vector<double> fa(size_t(n), 0.0), fb(size_t(n), 0.0);
  for (auto& v : fa) v = rng.normal();
  for (auto& v : fb) v = rng.normal();
  auto ta = splat(embs, fa, 1);
  auto tb = splat(embs, fb, 1);
  REQUIRE(ta.size() == tb.size());

  const auto kernel = BlurKernel::exponential(0.6);

  // Linearity: blur(2a + b) == 2 blur(a) + blur(b).
  LatticeTable tmix = splat(embs, fa, 1);
  for (int64_t e = 0; e < tmix.size(); ++e) {
    const int64_t eb = tb.find(tmix.key(e));
    tmix.value(e)[0] = 2.0 * tmix.value(e)[0] + tb.value(eb)[0];
  }
  blur(tmix, kernel);
  LatticeTable ba = splat(embs, fa, 1);
  LatticeTable bb = splat(embs, fb, 1);
  blur(ba, kernel);
  blur(bb, kernel);
  for (int64_t e = 0; e < tmix.size(); ++e) {
    const double expect = 2.0 * ba.value(e)[0] + bb.value(bb.find(ba.key(e)))[0];
    CHECK(tmix.value(e)[0] == doctest::Approx(expect).epsilon(1e-9));
  }

  // Adjoint pair: <blur_asc(A), B> == <A, blur_desc(B)> exactly (the
  // descending pass is the transpose of the ascending one).
  LatticeTable basc = splat(embs, fa, 1);
  blur(basc, kernel, AxisOrder::Ascending);
  LatticeTable bdesc = splat(embs, fb, 1);
  blur(bdesc, kernel, AxisOrder::Descending);
  double lhs = 0.0, rhs = 0.0;
  for (int64_t e = 0; e < ta.size(); ++e) {
    const int64_t eb = tb.find(ta.key(e));
    lhs += basc.value(e)[0] * tb.value(eb)[0];
    rhs += ta.value(e)[0] * bdesc.value(bdesc.find(ta.key(e)))[0];
  }
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-9));

  // A single-axis-dominant check: with an identity-like narrow kernel the
  // ascending and descending orders coincide.
  LatticeTable ia = splat(embs, fa, 1);
  LatticeTable ib = splat(embs, fa, 1);
  blur(ia, BlurKernel::identity(), AxisOrder::Ascending);
  blur(ib, BlurKernel::identity(), AxisOrder::Descending);
  for (int64_t e = 0; e < ia.size(); ++e)
    CHECK(ia.value(e)[0] == doctest::Approx(ib.value(ib.find(ia.key(e)))[0]));
}

TEST_CASE("slice: reads splatted vertices; empty table gives zero") {
  Rng rng(59);
  const int d = 3;
  std::vector<double> zero(size_t(d), 0.0);
  auto emb = find_simplex(elevate(zero, 1.0));
  std::vector<double> feature = {4.0};
  std::vector<SimplexEmbedding> pts = {emb};
  auto table = splat(pts, feature, 1);
  auto out = slice(table, pts);
  CHECK(out[0] == doctest::Approx(4.0).epsilon(1e-12));

  // A faraway point whose vertices are absent from the table slices to zero.
  std::vector<double> far = {100.0, -50.0, 30.0};
  std::vector<SimplexEmbedding> far_pts = {find_simplex(elevate(far, 1.0))};
  auto far_out = slice(table, far_pts);
  CHECK(far_out[0] == 0.0);
}

TEST_CASE("splat and slice are adjoint linear maps") {
  Rng rng(61);
  const int d = 4, c = 2;
  const int64_t n = 30;
  std::vector<double> positions;
  for (int64_t i = 0; i < n; ++i) {
    auto p = random_position(rng, d);
    positions.insert(positions.end(), p.begin(), p.end());
  }
  auto embs = embed_points(positions, n, d, 2.5);

  std::vector<double> f(size_t(n * c));
  for (auto& v : f) v = rng.normal();
  auto table = splat(embs, f, c);

  // Random table values T over the same key set.
  LatticeTable t2(d, c, table.size());
  for (int64_t e = 0; e < table.size(); ++e) t2.find_or_insert(table.key(e));
  for (auto& v : t2.values_flat()) v = rng.normal();

  // <slice(T, P), F> == <T, splat(P, F)>
  auto sliced = slice(t2, embs);
  double lhs = 0.0;
  for (size_t i = 0; i < sliced.size(); ++i) lhs += sliced[i] * f[i];
  double rhs = 0.0;
  for (int64_t e = 0; e < table.size(); ++e) {
    auto tv = t2.value(t2.find(table.key(e)));
    auto sv = table.value(e);
    for (int j = 0; j < c; ++j) rhs += tv[size_t(j)] * sv[size_t(j)];
  }
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-9));
}

TEST_CASE("lattice filter: coincident points give the feature sum times a "
          "shared kernel gain") {
  // Coincident points share one simplex, so every output row equals
  // gain * sum_j f_j. The gain is the kernel's self-mass: close to 1 but not
  // exactly 1, because the d+1 blur axes are linearly dependent (their steps
  // sum to zero), which closes gather loops of length d+1. The homogeneous
  // normalization divides the shared gain out; the aggregation-level tests
  // pin those 1e-6 identities.
  Rng rng(67);
  const int d = 4, c = 3;
  const int64_t n = 12;
  std::vector<double> positions(size_t(n * d), 0.0);
  std::vector<double> feats(size_t(n * c));
  for (auto& v : feats) v = rng.normal();

  LatticeFilter filter(d, c, /*lambda=*/10.0);
  auto out = filter.forward(n, positions, feats);
  std::vector<double> sums(size_t(c), 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) sums[size_t(j)] += feats[size_t(i * c + j)];
  const double gain = out[0] / sums[0];
  CHECK(gain > 0.9);
  CHECK(gain < 1.2);
  for (int64_t i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j)
      CHECK(out[size_t(i * c + j)] ==
            doctest::Approx(gain * sums[size_t(j)]).epsilon(1e-9));
}

TEST_CASE("lattice filter: n=1 returns the feature scaled by the self-gain") {
  std::vector<double> pos = {0.0, 0.0, 0.0, 0.0};
  std::vector<double> feat = {2.0, -3.0};
  LatticeFilter filter(4, 2, 10.0);
  auto out = filter.forward(1, pos, feat);
  const double gain = out[0] / feat[0];
  CHECK(gain > 0.9);
  CHECK(gain < 1.2);
  CHECK(out[1] == doctest::Approx(gain * feat[1]).epsilon(1e-12));
}

TEST_CASE("lattice filter: linear in features") {
  Rng rng(71);
  const int d = 4, c = 2;
  const int64_t n = 25;
  std::vector<double> positions;
  for (int64_t i = 0; i < n; ++i) {
    auto p = random_position(rng, d, 0.5);
    positions.insert(positions.end(), p.begin(), p.end());
  }
  std::vector<double> f1(size_t(n * c)), f2(size_t(n * c)), mix(size_t(n * c));
  for (size_t i = 0; i < f1.size(); ++i) {
    f1[i] = rng.normal();
    f2[i] = rng.normal();
    mix[i] = 1.7 * f1[i] + f2[i];
  }
  LatticeFilter fa(d, c, 10.0), fb(d, c, 10.0), fm(d, c, 10.0);
  auto o1 = fa.forward(n, positions, f1);
  auto o2 = fb.forward(n, positions, f2);
  auto om = fm.forward(n, positions, mix);
  for (size_t i = 0; i < om.size(); ++i)
    CHECK(om[i] == doctest::Approx(1.7 * o1[i] + o2[i]).epsilon(1e-9));
}

TEST_CASE("lattice filter: invariance under lattice translations") {
  // A shift t whose elevation is a lattice vector translates every simplex
  // rigidly, so outputs are preserved to FP precision. (Generic shifts
  // perturb outputs at the approximation-error level instead.)
  Rng rng(73);
  const int d = 4, c = 2;
  const int64_t n = 20;

  LatticeFilter fa(d, c, 10.0), fb(d, c, 10.0);
  const double scale = fa.scale();
  // Remainder-0 lattice vector v = (d+1) * (zero-sum integer vector);
  // t = E^T v / scale^2 satisfies E t = v.
  std::vector<double> v(size_t(d + 1), 0.0);
  v[0] = double(d + 1) * 2.0;
  v[1] = -double(d + 1) * 2.0;
  auto t = elevate_transpose(v, scale);
  for (auto& x : t) x /= scale * scale;

  std::vector<double> positions, shifted;
  for (int64_t i = 0; i < n; ++i) {
    auto p = random_position(rng, d, 0.4);
    for (int j = 0; j < d; ++j) {
      positions.push_back(p[size_t(j)]);
      shifted.push_back(p[size_t(j)] + t[size_t(j)]);
    }
  }
  std::vector<double> feats(size_t(n * c));
  for (auto& v2 : feats) v2 = rng.normal();
  auto oa = fa.forward(n, positions, feats);
  auto ob = fb.forward(n, shifted, feats);
  for (size_t i = 0; i < oa.size(); ++i)
    CHECK(oa[i] == doctest::Approx(ob[i]).epsilon(1e-9));
}

TEST_CASE("lattice filter: permutation equivariance") {
  Rng rng(79);
  const int d = 3, c = 2;
  const int64_t n = 15;
  std::vector<double> positions, feats;
  for (int64_t i = 0; i < n; ++i) {
    auto p = random_position(rng, d, 0.5);
    positions.insert(positions.end(), p.begin(), p.end());
    for (int j = 0; j < c; ++j) feats.push_back(rng.normal());
  }
  std::vector<int64_t> perm(size_t(n), 0);
  std::iota(perm.begin(), perm.end(), 0);
  for (size_t i = perm.size(); i > 1; --i)
    std::swap(perm[i - 1], perm[size_t(rng.uniform_int(int64_t(i)))]);

  std::vector<double> ppos(size_t(n * d)), pfeat(size_t(n * c));
  for (int64_t i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j)
      ppos[size_t(i * d + j)] = positions[size_t(perm[size_t(i)] * d + j)];
    for (int j = 0; j < c; ++j)
      pfeat[size_t(i * c + j)] = feats[size_t(perm[size_t(i)] * c + j)];
  }
  LatticeFilter fa(d, c, 10.0), fb(d, c, 10.0);
  auto oa = fa.forward(n, positions, feats);
  auto ob = fb.forward(n, ppos, pfeat);
  for (int64_t i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j)
      CHECK(ob[size_t(i * c + j)] ==
            doctest::Approx(oa[size_t(perm[size_t(i)] * c + j)]).epsilon(1e-9));
}

TEST_CASE("lattice filter backward: zero grad_out gives zero grads") {
  Rng rng(83);
  const int d = 4, c = 2;
  const int64_t n = 10;
  std::vector<double> positions, feats;
  for (int64_t i = 0; i < n; ++i) {
    auto p = random_position(rng, d, 0.5);
    positions.insert(positions.end(), p.begin(), p.end());
    for (int j = 0; j < c; ++j) feats.push_back(rng.normal());
  }
  LatticeFilter filter(d, c, 10.0);
  filter.forward(n, positions, feats);
  std::vector<double> gout(size_t(n * c), 0.0);
  std::vector<double> gfeat(size_t(n * c), 1.0), gpos(size_t(n * d), 1.0);
  filter.backward(gout, gfeat, gpos);
  for (double v : gfeat) CHECK(v == 0.0);
  for (double v : gpos) CHECK(v == 0.0);
}

TEST_CASE("lattice filter backward: feature gradients match FD") {
  Rng rng(89);
  const int d = 4, c = 2;
  const int64_t n = 14;
  std::vector<double> positions, feats;
  for (int64_t i = 0; i < n; ++i) {
    auto p = random_position(rng, d, 0.4);
    positions.insert(positions.end(), p.begin(), p.end());
    for (int j = 0; j < c; ++j) feats.push_back(rng.normal());
  }
  std::vector<double> weights(size_t(n * c));
  for (auto& v : weights) v = rng.normal();

  LatticeFilter filter(d, c, 10.0);
  filter.forward(n, positions, feats);
  std::vector<double> gfeat(size_t(n * c)), gpos(size_t(n * d));
  filter.backward(weights, gfeat, gpos);

  auto fn = [&]() {
    LatticeFilter f2(d, c, 10.0);
    auto out = f2.forward(n, positions, feats);
    double s = 0.0;
    for (size_t i = 0; i < out.size(); ++i) s += out[i] * weights[i];
    return s;
  };
  auto numeric = fd::central_gradient(fn, feats);
  CHECK(fd::max_rel_error(gfeat, numeric) < 1e-5);
}

TEST_CASE("lattice filter backward: position gradients match FD (interior)") {
  Rng rng(97);
  const int d = 4, c = 2;
  const int64_t n = 14;
  std::vector<double> positions, feats;
  for (int64_t i = 0; i < n; ++i) {
    auto p = random_position(rng, d, 0.4);
    positions.insert(positions.end(), p.begin(), p.end());
    for (int j = 0; j < c; ++j) feats.push_back(rng.normal());
  }
  std::vector<double> weights(size_t(n * c));
  for (auto& v : weights) v = rng.normal();

  LatticeFilter filter(d, c, 10.0);
  filter.forward(n, positions, feats);
  std::vector<double> gfeat(size_t(n * c)), gpos(size_t(n * d));
  filter.backward(weights, gfeat, gpos);

  std::vector<uint8_t> interior(size_t(n), 1);
  for (int64_t i = 0; i < n; ++i)
    for (double w : filter.embeddings()[size_t(i)].weights)
      if (w < 1e-3) interior[size_t(i)] = 0;

  auto fn = [&]() {
    LatticeFilter f2(d, c, 10.0);
    auto out = f2.forward(n, positions, feats);
    double s = 0.0;
    for (size_t i = 0; i < out.size(); ++i) s += out[i] * weights[i];
    return s;
  };
  auto numeric = fd::central_gradient(fn, positions);
  int64_t checked = 0;
  for (int64_t i = 0; i < n; ++i) {
    if (!interior[size_t(i)]) continue;
    ++checked;
    for (int j = 0; j < d; ++j) {
      const size_t k = size_t(i * d + j);
      const std::vector<double> an = {gpos[k]};
      const std::vector<double> nu = {numeric[k]};
      CHECK(fd::max_rel_error(an, nu) < 1e-3);
    }
  }
  CHECK(checked > 0);
}

TEST_CASE("lattice filter is bitwise deterministic across thread counts") {
  Rng rng(101);
  const int d = 4, c = 3;
  const int64_t n = 64;
  std::vector<double> positions, feats;
  for (int64_t i = 0; i < n; ++i) {
    auto p = random_position(rng, d, 0.5);
    positions.insert(positions.end(), p.begin(), p.end());
    for (int j = 0; j < c; ++j) feats.push_back(rng.normal());
  }
  std::vector<double> base;
  for (int threads : {1, 2, 4}) {
    phgcn::par::ThreadGuard guard(threads);
    LatticeFilter filter(d, c, 10.0);
    auto out = filter.forward(n, positions, feats);
    std::vector<double> weights(out.size(), 0.25);
    std::vector<double> gfeat(size_t(n * c)), gpos(size_t(n * d));
    filter.backward(weights, gfeat, gpos);
    out.insert(out.end(), gfeat.begin(), gfeat.end());
    out.insert(out.end(), gpos.begin(), gpos.end());
    if (base.empty()) {
      base = out;
    } else {
      REQUIRE(base.size() == out.size());
      for (size_t i = 0; i < out.size(); ++i) CHECK(out[i] == base[i]);
    }
  }
}

TEST_CASE("lattice filter rejects non-finite inputs") {
  std::vector<double> pos = {0.0, 0.0, 0.0, std::nan("")};
  std::vector<double> feat = {1.0};
  LatticeFilter filter(4, 1, 10.0);
  CHECK_THROWS(filter.forward(1, pos, feat));
}
