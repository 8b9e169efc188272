#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

namespace phgcn::lattice {

// Width-7 symmetric blur kernel: taps for offsets -3..3 along each lattice
// axis. Taps are left unnormalized; the homogeneous channel cancels the
// overall kernel mass during slicing.
struct BlurKernel {
  std::array<double, 7> taps;

  // taps[k] = exp(-|k - 3| * kappa); tap 0 is maximal with weight 1.
  static BlurKernel exponential(double kappa);
  // Unit impulse at offset 0 (blur becomes the identity).
  static BlurKernel identity();
};

// Per-dimension mapping from the continuous decay rate lambda onto the
// lattice: elevation scale = lambda * cd, with taps exp(-|k|*kappa). The
// (kappa, cd) pairs are fitted against the exact filter; see
// data/lattice_calibration.tsv and the `calibrate` CLI subcommand.
struct LatticeCalibration {
  double kappa;
  double cd;
};
LatticeCalibration calibration_for_dim(int dim);

// Enclosing-simplex data for one elevated point: the D+1 vertex keys, their
// barycentric weights, and the rank permutation that fixes the local
// simplex orientation. Cached once and reused by forward and backward.
struct SimplexEmbedding {
  std::vector<double> elevated;      // D+1 hyperplane coords, sum ~ 0
  std::vector<int32_t> vertex_keys;  // (D+1) vertices x (D+1) coords, flat
  std::vector<double> weights;       // D+1 barycentric weights, sum to 1
  std::vector<int32_t> rank;         // D+1 rank permutation

  int dim() const { return int(weights.size()) - 1; }
  const int32_t* vertex(int k) const {
    return vertex_keys.data() + size_t(k) * weights.size();
  }
};

// Project a D-dim position onto the hyperplane 1^T x = 0 of the (D+1)-dim
// permutohedral lattice. The map is linear and satisfies |E p| = scale * |p|.
std::vector<double> elevate(std::span<const double> p, double scale);

// Transpose of the elevation map (chains position gradients back to R^D).
std::vector<double> elevate_transpose(std::span<const double> v, double scale);

// Locate the enclosing simplex of a hyperplane point: remainder-0 rounding,
// sum repair by largest rounding error, rank-based vertex enumeration and
// barycentric weights.
SimplexEmbedding find_simplex(std::span<const double> elevated);

// Hash map from integer lattice coordinates to per-vertex value vectors.
// Open addressing keyed on the first D coordinates (the last is implied by
// the zero-sum constraint); entries keep insertion order for deterministic
// iteration. Capacity is fixed at construction; splatting N points touches
// at most (D+1)*N vertices.
class LatticeTable {
 public:
  LatticeTable(int dim, int channels, int64_t max_entries);

  // Returns the entry index for the key, inserting a zero vector if absent.
  int64_t find_or_insert(const int32_t* key);
  // Returns the entry index or -1.
  int64_t find(const int32_t* key) const;

  int64_t size() const { return count_; }
  int dim() const { return dim_; }
  int channels() const { return channels_; }

  std::span<double> value(int64_t entry) {
    return {values_.data() + entry * channels_, size_t(channels_)};
  }
  std::span<const double> value(int64_t entry) const {
    return {values_.data() + entry * channels_, size_t(channels_)};
  }
  const int32_t* key(int64_t entry) const {
    return keys_.data() + entry * (dim_ + 1);
  }

  std::vector<double>& values_flat() { return values_; }
  const std::vector<double>& values_flat() const { return values_; }

 private:
  uint64_t hash_key(const int32_t* key) const;
  bool keys_equal(const int32_t* a, const int32_t* b) const;

  int dim_;
  int channels_;
  int64_t count_ = 0;
  uint64_t mask_;
  std::vector<int64_t> slots_;   // capacity, -1 = empty
  std::vector<int32_t> keys_;    // count x (dim+1)
  std::vector<double> values_;   // count x channels
};

// Deposit each point's feature vector onto its enclosing simplex vertices,
// scaled by the barycentric weights. Per-channel mass is conserved.
LatticeTable splat(std::span<const SimplexEmbedding> points,
                   std::span<const double> features, int channels);

// Apply the 7-tap kernel once along every lattice axis over the existing
// entries (absent neighbors contribute zero). Ascending axis order; the
// descending order is the exact transpose, used by the backward pass.
enum class AxisOrder { Ascending, Descending };
void blur(LatticeTable& table, const BlurKernel& kernel,
          AxisOrder order = AxisOrder::Ascending);

// Read each point's filtered value as the barycentric-weighted sum of its
// enclosing vertices' values. Missing keys contribute zero.
std::vector<double> slice(const LatticeTable& table,
                          std::span<const SimplexEmbedding> points);

// Fused forward/backward filter: out_i ~ sum_j exp(-lambda |p_i - p_j|) f_j.
// One instance per call; forward retains the state backward needs.
class LatticeFilter {
 public:
  // positions: N x dim row-major; features: N x channels row-major.
  LatticeFilter(int dim, int channels, double lambda);
  LatticeFilter(int dim, int channels, double scale, BlurKernel kernel);

  // Returns the filtered features, N x channels.
  std::vector<double> forward(int64_t n, std::span<const double> positions,
                              std::span<const double> features);

  // grad_out: N x channels. Produces gradients w.r.t. the input features and
  // positions. Barycentric weights are differentiated within the fixed
  // simplex (rank permutation held constant) and chained through the
  // elevation map, at both the splat and slice sites.
  void backward(std::span<const double> grad_out,
                std::span<double> grad_features,
                std::span<double> grad_positions) const;

  double scale() const { return scale_; }
  const std::vector<SimplexEmbedding>& embeddings() const { return points_; }
  const LatticeTable& blurred_table() const { return *table_; }

 private:
  int dim_;
  int channels_;
  double scale_;
  BlurKernel kernel_;
  int64_t n_ = 0;
  std::vector<SimplexEmbedding> points_;
  std::vector<int64_t> entry_of_vertex_;  // N x (dim+1)
  std::vector<double> features_;          // saved input
  std::unique_ptr<LatticeTable> table_;   // blurred values (T1)
};

}  // namespace phgcn::lattice
