#pragma once

#include <string>
#include <vector>

#include "phgcn/attention.hpp"
#include "phgcn/graph.hpp"
#include "phgcn/tape.hpp"
#include "phgcn/tensor.hpp"

namespace phgcn {

enum class LayerKind { PhGcn, GatEda, Gat, Gcn };
enum class GlobalMode { Lattice, Exact };

LayerKind layer_kind_from_string(const std::string& s);
std::string to_string(LayerKind k);

// One graph layer: A attention heads of width F', concatenated. PH-GCN heads
// concatenate a structural and a global pathway (output width 2*A*F'); the
// other kinds emit A*F'. A final layer uses a single head, emits raw logits,
// and (for PH-GCN) averages the two pathways' pre-activations instead of
// concatenating so the class-logit width stays C.
struct LayerConfig {
  LayerKind kind = LayerKind::PhGcn;
  int in_dim = 0;
  int head_dim = 0;  // F'
  int heads = 1;     // A
  int embed_dim = 4;  // D
  double lambda_struct = 1.0;
  double lambda_global = 10.0;
  double dropout = 0.0;       // on the layer's input features
  double attn_dropout = 0.0;  // on structural attention coefficients
  attention::Activation activation = attention::Activation::Elu;
  bool final_layer = false;
  GlobalMode global_mode = GlobalMode::Lattice;

  int output_width() const;
  void validate() const;
};

struct ModelConfig {
  std::vector<LayerConfig> layers;
  int num_classes = 0;
  uint64_t seed = 0;

  void validate() const;
};

// One attention head's parameters. W projects features (F' x F); Phi embeds
// the projected features into the similarity space (D x F'); the GAT kind
// additionally carries the split attention vector.
struct HeadParams {
  Tensor W;
  Tensor Phi;
  double lambda_struct = 1.0;
  double lambda_global = 10.0;
  Tensor attn_src;  // GAT only
  Tensor attn_dst;  // GAT only
};

// Single-layer forward passes, pre-assembled by Model but usable standalone.
Tensor phgcn_layer(Tape* tape, const Graph& g, const Tensor& features,
                   std::span<const HeadParams> heads, const LayerConfig& cfg,
                   bool training, Rng* rng);
Tensor gat_eda_layer(Tape* tape, const Graph& g, const Tensor& features,
                     std::span<const HeadParams> heads, const LayerConfig& cfg,
                     bool training, Rng* rng);
Tensor gat_layer(Tape* tape, const Graph& g, const Tensor& features,
                 std::span<const HeadParams> heads, const LayerConfig& cfg,
                 bool training, Rng* rng);
Tensor gcn_layer(Tape* tape, const Graph& g, const Tensor& features,
                 std::span<const HeadParams> heads, const LayerConfig& cfg,
                 bool training, Rng* rng);

class Model {
 public:
  // Glorot-uniform initialization of every head from the config seed.
  static Model init(ModelConfig config);

  Tensor forward(Tape* tape, const Graph& g, const Tensor& features,
                 bool training, Rng* dropout_rng) const;

  const ModelConfig& config() const { return config_; }
  std::span<const HeadParams> layer_heads(int layer) const {
    return params_[size_t(layer)];
  }

  std::vector<Tensor> parameters() const;
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;

  // First-layer node embeddings Phi W h per head (inference, no tape).
  std::vector<Tensor> head_embeddings(const Graph& g) const;

  // Deep copy of parameter values (for best-checkpoint tracking).
  std::vector<Tensor> snapshot() const;
  void restore(const std::vector<Tensor>& snap);

 private:
  ModelConfig config_;
  std::vector<std::vector<HeadParams>> params_;
};

// Named-tensor checkpoint: u64 count, then per tensor a u32 name length,
// name bytes, u32 ndim, i64 dims, f64 little-endian payload.
void save_checkpoint(const Model& model, const std::string& path);
void load_checkpoint(Model& model, const std::string& path);

// Convenience: a homogeneous stack (hidden layers + final layer) for the
// common experiment shapes.
ModelConfig make_stack_config(LayerKind kind, int num_layers, int in_dim,
                              int head_dim, int heads, int num_classes,
                              int embed_dim, double lambda_struct,
                              double lambda_global, double dropout,
                              double attn_dropout, uint64_t seed,
                              GlobalMode global_mode = GlobalMode::Lattice);

}  // namespace phgcn
