#include "phgcn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "phgcn/ops.hpp"

namespace phgcn {

LayerKind layer_kind_from_string(const std::string& s) {
  if (s == "phgcn") return LayerKind::PhGcn;
  if (s == "gat_eda") return LayerKind::GatEda;
  if (s == "gat") return LayerKind::Gat;
  if (s == "gcn") return LayerKind::Gcn;
  fail("unknown model kind: " + s);
}

std::string to_string(LayerKind k) {
  switch (k) {
    case LayerKind::PhGcn: return "phgcn";
    case LayerKind::GatEda: return "gat_eda";
    case LayerKind::Gat: return "gat";
    case LayerKind::Gcn: return "gcn";
  }
  return "?";
}

int LayerConfig::output_width() const {
  if (final_layer) return head_dim;
  const int per_head = kind == LayerKind::PhGcn ? 2 * head_dim : head_dim;
  return heads * per_head;
}

void LayerConfig::validate() const {
  check(in_dim >= 1, "layer config: in_dim must be >= 1");
  check(head_dim >= 1, "layer config: head_dim must be >= 1");
  check(heads >= 1, "layer config: heads must be >= 1");
  check(embed_dim >= 1, "layer config: embed_dim must be >= 1");
  check(lambda_struct > 0.0, "layer config: lambda_struct must be positive");
  check(lambda_global > 0.0, "layer config: lambda_global must be positive");
  check(dropout >= 0.0 && dropout < 1.0, "layer config: bad dropout");
  check(attn_dropout >= 0.0 && attn_dropout < 1.0,
        "layer config: bad attention dropout");
  if (final_layer) check(heads == 1, "layer config: final layer uses one head");
  if (kind == LayerKind::Gcn)
    check(heads == 1, "layer config: gcn uses a single weight matrix");
}

void ModelConfig::validate() const {
  check(!layers.empty(), "model config: needs at least one layer");
  check(num_classes >= 2, "model config: needs at least two classes");
  for (size_t i = 0; i < layers.size(); ++i) {
    layers[i].validate();
    if (i > 0)
      check(layers[i].in_dim == layers[i - 1].output_width(),
            "model config: adjacent layer widths disagree");
  }
  check(layers.back().final_layer, "model config: last layer must be final");
  check(layers.back().output_width() == num_classes,
        "model config: final width must equal the class count");
}

namespace {

Tensor glorot(Rng& rng, int64_t rows, int64_t cols) {
  const double limit = std::sqrt(6.0 / double(rows + cols));
  Tensor t = Tensor::zeros({rows, cols}, /*requires_grad=*/true);
  for (double& v : t.values()) v = rng.uniform(-limit, limit);
  return t;
}

struct HeadOutputs {
  Tensor structural;
  Tensor global;
};

// Layer-input dropout, shared by all heads of the layer.
Tensor layer_input(Tape* tape, const Tensor& features, const LayerConfig& cfg,
                   bool training, Rng* rng) {
  if (!training || cfg.dropout == 0.0) return features;
  check(rng != nullptr, "layer: dropout requires an rng");
  return ops::dropout(tape, features, cfg.dropout, training, *rng);
}

struct HeadFwd {
  Tensor projected;
  Tensor emb;
};

HeadFwd project_head(Tape* tape, const Tensor& x, const HeadParams& p,
                     bool need_embedding) {
  HeadFwd out;
  out.projected = ops::matmul(tape, x, ops::transpose(tape, p.W));
  if (need_embedding)
    out.emb = ops::matmul(tape, out.projected, ops::transpose(tape, p.Phi));
  return out;
}

attention::AttnDropout attn_dropout_of(const LayerConfig& cfg, bool training,
                                       Rng* rng) {
  attention::AttnDropout d;
  d.p = cfg.attn_dropout;
  d.training = training && cfg.attn_dropout > 0.0;
  d.rng = rng;
  return d;
}

}  // namespace

Tensor phgcn_layer(Tape* tape, const Graph& g, const Tensor& features,
                   std::span<const HeadParams> heads, const LayerConfig& cfg,
                   bool training, Rng* rng) {
  check(int(heads.size()) == cfg.heads, "phgcn_layer: head count mismatch");
  check(features.dim(1) == cfg.in_dim, "phgcn_layer: input width mismatch");
  Tensor x = layer_input(tape, features, cfg, training, rng);
  std::vector<Tensor> outs;
  for (const HeadParams& p : heads) {
    HeadFwd f = project_head(tape, x, p, true);
    Tensor structural = attention::structural_attend(
        tape, g, f.emb, f.projected, p.lambda_struct,
        attn_dropout_of(cfg, training, rng));
    Tensor global =
        cfg.global_mode == GlobalMode::Lattice
            ? attention::global_attend_lattice(tape, f.emb, f.projected,
                                               p.lambda_global)
            : attention::global_attend_exact(tape, f.emb, f.projected,
                                             p.lambda_global);
    if (cfg.final_layer) {
      // Average the two pathways' pre-activations; keeps logit width at C.
      outs.push_back(ops::scale(tape, ops::add(tape, structural, global), 0.5));
    } else {
      if (cfg.activation == attention::Activation::Elu) {
        structural = ops::elu(tape, structural);
        global = ops::elu(tape, global);
      }
      outs.push_back(ops::concat_cols(tape, structural, global));
    }
  }
  if (outs.size() == 1) return outs[0];
  return ops::concat_cols(tape, outs);
}

namespace {

// Structural-only layers (GAT-EDA and GAT) share everything but the logits.
Tensor structural_only_layer(Tape* tape, const Graph& g, const Tensor& features,
                             std::span<const HeadParams> heads,
                             const LayerConfig& cfg, bool training, Rng* rng,
                             bool euclidean_attention) {
  check(int(heads.size()) == cfg.heads, "layer: head count mismatch");
  check(features.dim(1) == cfg.in_dim, "layer: input width mismatch");
  Tensor x = layer_input(tape, features, cfg, training, rng);
  std::vector<Tensor> outs;
  for (const HeadParams& p : heads) {
    HeadFwd f = project_head(tape, x, p, euclidean_attention);
    Tensor agg =
        euclidean_attention
            ? attention::structural_attend(tape, g, f.emb, f.projected,
                                           p.lambda_struct,
                                           attn_dropout_of(cfg, training, rng))
            : attention::gat_attend(tape, g, f.projected, p.attn_src,
                                    p.attn_dst,
                                    attn_dropout_of(cfg, training, rng));
    if (!cfg.final_layer && cfg.activation == attention::Activation::Elu)
      agg = ops::elu(tape, agg);
    outs.push_back(agg);
  }
  if (outs.size() == 1) return outs[0];
  return ops::concat_cols(tape, outs);
}

}  // namespace

Tensor gat_eda_layer(Tape* tape, const Graph& g, const Tensor& features,
                     std::span<const HeadParams> heads, const LayerConfig& cfg,
                     bool training, Rng* rng) {
  return structural_only_layer(tape, g, features, heads, cfg, training, rng,
                               /*euclidean_attention=*/true);
}

Tensor gat_layer(Tape* tape, const Graph& g, const Tensor& features,
                 std::span<const HeadParams> heads, const LayerConfig& cfg,
                 bool training, Rng* rng) {
  return structural_only_layer(tape, g, features, heads, cfg, training, rng,
                               /*euclidean_attention=*/false);
}

Tensor gcn_layer(Tape* tape, const Graph& g, const Tensor& features,
                 std::span<const HeadParams> heads, const LayerConfig& cfg,
                 bool training, Rng* rng) {
  check(heads.size() == 1, "gcn_layer: single weight matrix expected");
  check(features.dim(1) == cfg.in_dim, "gcn_layer: input width mismatch");
  Tensor x = layer_input(tape, features, cfg, training, rng);
  HeadFwd f = project_head(tape, x, heads[0], false);
  Tensor agg = attention::gcn_propagate(tape, g, f.projected);
  if (!cfg.final_layer && cfg.activation == attention::Activation::Elu)
    agg = ops::elu(tape, agg);
  return agg;
}

Model Model::init(ModelConfig config) {
  config.validate();
  Model m;
  m.config_ = std::move(config);
  Rng rng(m.config_.seed ^ 0x5eed5eed12345678ULL);
  for (const LayerConfig& lc : m.config_.layers) {
    std::vector<HeadParams> heads;
    const int nheads = lc.kind == LayerKind::Gcn ? 1 : lc.heads;
    for (int a = 0; a < nheads; ++a) {
      HeadParams p;
      p.W = glorot(rng, lc.head_dim, lc.in_dim);
      p.lambda_struct = lc.lambda_struct;
      p.lambda_global = lc.lambda_global;
      if (lc.kind == LayerKind::PhGcn || lc.kind == LayerKind::GatEda)
        p.Phi = glorot(rng, lc.embed_dim, lc.head_dim);
      if (lc.kind == LayerKind::Gat) {
        p.attn_src = glorot(rng, 1, lc.head_dim);
        p.attn_dst = glorot(rng, 1, lc.head_dim);
      }
      heads.push_back(std::move(p));
    }
    m.params_.push_back(std::move(heads));
  }
  return m;
}

Tensor Model::forward(Tape* tape, const Graph& g, const Tensor& features,
                      bool training, Rng* dropout_rng) const {
  Tensor x = features;
  for (size_t l = 0; l < config_.layers.size(); ++l) {
    const LayerConfig& lc = config_.layers[l];
    std::span<const HeadParams> heads = params_[l];
    switch (lc.kind) {
      case LayerKind::PhGcn:
        x = phgcn_layer(tape, g, x, heads, lc, training, dropout_rng);
        break;
      case LayerKind::GatEda:
        x = gat_eda_layer(tape, g, x, heads, lc, training, dropout_rng);
        break;
      case LayerKind::Gat:
        x = gat_layer(tape, g, x, heads, lc, training, dropout_rng);
        break;
      case LayerKind::Gcn:
        x = gcn_layer(tape, g, x, heads, lc, training, dropout_rng);
        break;
    }
  }
  return x;
}

std::vector<Tensor> Model::parameters() const {
  std::vector<Tensor> out;
  for (const auto& layer : params_) {
    for (const HeadParams& p : layer) {
      out.push_back(p.W);
      if (p.Phi.defined()) out.push_back(p.Phi);
      if (p.attn_src.defined()) out.push_back(p.attn_src);
      if (p.attn_dst.defined()) out.push_back(p.attn_dst);
    }
  }
  return out;
}

std::vector<std::pair<std::string, Tensor>> Model::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (size_t l = 0; l < params_.size(); ++l) {
    for (size_t a = 0; a < params_[l].size(); ++a) {
      const std::string prefix =
          "layers." + std::to_string(l) + ".heads." + std::to_string(a) + ".";
      const HeadParams& p = params_[l][a];
      out.emplace_back(prefix + "W", p.W);
      if (p.Phi.defined()) out.emplace_back(prefix + "Phi", p.Phi);
      if (p.attn_src.defined()) out.emplace_back(prefix + "attn_src", p.attn_src);
      if (p.attn_dst.defined()) out.emplace_back(prefix + "attn_dst", p.attn_dst);
    }
  }
  return out;
}

std::vector<Tensor> Model::head_embeddings(const Graph& g) const {
  check(!params_.empty(), "head_embeddings: uninitialized model");
  std::vector<Tensor> out;
  for (const HeadParams& p : params_[0]) {
    check(p.Phi.defined(), "head_embeddings: layer kind has no embeddings");
    Tensor proj = ops::matmul(nullptr, g.features, ops::transpose(nullptr, p.W));
    out.push_back(ops::matmul(nullptr, proj, ops::transpose(nullptr, p.Phi)));
  }
  return out;
}

std::vector<Tensor> Model::snapshot() const {
  std::vector<Tensor> out;
  for (const Tensor& p : parameters()) out.push_back(p.clone());
  return out;
}

void Model::restore(const std::vector<Tensor>& snap) {
  auto params = parameters();
  check(params.size() == snap.size(), "restore: parameter count mismatch");
  for (size_t i = 0; i < params.size(); ++i)
    params[i].copy_values_from(snap[i]);
}

namespace {

void write_u32(std::ofstream& f, uint32_t v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void write_i64(std::ofstream& f, int64_t v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof v);
}
uint32_t read_u32(std::ifstream& f) {
  uint32_t v = 0;
  f.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
int64_t read_i64(std::ifstream& f) {
  int64_t v = 0;
  f.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

constexpr char kCheckpointMagic[8] = {'P', 'H', 'G', 'C', 'K', 'P', 'T', '1'};

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  check(bool(f), "save_checkpoint: cannot open file for writing");
  f.write(kCheckpointMagic, sizeof kCheckpointMagic);
  const auto named = model.named_parameters();
  write_i64(f, int64_t(named.size()));
  for (const auto& [name, t] : named) {
    write_u32(f, uint32_t(name.size()));
    f.write(name.data(), std::streamsize(name.size()));
    write_u32(f, uint32_t(t.shape().size()));
    for (int64_t d : t.shape()) write_i64(f, d);
    // f64 payload, little-endian on every supported target.
    f.write(reinterpret_cast<const char*>(t.values().data()),
            std::streamsize(sizeof(double) * size_t(t.numel())));
  }
  check(bool(f), "save_checkpoint: write failed");
}

void load_checkpoint(Model& model, const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(bool(f), "load_checkpoint: cannot open file");
  char magic[8];
  f.read(magic, sizeof magic);
  check(bool(f) && std::memcmp(magic, kCheckpointMagic, 8) == 0,
        "load_checkpoint: bad magic");
  const int64_t count = read_i64(f);
  auto named = model.named_parameters();
  check(count == int64_t(named.size()),
        "load_checkpoint: tensor count mismatch");
  for (auto& [name, t] : named) {
    const uint32_t name_len = read_u32(f);
    std::string got(name_len, '\0');
    f.read(got.data(), name_len);
    check(got == name, "load_checkpoint: tensor name mismatch");
    const uint32_t ndim = read_u32(f);
    check(ndim == uint32_t(t.shape().size()),
          "load_checkpoint: rank mismatch");
    for (size_t i = 0; i < ndim; ++i)
      check(read_i64(f) == t.shape()[i], "load_checkpoint: shape mismatch");
    f.read(reinterpret_cast<char*>(t.values().data()),
           std::streamsize(sizeof(double) * size_t(t.numel())));
    check(bool(f), "load_checkpoint: truncated file");
  }
}

ModelConfig make_stack_config(LayerKind kind, int num_layers, int in_dim,
                              int head_dim, int heads, int num_classes,
                              int embed_dim, double lambda_struct,
                              double lambda_global, double dropout,
                              double attn_dropout, uint64_t seed,
                              GlobalMode global_mode) {
  check(num_layers >= 1, "make_stack_config: need at least one layer");
  ModelConfig mc;
  mc.num_classes = num_classes;
  mc.seed = seed;
  int width = in_dim;
  for (int l = 0; l < num_layers; ++l) {
    LayerConfig lc;
    lc.kind = kind;
    lc.in_dim = width;
    lc.embed_dim = embed_dim;
    lc.lambda_struct = lambda_struct;
    lc.lambda_global = lambda_global;
    lc.dropout = dropout;
    lc.attn_dropout = attn_dropout;
    lc.global_mode = global_mode;
    if (kind == LayerKind::Gcn) heads = 1;
    if (l == num_layers - 1) {
      lc.final_layer = true;
      lc.heads = 1;
      lc.head_dim = num_classes;
      lc.activation = attention::Activation::Identity;
    } else {
      lc.heads = heads;
      lc.head_dim = head_dim;
    }
    mc.layers.push_back(lc);
    width = lc.output_width();
  }
  return mc;
}

}  // namespace phgcn
