// phgcn: train/evaluate permutohedral-attention graph networks, run the
// gradient-check and scaling suites, and dump learned embeddings.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "phgcn/attention.hpp"
#include "phgcn/graph.hpp"
#include "phgcn/harness.hpp"
#include "phgcn/layers.hpp"
#include "phgcn/ops.hpp"
#include "phgcn/parallel.hpp"
#include "phgcn/tape.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace phgcn;

namespace {

struct CommonOpts {
  std::string config_path;
  uint64_t seed = 0;
  std::string out_dir = "out";
  bool deterministic = false;
  json config;  // parsed --config file (empty object when absent)
};

void load_config(CommonOpts& c) {
  c.config = json::object();
  if (c.config_path.empty()) return;
  std::ifstream f(c.config_path);
  if (!f) fail("cannot open config file: " + c.config_path);
  f >> c.config;
}

// Flags override config keys: CLI11 tells us whether a flag was passed.
template <typename T>
void config_default(const CLI::App& app, const std::string& flag,
                    const json& section, const std::string& key, T& value) {
  if (app.count(flag) > 0) return;  // explicit flag wins
  if (section.contains(key)) value = section[key].get<T>();
}

json layer_config_to_json(const LayerConfig& lc) {
  json j;
  j["kind"] = to_string(lc.kind);
  j["in_dim"] = lc.in_dim;
  j["head_dim"] = lc.head_dim;
  j["heads"] = lc.heads;
  j["embed_dim"] = lc.embed_dim;
  j["lambda_struct"] = lc.lambda_struct;
  j["lambda_global"] = lc.lambda_global;
  j["dropout"] = lc.dropout;
  j["attn_dropout"] = lc.attn_dropout;
  j["activation"] =
      lc.activation == attention::Activation::Elu ? "elu" : "identity";
  j["final_layer"] = lc.final_layer;
  j["global_mode"] = lc.global_mode == GlobalMode::Lattice ? "lattice" : "exact";
  return j;
}

LayerConfig layer_config_from_json(const json& j) {
  LayerConfig lc;
  lc.kind = layer_kind_from_string(j.at("kind").get<std::string>());
  lc.in_dim = j.at("in_dim").get<int>();
  lc.head_dim = j.at("head_dim").get<int>();
  lc.heads = j.at("heads").get<int>();
  lc.embed_dim = j.at("embed_dim").get<int>();
  lc.lambda_struct = j.at("lambda_struct").get<double>();
  lc.lambda_global = j.at("lambda_global").get<double>();
  lc.dropout = j.at("dropout").get<double>();
  lc.attn_dropout = j.at("attn_dropout").get<double>();
  lc.activation = j.at("activation").get<std::string>() == "elu"
                      ? attention::Activation::Elu
                      : attention::Activation::Identity;
  lc.final_layer = j.at("final_layer").get<bool>();
  lc.global_mode = j.at("global_mode").get<std::string>() == "exact"
                       ? GlobalMode::Exact
                       : GlobalMode::Lattice;
  return lc;
}

void save_model_config(const ModelConfig& mc, const std::string& path) {
  json j;
  j["num_classes"] = mc.num_classes;
  j["seed"] = mc.seed;
  j["layers"] = json::array();
  for (const auto& lc : mc.layers) j["layers"].push_back(layer_config_to_json(lc));
  std::ofstream f(path);
  if (!f) fail("cannot write model config: " + path);
  f << j.dump(2) << '\n';
}

ModelConfig load_model_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail("cannot open model config: " + path);
  json j;
  f >> j;
  ModelConfig mc;
  mc.num_classes = j.at("num_classes").get<int>();
  mc.seed = j.at("seed").get<uint64_t>();
  for (const auto& lj : j.at("layers")) mc.layers.push_back(layer_config_from_json(lj));
  return mc;
}

int cmd_train(const CommonOpts& common, const CLI::App& app,
              std::string nodes_path, std::string edges_path, std::string kind,
              int layers, int head_dim, int heads, int embed_dim,
              double lambda_struct, double lambda_global, double dropout,
              double attn_dropout, double lr, int max_iters, int patience,
              bool normalize, bool exact_global, bool symmetrize) {
  const json model_cfg = common.config.value("model", json::object());
  const json train_cfg = common.config.value("train", json::object());
  const json data_cfg = common.config.value("data", json::object());
  config_default(app, "--nodes", data_cfg, "nodes", nodes_path);
  config_default(app, "--edges", data_cfg, "edges", edges_path);
  config_default(app, "--kind", model_cfg, "kind", kind);
  config_default(app, "--layers", model_cfg, "layers", layers);
  config_default(app, "--head-dim", model_cfg, "head_dim", head_dim);
  config_default(app, "--heads", model_cfg, "heads", heads);
  config_default(app, "--embed-dim", model_cfg, "embed_dim", embed_dim);
  config_default(app, "--lambda-struct", model_cfg, "lambda_struct", lambda_struct);
  config_default(app, "--lambda-global", model_cfg, "lambda_global", lambda_global);
  config_default(app, "--dropout", model_cfg, "dropout", dropout);
  config_default(app, "--attn-dropout", model_cfg, "attn_dropout", attn_dropout);
  config_default(app, "--lr", train_cfg, "lr", lr);
  config_default(app, "--max-iters", train_cfg, "max_iters", max_iters);
  config_default(app, "--patience", train_cfg, "patience", patience);

  if (nodes_path.empty() || edges_path.empty())
    fail("train: --nodes and --edges (or config data.nodes/data.edges) required");

  Graph g = load_graph(nodes_path, edges_path, symmetrize);
  if (normalize) row_normalize_features(g);
  split_nodes(g, common.seed);

  ModelConfig mc = make_stack_config(
      layer_kind_from_string(kind), layers, g.feature_dim(), head_dim, heads,
      g.num_classes(), embed_dim, lambda_struct, lambda_global, dropout,
      attn_dropout, common.seed,
      exact_global ? GlobalMode::Exact : GlobalMode::Lattice);
  Model model = Model::init(mc);

  TrainOptions opt;
  opt.lr = lr;
  opt.max_iters = max_iters;
  opt.patience = patience;
  opt.seed = common.seed;
  opt.deterministic = common.deterministic;
  TrainResult res = train_transductive(model, g, opt);

  fs::create_directories(common.out_dir);
  write_metrics_csv(res.metrics, common.out_dir + "/metrics.csv");
  save_checkpoint(model, common.out_dir + "/checkpoint.bin");
  save_model_config(mc, common.out_dir + "/model.json");

  std::printf("train: N=%lld F=%d C=%d | best val loss %.6f @ iter %lld | "
              "test acc %.4f\n",
              (long long)g.num_nodes, g.feature_dim(), g.num_classes(),
              res.best_val_loss, (long long)res.best_iteration, res.test_acc);
  return 0;
}

int cmd_motif(const CommonOpts& common, const CLI::App& app, std::string kind,
              int layers, int head_dim, int heads, int iters,
              int eval_interval, int eval_graphs, int chain_length, double lr,
              double lambda_struct, double lambda_global) {
  const json motif_cfg = common.config.value("motif", json::object());
  config_default(app, "--kind", motif_cfg, "kind", kind);
  config_default(app, "--layers", motif_cfg, "layers", layers);
  config_default(app, "--iters", motif_cfg, "iters", iters);
  config_default(app, "--eval-interval", motif_cfg, "eval_interval", eval_interval);
  config_default(app, "--eval-graphs", motif_cfg, "eval_graphs", eval_graphs);
  config_default(app, "--chain-length", motif_cfg, "chain_length", chain_length);
  config_default(app, "--lr", motif_cfg, "lr", lr);

  MotifOptions opt;
  opt.kind = layer_kind_from_string(kind);
  opt.num_layers = layers;
  opt.head_dim = head_dim;
  opt.heads = heads;
  opt.iters = iters;
  opt.eval_interval = eval_interval;
  opt.eval_graphs = eval_graphs;
  opt.chain_length = chain_length;
  opt.lr = lr;
  opt.lambda_struct = lambda_struct;
  opt.lambda_global = lambda_global;
  opt.seed = common.seed;
  opt.deterministic = common.deterministic;

  MotifResult res = run_motif_experiment(opt);
  fs::create_directories(common.out_dir);
  write_metrics_csv(res.metrics, common.out_dir + "/metrics.csv");
  for (const auto& pt : res.evals)
    std::printf("motif eval: iter %6lld  acc %.4f  loss %.6f\n",
                (long long)pt.iteration, pt.accuracy, pt.loss);
  std::printf("motif: kind=%s best eval acc %.4f\n", kind.c_str(),
              res.best_eval_acc);
  return 0;
}

int cmd_gradcheck(const CommonOpts& common, bool inject_fault) {
  if (inject_fault) testing::set_corrupt_backward(true);
  auto items = gradcheck_all(common.seed, /*deep=*/true);
  testing::set_corrupt_backward(false);
  bool all_pass = true;
  std::printf("%-32s %14s %10s  %s\n", "check", "max_rel_err", "tol", "status");
  for (const auto& it : items) {
    std::printf("%-32s %14.3e %10.1e  %s\n", it.name.c_str(), it.max_rel_err,
                it.tolerance, it.pass ? "ok" : "FAIL");
    all_pass = all_pass && it.pass;
  }
  return all_pass ? 0 : 1;
}

int cmd_bench(const CommonOpts& common, const std::vector<int64_t>& sizes,
              int dim, int channels, int threads, const std::string& out_csv) {
  auto rows = bench_global_aggregation(sizes, dim, channels, threads,
                                       common.seed);
  const std::string csv = bench_csv(rows);
  std::fputs(csv.c_str(), stdout);
  if (!out_csv.empty()) {
    fs::create_directories(fs::path(out_csv).parent_path().empty()
                               ? "."
                               : fs::path(out_csv).parent_path().string());
    std::ofstream f(out_csv);
    if (!f) fail("bench: cannot write " + out_csv);
    f << csv;
  }
  return 0;
}

int cmd_dump_embeddings(const CommonOpts& common, const std::string& checkpoint,
                        const std::string& model_config,
                        const std::string& nodes_path,
                        const std::string& edges_path, bool normalize) {
  Graph g = load_graph(nodes_path, edges_path);
  if (normalize) row_normalize_features(g);
  ModelConfig mc = load_model_config(model_config);
  check(mc.layers[0].in_dim == g.feature_dim(),
        "dump-embeddings: feature width does not match the checkpointed model");
  Model model = Model::init(mc);
  load_checkpoint(model, checkpoint);

  const auto embs = model.head_embeddings(g);
  fs::create_directories(common.out_dir);
  for (size_t a = 0; a < embs.size(); ++a) {
    const Tensor& e = embs[a];
    e.check_finite("dump-embeddings");
    const std::string path =
        common.out_dir + "/embeddings_head" + std::to_string(a) + ".csv";
    std::ofstream f(path);
    if (!f) fail("dump-embeddings: cannot write " + path);
    f << "node,label";
    for (int64_t c = 0; c < e.dim(1); ++c) f << ",e" << c;
    f << '\n';
    char buf[48];
    for (int64_t i = 0; i < e.dim(0); ++i) {
      f << i << ',' << g.labels[size_t(i)];
      for (int64_t c = 0; c < e.dim(1); ++c) {
        std::snprintf(buf, sizeof buf, "%.17g", e.at(i, c));
        f << ',' << buf;
      }
      f << '\n';
    }
    std::printf("dump-embeddings: wrote %s (%lld rows)\n", path.c_str(),
                (long long)e.dim(0));
  }
  return 0;
}

int cmd_calibrate(const CommonOpts& common, const std::vector<int>& dims,
                  int trials, const std::string& out_file) {
  std::string tsv = "# dim\tkappa\tc_d\trel_rmse\tmedian_cosine\n";
  for (int d : dims) {
    auto res = calibrate_lattice(d, trials, common.seed);
    char buf[160];
    std::snprintf(buf, sizeof buf, "%d\t%.4f\t%.4f\t%.4f\t%.4f\n", res.dim,
                  res.kappa, res.cd, res.rel_rmse, res.median_cosine);
    tsv += buf;
    std::printf("calibrate: dim=%d kappa=%.4f c_d=%.4f rel_rmse=%.4f "
                "median_cosine=%.4f\n",
                res.dim, res.kappa, res.cd, res.rel_rmse, res.median_cosine);
  }
  if (!out_file.empty()) {
    std::ofstream f(out_file);
    if (!f) fail("calibrate: cannot write " + out_file);
    f << tsv;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Permutohedral-attention graph networks"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  CommonOpts common;
  app.add_option("--config", common.config_path, "JSON config file");
  app.add_option("--seed", common.seed, "64-bit RNG seed");
  app.add_option("--out", common.out_dir, "output directory");
  app.add_flag("--deterministic", common.deterministic,
               "zero wall-clock fields so outputs are byte-reproducible");

  // train
  auto* train = app.add_subcommand("train", "transductive node classification");
  std::string nodes_path, edges_path, kind = "phgcn";
  int layers = 2, head_dim = 8, heads = 8, embed_dim = 4;
  double lambda_struct = 1.0, lambda_global = 10.0;
  double dropout = 0.6, attn_dropout = 0.6, lr = 0.005;
  int max_iters = 300, patience = 100;
  bool normalize = true, exact_global = false;
  train->add_option("--nodes", nodes_path, "nodes TSV (id, label, features)");
  train->add_option("--edges", edges_path, "edges TSV (src, dst)");
  train->add_option("--kind", kind, "phgcn | gat_eda | gat | gcn");
  train->add_option("--layers", layers, "layer count");
  train->add_option("--head-dim", head_dim, "per-head width F'");
  train->add_option("--heads", heads, "attention heads A");
  train->add_option("--embed-dim", embed_dim, "embedding dimension D");
  train->add_option("--lambda-struct", lambda_struct, "structural decay");
  train->add_option("--lambda-global", lambda_global, "global decay");
  train->add_option("--dropout", dropout, "input feature dropout");
  train->add_option("--attn-dropout", attn_dropout, "attention dropout");
  train->add_option("--lr", lr, "Adam learning rate");
  train->add_option("--max-iters", max_iters, "iteration cap");
  train->add_option("--patience", patience, "early-stop patience");
  train->add_flag("--normalize-features,!--no-normalize-features", normalize,
                  "row-normalize input features");
  bool symmetrize = true;
  train->add_flag("--symmetrize,!--no-symmetrize", symmetrize,
                  "treat edges as undirected (default) or preserve direction");
  train->add_flag("--exact-global", exact_global,
                  "use the O(N^2) exact global pathway instead of the lattice");

  // motif
  auto* motif = app.add_subcommand("motif", "synthetic motif-chain experiment");
  std::string mkind = "phgcn";
  int mlayers = 3, mhead_dim = 8, mheads = 2;
  int iters = 3000, eval_interval = 100, eval_graphs = 100, chain_length = 10;
  double mlr = 0.01;
  motif->add_option("--kind", mkind, "phgcn | gat");
  motif->add_option("--layers", mlayers, "layer count");
  motif->add_option("--head-dim", mhead_dim, "per-head width");
  motif->add_option("--heads", mheads, "attention heads");
  motif->add_option("--iters", iters, "training iterations");
  motif->add_option("--eval-interval", eval_interval, "iterations per eval");
  motif->add_option("--eval-graphs", eval_graphs, "graphs per eval");
  motif->add_option("--chain-length", chain_length, "elements per chain");
  motif->add_option("--lr", mlr, "Adam learning rate");
  double mlambda_struct = 1.0, mlambda_global = 1.0;
  motif->add_option("--lambda-struct", mlambda_struct, "structural decay");
  motif->add_option("--lambda-global", mlambda_global, "global decay");

  // gradcheck
  auto* gradcheck = app.add_subcommand(
      "gradcheck", "finite-difference checks across all modules");
  bool inject_fault = false;
  gradcheck->add_flag("--inject-fault", inject_fault,
                      "corrupt one backward kernel (harness self-test)");

  // bench
  auto* bench = app.add_subcommand("bench", "lattice vs exact scaling timings");
  std::vector<int64_t> sizes = {1000, 2000, 4000};
  int bdim = 4, bchannels = 8, bthreads = 1;
  std::string bench_out;
  bench->add_option("--sizes", sizes, "ascending node counts");
  bench->add_option("--dim", bdim, "embedding dimension");
  bench->add_option("--channels", bchannels, "feature channels F'");
  bench->add_option("--threads", bthreads, "internal parallelism (1 = serial)");
  bench->add_option("--csv", bench_out, "also write the CSV here");

  // dump-embeddings
  auto* dump = app.add_subcommand("dump-embeddings",
                                  "write first-layer embeddings per head");
  std::string checkpoint, model_config, dnodes, dedges;
  bool dnormalize = true;
  dump->add_option("--checkpoint", checkpoint, "checkpoint.bin from train")
      ->required();
  dump->add_option("--model-config", model_config, "model.json from train")
      ->required();
  dump->add_option("--nodes", dnodes, "nodes TSV")->required();
  dump->add_option("--edges", dedges, "edges TSV")->required();
  dump->add_flag("--normalize-features,!--no-normalize-features", dnormalize,
                 "row-normalize input features");

  // calibrate
  auto* calibrate = app.add_subcommand(
      "calibrate", "fit the lattice kernel against the exact filter");
  std::vector<int> cdims = {4};
  int trials = 6;
  std::string calib_out;
  calibrate->add_option("--dims", cdims, "dimensions to calibrate");
  calibrate->add_option("--trials", trials, "clustered instances per fit");
  calibrate->add_option("--tsv", calib_out, "write the calibration table here");

  CLI11_PARSE(app, argc, argv);

  try {
    load_config(common);
    if (common.config.contains("seed") && app.count("--seed") == 0)
      common.seed = common.config["seed"].get<uint64_t>();
    if (common.config.contains("out") && app.count("--out") == 0)
      common.out_dir = common.config["out"].get<std::string>();

    if (train->parsed())
      return cmd_train(common, *train, nodes_path, edges_path, kind, layers,
                       head_dim, heads, embed_dim, lambda_struct, lambda_global,
                       dropout, attn_dropout, lr, max_iters, patience,
                       normalize, exact_global, symmetrize);
    if (motif->parsed())
      return cmd_motif(common, *motif, mkind, mlayers, mhead_dim, mheads, iters,
                       eval_interval, eval_graphs, chain_length, mlr,
                       mlambda_struct, mlambda_global);
    if (gradcheck->parsed()) return cmd_gradcheck(common, inject_fault);
    if (bench->parsed())
      return cmd_bench(common, sizes, bdim, bchannels, bthreads, bench_out);
    if (dump->parsed())
      return cmd_dump_embeddings(common, checkpoint, model_config, dnodes,
                                 dedges, dnormalize);
    if (calibrate->parsed()) return cmd_calibrate(common, cdims, trials, calib_out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
