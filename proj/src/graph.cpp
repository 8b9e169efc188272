#include "phgcn/graph.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace phgcn {

int Graph::num_classes() const {
  int32_t mx = -1;
  for (int32_t l : labels) mx = std::max(mx, l);
  return int(mx + 1);
}

Graph build_graph(int64_t num_nodes,
                  std::span<const std::pair<int32_t, int32_t>> edges,
                  Tensor features, std::vector<int32_t> labels,
                  bool symmetrize) {
  check(num_nodes > 0, "build_graph: need at least one node");
  check(features.dim(0) == num_nodes, "build_graph: feature row mismatch");
  check(int64_t(labels.size()) == num_nodes, "build_graph: label mismatch");

  std::vector<std::pair<int32_t, int32_t>> all;
  all.reserve(edges.size() * 2 + size_t(num_nodes));
  for (auto [s, t] : edges) {
    check(s >= 0 && s < num_nodes && t >= 0 && t < num_nodes,
          "build_graph: edge endpoint out of range");
    all.emplace_back(s, t);
    if (symmetrize) all.emplace_back(t, s);
  }
  for (int32_t i = 0; i < num_nodes; ++i) all.emplace_back(i, i);
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());

  Graph g;
  g.num_nodes = num_nodes;
  g.features = std::move(features);
  g.labels = std::move(labels);
  g.row_offsets.assign(size_t(num_nodes) + 1, 0);
  g.col_indices.reserve(all.size());
  for (auto [s, t] : all) ++g.row_offsets[size_t(s) + 1];
  for (int64_t i = 0; i < num_nodes; ++i)
    g.row_offsets[size_t(i) + 1] += g.row_offsets[size_t(i)];
  for (auto [s, t] : all) g.col_indices.push_back(t);
  g.train_mask.assign(size_t(num_nodes), 0);
  g.val_mask.assign(size_t(num_nodes), 0);
  g.test_mask.assign(size_t(num_nodes), 0);
  return g;
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    const size_t pos = line.find('\t', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

[[noreturn]] void malformed(const std::string& path, int64_t line_no,
                            const char* what) {
  fail(path + ":" + std::to_string(line_no) + ": " + what);
}

double parse_double(const std::string& s, const std::string& path,
                    int64_t line_no) {
  try {
    size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) malformed(path, line_no, "trailing characters");
    return v;
  } catch (const std::exception&) {
    malformed(path, line_no, "expected a number");
  }
}

int64_t parse_int(const std::string& s, const std::string& path,
                  int64_t line_no) {
  int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    malformed(path, line_no, "expected an integer");
  return v;
}

}  // namespace

Graph load_graph(const std::string& nodes_path, const std::string& edges_path,
                 bool symmetrize) {
  std::ifstream nodes(nodes_path);
  check(bool(nodes), "load_graph: cannot open nodes file");

  std::unordered_map<int64_t, int32_t> id_to_idx;
  std::vector<int32_t> labels;
  std::vector<double> feat_values;
  int64_t feat_dim = -1;
  std::string line;
  int64_t line_no = 0;
  while (std::getline(nodes, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto cols = split_tabs(line);
    if (cols.size() < 2) malformed(nodes_path, line_no, "need id and label");
    const int64_t id = parse_int(cols[0], nodes_path, line_no);
    const int64_t label = parse_int(cols[1], nodes_path, line_no);
    if (label < -1) malformed(nodes_path, line_no, "label must be >= -1");
    if (feat_dim < 0) {
      feat_dim = int64_t(cols.size()) - 2;
    } else if (int64_t(cols.size()) - 2 != feat_dim) {
      malformed(nodes_path, line_no, "inconsistent feature count");
    }
    if (!id_to_idx.emplace(id, int32_t(labels.size())).second)
      malformed(nodes_path, line_no, "duplicate node id");
    labels.push_back(int32_t(label));
    for (size_t c = 2; c < cols.size(); ++c)
      feat_values.push_back(parse_double(cols[c], nodes_path, line_no));
  }
  check(!labels.empty(), "load_graph: nodes file is empty");

  const int64_t n = int64_t(labels.size());
  Tensor features =
      Tensor::from_values({n, feat_dim}, std::move(feat_values));

  std::ifstream edges(edges_path);
  check(bool(edges), "load_graph: cannot open edges file");
  std::vector<std::pair<int32_t, int32_t>> edge_list;
  line_no = 0;
  while (std::getline(edges, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto cols = split_tabs(line);
    if (cols.size() != 2) malformed(edges_path, line_no, "need src and dst");
    const int64_t src = parse_int(cols[0], edges_path, line_no);
    const int64_t dst = parse_int(cols[1], edges_path, line_no);
    const auto si = id_to_idx.find(src);
    const auto di = id_to_idx.find(dst);
    if (si == id_to_idx.end() || di == id_to_idx.end())
      malformed(edges_path, line_no, "edge endpoint is not a known node id");
    edge_list.emplace_back(si->second, di->second);
  }

  return build_graph(n, edge_list, std::move(features), std::move(labels),
                     symmetrize);
}

void save_graph(const Graph& g, const std::string& nodes_path,
                const std::string& edges_path) {
  std::ofstream nodes(nodes_path);
  check(bool(nodes), "save_graph: cannot open nodes file for writing");
  const int f = g.feature_dim();
  char buf[64];
  for (int64_t i = 0; i < g.num_nodes; ++i) {
    nodes << i << '\t' << g.labels[size_t(i)];
    for (int c = 0; c < f; ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", g.features.at(i, c));
      nodes << '\t' << buf;
    }
    nodes << '\n';
  }
  std::ofstream edges(edges_path);
  check(bool(edges), "save_graph: cannot open edges file for writing");
  for (int64_t i = 0; i < g.num_nodes; ++i) {
    for (int32_t j : g.neighbors(i)) {
      if (j == i) continue;  // self-loops are re-added on load
      edges << i << '\t' << j << '\n';
    }
  }
}

void split_nodes(Graph& g, uint64_t seed) {
  const int classes = g.num_classes();
  check(classes >= 2, "split_nodes: need at least two classes");
  g.train_mask.assign(size_t(g.num_nodes), 0);
  g.val_mask.assign(size_t(g.num_nodes), 0);
  g.test_mask.assign(size_t(g.num_nodes), 0);
  Rng rng(seed);
  for (int c = 0; c < classes; ++c) {
    std::vector<int64_t> idx;
    for (int64_t i = 0; i < g.num_nodes; ++i)
      if (g.labels[size_t(i)] == c) idx.push_back(i);
    check(idx.size() >= 5, "split_nodes: class has fewer than 5 labeled nodes");
    // Fisher-Yates with the explicit stream.
    for (size_t i = idx.size(); i > 1; --i)
      std::swap(idx[i - 1], idx[size_t(rng.uniform_int(int64_t(i)))]);
    const int64_t n = int64_t(idx.size());
    const int64_t n_test = int64_t(std::floor(0.2 * double(n)));
    const int64_t n_val = int64_t(std::floor(0.2 * double(n)));
    const int64_t n_train = n - n_test - n_val;  // train takes the remainder
    for (int64_t i = 0; i < n; ++i) {
      if (i < n_train)
        g.train_mask[size_t(idx[size_t(i)])] = 1;
      else if (i < n_train + n_test)
        g.test_mask[size_t(idx[size_t(i)])] = 1;
      else
        g.val_mask[size_t(idx[size_t(i)])] = 1;
    }
  }
}

MotifSpec MotifSpec::standard() {
  // Non-isomorphic cycles whose red node sits three hops from the bridge
  // port, so a 3-layer receptive field stays inside one element: the global
  // motif-count signal is not recoverable from any local neighborhood.
  MotifSpec spec;
  // 6-cycle: red node 0 plus five filler nodes.
  spec.motif1.num_nodes = 6;
  spec.motif1.edges = {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}, {5, 0}};
  spec.motif1.red_node = 0;
  spec.motif1.port_node = 3;
  // 7-cycle: red node 0 plus six filler nodes.
  spec.motif2.num_nodes = 7;
  spec.motif2.edges = {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}, {5, 6}, {6, 0}};
  spec.motif2.red_node = 0;
  spec.motif2.port_node = 3;
  spec.feature_dim = 4;
  return spec;
}

Graph gen_motif_chain(const MotifSpec& spec, int length, Rng& rng) {
  return gen_motif_chain(spec, length, rng, nullptr);
}

Graph gen_motif_chain(const MotifSpec& spec, int length, Rng& rng,
                      MotifChainInfo* info) {
  check(length >= 2, "gen_motif_chain: length must be >= 2");
  check(spec.motif1.num_nodes >= 1 && spec.motif2.num_nodes >= 1,
        "gen_motif_chain: empty motif");
  check(spec.feature_dim >= 4, "gen_motif_chain: need >= 4 feature dims");

  for (int attempt = 0; attempt < 1000; ++attempt) {
    std::vector<int> elements(size_t(length), 0);
    int c1 = 0, c2 = 0;
    for (auto& e : elements) {
      e = int(rng.uniform_int(3));  // 0 = motif1, 1 = motif2, 2 = spacer
      if (e == 0) ++c1;
      if (e == 1) ++c2;
    }
    if (c1 == c2) continue;  // tie (or no motifs at all): resample
    const int dominant = c1 > c2 ? 0 : 1;

    std::vector<std::pair<int32_t, int32_t>> edges;
    std::vector<int32_t> labels;
    std::vector<double> feats;
    std::vector<int32_t> ports;
    MotifChainInfo local_info;
    // Roles: 0 red, 1 motif1 filler, 2 motif2 filler, 3 spacer.
    auto add_node = [&](int role, int32_t label) {
      const int32_t id = int32_t(labels.size());
      labels.push_back(label);
      for (int c = 0; c < spec.feature_dim; ++c)
        feats.push_back(c == role ? 1.0 : 0.0);
      return id;
    };

    for (int e = 0; e < length; ++e) {
      int32_t port = -1;
      if (elements[size_t(e)] == 2) {
        port = add_node(3, -1);
      } else {
        const MotifTopology& topo =
            elements[size_t(e)] == 0 ? spec.motif1 : spec.motif2;
        const int filler_role = elements[size_t(e)] == 0 ? 1 : 2;
        const int32_t label =
            elements[size_t(e)] == dominant ? 1 : 0;
        const int32_t base = int32_t(labels.size());
        for (int v = 0; v < topo.num_nodes; ++v) {
          if (v == topo.red_node) {
            const int32_t red = add_node(0, label);
            auto& reds = elements[size_t(e)] == 0
                             ? local_info.red_nodes_motif1
                             : local_info.red_nodes_motif2;
            reds.push_back(red);
          } else {
            add_node(filler_role, -1);
          }
        }
        for (auto [u, v] : topo.edges)
          edges.emplace_back(base + u, base + v);
        port = base + topo.port_node;
      }
      ports.push_back(port);
      if (e > 0) edges.emplace_back(ports[size_t(e - 1)], port);
    }
    local_info.motif1_count = c1;
    local_info.motif2_count = c2;

    const int64_t n = int64_t(labels.size());
    Tensor features = Tensor::from_values({n, spec.feature_dim}, std::move(feats));
    Graph g = build_graph(n, edges, std::move(features), std::move(labels),
                          /*symmetrize=*/true);
    for (int64_t i = 0; i < n; ++i)
      g.train_mask[size_t(i)] = g.labels[size_t(i)] >= 0 ? 1 : 0;
    if (info) *info = std::move(local_info);
    return g;
  }
  fail("gen_motif_chain: exceeded 1000 resampling attempts");
}

void row_normalize_features(Graph& g) {
  const int64_t n = g.num_nodes;
  const int f = g.feature_dim();
  for (int64_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (int c = 0; c < f; ++c) s += g.features.at(i, c);
    if (s == 0.0) continue;
    for (int c = 0; c < f; ++c) g.features.at(i, c) /= s;
  }
}

}  // namespace phgcn
