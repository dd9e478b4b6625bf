#pragma once

// Directed k-nearest-neighbour scene graph over proposals and the triplet
// message-passing layer that updates its node and edge features.
//
// Several scenes can share one graph: node indices are global and edges
// never cross scene boundaries, so a batch is a disjoint union.

#include "sgvlp/geometry.hpp"
#include "sgvlp/log.hpp"
#include "sgvlp/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sgvlp {

enum class GraphLayerMode { kGcn, kEdgeConv };

inline const char* to_string(GraphLayerMode m) {
  return m == GraphLayerMode::kGcn ? "gcn" : "edge_conv";
}

inline GraphLayerMode parse_graph_layer_mode(const std::string& s) {
  if (s == "gcn") return GraphLayerMode::kGcn;
  if (s == "edge_conv") return GraphLayerMode::kEdgeConv;
  throw std::invalid_argument("unknown graph_layer_mode: " + s);
}

struct Edge {
  int subject;
  int object;
  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Relative geometry of an edge: center offset (3), center distance (1),
/// size ratio (3), log-volume ratio (1).
inline constexpr int kEdgeGeometryDim = 8;

/// Edges i -> j for the n1 nearest j by center distance, ties to the lower
/// index. Indices are offset by `first`. n1 >= m is clamped to m - 1.
inline std::vector<Edge> knn_edges(const std::vector<Aabb>& boxes, int n1, int first = 0) {
  const int m = static_cast<int>(boxes.size());
  if (m < 2) throw std::invalid_argument("build_graph: need at least 2 proposals");
  if (n1 < 1) throw std::invalid_argument("build_graph: n1 must be positive");
  if (n1 >= m) {
    warn("build_graph: n1=" + std::to_string(n1) + " >= M=" + std::to_string(m) +
         ", clamped to " + std::to_string(m - 1));
    n1 = m - 1;
  }
  std::vector<Edge> edges;
  edges.reserve(static_cast<std::size_t>(m * n1));
  std::vector<std::pair<double, int>> order;
  for (int i = 0; i < m; ++i) {
    order.clear();
    for (int j = 0; j < m; ++j) {
      if (j != i) order.emplace_back(center_distance(boxes[i], boxes[j]), j);
    }
    std::sort(order.begin(), order.end());
    for (int k = 0; k < n1; ++k) edges.push_back({first + i, first + order[k].second});
  }
  return edges;
}

template <class T>
Matrix<T> edge_geometry(const std::vector<Aabb>& boxes, const std::vector<Edge>& edges) {
  Matrix<T> g(static_cast<Eigen::Index>(edges.size()), kEdgeGeometryDim);
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const Aabb& s = boxes[edges[e].subject];
    const Aabb& o = boxes[edges[e].object];
    for (int a = 0; a < 3; ++a) g(e, a) = static_cast<T>(o.center[a] - s.center[a]);
    g(e, 3) = static_cast<T>(center_distance(s, o));
    for (int a = 0; a < 3; ++a) g(e, 4 + a) = static_cast<T>(o.size[a] / s.size[a]);
    g(e, 7) = static_cast<T>(std::log(o.volume() / s.volume()));
  }
  return g;
}

template <class T>
struct SceneGraphState {
  Var<T> nodes;  // N x C
  std::vector<Edge> edges;
  Var<T> edge_feats;  // E x C
  int layer_index = 0;
};

/// Per-node count of incident edge contributions (out-degree + in-degree).
inline std::vector<int> incident_counts(int num_nodes, const std::vector<Edge>& edges) {
  std::vector<int> n(static_cast<std::size_t>(num_nodes), 0);
  for (const auto& e : edges) {
    ++n[e.subject];
    ++n[e.object];
  }
  return n;
}

/// One triplet message-passing layer. g1 maps each (subject, edge, object)
/// triplet (plus the node feature difference in edge_conv mode) to
/// (psi_subject, new edge feature, psi_object); g2 maps the mean incident
/// message of each node to a residual update.
template <class T>
class GraphLayer {
 public:
  GraphLayer() = default;
  GraphLayer(ParamStore<T>& store, const std::string& name, int hidden, GraphLayerMode mode)
      : hidden_(hidden), mode_(mode) {
    const int in = (mode == GraphLayerMode::kEdgeConv ? 4 : 3) * hidden;
    g1_ = Mlp<T>(store, name + ".g1", ParamGroup::kGraph, {in, hidden, 3 * hidden});
    g2_ = Mlp<T>(store, name + ".g2", ParamGroup::kGraph, {hidden, hidden, hidden});
  }

  SceneGraphState<T> operator()(const SceneGraphState<T>& in) const {
    const int C = hidden_;
    const auto n = static_cast<int>(in.nodes.rows());
    const auto E = static_cast<int>(in.edges.size());
    std::vector<int> subj_idx, obj_idx;
    subj_idx.reserve(in.edges.size());
    obj_idx.reserve(in.edges.size());
    for (const auto& e : in.edges) {
      subj_idx.push_back(e.subject);
      obj_idx.push_back(e.object);
    }
    const auto counts = incident_counts(n, in.edges);
    for (int i = 0; i < n; ++i) {
      if (counts[i] == 0) throw std::invalid_argument("graph_layer: isolated node " + std::to_string(i));
    }
    Var<T> subj = ad::gather_rows(in.nodes, subj_idx);
    Var<T> obj = ad::gather_rows(in.nodes, obj_idx);
    std::vector<Var<T>> parts{subj, in.edge_feats, obj};
    if (mode_ == GraphLayerMode::kEdgeConv) parts.push_back(ad::sub(obj, subj));
    Var<T> msg = g1_(ad::concat_cols(parts));  // E x 3C
    Var<T> psi_subject = ad::slice_cols(msg, 0, C);
    Var<T> new_edges = ad::slice_cols(msg, C, C);
    Var<T> psi_object = ad::slice_cols(msg, 2 * C, C);

    std::vector<ad::RowTerm<T>> terms;
    terms.reserve(2 * in.edges.size());
    for (int e = 0; e < E; ++e) {
      const int i = in.edges[e].subject;
      const int j = in.edges[e].object;
      terms.push_back({i, e, T(1) / static_cast<T>(counts[i])});
      terms.push_back({j, E + e, T(1) / static_cast<T>(counts[j])});
    }
    Var<T> aggregated = ad::combine_rows(ad::concat_rows<T>({psi_subject, psi_object}), terms, n);

    SceneGraphState<T> out;
    out.nodes = ad::add(in.nodes, g2_(aggregated));
    out.edges = in.edges;
    out.edge_feats = new_edges;
    out.layer_index = in.layer_index + 1;
    return out;
  }

  GraphLayerMode mode() const { return mode_; }
  const Mlp<T>& g1() const { return g1_; }
  const Mlp<T>& g2() const { return g2_; }

 private:
  int hidden_ = 0;
  GraphLayerMode mode_ = GraphLayerMode::kEdgeConv;
  Mlp<T> g1_, g2_;
};

struct SceneGraphConfig {
  int hidden = 256;
  int n1_neighbors = 8;
  int n_layers = 3;
  GraphLayerMode mode = GraphLayerMode::kEdgeConv;
};

/// Edge-feature initializer plus the stack of graph layers.
template <class T>
class SceneGraphNetwork {
 public:
  SceneGraphNetwork() = default;
  SceneGraphNetwork(ParamStore<T>& store, const std::string& name, const SceneGraphConfig& cfg)
      : cfg_(cfg) {
    if (cfg.n_layers < 1) throw std::invalid_argument("scene graph needs at least one layer");
    edge_init_ = Mlp<T>(store, name + ".edge_init", ParamGroup::kGraph,
                        {kEdgeGeometryDim, cfg.hidden, cfg.hidden});
    for (int l = 0; l < cfg.n_layers; ++l) {
      layers_.emplace_back(store, name + ".layer" + std::to_string(l), cfg.hidden, cfg.mode);
    }
  }

  /// Initial state: nodes = proposal features, edges from the kNN topology,
  /// edge features from relative geometry. `boxes` are indexed globally.
  SceneGraphState<T> build(const Var<T>& node_feats, const std::vector<Aabb>& boxes,
                           std::vector<Edge> edges) const {
    SceneGraphState<T> s;
    s.nodes = node_feats;
    s.edge_feats = edge_init_(Var<T>(edge_geometry<T>(boxes, edges)));
    s.edges = std::move(edges);
    return s;
  }

  SceneGraphState<T> forward(SceneGraphState<T> state) const {
    for (const auto& layer : layers_) state = layer(state);
    return state;
  }

  const std::vector<GraphLayer<T>>& layers() const { return layers_; }
  const SceneGraphConfig& config() const { return cfg_; }

 private:
  SceneGraphConfig cfg_;
  Mlp<T> edge_init_;
  std::vector<GraphLayer<T>> layers_;
};

/// Masked mean of node features per scene. `segments[s]` is the node range
/// of scene s; only nodes with mask[i] set contribute. Returns S x C.
template <class T>
Var<T> graph_pool(const Var<T>& nodes, const std::vector<bool>& mask,
                  const std::vector<std::pair<int, int>>& segments) {
  if (static_cast<Eigen::Index>(mask.size()) != nodes.rows()) {
    throw std::invalid_argument("graph_pool: mask length");
  }
  std::vector<ad::RowTerm<T>> terms;
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const auto [begin, end] = segments[s];
    int count = 0;
    for (int i = begin; i < end; ++i) count += mask[i] ? 1 : 0;
    if (count == 0) throw std::invalid_argument("graph_pool: every node masked in scene " + std::to_string(s));
    for (int i = begin; i < end; ++i) {
      if (mask[i]) terms.push_back({static_cast<int>(s), i, T(1) / static_cast<T>(count)});
    }
  }
  return ad::combine_rows(nodes, terms, static_cast<Eigen::Index>(segments.size()));
}

}  // namespace sgvlp
