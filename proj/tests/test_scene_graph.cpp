#include "sgvlp/scene_graph.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

namespace {

using namespace sgvlp;
using sgvlp::testing::gradcheck;
using sgvlp::testing::random_matrix;

Aabb box_at(double x, double y = 0, double z = 0) {
  Aabb b;
  b.center = {x, y, z};
  b.size = {0.5, 0.5, 0.5};
  return b;
}

std::vector<Aabb> random_boxes(int m, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> c(-3, 3), s(0.2, 1.5);
  std::vector<Aabb> out(static_cast<std::size_t>(m));
  for (auto& b : out) {
    for (int a = 0; a < 3; ++a) {
      b.center[a] = c(rng);
      b.size[a] = s(rng);
    }
  }
  return out;
}

std::vector<int> random_perm(int n, std::mt19937_64& rng) {
  std::vector<int> p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), 0);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

double max_abs(const Matrix<double>& a, const Matrix<double>& b) { return (a - b).cwiseAbs().maxCoeff(); }

SceneGraphState<double> raw_state(const Matrix<double>& nodes, const Matrix<double>& edge_feats,
                                  std::vector<Edge> edges) {
  SceneGraphState<double> s;
  s.nodes = Var<double>(nodes);
  s.edge_feats = Var<double>(edge_feats);
  s.edges = std::move(edges);
  return s;
}

TEST(KnnEdges, CollinearCenters) {
  const auto edges = knn_edges({box_at(0), box_at(1), box_at(5)}, 1);
  EXPECT_EQ(edges, (std::vector<Edge>{{0, 1}, {1, 0}, {2, 1}}));
}

TEST(KnnEdges, FullNeighbourhoodIsComplete) {
  std::mt19937_64 rng(1);
  const auto boxes = random_boxes(6, rng);
  const auto edges = knn_edges(boxes, 5);
  EXPECT_EQ(edges.size(), 30u);
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 6; ++j) {
      if (i == j) continue;
      EXPECT_NE(std::find(edges.begin(), edges.end(), Edge{i, j}), edges.end());
    }
  }
}

TEST(KnnEdges, OversizedNeighbourhoodWarnsAndClamps) {
  std::vector<std::string> warnings;
  ScopedWarningSink sink([&](const std::string& m) { warnings.push_back(m); });
  const auto edges = knn_edges({box_at(0), box_at(1), box_at(2)}, 8);
  EXPECT_EQ(edges.size(), 6u);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("clamped"), std::string::npos);
}

TEST(KnnEdges, OffsetAndOutDegree) {
  std::mt19937_64 rng(2);
  const auto edges = knn_edges(random_boxes(10, rng), 3, 20);
  EXPECT_EQ(edges.size(), 30u);
  for (const auto& e : edges) {
    EXPECT_GE(e.subject, 20);
    EXPECT_LT(e.object, 30);
    EXPECT_NE(e.subject, e.object);
  }
}

TEST(KnnEdges, PermutedBoxesGiveIsomorphicGraph) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const int m = 3 + trial % 8;
    const auto boxes = random_boxes(m, rng);
    const auto perm = random_perm(m, rng);  // new index k holds old perm[k]
    std::vector<Aabb> shuffled;
    for (int k : perm) shuffled.push_back(boxes[k]);
    const int n1 = std::min(4, m - 1);
    auto a = knn_edges(boxes, n1);
    std::vector<Edge> mapped;
    for (const auto& e : knn_edges(shuffled, n1)) mapped.push_back({perm[e.subject], perm[e.object]});
    auto key = [](const Edge& x, const Edge& y) {
      return std::pair(x.subject, x.object) < std::pair(y.subject, y.object);
    };
    std::sort(a.begin(), a.end(), key);
    std::sort(mapped.begin(), mapped.end(), key);
    ASSERT_EQ(a, mapped);
  }
}

TEST(SceneGraph, DefaultsToThreeLayers) {
  ParamStore<double> store(1);
  SceneGraphNetwork<double> net(store, "g", SceneGraphConfig{});
  EXPECT_EQ(net.layers().size(), 3u);
  EXPECT_EQ(net.layers()[0].mode(), GraphLayerMode::kEdgeConv);
}

TEST(GraphLayer, ZeroOutputLayerIsIdentityOnNodes) {
  std::mt19937_64 rng(4);
  for (auto mode : {GraphLayerMode::kGcn, GraphLayerMode::kEdgeConv}) {
    for (int trial = 0; trial < 200; ++trial) {
      ParamStore<double> store(trial);
      GraphLayer<double> layer(store, "l", 4, mode);
      Var<double> w = layer.g2().last().weight();
      Var<double> b = layer.g2().last().bias();
      w.mutable_value().setZero();
      b.mutable_value().setZero();
      const int m = 2 + trial % 7;
      const auto edges = knn_edges(random_boxes(m, rng), std::min(3, m - 1));
      const Matrix<double> nodes = random_matrix<double>(m, 4, rng);
      const auto out = layer(raw_state(nodes, random_matrix<double>(edges.size(), 4, rng), edges));
      ASSERT_EQ(out.nodes.value(), nodes);
    }
  }
}

TEST(GraphLayer, MatchesLoopOracle) {
  std::mt19937_64 rng(5);
  for (auto mode : {GraphLayerMode::kGcn, GraphLayerMode::kEdgeConv}) {
    for (int trial = 0; trial < 100; ++trial) {
      ParamStore<double> store(100 + trial);
      GraphLayer<double> layer(store, "l", 5, mode);
      const int m = 2 + trial % 7;
      const auto edges = knn_edges(random_boxes(m, rng), 1 + trial % std::max(1, m - 1));
      const Matrix<double> nodes = random_matrix<double>(m, 5, rng);
      const Matrix<double> ef = random_matrix<double>(edges.size(), 5, rng);
      const auto out = layer(raw_state(nodes, ef, edges));
      const auto ref = oracle::graph_layer(layer, oracle::to_rows(nodes), oracle::to_rows(ef), edges);
      for (int i = 0; i < m; ++i) {
        for (int c = 0; c < 5; ++c) ASSERT_NEAR(out.nodes.value()(i, c), ref[i][c], 1e-5);
      }
    }
  }
}

TEST(GraphLayer, PermutationEquivariant) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    const auto mode = trial % 2 ? GraphLayerMode::kGcn : GraphLayerMode::kEdgeConv;
    ParamStore<double> store(trial);
    GraphLayer<double> layer(store, "l", 4, mode);
    const int m = 3 + trial % 6;
    const auto edges = knn_edges(random_boxes(m, rng), 2);
    const Matrix<double> nodes = random_matrix<double>(m, 4, rng);
    const Matrix<double> ef = random_matrix<double>(edges.size(), 4, rng);
    const auto perm = random_perm(m, rng);  // new node k is old perm[k]
    std::vector<int> inverse(static_cast<std::size_t>(m));
    for (int k = 0; k < m; ++k) inverse[perm[k]] = k;
    Matrix<double> pnodes(m, 4);
    for (int k = 0; k < m; ++k) pnodes.row(k) = nodes.row(perm[k]);
    const auto eperm = random_perm(static_cast<int>(edges.size()), rng);
    std::vector<Edge> pedges;
    Matrix<double> pef(ef.rows(), 4);
    for (std::size_t k = 0; k < eperm.size(); ++k) {
      const Edge& e = edges[eperm[k]];
      pedges.push_back({inverse[e.subject], inverse[e.object]});
      pef.row(k) = ef.row(eperm[k]);
    }
    const auto a = layer(raw_state(nodes, ef, edges));
    const auto b = layer(raw_state(pnodes, pef, pedges));
    for (int k = 0; k < m; ++k) {
      ASSERT_LT((b.nodes.value().row(k) - a.nodes.value().row(perm[k])).cwiseAbs().maxCoeff(), 1e-12);
    }
    for (std::size_t k = 0; k < eperm.size(); ++k) {
      ASSERT_LT((b.edge_feats.value().row(k) - a.edge_feats.value().row(eperm[k])).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(GraphLayer, IsolatedNodeRejected) {
  ParamStore<double> store(1);
  GraphLayer<double> layer(store, "l", 3, GraphLayerMode::kGcn);
  std::mt19937_64 rng(1);
  const std::vector<Edge> edges{{0, 1}, {1, 0}};
  EXPECT_THROW(layer(raw_state(random_matrix<double>(3, 3, rng), random_matrix<double>(2, 3, rng), edges)),
               std::invalid_argument);
}

TEST(GraphLayer, GradcheckBothModes) {
  for (auto mode : {GraphLayerMode::kGcn, GraphLayerMode::kEdgeConv}) {
    const auto r = gradcheck([mode]<class T>(ParamStore<T>& s) {
      std::mt19937_64 rng(7);
      const auto boxes = random_boxes(6, rng);
      SceneGraphNetwork<T> net(s, "g", {4, 3, 2, mode});
      auto x = s.add_uniform("x", ParamGroup::kGraph, 6, 4, 1.0);
      const auto edges = knn_edges(boxes, 3);
      return [=] {
        const auto out = net.forward(net.build(x, boxes, edges));
        return ad::concat_rows<T>({out.nodes, out.edge_feats});
      };
    });
    EXPECT_LT(r.rel_double, 1e-6) << to_string(mode) << " " << r.worst_param;
    EXPECT_LT(r.rel_float, 1e-3) << to_string(mode) << " " << r.worst_param;
  }
}

TEST(GraphPool, MaskedMeanPerScene) {
  Matrix<double> n(5, 2);
  n << 1, 2, 3, 4, 5, 6, 10, 10, 20, 30;
  const auto all = graph_pool(Var<double>(n), {true, true, true, true, true}, {{0, 3}, {3, 5}}).value();
  EXPECT_DOUBLE_EQ(all(0, 0), 3);
  EXPECT_DOUBLE_EQ(all(0, 1), 4);
  EXPECT_DOUBLE_EQ(all(1, 0), 15);
  EXPECT_DOUBLE_EQ(all(1, 1), 20);
  const auto some = graph_pool(Var<double>(n), {false, true, true, false, true}, {{0, 3}, {3, 5}}).value();
  EXPECT_DOUBLE_EQ(some(0, 0), 4);
  EXPECT_DOUBLE_EQ(some(1, 1), 30);
}

TEST(GraphPool, PermutationInvariant) {
  std::mt19937_64 rng(8);
  std::bernoulli_distribution keep(0.7);
  for (int trial = 0; trial < 200; ++trial) {
    const int m = 2 + trial % 9;
    const Matrix<double> n = random_matrix<double>(m, 3, rng);
    std::vector<bool> mask(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) mask[i] = keep(rng);
    mask[trial % m] = true;
    const auto perm = random_perm(m, rng);
    Matrix<double> pn(m, 3);
    std::vector<bool> pmask(static_cast<std::size_t>(m));
    for (int k = 0; k < m; ++k) {
      pn.row(k) = n.row(perm[k]);
      pmask[k] = mask[perm[k]];
    }
    const auto a = graph_pool(Var<double>(n), mask, {{0, m}}).value();
    const auto b = graph_pool(Var<double>(pn), pmask, {{0, m}}).value();
    ASSERT_LT(max_abs(a, b), 1e-12);
  }
}

TEST(GraphPool, AllMaskedRejected) {
  EXPECT_THROW(graph_pool(Var<double>(Matrix<double>::Ones(2, 2)), {false, false}, {{0, 2}}),
               std::invalid_argument);
}

}  // namespace
