#pragma once

// Plain-loop reference implementations. They read the same parameters as the
// library but share none of its code paths: no autograd, no Eigen products,
// one scalar at a time.

#include "sgvlp/geometry.hpp"
#include "sgvlp/nn.hpp"
#include "sgvlp/proposals.hpp"
#include "sgvlp/scene_graph.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

namespace sgvlp::oracle {

using Rows = std::vector<std::vector<double>>;

template <class T>
Rows to_rows(const Matrix<T>& m) {
  Rows r(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) r[i][j] = static_cast<double>(m(i, j));
  }
  return r;
}

template <class T>
std::vector<double> linear(const Linear<T>& l, const std::vector<double>& x) {
  const auto& w = l.weight().value();
  const auto& b = l.bias().value();
  std::vector<double> y(static_cast<std::size_t>(w.cols()));
  for (Eigen::Index o = 0; o < w.cols(); ++o) {
    double s = static_cast<double>(b(0, o));
    for (Eigen::Index i = 0; i < w.rows(); ++i) s += x[i] * static_cast<double>(w(i, o));
    y[o] = s;
  }
  return y;
}

template <class T>
std::vector<double> mlp(const Mlp<T>& m, std::vector<double> x) {
  const auto& layers = m.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = linear(layers[i], x);
    if (i + 1 < layers.size()) {
      for (double& v : x) v = v > 0 ? v : 0;
    }
  }
  return x;
}

/// Per-edge loop over one triplet message-passing layer.
template <class T>
Rows graph_layer(const GraphLayer<T>& layer, const Rows& nodes, const Rows& edge_feats,
                 const std::vector<Edge>& edges) {
  const std::size_t n = nodes.size();
  const std::size_t C = nodes[0].size();
  Rows sum(n, std::vector<double>(C, 0.0));
  std::vector<int> count(n, 0);
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto& s = nodes[edges[e].subject];
    const auto& o = nodes[edges[e].object];
    std::vector<double> in;
    in.insert(in.end(), s.begin(), s.end());
    in.insert(in.end(), edge_feats[e].begin(), edge_feats[e].end());
    in.insert(in.end(), o.begin(), o.end());
    if (layer.mode() == GraphLayerMode::kEdgeConv) {
      for (std::size_t c = 0; c < C; ++c) in.push_back(o[c] - s[c]);
    }
    const auto out = mlp(layer.g1(), in);
    for (std::size_t c = 0; c < C; ++c) {
      sum[edges[e].subject][c] += out[c];
      sum[edges[e].object][c] += out[2 * C + c];
    }
    ++count[edges[e].subject];
    ++count[edges[e].object];
  }
  Rows result(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> mean(C);
    for (std::size_t c = 0; c < C; ++c) mean[c] = sum[i][c] / count[i];
    const auto upd = mlp(layer.g2(), mean);
    result[i].resize(C);
    for (std::size_t c = 0; c < C; ++c) result[i][c] = nodes[i][c] + upd[c];
  }
  return result;
}

inline double clamp_logit(double x) { return std::clamp(x, -30.0, 30.0); }

inline double log_softmax_at(const std::vector<double>& row, int k) {
  double mx = -1e300;
  for (double v : row) mx = std::max(mx, clamp_logit(v));
  double s = 0;
  for (double v : row) s += std::exp(clamp_logit(v) - mx);
  return clamp_logit(row[k]) - mx - std::log(s);
}

/// Mean cross-entropy over rows with target >= 0.
inline double cross_entropy(const Rows& logits, const std::vector<int>& targets) {
  double total = 0;
  int n = 0;
  for (std::size_t r = 0; r < logits.size(); ++r) {
    if (targets[r] < 0) continue;
    total -= log_softmax_at(logits[r], targets[r]);
    ++n;
  }
  return n ? total / n : 0.0;
}

inline double norm(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i] * b[i];
  return d / (std::max(norm(a), 1e-12) * std::max(norm(b), 1e-12));
}

/// Triple loop over (item, object, word) of the word-object BCE.
inline double word_object_loss(const Rows& objects, const Rows& words, const Rows& target, const Rows& valid,
                               int batch, int m, int max_len) {
  double total = 0;
  int n = 0;
  for (int b = 0; b < batch; ++b) {
    for (int j = 0; j < m; ++j) {
      for (int k = 0; k < max_len; ++k) {
        if (valid[b * m + j][k] == 0) continue;
        const double x = clamp_logit(cosine(objects[b * m + j], words[b * max_len + k]));
        const double s = target[b * m + j][k];
        const double p = 1.0 / (1.0 + std::exp(-x));
        total -= s * std::log(p) + (1 - s) * std::log(1 - p);
        ++n;
      }
    }
  }
  return n ? total / n : 0.0;
}

inline double info_nce(const Rows& a, const Rows& b, double tau) {
  const std::size_t B = a.size();
  double total = 0;
  for (std::size_t i = 0; i < B; ++i) {
    std::vector<double> row(B);
    for (std::size_t j = 0; j < B; ++j) row[j] = cosine(a[i], b[j]) / tau;
    total -= log_softmax_at(row, static_cast<int>(i));
  }
  return total / static_cast<double>(B);
}

struct DetectionTerms {
  double objectness, box, semantic;
};

inline DetectionTerms detection_loss(const std::vector<const Proposal*>& ps, const Rows& obj, const Rows& res,
                                     const Rows& sem) {
  DetectionTerms t{0, 0, 0};
  int matched = 0;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    t.objectness -= log_softmax_at(obj[i], ps[i]->objectness_target);
    if (!ps[i]->matched_gt_id) continue;
    ++matched;
    for (int k = 0; k < 6; ++k) t.box += std::abs(res[i][k] - ps[i]->box_residual[k]);
    t.semantic -= log_softmax_at(sem[i], ps[i]->semantic_target);
  }
  t.objectness /= static_cast<double>(ps.size());
  if (matched) {
    t.box /= 6.0 * matched;
    t.semantic /= matched;
  }
  return t;
}

// ---------------------------------------------------------------------------
// Geometry and metrics

/// Volume of a box intersection by uniform sampling of the union's bounding
/// box.
inline double monte_carlo_iou(const Aabb& a, const Aabb& b, int samples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double lo[3], hi[3];
  for (int ax = 0; ax < 3; ++ax) {
    lo[ax] = std::min(a.min(ax), b.min(ax));
    hi[ax] = std::max(a.max(ax), b.max(ax));
  }
  auto inside = [](const Aabb& box, const double* p) {
    for (int ax = 0; ax < 3; ++ax) {
      if (p[ax] < box.min(ax) || p[ax] > box.max(ax)) return false;
    }
    return true;
  };
  std::uniform_real_distribution<double> u(0.0, 1.0);
  long inter = 0, uni = 0;
  for (int s = 0; s < samples; ++s) {
    double p[3];
    for (int ax = 0; ax < 3; ++ax) p[ax] = lo[ax] + (hi[ax] - lo[ax]) * u(rng);
    const bool ia = inside(a, p), ib = inside(b, p);
    inter += ia && ib;
    uni += ia || ib;
  }
  return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

/// Overlap product over axes, written out per axis.
inline double iou(const Aabb& a, const Aabb& b) {
  double inter = 1;
  for (int ax = 0; ax < 3; ++ax) {
    const double w = std::min(a.max(ax), b.max(ax)) - std::max(a.min(ax), b.min(ax));
    if (w <= 0) return 0;
    inter *= w;
  }
  const double va = a.size[0] * a.size[1] * a.size[2];
  const double vb = b.size[0] * b.size[1] * b.size[2];
  return inter / (va + vb - inter);
}

inline double acc(const std::vector<Aabb>& p, const std::vector<Aabb>& g, double k) {
  if (p.empty()) return 0;
  int hits = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (iou(p[i], g[i]) >= k) ++hits;
  }
  return static_cast<double>(hits) / p.size();
}

inline double em(const std::vector<std::vector<std::string>>& ranked, const std::vector<std::string>& gt, int k) {
  if (gt.empty()) return 0;
  int hits = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    for (int j = 0; j < k && j < static_cast<int>(ranked[i].size()); ++j) {
      if (ranked[i][j] == gt[i]) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / gt.size();
}

inline std::unordered_map<std::string, int> ngrams(const std::vector<std::string>& s, int n) {
  std::unordered_map<std::string, int> out;
  for (int i = 0; i + n <= static_cast<int>(s.size()); ++i) {
    std::string key;
    for (int j = 0; j < n; ++j) key += s[i + j] + '\x1f';
    ++out[key];
  }
  return out;
}

inline double bleu4(const std::vector<std::string>& c, const std::vector<std::string>& r) {
  double logp = 0;
  for (int n = 1; n <= 4; ++n) {
    const auto cn = ngrams(c, n);
    const auto rn = ngrams(r, n);
    int match = 0, total = 0;
    for (const auto& [g, k] : cn) {
      total += k;
      auto it = rn.find(g);
      if (it != rn.end()) match += std::min(k, it->second);
    }
    if (match == 0 || total == 0) return 0;
    logp += 0.25 * std::log(static_cast<double>(match) / total);
  }
  const double cl = static_cast<double>(c.size()), rl = static_cast<double>(r.size());
  const double bp = cl > rl ? 1.0 : std::exp(1.0 - rl / cl);
  return bp * std::exp(logp);
}

inline double rouge_l(const std::vector<std::string>& c, const std::vector<std::string>& r) {
  if (c.empty() || r.empty()) return 0;
  std::vector<std::vector<int>> dp(c.size() + 1, std::vector<int>(r.size() + 1, 0));
  for (std::size_t i = 0; i < c.size(); ++i) {
    for (std::size_t j = 0; j < r.size(); ++j) {
      dp[i + 1][j + 1] = c[i] == r[j] ? dp[i][j] + 1 : std::max(dp[i][j + 1], dp[i + 1][j]);
    }
  }
  const double lcs = dp[c.size()][r.size()];
  if (lcs == 0) return 0;
  const double p = lcs / c.size(), rc = lcs / r.size();
  const double b2 = 1.2;
  return (1 + b2) * p * rc / (rc + b2 * p);
}

inline double m_at_kiou(const std::vector<std::vector<std::string>>& caps,
                        const std::vector<std::vector<std::string>>& refs, const std::vector<Aabb>& boxes,
                        const std::vector<Aabb>& gts, double k, bool bleu) {
  if (caps.empty()) return 0;
  double s = 0;
  for (std::size_t i = 0; i < caps.size(); ++i) {
    if (iou(boxes[i], gts[i]) < k) continue;
    s += bleu ? bleu4(caps[i], refs[i]) : rouge_l(caps[i], refs[i]);
  }
  return s / caps.size();
}

/// Integer forms of round(0.2 n) and round(0.75 n), halves rounded up.
inline int word_mask_count(int n) { return std::max((2 * n + 5) / 10, n >= 3 ? 1 : 0); }
inline int object_mask_count(int n) { return std::max((3 * n + 2) / 4, n >= 3 ? 1 : 0); }

}  // namespace sgvlp::oracle
