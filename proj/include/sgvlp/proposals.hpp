#pragma once

// Object proposals anchored on ground-truth boxes. Each ground-truth object
// yields one jittered box; the remaining slots hold random background boxes.
// Proposals are encoded from a geometry + appearance descriptor.

#include "sgvlp/geometry.hpp"
#include "sgvlp/nn.hpp"
#include "sgvlp/scene_synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

namespace sgvlp {

inline constexpr double kPositiveIou = 0.25;
/// Semantic target used for proposals without a matched object.
inline constexpr int kBackgroundClass = kNumCategories;
/// center(3) + size(3) + corners(24) + volume(1) + mean color(3)
inline constexpr int kDescriptorDim = 34;

struct JitterConfig {
  double center_m = 0.15;
  double size_frac = 0.10;
  int m_proposals = 16;
  /// Std-dev of the per-proposal color noise added to the color prototype.
  double color_noise = 0.05;
};

struct Proposal {
  Aabb box;
  Vec3 rgb{0, 0, 0};
  std::array<double, kDescriptorDim> descriptor{};
  int objectness_target = 0;
  int semantic_target = kBackgroundClass;
  std::optional<int> matched_gt_id;
  double iou_with_match = 0.0;
  /// Ground truth minus proposal (center then size); zero when unmatched.
  std::array<double, 6> box_residual{};
};

struct ProposalSet {
  std::vector<Proposal> proposals;
  int size() const { return static_cast<int>(proposals.size()); }
};

inline std::array<double, kDescriptorDim> make_descriptor(const Aabb& box, const Vec3& rgb) {
  std::array<double, kDescriptorDim> d{};
  int k = 0;
  for (int a = 0; a < 3; ++a) d[k++] = box.center[a];
  for (int a = 0; a < 3; ++a) d[k++] = box.size[a];
  for (const auto& c : box.corners()) {
    for (int a = 0; a < 3; ++a) d[k++] = c[a];
  }
  d[k++] = box.volume();
  for (int a = 0; a < 3; ++a) d[k++] = rgb[a];
  return d;
}

/// Sets matched_gt_id, iou_with_match, targets and residual from the
/// highest-IoU ground-truth object.
inline void assign_targets(Proposal& p, const std::vector<SceneObject>& objects) {
  double best = 0.0;
  const SceneObject* match = nullptr;
  for (const auto& o : objects) {
    const double v = iou_aabb(p.box, o.box);
    if (v > best) {
      best = v;
      match = &o;
    }
  }
  p.iou_with_match = best;
  p.box_residual.fill(0.0);
  if (match && best >= kPositiveIou) {
    p.matched_gt_id = match->id;
    p.objectness_target = 1;
    p.semantic_target = static_cast<int>(match->category);
    for (int a = 0; a < 3; ++a) {
      p.box_residual[a] = match->box.center[a] - p.box.center[a];
      p.box_residual[3 + a] = match->box.size[a] - p.box.size[a];
    }
  } else {
    p.matched_gt_id.reset();
    p.objectness_target = 0;
    p.semantic_target = kBackgroundClass;
  }
}

inline ProposalSet propose(const SyntheticScene& scene, int m, const JitterConfig& jitter,
                           std::mt19937_64& rng) {
  if (m < static_cast<int>(scene.objects.size())) {
    throw std::invalid_argument("propose: m (" + std::to_string(m) + ") < object count (" +
                                std::to_string(scene.objects.size()) + ")");
  }
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::normal_distribution<double> noise(0.0, jitter.color_noise);
  auto clip01 = [](double v) { return std::clamp(v, 0.0, 1.0); };
  ProposalSet ps;
  for (const auto& o : scene.objects) {
    Proposal p;
    for (int a = 0; a < 3; ++a) {
      p.box.center[a] = o.box.center[a] + jitter.center_m * unit(rng);
      p.box.size[a] = o.box.size[a] * (1.0 + jitter.size_frac * unit(rng));
    }
    const Vec3& proto = kColorRgb[static_cast<int>(o.attribute)];
    for (int a = 0; a < 3; ++a) p.rgb[a] = clip01(proto[a] + noise(rng));
    ps.proposals.push_back(p);
  }
  std::uniform_real_distribution<double> extent(0.3, 2.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  while (ps.size() < m) {
    Proposal p;
    for (int attempt = 0; attempt < 50; ++attempt) {
      for (int a = 0; a < 3; ++a) {
        p.box.size[a] = std::min(extent(rng), 0.95 * scene.room.size[a]);
        const double half = 0.5 * (scene.room.size[a] - p.box.size[a]);
        p.box.center[a] = scene.room.center[a] + half * unit(rng);
      }
      bool clear = true;
      for (const auto& o : scene.objects) clear = clear && iou_aabb(p.box, o.box) < kPositiveIou;
      if (clear) break;
    }
    for (int a = 0; a < 3; ++a) p.rgb[a] = u01(rng);
    ps.proposals.push_back(p);
  }
  std::shuffle(ps.proposals.begin(), ps.proposals.end(), rng);
  for (auto& p : ps.proposals) {
    p.descriptor = make_descriptor(p.box, p.rgb);
    assign_targets(p, scene.objects);
  }
  return ps;
}

/// Index of the proposal with the highest IoU to `box` (lowest index on ties).
inline int best_proposal_for(const ProposalSet& ps, const Aabb& box) {
  int best = -1;
  double best_iou = -1.0;
  for (int i = 0; i < ps.size(); ++i) {
    const double v = iou_aabb(ps.proposals[i].box, box);
    if (v > best_iou) {
      best_iou = v;
      best = i;
    }
  }
  return best;
}

template <class T>
Matrix<T> descriptor_matrix(const std::vector<const ProposalSet*>& sets) {
  int rows = 0;
  for (const auto* s : sets) rows += s->size();
  Matrix<T> m(rows, kDescriptorDim);
  int r = 0;
  for (const auto* s : sets) {
    for (const auto& p : s->proposals) {
      for (int k = 0; k < kDescriptorDim; ++k) m(r, k) = static_cast<T>(p.descriptor[k]);
      ++r;
    }
  }
  return m;
}

/// Feed-forward encoder over proposal descriptors plus a shared learned
/// embedding. Row-wise, hence permutation-equivariant.
template <class T>
class ProposalEncoder {
 public:
  ProposalEncoder() = default;
  ProposalEncoder(ParamStore<T>& store, const std::string& name, int hidden) {
    mlp_ = Mlp<T>(store, name + ".mlp", ParamGroup::kProposal, {kDescriptorDim, hidden, hidden});
    embedding_ = store.add_uniform(name + ".embedding", ParamGroup::kProposal, 1, hidden, 0.1);
  }

  Var<T> operator()(const Matrix<T>& descriptors) const {
    if (descriptors.cols() != kDescriptorDim) {
      throw std::invalid_argument("encode_proposals: descriptor width");
    }
    if (!descriptors.allFinite()) throw std::invalid_argument("encode_proposals: non-finite descriptor");
    return ad::add_row(mlp_(Var<T>(descriptors)), embedding_);
  }

 private:
  Mlp<T> mlp_;
  Var<T> embedding_;
};

// ---------------------------------------------------------------------------
// Detection loss

template <class T>
struct DetectionPredictions {
  Var<T> objectness;  // N x 2
  Var<T> residuals;   // N x 6
  Var<T> semantic;    // N x kNumCategories
};

template <class T>
struct DetectionLoss {
  Var<T> objectness;
  Var<T> box;
  Var<T> semantic;
  Var<T> total;
};

template <class T>
class DetectionHead {
 public:
  DetectionHead() = default;
  DetectionHead(ParamStore<T>& store, const std::string& name, int hidden) {
    mlp_ = Mlp<T>(store, name, ParamGroup::kProposal, {hidden, hidden, 2 + 6 + kNumCategories});
  }
  DetectionPredictions<T> operator()(const Var<T>& feats) const {
    Var<T> out = mlp_(feats);
    return {ad::slice_cols(out, 0, 2), ad::slice_cols(out, 2, 6),
            ad::slice_cols(out, 8, kNumCategories)};
  }

 private:
  Mlp<T> mlp_;
};

/// L_obj (cross-entropy over all proposals) + L_box (mean absolute residual
/// error, matched proposals only) + L_sem (cross-entropy, matched only).
template <class T>
DetectionLoss<T> detection_loss(const std::vector<const Proposal*>& proposals,
                                const DetectionPredictions<T>& pred) {
  const auto n = static_cast<Eigen::Index>(proposals.size());
  if (pred.objectness.rows() != n || pred.objectness.cols() != 2 || pred.residuals.rows() != n ||
      pred.residuals.cols() != 6 || pred.semantic.rows() != n ||
      pred.semantic.cols() != kNumCategories) {
    throw std::invalid_argument("detection_loss: prediction shape mismatch");
  }
  std::vector<int> obj_t, sem_t;
  std::vector<bool> matched;
  Matrix<T> residual_t = Matrix<T>::Zero(n, 6);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& p = *proposals[static_cast<std::size_t>(i)];
    const bool m = p.matched_gt_id.has_value();
    obj_t.push_back(p.objectness_target);
    sem_t.push_back(m ? p.semantic_target : -1);
    matched.push_back(m);
    for (int k = 0; k < 6; ++k) residual_t(i, k) = static_cast<T>(p.box_residual[k]);
  }
  DetectionLoss<T> loss;
  loss.objectness = ad::cross_entropy(pred.objectness, obj_t);
  loss.box = ad::masked_l1(pred.residuals, residual_t, matched);
  loss.semantic = ad::cross_entropy(pred.semantic, sem_t);
  loss.total = ad::add(ad::add(loss.objectness, loss.box), loss.semantic);
  return loss;
}

}  // namespace sgvlp
