#include "sgvlp/proposals.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <numeric>

namespace {

using namespace sgvlp;
using sgvlp::testing::gradcheck;
using sgvlp::testing::random_matrix;

Aabb cube(Vec3 center, double side) {
  Aabb b;
  b.center = center;
  b.size = {side, side, side};
  return b;
}

Aabb random_box(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> c(-2, 2), s(0.2, 2.5);
  Aabb b;
  for (int a = 0; a < 3; ++a) {
    b.center[a] = c(rng);
    b.size[a] = s(rng);
  }
  return b;
}

ProposalSet scene_proposals(std::uint64_t seed, int m, JitterConfig j = {}) {
  const auto scene = generate_scene(seed, GeneratorConfig{});
  std::mt19937_64 rng(seed + 1);
  j.m_proposals = m;
  return propose(scene, m, j, rng);
}

TEST(Iou, IdenticalDisjointAndOffsetCubes) {
  const Aabb a = cube({0, 0, 0}, 2);
  EXPECT_DOUBLE_EQ(iou_aabb(a, a), 1.0);
  EXPECT_DOUBLE_EQ(iou_aabb(a, cube({5, 0, 0}, 2)), 0.0);
  EXPECT_NEAR(iou_aabb(a, cube({1, 0, 0}, 2)), 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(oracle::monte_carlo_iou(a, cube({1, 0, 0}, 2), 400000, 3), 1.0 / 3.0, 5e-3);
}

TEST(Iou, HalfMeterShiftOfTwoMeterCube) {
  const Aabb gt = cube({0, 0, 0}, 2);
  const Aabb p = cube({0.5, 0, 0}, 2);
  EXPECT_NEAR(iou_aabb(p, gt), 0.6, 1e-12);
  EXPECT_NEAR(oracle::monte_carlo_iou(p, gt, 400000, 5), 0.6, 5e-3);
}

TEST(Iou, SymmetricBoundedAndIdempotentOnRandomBoxes) {
  std::mt19937_64 rng(17);
  for (int i = 0; i < 500; ++i) {
    const Aabb a = random_box(rng), b = random_box(rng);
    const double ab = iou_aabb(a, b);
    EXPECT_EQ(ab, iou_aabb(b, a));
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 1.0);
    EXPECT_EQ(iou_aabb(a, a), 1.0);
    EXPECT_NEAR(ab, oracle::iou(a, b), 1e-12);
  }
}

TEST(Iou, DegenerateBoxRejected) {
  Aabb bad = cube({0, 0, 0}, 1);
  bad.size[1] = 0;
  EXPECT_THROW(iou_aabb(bad, cube({0, 0, 0}, 1)), std::invalid_argument);
}

TEST(Propose, ZeroJitterReproducesGroundTruth) {
  JitterConfig j;
  j.center_m = 0;
  j.size_frac = 0;
  const auto scene = generate_scene(3, GeneratorConfig{});
  std::mt19937_64 rng(1);
  const auto ps = propose(scene, 16, j, rng);
  ASSERT_EQ(ps.size(), 16);
  int exact = 0;
  for (const auto& p : ps.proposals) {
    if (p.iou_with_match == 1.0) {
      ++exact;
      EXPECT_EQ(p.objectness_target, 1);
      EXPECT_EQ(p.semantic_target, static_cast<int>(scene.object(*p.matched_gt_id).category));
    }
  }
  EXPECT_EQ(exact, static_cast<int>(scene.objects.size()));
}

TEST(Propose, EveryObjectGetsAProposal) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto scene = generate_scene(seed, GeneratorConfig{});
    std::mt19937_64 rng(seed);
    const auto ps = propose(scene, 16, JitterConfig{}, rng);
    for (const auto& o : scene.objects) {
      bool found = false;
      for (const auto& p : ps.proposals) found = found || (p.matched_gt_id == o.id);
      EXPECT_TRUE(found) << "seed " << seed << " object " << o.id;
    }
  }
}

TEST(Propose, JitterStaysWithinBounds) {
  JitterConfig j;
  const auto scene = generate_scene(5, GeneratorConfig{});
  std::mt19937_64 rng(2);
  const auto ps = propose(scene, 16, j, rng);
  for (const auto& o : scene.objects) {
    const int best = best_proposal_for(ps, o.box);
    const auto& p = ps.proposals[best];
    for (int a = 0; a < 3; ++a) {
      EXPECT_LE(std::abs(p.box.center[a] - o.box.center[a]), j.center_m + 1e-12);
      EXPECT_LE(std::abs(p.box.size[a] / o.box.size[a] - 1.0), j.size_frac + 1e-12);
    }
  }
}

TEST(Propose, BackgroundBoxHasNoTargets) {
  const auto scene = generate_scene(5, GeneratorConfig{});
  Proposal p;
  p.box = cube({100, 100, 100}, 1);
  assign_targets(p, scene.objects);
  EXPECT_EQ(p.objectness_target, 0);
  EXPECT_EQ(p.semantic_target, kBackgroundClass);
  EXPECT_FALSE(p.matched_gt_id.has_value());
  EXPECT_EQ(p.iou_with_match, 0.0);
}

TEST(Propose, ShiftedProposalIsPositive) {
  SceneObject gt;
  gt.id = 4;
  gt.category = Category::kBed;
  gt.box = cube({0, 0, 0}, 2);
  Proposal p;
  p.box = cube({0.5, 0, 0}, 2);
  assign_targets(p, {gt});
  EXPECT_NEAR(p.iou_with_match, 0.6, 1e-12);
  EXPECT_EQ(p.objectness_target, 1);
  EXPECT_EQ(p.semantic_target, static_cast<int>(Category::kBed));
  EXPECT_DOUBLE_EQ(p.box_residual[0], -0.5);
}

TEST(Propose, ObjectnessFollowsThresholdEverywhere) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    for (const auto& p : scene_proposals(seed, 16).proposals) {
      EXPECT_EQ(p.objectness_target == 1, p.iou_with_match >= kPositiveIou);
      EXPECT_EQ(p.matched_gt_id.has_value(), p.objectness_target == 1);
      EXPECT_GE(p.iou_with_match, 0.0);
      EXPECT_LE(p.iou_with_match, 1.0);
    }
  }
}

TEST(Propose, TooFewSlotsRejected) {
  GeneratorConfig g;
  g.min_objects = g.max_objects = 6;
  const auto scene = generate_scene(1, g);
  std::mt19937_64 rng(1);
  EXPECT_THROW(propose(scene, 5, JitterConfig{}, rng), std::invalid_argument);
}

TEST(Propose, DescriptorCornersMatchBox) {
  const auto ps = scene_proposals(2, 16);
  for (const auto& p : ps.proposals) {
    const auto corners = p.box.corners();
    for (int k = 0; k < 8; ++k) {
      for (int a = 0; a < 3; ++a) EXPECT_EQ(p.descriptor[6 + 3 * k + a], corners[k][a]);
    }
    EXPECT_DOUBLE_EQ(p.descriptor[30], p.box.volume());
  }
}

TEST(Encoder, OutputShape) {
  ParamStore<float> store(1);
  ProposalEncoder<float> enc(store, "p", 256);
  const auto ps = scene_proposals(1, 8);
  const auto f = enc(descriptor_matrix<float>({&ps}));
  EXPECT_EQ(f.rows(), 8);
  EXPECT_EQ(f.cols(), 256);
  EXPECT_TRUE(f.value().allFinite());
}

TEST(Encoder, IdenticalDescriptorsGiveIdenticalRows) {
  ParamStore<double> store(2);
  ProposalEncoder<double> enc(store, "p", 16);
  auto ps = scene_proposals(4, 16);
  ps.proposals[5] = ps.proposals[2];
  const auto f = enc(descriptor_matrix<double>({&ps})).value();
  EXPECT_EQ(f.row(5), f.row(2));
}

TEST(Encoder, PermutationEquivariant) {
  ParamStore<double> store(3);
  ProposalEncoder<double> enc(store, "p", 16);
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const auto ps = scene_proposals(trial, 10);
    std::vector<int> perm(10);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    ProposalSet shuffled;
    for (int i : perm) shuffled.proposals.push_back(ps.proposals[i]);
    const auto a = enc(descriptor_matrix<double>({&ps})).value();
    const auto b = enc(descriptor_matrix<double>({&shuffled})).value();
    for (int i = 0; i < 10; ++i) ASSERT_EQ(b.row(i), a.row(perm[i]));
  }
}

TEST(Encoder, NonFiniteDescriptorRejected) {
  ParamStore<double> store(3);
  ProposalEncoder<double> enc(store, "p", 8);
  Matrix<double> d = Matrix<double>::Zero(2, kDescriptorDim);
  d(1, 3) = std::nan("");
  EXPECT_THROW(enc(d), std::invalid_argument);
}

TEST(Encoder, Gradcheck) {
  const auto r = gradcheck([]<class T>(ParamStore<T>& s) {
    ProposalEncoder<T> enc(s, "p", 8);
    std::mt19937_64 rng(4);
    const Matrix<T> d = random_matrix<T>(6, kDescriptorDim, rng);
    return [=] { return enc(d); };
  });
  EXPECT_LT(r.rel_double, 1e-6) << r.worst_param;
  EXPECT_LT(r.rel_float, 1e-3) << r.worst_param;
}

struct DetInstance {
  ProposalSet ps;
  std::vector<const Proposal*> ptrs;
};

DetInstance det_instance(std::uint64_t seed, int m) {
  DetInstance d;
  d.ps = scene_proposals(seed, 16);
  d.ps.proposals.resize(static_cast<std::size_t>(m));
  for (const auto& p : d.ps.proposals) d.ptrs.push_back(&p);
  return d;
}

TEST(DetectionLoss, PerfectBoxesGiveZeroBoxTerm) {
  const auto d = det_instance(3, 6);
  Matrix<double> obj = Matrix<double>::Zero(6, 2), res(6, 6), sem = Matrix<double>::Zero(6, kNumCategories);
  for (int i = 0; i < 6; ++i) {
    const auto& p = d.ps.proposals[i];
    obj(i, p.objectness_target) = 100;
    if (p.matched_gt_id) sem(i, p.semantic_target) = 100;
    for (int k = 0; k < 6; ++k) res(i, k) = p.box_residual[k];
  }
  const auto l = detection_loss<double>(d.ptrs, {Var<double>(obj), Var<double>(res), Var<double>(sem)});
  EXPECT_EQ(l.box.item(), 0.0);
  EXPECT_LT(l.objectness.item(), 1e-12);
  EXPECT_LT(l.semantic.item(), 1e-12);
}

TEST(DetectionLoss, UniformObjectnessIsLn2) {
  const auto d = det_instance(3, 6);
  const auto l = detection_loss<double>(d.ptrs, {Var<double>(Matrix<double>::Zero(6, 2)),
                                                 Var<double>(Matrix<double>::Zero(6, 6)),
                                                 Var<double>(Matrix<double>::Zero(6, kNumCategories))});
  EXPECT_NEAR(l.objectness.item(), std::log(2.0), 1e-12);
  EXPECT_NEAR(l.semantic.item(), std::log(static_cast<double>(kNumCategories)), 1e-12);
  EXPECT_GE(l.box.item(), 0.0);
}

TEST(DetectionLoss, MatchesLoopOracle) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const int m = 2 + trial % 7;
    const auto d = det_instance(trial, m);
    const Matrix<double> obj = random_matrix<double>(m, 2, rng, -3, 3);
    const Matrix<double> res = random_matrix<double>(m, 6, rng);
    const Matrix<double> sem = random_matrix<double>(m, kNumCategories, rng, -3, 3);
    const auto l = detection_loss<double>(d.ptrs, {Var<double>(obj), Var<double>(res), Var<double>(sem)});
    const auto o = oracle::detection_loss(d.ptrs, oracle::to_rows(obj), oracle::to_rows(res), oracle::to_rows(sem));
    EXPECT_NEAR(l.objectness.item(), o.objectness, 1e-6);
    EXPECT_NEAR(l.box.item(), o.box, 1e-6);
    EXPECT_NEAR(l.semantic.item(), o.semantic, 1e-6);
    EXPECT_NEAR(l.total.item(), o.objectness + o.box + o.semantic, 1e-6);
    EXPECT_GE(l.total.item(), 0.0);
  }
}

TEST(DetectionLoss, ShapeMismatchRejected) {
  const auto d = det_instance(3, 6);
  EXPECT_THROW(detection_loss<double>(d.ptrs, {Var<double>(Matrix<double>::Zero(5, 2)),
                                               Var<double>(Matrix<double>::Zero(6, 6)),
                                               Var<double>(Matrix<double>::Zero(6, kNumCategories))}),
               std::invalid_argument);
}

TEST(DetectionLoss, HeadGradcheck) {
  const auto d = det_instance(8, 6);
  const auto r = gradcheck([&]<class T>(ParamStore<T>& s) {
    DetectionHead<T> head(s, "det", 8);
    auto x = s.add_uniform("x", ParamGroup::kProposal, 6, 8, 1.0);
    return [=] { return detection_loss(d.ptrs, head(x)).total; };
  });
  EXPECT_LT(r.rel_double, 1e-6) << r.worst_param;
  EXPECT_LT(r.rel_float, 1e-3) << r.worst_param;
}

}  // namespace
