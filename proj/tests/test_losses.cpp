#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "fracdet/losses.hpp"
#include "support/oracles.hpp"

using namespace fracdet;

namespace {

std::vector<double> random_distribution(oracle::Rng& rng, int bins) {
  std::vector<double> p(static_cast<std::size_t>(bins));
  double sum = 0;
  for (auto& v : p) sum += (v = std::exp(rng.uniform(-2, 2)));
  for (auto& v : p) v /= sum;
  return p;
}

}  // namespace

// ---- TAL metric ----

TEST(TalMetric, Examples) {
  EXPECT_DOUBLE_EQ(tal_metric(1.0, 1.0), 1.0);
  EXPECT_DOUBLE_EQ(tal_metric(0.37, 0.0), 0.0);
  EXPECT_NEAR(tal_metric(0.8, 0.9), std::sqrt(0.8) * std::pow(0.9, 6), 1e-15);
  EXPECT_NEAR(tal_metric(0.8, 0.9), 0.47534, 5e-6);
}

TEST(TalMetric, MonotoneInBothArguments) {
  oracle::Rng rng(21);
  for (int i = 0; i < 1000; ++i) {
    const double s = rng.uniform(0, 1), u = rng.uniform(0, 1), ds = rng.uniform(0, 1 - s), du = rng.uniform(0, 1 - u);
    EXPECT_LE(tal_metric(s, u), tal_metric(s + ds, u));
    EXPECT_LE(tal_metric(s, u), tal_metric(s, u + du));
  }
}

TEST(AlignmentParams, RejectsNonPositive) {
  EXPECT_THROW((AlignmentParams{0.0, 6.0}.validate()), InvalidArgument);
  EXPECT_THROW((AlignmentParams{0.5, -1.0}.validate()), InvalidArgument);
}

// ---- BCE ----

TEST(Bce, Examples) {
  EXPECT_NEAR(bce_loss(1.0 - kLogEps, 1.0).loss, 0.0, 1e-6);
  EXPECT_NEAR(bce_loss(0.5, 1.0).loss, std::log(2.0), 1e-15);
  EXPECT_NEAR(bce_loss(0.5, 1.0, 2.0).loss, 2 * std::log(2.0), 1e-15);
}

TEST(Bce, ClampsAtTheEdges) {
  EXPECT_TRUE(std::isfinite(bce_loss(0.0, 1.0).loss));
  EXPECT_TRUE(std::isfinite(bce_loss(1.0, 0.0).loss));
}

TEST(Bce, GradientMatchesFiniteDifferences) {
  oracle::Rng rng(22);
  oracle::GradCheck g;
  for (int i = 0; i < 200; ++i) {
    const double x = rng.uniform(0.01, 0.99), y = rng.uniform(0, 1), w = rng.uniform(0.1, 3);
    const double fd = oracle::central_difference([&](double v) { return bce_loss(v, y, w).loss; }, x);
    oracle::compare_gradient(g, bce_loss(x, y, w).grad, fd);
  }
  EXPECT_TRUE(g.ok) << "worst rel " << g.worst_rel << ", worst abs " << g.worst_abs;
}

// ---- DFL ----

TEST(Dfl, OneHotAtIntegerTargetIsZero) {
  std::vector<double> p(17, 0.0);
  p[5] = 1.0;
  EXPECT_NEAR(dfl_loss(RegDistribution(p), 5.0).loss, 0.0, 1e-12);
}

TEST(Dfl, HalfwayTarget) {
  std::vector<double> p(17, 0.0);
  p[4] = p[5] = 0.5;
  EXPECT_NEAR(dfl_loss(RegDistribution(p), 4.5).loss, std::log(2.0), 1e-12);
}

TEST(Dfl, MinimizerExample) {
  std::vector<double> p(17, 0.0);
  p[2] = 0.7;
  p[3] = 0.3;
  const double expected = -(0.7 * std::log(0.7) + 0.3 * std::log(0.3));
  EXPECT_NEAR(dfl_loss(RegDistribution(p), 2.3).loss, expected, 1e-12);
  EXPECT_NEAR(expected, 0.610864, 5e-7);
}

TEST(Dfl, TopEdgeUsesLastTwoBins) {
  std::vector<double> p(17, 0.0);
  p[16] = 1.0;
  EXPECT_EQ(dfl_left_bin(16.0, 16), 15);
  EXPECT_NEAR(dfl_loss(p, 16.0).loss, 0.0, 1e-12);
}

TEST(Dfl, RejectsOutOfRangeTarget) {
  const std::vector<double> p(17, 1.0 / 17);
  EXPECT_THROW(dfl_loss(p, -0.1), InvalidArgument);
  EXPECT_THROW(dfl_loss(p, 16.01), InvalidArgument);
}

TEST(RegDistribution, ValidatesProbabilities) {
  EXPECT_THROW(RegDistribution({0.5, 0.6}), InvalidArgument);
  EXPECT_THROW(RegDistribution({1.2, -0.2}), InvalidArgument);
  EXPECT_THROW(RegDistribution({1.0}), InvalidArgument);
  EXPECT_NO_THROW(RegDistribution({0.25, 0.75}));
}

TEST(Dfl, OptimalTargets) {
  EXPECT_EQ(dfl_optimal_targets(2.0, 2.0, 3.0), (std::pair{1.0, 0.0}));
  EXPECT_EQ(dfl_optimal_targets(2.5, 2.0, 3.0), (std::pair{0.5, 0.5}));
  const auto [l, r] = dfl_optimal_targets(2.3, 2.0, 3.0);
  EXPECT_NEAR(l, 0.7, 1e-12);
  EXPECT_NEAR(r, 0.3, 1e-12);
}

TEST(Dfl, OptimalTargetsMinimizeOverGrid) {
  oracle::Rng rng(23);
  for (int i = 0; i < 200; ++i) {
    const double y = rng.uniform(0, 16);
    const int n = dfl_left_bin(y, 16);
    const auto [sl, sr] = dfl_optimal_targets(y, n, n + 1);
    auto loss_at = [&](double s) {
      std::vector<double> p(17, 0.0);
      p[std::size_t(n)] = s;
      p[std::size_t(n) + 1] = 1 - s;
      return dfl_loss(p, y).loss;
    };
    const double at_opt = loss_at(sl);
    double best = INFINITY, best_s = -1;
    for (int k = 0; k <= 1000; ++k) {
      const double s = k / 1000.0;
      const double v = loss_at(s);
      EXPECT_GE(v, at_opt - 1e-12) << "y=" << y << " s=" << s;
      if (v < best) best = v, best_s = s;
    }
    EXPECT_LE(std::abs(best_s - sl), 1e-3) << "y=" << y;
    EXPECT_NEAR(sl + sr, 1.0, 1e-12);
  }
}

TEST(Dfl, GradientMatchesFiniteDifferences) {
  oracle::Rng rng(24);
  oracle::GradCheck g;
  for (int i = 0; i < 200; ++i) {
    const auto p = random_distribution(rng, 17);
    const double y = rng.uniform(0, 16);
    const auto analytic = dfl_loss(p, y).grad;
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double fd = oracle::central_difference(
          [&](double v) {
            auto q = p;
            q[k] = v;
            return dfl_loss(q, y).loss;
          },
          p[k]);
      oracle::compare_gradient(g, analytic[k], fd);
    }
  }
  EXPECT_TRUE(g.ok) << "worst rel " << g.worst_rel << ", worst abs " << g.worst_abs;
}

// ---- CIoU ----

TEST(Ciou, IdenticalBoxesGiveZero) { EXPECT_NEAR(ciou_loss({1, 2, 5, 9}, {1, 2, 5, 9}).loss, 0.0, 1e-15); }

TEST(Ciou, OffsetSquares) {
  // IoU 1/7, center distance^2 2, enclosing (0,0,3,3) diagonal^2 18, equal aspect
  const double expected = 1.0 - 1.0 / 7.0 + 2.0 / 18.0;
  EXPECT_NEAR(ciou_loss({0, 0, 2, 2}, {1, 1, 3, 3}).loss, expected, 1e-15);
  EXPECT_NEAR(expected, 0.968254, 5e-7);
}

TEST(Ciou, EqualAspectReducesToDistanceIou) {
  oracle::Rng rng(25);
  for (int i = 0; i < 500; ++i) {
    const auto gt = oracle::random_box(rng, 60);
    const double k = rng.uniform(0.2, 3), ox = rng.uniform(-20, 20), oy = rng.uniform(-20, 20);
    const Box pred{gt.x1 + ox, gt.y1 + oy, gt.x1 + ox + gt.width() * k, gt.y1 + oy + gt.height() * k};
    const auto t = ciou_terms(pred, gt);
    EXPECT_NEAR(ciou_loss(pred, gt).loss, 1 - t.iou + t.center_dist_sq / t.enclose_diag_sq, 1e-12);
  }
}

TEST(Ciou, NonNegativeAndZeroOnlyWhenIdentical) {
  oracle::Rng rng(26);
  for (int i = 0; i < 2000; ++i) {
    const auto a = oracle::random_box(rng, 40);
    const auto b = oracle::random_box(rng, 40);
    const double l = ciou_loss(a, b).loss;
    EXPECT_GE(l, 0.0);
    if (!(a == b)) {
      EXPECT_GT(l, 0.0);
    }
  }
}

TEST(Ciou, GradientMatchesFiniteDifferences) {
  oracle::Rng rng(27);
  oracle::GradCheck g;
  for (int i = 0; i < 200; ++i) {
    const auto gt = oracle::random_box(rng, 40);
    // half the cases overlap the ground truth, half are drawn freely
    Box pred = oracle::random_box(rng, 40);
    if (i % 2 == 0) {
      const double j = 0.3;
      pred = {gt.x1 + rng.uniform(-j, j) * gt.width(), gt.y1 + rng.uniform(-j, j) * gt.height(),
              gt.x2 + rng.uniform(-j, j) * gt.width(), gt.y2 + rng.uniform(-j, j) * gt.height()};
    }
    const auto analytic = ciou_loss(pred, gt).grad;
    for (int k = 0; k < 4; ++k) {
      const double fd = oracle::central_difference(
          [&](double v) {
            Box p = pred;
            (k == 0 ? p.x1 : k == 1 ? p.y1 : k == 2 ? p.x2 : p.y2) = v;
            return ciou_loss(p, gt).loss;
          },
          k == 0 ? pred.x1 : k == 1 ? pred.y1 : k == 2 ? pred.x2 : pred.y2);
      oracle::compare_gradient(g, analytic[std::size_t(k)], fd);
    }
  }
  EXPECT_TRUE(g.ok) << "worst rel " << g.worst_rel << ", worst abs " << g.worst_abs;
}

// ---- assignment ----

namespace {

struct Scene {
  std::vector<AnchorPoint> anchors;
  std::vector<std::vector<double>> scores;
  std::vector<Box> preds;
  std::vector<GroundTruth> gts;
};

Scene random_scene(oracle::Rng& rng) {
  Scene s;
  s.anchors = make_anchors(64);
  for (const auto& a : s.anchors) {
    s.scores.push_back({rng.uniform(0.01, 1), rng.uniform(0.01, 1)});
    const double w = rng.uniform(4, 30), h = rng.uniform(4, 30);
    s.preds.push_back({a.px() - w / 2, a.py() - h / 2, a.px() + w / 2, a.py() + h / 2});
  }
  const int n = rng.integer(1, 4);
  for (int g = 0; g < n; ++g) s.gts.push_back({oracle::random_box(rng, 64, 6), rng.integer(0, 1)});
  return s;
}

}  // namespace

TEST(Assign, NoGroundTruthMeansNoPositives) {
  const auto anchors = make_anchors(32);
  std::vector<std::vector<double>> scores(anchors.size(), {0.9});
  std::vector<Box> preds(anchors.size(), Box{0, 0, 8, 8});
  const auto r = assign_targets(anchors, scores, preds, {});
  EXPECT_EQ(r.num_positive(), 0u);
}

TEST(Assign, SinglePerfectAnchor) {
  const std::vector<AnchorPoint> anchors{{0.5, 0.5, 8}, {5.5, 5.5, 8}};
  const std::vector<std::vector<double>> scores{{1.0}, {1.0}};
  const std::vector<Box> preds{{0, 0, 8, 8}, {0, 0, 1, 1}};
  const std::vector<GroundTruth> gts{{{0, 0, 8, 8}, 0}};
  const auto r = assign_targets(anchors, scores, preds, gts);
  ASSERT_EQ(r.num_positive(), 1u);
  EXPECT_EQ(r.assigned_gt[0], 0u);
  EXPECT_DOUBLE_EQ(r.alignment[0], 1.0);
  EXPECT_FALSE(r.assigned_gt[1]);
}

TEST(Assign, TopKKeepsHighestAlignment) {
  // three anchors inside one box, IoU 1 each, so t = sqrt(score)
  const std::vector<AnchorPoint> anchors{{1.5, 1.5, 8}, {2.5, 1.5, 8}, {3.5, 1.5, 8}};
  const std::vector<std::vector<double>> scores{{0.25}, {0.81}, {0.01}};
  const Box gt{0, 0, 40, 40};
  const std::vector<Box> preds(3, gt);
  const auto r = assign_targets(anchors, scores, preds, std::vector<GroundTruth>{{gt, 0}}, {}, 2);
  EXPECT_TRUE(r.assigned_gt[0]);
  EXPECT_TRUE(r.assigned_gt[1]);
  EXPECT_FALSE(r.assigned_gt[2]);
  EXPECT_NEAR(r.alignment[1], 0.9, 1e-12);
  EXPECT_NEAR(r.alignment[0], 0.5, 1e-12);
}

TEST(Assign, ContestedAnchorGoesToHigherAlignment) {
  const std::vector<AnchorPoint> anchors{{2.5, 2.5, 8}};
  const std::vector<std::vector<double>> scores{{0.5, 0.9}};
  const std::vector<Box> preds{{10, 10, 30, 30}};
  const std::vector<GroundTruth> gts{{{0, 0, 40, 40}, 0}, {{10, 10, 30, 30}, 1}};
  const auto r = assign_targets(anchors, scores, preds, gts);
  EXPECT_EQ(r.assigned_gt[0], 1u);
}

TEST(Assign, RejectsBadInputs) {
  const std::vector<AnchorPoint> anchors{{0.5, 0.5, 8}};
  const std::vector<std::vector<double>> scores{{0.5}};
  const std::vector<Box> preds{{0, 0, 8, 8}};
  EXPECT_THROW(assign_targets(anchors, scores, preds, {}, {}, 0), InvalidArgument);
  EXPECT_THROW(assign_targets(anchors, std::vector<std::vector<double>>{}, preds, {}), InvalidArgument);
}

TEST(Assign, InvariantsOnRandomScenes) {
  oracle::Rng rng(28);
  for (int i = 0; i < 100; ++i) {
    const auto s = random_scene(rng);
    const std::size_t top_k = std::size_t(rng.integer(1, 12));
    const auto r = assign_targets(s.anchors, s.scores, s.preds, s.gts, {}, top_k);
    std::vector<std::size_t> per_gt(s.gts.size(), 0);
    for (std::size_t a = 0; a < s.anchors.size(); ++a) {
      if (!r.assigned_gt[a]) continue;
      ++per_gt[*r.assigned_gt[a]];
      EXPECT_TRUE(center_inside(s.anchors[a], s.gts[*r.assigned_gt[a]].box));
    }
    for (auto c : per_gt) EXPECT_LE(c, top_k);
  }
}

TEST(Assign, ScoreScalingKeepsPositives) {
  oracle::Rng rng(29);
  for (int i = 0; i < 100; ++i) {
    auto s = random_scene(rng);
    const auto base = assign_targets(s.anchors, s.scores, s.preds, s.gts);
    const double c = rng.uniform(0.05, 1.0);
    for (auto& row : s.scores)
      for (auto& v : row) v *= c;
    const auto scaled = assign_targets(s.anchors, s.scores, s.preds, s.gts);
    EXPECT_EQ(base.assigned_gt, scaled.assigned_gt) << "scene " << i << " c=" << c;
  }
}
