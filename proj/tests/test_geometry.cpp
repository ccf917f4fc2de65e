#include <gtest/gtest.h>

#include <numbers>

#include "fracdet/geometry.hpp"
#include "support/oracles.hpp"

using namespace fracdet;

TEST(Iou, IdenticalBoxesGiveOne) { EXPECT_DOUBLE_EQ(iou(Box{0, 0, 10, 10}, Box{0, 0, 10, 10}), 1.0); }

TEST(Iou, DisjointBoxesGiveZero) { EXPECT_DOUBLE_EQ(iou(Box{0, 0, 1, 1}, Box{5, 5, 6, 6}), 0.0); }

TEST(Iou, HalfOverlapSquares) {
  // intersection 1, union 4 + 4 - 1
  EXPECT_DOUBLE_EQ(iou(Box{0, 0, 2, 2}, Box{1, 1, 3, 3}), 1.0 / 7.0);
}

TEST(Iou, ZeroUnionIsZero) {
  EXPECT_EQ(iou(Box{3, 3, 3, 3}, Box{3, 3, 3, 3}), 0.0);
  EXPECT_EQ(iou(Box{0, 0, 0, 5}, Box{1, 1, 4, 1}), 0.0);
}

TEST(Iou, MatchesUnitCellOracle) {
  oracle::Rng rng(7);
  for (int i = 0; i < 1000; ++i) {
    const auto a = oracle::random_int_box(rng, 24);
    const auto b = oracle::random_int_box(rng, 24);
    ASSERT_EQ(iou(a, b), oracle::unit_cell_iou(a, b)) << "pair " << i;
  }
}

TEST(Iou, SymmetricAndBounded) {
  oracle::Rng rng(11);
  for (int i = 0; i < 2000; ++i) {
    const auto a = oracle::random_box(rng, 100, 0.0);
    const auto b = oracle::random_box(rng, 100, 0.0);
    const double u = iou(a, b);
    EXPECT_EQ(u, iou(b, a));
    EXPECT_GE(u, 0.0);
    EXPECT_LE(u, 1.0);
  }
}

TEST(Iou, OneOnlyForEqualPositiveAreaBoxes) {
  oracle::Rng rng(12);
  for (int i = 0; i < 500; ++i) {
    const auto a = oracle::random_int_box(rng, 16);
    const auto b = oracle::random_int_box(rng, 16);
    if (a.area() == 0 || b.area() == 0) continue;
    EXPECT_EQ(iou(a, b) == 1.0, a == b);
  }
}

TEST(CiouTerms, IdenticalBoxes) {
  const auto t = ciou_terms({0, 0, 4, 4}, {0, 0, 4, 4});
  EXPECT_DOUBLE_EQ(t.iou, 1.0);
  EXPECT_DOUBLE_EQ(t.center_dist_sq, 0.0);
  EXPECT_DOUBLE_EQ(t.aspect_term, 0.0);
}

TEST(CiouTerms, EqualAspectHasNoAspectTerm) {
  EXPECT_DOUBLE_EQ(ciou_terms({0, 0, 2, 2}, {0, 0, 4, 4}).aspect_term, 0.0);
  EXPECT_DOUBLE_EQ(ciou_terms({0, 0, 3, 6}, {10, 10, 11, 12}).aspect_term, 0.0);
}

TEST(CiouTerms, TransposedAspect) {
  const double d = std::atan(2.0) - std::atan(0.5);
  const double expected = 4.0 / (std::numbers::pi * std::numbers::pi) * d * d;
  const auto t = ciou_terms({0, 0, 2, 1}, {0, 0, 1, 2});
  EXPECT_NEAR(t.aspect_term, expected, 1e-15);
  EXPECT_NEAR(t.aspect_term, 0.16783, 5e-5);
}

TEST(CiouTerms, InvariantsOnRandomPairs) {
  oracle::Rng rng(13);
  for (int i = 0; i < 2000; ++i) {
    const auto a = oracle::random_box(rng, 50, 0.0);
    const auto b = oracle::random_box(rng, 50, 0.0);
    const auto t = ciou_terms(a, b);
    EXPECT_LE(t.center_dist_sq, t.enclose_diag_sq);
    EXPECT_GE(t.aspect_term, 0.0);
    EXPECT_LE(t.aspect_term, 1.0);
  }
}

TEST(CiouTerms, DegenerateBoxesStayFinite) {
  const auto t = ciou_terms({1, 1, 1, 5}, {0, 0, 3, 0});
  EXPECT_TRUE(std::isfinite(t.aspect_term));
  EXPECT_LE(t.aspect_term, 1.0);
}

TEST(NormBox, FullImage) {
  EXPECT_EQ(norm_to_box({0.5, 0.5, 1, 1}, 100, 200), (Box{0, 0, 100, 200}));
}

TEST(NormBox, CenteredHalf) {
  EXPECT_EQ(norm_to_box({0.5, 0.5, 0.5, 0.5}, 100, 100), (Box{25, 25, 75, 75}));
}

TEST(NormBox, RoundTrip) {
  oracle::Rng rng(14);
  for (int i = 0; i < 1000; ++i) {
    const NormBox n{rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1)};
    const double w = rng.integer(1, 4000), h = rng.integer(1, 4000);
    const auto back = box_to_norm(norm_to_box(n, w, h), w, h);
    EXPECT_NEAR(back.cx, n.cx, 1e-9 * std::max(1.0, n.cx));
    EXPECT_NEAR(back.cy, n.cy, 1e-9 * std::max(1.0, n.cy));
    EXPECT_NEAR(back.w, n.w, 1e-9 * std::max(1.0, n.w));
    EXPECT_NEAR(back.h, n.h, 1e-9 * std::max(1.0, n.h));
  }
}

TEST(NormBox, RejectsNonPositiveImage) {
  EXPECT_THROW(norm_to_box({0.5, 0.5, 1, 1}, 0, 10), InvalidArgument);
  EXPECT_THROW(box_to_norm({0, 0, 1, 1}, 10, -1), InvalidArgument);
}

TEST(Clip, OutsideCollapsesToZeroArea) {
  const auto c = clip(Box{-20, -20, -5, -5}, 10.0, 10.0);
  EXPECT_EQ(c.area(), 0.0);
  EXPECT_TRUE(c.valid());
}
