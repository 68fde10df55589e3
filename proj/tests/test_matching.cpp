#include <gtest/gtest.h>

#include <random>

#include "voxelinst/matching.hpp"

using namespace voxelinst;

namespace {

BBox3D box(Vec3 c, Vec3 s, int cls = 1) { return BBox3D{c, s, cls, 0.0}; }

// Independent two-pass matcher: threshold labels first, then per-GT argmax
// overrides applied in GT order with the higher-IoU claim winning.
MatchResult brute_force(const std::vector<BBox3D>& anchors, const std::vector<BBox3D>& gts, double thresh) {
  const std::size_t A = anchors.size(), G = gts.size();
  std::vector<std::vector<double>> iou(A, std::vector<double>(G));
  for (std::size_t a = 0; a < A; ++a)
    for (std::size_t g = 0; g < G; ++g) iou[a][g] = iou3d(anchors[a], gts[g]);

  std::vector<int> owner(A, -1);
  for (std::size_t a = 0; a < A; ++a) {
    int best = -1;
    for (std::size_t g = 0; g < G; ++g) {
      if (iou[a][g] >= thresh && (best < 0 || iou[a][g] > iou[a][static_cast<std::size_t>(best)])) {
        best = static_cast<int>(g);
      }
    }
    owner[a] = best;
  }
  std::vector<int> forced_by(A, -1);
  for (std::size_t g = 0; g < G; ++g) {
    int best = -1;
    for (std::size_t a = 0; a < A; ++a) {
      if (iou[a][g] > 0 && (best < 0 || iou[a][g] > iou[static_cast<std::size_t>(best)][g])) {
        best = static_cast<int>(a);
      }
    }
    if (best < 0) continue;
    const auto b = static_cast<std::size_t>(best);
    const int prev = forced_by[b];
    if (prev < 0 || iou[b][g] > iou[b][static_cast<std::size_t>(prev)]) forced_by[b] = static_cast<int>(g);
  }
  MatchResult r;
  r.labels.resize(A);
  for (std::size_t a = 0; a < A; ++a) {
    const int g = forced_by[a] >= 0 ? forced_by[a] : owner[a];
    if (g < 0) continue;
    auto& l = r.labels[a];
    l.positive = true;
    l.gt_index = g;
    l.object_class = gts[static_cast<std::size_t>(g)].object_class;
    l.target = encode_box(gts[static_cast<std::size_t>(g)], anchors[a]);
  }
  return r;
}

}  // namespace

TEST(Matching, NoGroundTruthMeansAllNegative) {
  const auto anchors = generate_anchors({2, 2, 2}, {4, 4, 4}, {{4, 4, 4}});
  const auto m = match_anchors(anchors, std::vector<BBox3D>{});
  ASSERT_EQ(m.labels.size(), 8u);
  EXPECT_EQ(m.positives(), 0u);
  for (const auto& l : m.labels) EXPECT_EQ(l.object_class, 0);
}

TEST(Matching, ArgmaxBelowThresholdIsPositive) {
  // anchor [0,4]^3 vs gt [0,4]x[0,4]x[0,1]: IoU 1/4
  const std::vector<BBox3D> anchors{box({2, 2, 2}, {4, 4, 4}), box({20, 20, 20}, {4, 4, 4})};
  const std::vector<BBox3D> gts{box({2, 2, 0.5}, {4, 4, 1}, 2)};
  ASSERT_NEAR(iou3d(anchors[0], gts[0]), 0.25, 1e-12);
  const auto m = match_anchors(anchors, gts, 0.4);
  EXPECT_TRUE(m.labels[0].positive);
  EXPECT_EQ(m.labels[0].gt_index, 0);
  EXPECT_EQ(m.labels[0].object_class, 2);
  EXPECT_FALSE(m.labels[1].positive);
}

TEST(Matching, HigherIouGtWins) {
  // anchor [0,10]^3; gt1 covers half of it (0.5); gt2 a 0.45 slab at the other side
  const std::vector<BBox3D> anchors{box({5, 5, 5}, {10, 10, 10}), box({5, 5, 5}, {10, 10, 10})};
  const std::vector<BBox3D> gts{box({5, 5, 2.5}, {10, 10, 5}), box({5, 5, 7.75}, {10, 10, 4.5})};
  ASSERT_NEAR(iou3d(anchors[0], gts[0]), 0.5, 1e-12);
  ASSERT_NEAR(iou3d(anchors[0], gts[1]), 0.45, 1e-12);
  const auto m = match_anchors(std::vector<BBox3D>{anchors[0]}, gts, 0.4);
  EXPECT_TRUE(m.labels[0].positive);
  EXPECT_EQ(m.labels[0].gt_index, 0);
}

TEST(Matching, ThresholdIsInclusive) {
  // IoU exactly 0.4 with a second anchor that is the argmax
  const std::vector<BBox3D> anchors{box({5, 5, 5}, {10, 10, 10}), box({5, 5, 2}, {10, 10, 4})};
  const std::vector<BBox3D> gts{box({5, 5, 2}, {10, 10, 4})};
  ASSERT_NEAR(iou3d(anchors[0], gts[0]), 0.4, 1e-12);
  const auto m = match_anchors(anchors, gts, 0.4);
  EXPECT_TRUE(m.labels[0].positive);
  EXPECT_TRUE(m.labels[1].positive);
}

TEST(Matching, EqualsBruteForceOnRandomInstances) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> gcount(0, 20), grid(1, 6), cls(1, 3);
  std::uniform_real_distribution<double> pos(0, 24), size(2, 12);
  for (int t = 0; t < 50; ++t) {
    const GridShape gs{grid(rng), grid(rng), grid(rng)};
    const auto set = generate_anchors(gs, {4, 4, 4}, {{6, 6, 6}, {10, 8, 8}});
    ASSERT_LE(set.size(), 500u);
    std::vector<BBox3D> gts;
    const int n = gcount(rng);
    for (int i = 0; i < n; ++i) gts.push_back(box({pos(rng), pos(rng), pos(rng)}, {size(rng), size(rng), size(rng)}, cls(rng)));
    const auto got = match_anchors(set, gts, 0.4);
    const auto want = brute_force(set.anchors, gts, 0.4);
    ASSERT_EQ(got.labels.size(), want.labels.size());
    for (std::size_t a = 0; a < want.labels.size(); ++a) {
      EXPECT_EQ(got.labels[a].positive, want.labels[a].positive) << "trial " << t << " anchor " << a;
      EXPECT_EQ(got.labels[a].gt_index, want.labels[a].gt_index) << "trial " << t << " anchor " << a;
      EXPECT_EQ(got.labels[a].object_class, want.labels[a].object_class);
      for (int k = 0; k < 6; ++k) EXPECT_DOUBLE_EQ(got.labels[a].target[k], want.labels[a].target[k]);
    }
  }
}

TEST(Matching, EveryReachableGtGetsAPositive) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> pos(0, 32), size(1, 6);
  const auto set = generate_anchors({8, 8, 8}, {4, 4, 4}, {{8, 8, 8}});
  for (int t = 0; t < 20; ++t) {
    std::vector<BBox3D> gts;
    for (int i = 0; i < 10; ++i) gts.push_back(box({pos(rng), pos(rng), pos(rng)}, {size(rng), size(rng), size(rng)}));
    const auto m = match_anchors(set, gts, 0.4);
    std::vector<int> hits(gts.size(), 0);
    for (const auto& l : m.labels) if (l.positive) ++hits[static_cast<std::size_t>(l.gt_index)];
    for (std::size_t g = 0; g < gts.size(); ++g) {
      // The GT's argmax anchor can only be lost to another GT with a higher IoU there.
      double best = 0;
      std::size_t arg = 0;
      for (std::size_t a = 0; a < set.size(); ++a) {
        const double v = iou3d(set.anchors[a], gts[g]);
        if (v > best) best = v, arg = a;
      }
      if (best == 0) continue;
      const int owner = m.labels[arg].gt_index;
      if (owner != static_cast<int>(g)) {
        EXPECT_GE(iou3d(set.anchors[arg], gts[static_cast<std::size_t>(owner)]), best);
      } else {
        EXPECT_GE(hits[g], 1);
      }
    }
  }
}
