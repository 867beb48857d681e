#include <gtest/gtest.h>

#include <cmath>

#include "temploc/geometry.hpp"
#include "test_support.hpp"

using namespace temploc;
using namespace testing_support;

TEST(VoxelDownsample, SinglePointIsUnchanged) {
  PointCloud c{{0.1, 0.1, 0.1}};
  auto out = voxel_downsample(c, 0.25);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0], c[0]);
}

TEST(VoxelDownsample, EmptyCloud) { EXPECT_TRUE(voxel_downsample(PointCloud{}, 0.25).empty()); }

TEST(VoxelDownsample, TwoPointsInOneVoxel) {
  PointCloud c{{0.1, 0, 0}, {0.2, 0, 0}};
  auto out = voxel_downsample(c, 0.25);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_NEAR(out[0].x(), 0.15, 1e-15);
  EXPECT_EQ(out[0].y(), 0.0);
}

TEST(VoxelDownsample, RejectsNonPositiveSize) {
  PointCloud c{{0, 0, 0}};
  try {
    voxel_downsample(c, 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::NonPositiveVoxel);
  }
  EXPECT_THROW(voxel_downsample(c, -1.0), Error);
}

TEST(VoxelDownsample, MatchesBinningOracle) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    auto c = random_cloud(rng, 1 + rng.index(400), 2.0);
    const double v = rng.uniform(0.05, 1.0);
    auto out = voxel_downsample(c, v);
    auto ref = brute_voxel(c, v);
    ASSERT_EQ(out.size(), ref.size());
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_LE((out[i] - ref[i]).norm(), 1e-12);
  }
}

TEST(VoxelDownsample, RepeatedDownsampleNeverGrows) {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    auto c = random_cloud(rng, 500, 3.0);
    auto once = voxel_downsample(c, 0.5);
    EXPECT_LE(voxel_downsample(once, 0.5).size(), once.size());
  }
}

TEST(Knn, NearestOfTwo) {
  PointCloud ref{{1, 0, 0}, {2, 0, 0}};
  auto r = knn_search({0, 0, 0}, ref, 1);
  ASSERT_EQ(r.indices.size(), 1u);
  EXPECT_EQ(r.indices[0], 0u);
  EXPECT_EQ(r.distances[0], 1.0);
}

TEST(Knn, TieGoesToLowerIndex) {
  PointCloud ref{{1, 0, 0}, {-1, 0, 0}};
  EXPECT_EQ(knn_search({0, 0, 0}, ref, 1).indices[0], 0u);
  PointCloud ref2{{-1, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, -1, 0}};
  auto r = knn_search({0, 0, 0}, ref2, 3);
  EXPECT_EQ(r.indices, (std::vector<std::size_t>{0, 1, 2}));
}

TEST(Knn, KEqualToSizeReturnsAllSorted) {
  Rng rng(3);
  auto ref = random_cloud(rng, 37);
  auto r = knn_search({0, 0, 0}, ref, ref.size());
  ASSERT_EQ(r.indices.size(), ref.size());
  EXPECT_TRUE(std::is_sorted(r.distances.begin(), r.distances.end()));
  auto sorted = r.indices;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) EXPECT_EQ(sorted[i], i);
}

TEST(Knn, KLargerThanReferenceIsCapped) {
  PointCloud ref{{1, 0, 0}, {2, 0, 0}};
  EXPECT_EQ(knn_search({0, 0, 0}, ref, 10).indices.size(), 2u);
}

TEST(Knn, Errors) {
  try {
    knn_search({0, 0, 0}, PointCloud{}, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::EmptyReference);
  }
  PointCloud ref{{1, 0, 0}};
  EXPECT_THROW(knn_search({0, 0, 0}, ref, 0), Error);
}

TEST(Knn, MatchesBruteForceIncludingDuplicates) {
  Rng rng(5);
  for (int trial = 0; trial < 60; ++trial) {
    auto ref = random_cloud(rng, 1 + rng.index(300), 5.0);
    // integer lattice points create many exact ties
    if (trial % 2 == 0)
      for (auto& p : ref) p = p.array().round();
    const KdTree tree(ref);
    for (int q = 0; q < 20; ++q) {
      Point3 query = random_cloud(rng, 1, 6.0)[0];
      if (trial % 2 == 0) query = query.array().round();
      const std::size_t k = 1 + rng.index(12);
      auto got = tree.knn(query, k);
      auto [idx, d] = brute_knn(query, ref, k);
      ASSERT_EQ(got.indices, idx);
      for (std::size_t i = 0; i < d.size(); ++i) ASSERT_EQ(got.distances[i], d[i]);
    }
  }
}

TEST(Knn, RadiusMatchesBruteForce) {
  Rng rng(6);
  auto ref = random_cloud(rng, 400, 5.0);
  const KdTree tree(ref);
  for (int q = 0; q < 50; ++q) {
    Point3 query = random_cloud(rng, 1, 5.0)[0];
    const double r = rng.uniform(0.1, 4.0);
    std::vector<std::size_t> expect;
    for (std::size_t i = 0; i < ref.size(); ++i)
      if (plain_distance(query, ref[i]) <= r) expect.push_back(i);
    EXPECT_EQ(tree.radius(query, r), expect);
  }
}

TEST(ApplyPose, IdentityTranslationRotation) {
  PointCloud c{{1, 2, 3}, {-1, 0, 4}};
  EXPECT_EQ(apply_pose(Se3Pose::identity(), c), c);
  Se3Pose t;
  t.translation = Point3(1, 2, 3);
  EXPECT_EQ(apply_pose(t, PointCloud{{0, 0, 0}})[0], Point3(1, 2, 3));
  Se3Pose r;
  r.rotation = rot_z(90);
  auto p = apply_pose(r, PointCloud{{1, 0, 0}})[0];
  EXPECT_LE((p - Point3(0, 1, 0)).norm(), 1e-12);
}

TEST(ApplyPose, PreservesPairwiseDistances) {
  Rng rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    auto c = random_cloud(rng, 30);
    auto pose = random_pose(rng);
    auto m = apply_pose(pose, c);
    for (std::size_t i = 0; i < c.size(); ++i)
      for (std::size_t j = i + 1; j < c.size(); ++j)
        EXPECT_NEAR((m[i] - m[j]).norm(), (c[i] - c[j]).norm(), 1e-9);
  }
}

TEST(Kabsch, IdentityOnNonCoplanarPoints) {
  PointCloud s{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  auto p = kabsch_align(s, s);
  EXPECT_LE((p.rotation - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE(p.translation.norm(), 1e-12);
}

TEST(Kabsch, RecoversKnownTransform) {
  PointCloud s{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 2, 3}};
  Se3Pose truth;
  truth.rotation = rot_z(90);
  truth.translation = Point3(1, 2, 3);
  auto p = kabsch_align(s, apply_pose(truth, s));
  EXPECT_LE((p.rotation - truth.rotation).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LE((p.translation - truth.translation).norm(), 1e-9);
}

TEST(Kabsch, RoundTripOnRandomPoses) {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    auto s = random_cloud(rng, 3 + rng.index(50));
    auto truth = random_pose(rng);
    auto p = kabsch_align(s, apply_pose(truth, s));
    const auto rel = p * truth.inverse();
    EXPECT_LE(rotation_angle_deg(rel.rotation), 1e-6);
    EXPECT_LE(rel.translation.norm(), 1e-9);
  }
}

TEST(Kabsch, CoplanarMirrorNeverYieldsReflection) {
  Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    PointCloud s(6);
    for (auto& p : s) p = Point3(rng.uniform(-5, 5), rng.uniform(-5, 5), 0.0);
    PointCloud d = s;
    for (auto& p : d) p.x() = -p.x();  // mirror image of a planar set
    const auto pose = kabsch_align(s, d);
    EXPECT_NEAR(pose.rotation.determinant(), 1.0, 1e-9);
    EXPECT_TRUE(pose.is_valid());
  }
}

TEST(Kabsch, WeightedIgnoresZeroWeightOutlier) {
  PointCloud s{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {3, 3, 3}};
  Se3Pose truth;
  truth.rotation = rot_x(30);
  truth.translation = Point3(-2, 0.5, 1);
  auto d = apply_pose(truth, s);
  d[4] += Point3(10, -4, 7);
  std::vector<double> w{1, 1, 1, 1, 0};
  auto p = kabsch_align(s, d, std::span<const double>(w));
  EXPECT_LE((p.rotation - truth.rotation).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LE((p.translation - truth.translation).norm(), 1e-9);
}

TEST(Kabsch, DegenerateInputs) {
  auto code_of = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return Errc::Io;
  };
  PointCloud two{{0, 0, 0}, {1, 0, 0}};
  EXPECT_EQ(code_of([&] { kabsch_align(two, two); }), Errc::DegenerateConfiguration);
  PointCloud line{{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}};
  EXPECT_EQ(code_of([&] { kabsch_align(line, line); }), Errc::DegenerateConfiguration);
  PointCloud same{{1, 1, 1}, {1, 1, 1}, {1, 1, 1}};
  EXPECT_EQ(code_of([&] { kabsch_align(same, same); }), Errc::DegenerateConfiguration);
  PointCloud tri{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  std::vector<double> zero{0, 0, 0};
  EXPECT_EQ(code_of([&] { kabsch_align(tri, tri, std::span<const double>(zero)); }), Errc::DegenerateConfiguration);
  std::vector<double> neg{1, -1, 1};
  EXPECT_EQ(code_of([&] { kabsch_align(tri, tri, std::span<const double>(neg)); }), Errc::DegenerateConfiguration);
}

TEST(RotationAngle, ClosedForms) {
  EXPECT_EQ(rotation_angle_deg(Mat3::Identity()), 0.0);
  EXPECT_NEAR(rotation_angle_deg(rot_z(10)), 10.0, 1e-9);
  EXPECT_NEAR(rotation_angle_deg(rot_x(180)), 180.0, 1e-9);
  EXPECT_NEAR(rotation_angle_deg(rot_y(-45)), 45.0, 1e-9);
}

TEST(Se3Pose, InverseAndComposition) {
  Rng rng(10);
  for (int i = 0; i < 20; ++i) {
    auto p = random_pose(rng);
    EXPECT_TRUE(p.is_valid());
    auto id = p * p.inverse();
    EXPECT_LE((id.rotation - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE(id.translation.norm(), 1e-11);
  }
  Se3Pose bad;
  bad.rotation = Mat3::Identity() * 2.0;
  EXPECT_FALSE(bad.is_valid());
}

TEST(BoundingBox, ContainsItsPoints) {
  Rng rng(13);
  auto c = random_cloud(rng, 100);
  auto box = bounding_box(c);
  for (const auto& p : c) EXPECT_TRUE(box.contains(p));
  EXPECT_FALSE(box.contains(box.hi + Point3(1, 0, 0)));
}
