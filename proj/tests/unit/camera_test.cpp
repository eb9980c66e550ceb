#include "d4d/camera.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

namespace d4d {
namespace {

TEST(SampleCamera, DegenerateRangesPinEveryValue) {
  CameraRanges r;
  r.azimuth = {30.0, 30.0};
  r.elevation = {12.0, 12.0};
  r.radius = {1.7, 1.7};
  r.fov_y = {45.0, 45.0};
  Rng rng(1);
  for (int i = 0; i < 5; ++i) {
    const auto c = sample_camera(rng, CameraMode::kStatic, r, 32, 16);
    EXPECT_EQ(c.azimuth, 30.0);
    EXPECT_EQ(c.elevation, 12.0);
    EXPECT_EQ(c.radius, 1.7);
    EXPECT_EQ(c.fov_y, 45.0);
    EXPECT_EQ(c.width, 32);
    EXPECT_EQ(c.height, 16);
  }
}

TEST(SampleCamera, FixedSeedIsReproducible) {
  Rng a(42), b(42);
  for (int i = 0; i < 10; ++i) {
    const auto ca = sample_camera(a, CameraMode::kDynamic, CameraRanges{}, 8, 8);
    const auto cb = sample_camera(b, CameraMode::kDynamic, CameraRanges{}, 8, 8);
    EXPECT_EQ(ca.azimuth, cb.azimuth);
    EXPECT_EQ(ca.elevation, cb.elevation);
    EXPECT_EQ(ca.radius, cb.radius);
    EXPECT_EQ(ca.fov_y, cb.fov_y);
  }
}

TEST(SampleCamera, InvalidRangesAreConfigErrors) {
  Rng rng(1);
  CameraRanges r;
  r.radius = {2.0, 1.0};
  EXPECT_THROW(sample_camera(rng, CameraMode::kStatic, r, 8, 8), ConfigError);
  r = {};
  r.elevation = {-95.0, 10.0};
  EXPECT_THROW(sample_camera(rng, CameraMode::kStatic, r, 8, 8), ConfigError);
  r = {};
  r.fov_y = {0.0, 10.0};
  EXPECT_THROW(sample_camera(rng, CameraMode::kStatic, r, 8, 8), ConfigError);
}

TEST(SampleCamera, AzimuthHistogramIsUniform) {
  const int n = 10000, bins = 12;
  std::vector<int> count(bins, 0);
  Rng rng(2024);
  for (int i = 0; i < n; ++i) {
    const auto c = sample_camera(rng, CameraMode::kStatic, CameraRanges{}, 8, 8);
    ASSERT_GE(c.azimuth, 0.0);
    ASSERT_LT(c.azimuth, 360.0);
    ++count[static_cast<int>(c.azimuth / (360.0 / bins))];
  }
  const double p = 1.0 / bins;
  const double mean = n * p, sd = std::sqrt(n * p * (1 - p));
  for (int b = 0; b < bins; ++b) EXPECT_LE(std::abs(count[b] - mean), 3 * sd) << "bin " << b;
}

TEST(SampleCamera, ValuesStayInsideRanges) {
  Rng rng(3);
  const CameraRanges r;
  for (int i = 0; i < 1000; ++i) {
    const auto c = sample_camera(rng, CameraMode::kStatic, r, 8, 8);
    EXPECT_GE(c.elevation, r.elevation.lo);
    EXPECT_LE(c.elevation, r.elevation.hi);
    EXPECT_GE(c.radius, r.radius.lo);
    EXPECT_LE(c.radius, r.radius.hi);
    EXPECT_GE(c.fov_y, r.fov_y.lo);
    EXPECT_LE(c.fov_y, r.fov_y.hi);
  }
}

TEST(FourViews, FrontZero) {
  Camera base;
  const auto v = four_view_cameras(base);
  const double expected[4] = {0, 90, 180, 270};
  for (int k = 0; k < 4; ++k) EXPECT_EQ(v[k].azimuth, expected[k]);
}

TEST(FourViews, ShiftedBase) {
  Camera base;
  base.azimuth = 45;
  base.elevation = 10;
  const auto v = four_view_cameras(base);
  const double expected[4] = {45, 135, 225, 315};
  for (int k = 0; k < 4; ++k) {
    EXPECT_EQ(v[k].azimuth, expected[k]);
    EXPECT_EQ(v[k].elevation, 10);
  }
}

TEST(FourViews, WrapsPast360) {
  Camera base;
  base.azimuth = 300;
  const auto v = four_view_cameras(base);
  EXPECT_EQ(v[1].azimuth, 30);
}

TEST(TimeWindow, FullLengthCoversUnitInterval) {
  Rng rng(5);
  const auto ts = sample_time_window(rng, 24, {1.0, 1.0});
  ASSERT_EQ(ts.size(), 24u);
  for (int k = 0; k < 24; ++k) EXPECT_NEAR(ts[k], k / 23.0, 1e-15);
  EXPECT_EQ(ts.front(), 0.0);
  EXPECT_EQ(ts.back(), 1.0);
}

TEST(TimeWindow, ExplicitStartAndLength) {
  const auto ts = time_window(0.2, 0.8, 24);
  EXPECT_EQ(ts.front(), 0.2);
  EXPECT_EQ(ts.back(), 1.0);
  for (int k = 1; k < 24; ++k) EXPECT_NEAR(ts[k] - ts[k - 1], 0.8 / 23, 1e-15);
}

TEST(TimeWindow, SampledWindowsStayInside) {
  Rng rng(6);
  for (int i = 0; i < 500; ++i) {
    const auto ts = sample_time_window(rng, 24);
    EXPECT_GE(ts.front(), 0.0);
    EXPECT_LE(ts.back(), 1.0);
    const double len = ts.back() - ts.front();
    EXPECT_GE(len, 0.8 - 1e-12);
    EXPECT_LE(len, 1.0 + 1e-12);
  }
}

TEST(TimeWindow, NeedsTwoFrames) {
  Rng rng(1);
  EXPECT_THROW(time_window(0.0, 1.0, 1), UsageError);
  EXPECT_THROW(sample_time_window(rng, 1), UsageError);
  EXPECT_THROW(sample_time_window(rng, 24, {0.9, 0.8}), ConfigError);
}

TEST(Camera, LookAtBasisIsOrthonormal) {
  Camera c;
  c.azimuth = 37;
  c.elevation = 21;
  c.radius = 1.8;
  const auto b = c.basis();
  EXPECT_NEAR((b.transpose() * b - Eigen::Matrix3d::Identity()).norm(), 0.0, 1e-12);
  EXPECT_NEAR((c.position() - c.target()).norm(), 1.8, 1e-12);
  // The centre pixel direction of an odd-sized image points at the target.
  c.width = c.height = 5;
  const auto d = c.pixel_direction(2, 2);
  EXPECT_NEAR((d - (c.target() - c.position()).normalized()).norm(), 0.0, 1e-12);
}

TEST(Camera, AzimuthZeroLooksFromPlusZ) {
  Camera c;
  c.radius = 2;
  const auto p = c.position();
  EXPECT_NEAR(p.z(), 2.0, 1e-15);
  EXPECT_NEAR(p.x(), 0.0, 1e-15);
  c.azimuth = 90;
  EXPECT_NEAR(c.position().x(), 2.0, 1e-12);
}

}  // namespace
}  // namespace d4d
