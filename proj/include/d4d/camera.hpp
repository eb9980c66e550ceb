#pragma once

#include "d4d/core.hpp"

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <string>
#include <vector>

namespace d4d {

// Orbit camera around look_at. Azimuth 0 looks from +z towards the target,
// azimuth grows towards +x; elevation is measured up from the xz-plane; +y up.
struct Camera {
  double azimuth = 0.0;    // degrees
  double elevation = 0.0;  // degrees
  double radius = 2.0;
  double fov_y = 60.0;  // degrees
  std::array<double, 3> look_at{0.0, 0.0, 0.0};
  int width = 64;
  int height = 64;

  void validate() const {
    if (!(radius > 0)) throw UsageError("camera radius must be positive");
    if (!(fov_y > 0 && fov_y < 180)) throw UsageError("camera fov_y must be in (0, 180)");
    if (!(std::abs(elevation) < 90)) throw UsageError("camera elevation must be in (-90, 90)");
    if (width < 1 || height < 1) throw UsageError("camera resolution must be positive");
  }

  Eigen::Vector3d target() const { return {look_at[0], look_at[1], look_at[2]}; }

  Eigen::Vector3d position() const {
    const double az = deg2rad(azimuth), el = deg2rad(elevation);
    return target() + radius * Eigen::Vector3d(std::cos(el) * std::sin(az), std::sin(el),
                                               std::cos(el) * std::cos(az));
  }

  // Columns: right, up, forward.
  Eigen::Matrix3d basis() const {
    const Eigen::Vector3d forward = (target() - position()).normalized();
    const Eigen::Vector3d right = forward.cross(Eigen::Vector3d::UnitY()).normalized();
    const Eigen::Vector3d up = right.cross(forward);
    Eigen::Matrix3d m;
    m << right, up, forward;
    return m;
  }

  // 4x4 camera-to-world (look-at) matrix.
  Eigen::Matrix4d camera_to_world() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = basis();
    m.topRightCorner<3, 1>() = position();
    return m;
  }

  // Unit direction through the centre of pixel (px, py); py = 0 is the top row.
  Eigen::Vector3d pixel_direction(int px, int py) const {
    const double tan_half = std::tan(deg2rad(fov_y) * 0.5);
    const double aspect = double(width) / double(height);
    const double x = (2.0 * (px + 0.5) / width - 1.0) * tan_half * aspect;
    const double y = (1.0 - 2.0 * (py + 0.5) / height) * tan_half;
    const Eigen::Matrix3d b = basis();
    return (b.col(2) + x * b.col(0) + y * b.col(1)).normalized();
  }
};

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct CameraRanges {
  Range azimuth{0.0, 360.0};
  Range elevation{-10.0, 45.0};
  Range radius{1.5, 2.0};
  Range fov_y{40.0, 70.0};

  void validate() const {
    for (const Range* r : {&azimuth, &elevation, &radius, &fov_y})
      if (!(r->lo <= r->hi)) throw ConfigError("camera range requires min <= max");
    if (!(radius.lo > 0)) throw ConfigError("camera radius range must be positive");
    if (!(fov_y.lo > 0 && fov_y.hi < 180)) throw ConfigError("camera fov range must lie in (0, 180)");
    if (!(elevation.lo > -90 && elevation.hi < 90))
      throw ConfigError("camera elevation range must lie in (-90, 90)");
  }
};

enum class CameraMode { kStatic, kDynamic };

inline double wrap_degrees(double a) {
  a = std::fmod(a, 360.0);
  return a < 0 ? a + 360.0 : a;
}

// One draw; in the dynamic stage the caller reuses the camera for every frame.
inline Camera sample_camera(Rng& rng, CameraMode /*mode*/, const CameraRanges& ranges, int width,
                            int height) {
  ranges.validate();
  Camera c;
  c.azimuth = uniform(rng, ranges.azimuth.lo, ranges.azimuth.hi);
  if (ranges.azimuth.hi - ranges.azimuth.lo >= 360.0) c.azimuth = wrap_degrees(c.azimuth);
  c.elevation = uniform(rng, ranges.elevation.lo, ranges.elevation.hi);
  c.radius = uniform(rng, ranges.radius.lo, ranges.radius.hi);
  c.fov_y = uniform(rng, ranges.fov_y.lo, ranges.fov_y.hi);
  c.width = width;
  c.height = height;
  return c;
}

// Front, side, back, side: azimuth offsets 0, 90, 180, 270 degrees.
inline std::array<Camera, 4> four_view_cameras(const Camera& base) {
  base.validate();
  std::array<Camera, 4> views;
  for (int k = 0; k < 4; ++k) {
    views[k] = base;
    views[k].azimuth = wrap_degrees(base.azimuth + 90.0 * k);
  }
  return views;
}

// n evenly spaced timestamps covering [start, start + length].
inline std::vector<double> time_window(double start, double length, int n_frames) {
  if (n_frames < 2) throw UsageError("a time window needs at least two frames");
  std::vector<double> ts(n_frames);
  for (int k = 0; k < n_frames; ++k) ts[k] = start + length * double(k) / double(n_frames - 1);
  ts.back() = start + length;
  return ts;
}

struct TimeWindowRange {
  double min_length = 0.8;
  double max_length = 1.0;
};

inline std::vector<double> sample_time_window(Rng& rng, int n_frames,
                                              const TimeWindowRange& range = {}) {
  if (n_frames < 2) throw UsageError("a time window needs at least two frames");
  if (!(0 < range.min_length && range.min_length <= range.max_length && range.max_length <= 1))
    throw ConfigError("time window lengths must satisfy 0 < min <= max <= 1");
  const double length = uniform(rng, range.min_length, range.max_length);
  const double start = uniform(rng, 0.0, 1.0 - length);
  auto ts = time_window(start, length, n_frames);
  ts.back() = std::min(ts.back(), 1.0);
  return ts;
}

}  // namespace d4d
