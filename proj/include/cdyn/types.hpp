// Copyright 2026 The cdyn Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef CDYN_TYPES_HPP_
#define CDYN_TYPES_HPP_

#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace cdyn {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kPi = std::numbers::pi;

// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  return a;
}

inline Mat2 rotation(double phi) {
  const double c = std::cos(phi), s = std::sin(phi);
  Mat2 r;
  r << c, -s, s, c;
  return r;
}

// Out-of-plane component of the planar cross product a x b.
inline double cross2(const Vec2& a, const Vec2& b) {
  return a.x() * b.y() - a.y() * b.x();
}

// Normal rotated by +90 degrees.
inline Vec2 perp(const Vec2& n) { return {-n.y(), n.x()}; }

// Pose in SE(2) on the vertical (x, z) plane. phi is counter-clockwise from
// +x towards +z.
struct PlanarPose {
  double x = 0.0;    // m
  double z = 0.0;    // m
  double phi = 0.0;  // rad

  Vec2 position() const { return {x, z}; }
  Vec3 vec() const { return {x, z, phi}; }
  static PlanarPose from_vec(const Vec3& v) {
    return {v.x(), v.y(), wrap_angle(v.z())};
  }

  // this * other.
  PlanarPose compose(const PlanarPose& other) const {
    const Vec2 p = position() + rotation(phi) * other.position();
    return {p.x(), p.y(), wrap_angle(phi + other.phi)};
  }
  Vec2 transform(const Vec2& p) const {
    return position() + rotation(phi) * p;
  }

  bool operator==(const PlanarPose&) const = default;
};

// Difference a - b with the angular part wrapped.
inline Vec3 pose_delta(const PlanarPose& a, const PlanarPose& b) {
  return {a.x - b.x, a.z - b.z, wrap_angle(a.phi - b.phi)};
}

// Force exerted by the environment on the object, world-aligned axes, torque
// about the end-effector origin.
struct Wrench {
  double fx = 0.0;   // N
  double fz = 0.0;   // N
  double tau = 0.0;  // N m

  Vec3 vec() const { return {fx, fz, tau}; }
  bool operator==(const Wrench&) const = default;
};

// Thrown for malformed inputs detected at load or construction time.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace cdyn

#endif  // CDYN_TYPES_HPP_
