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

#ifndef CDYN_SHAPE_HPP_
#define CDYN_SHAPE_HPP_

#include <algorithm>
#include <cmath>
#include <span>
#include <string>

#include "cdyn/types.hpp"

namespace cdyn {

// Latent object geometry: shape code and isotropic scale.
struct LatentShape {
  Vec2 z = Vec2::Zero();  // each component in [-1, 1]
  double s = 1.0;         // in [0.8, 1.2]
};

// Unit-scale latent signed distance g(p, z), positive outside. Learned
// networks and the analytic doubles share this interface so that the
// simulator and the filter never care which one they are driving.
class ShapeModel {
 public:
  virtual ~ShapeModel() = default;

  virtual double distance(const Vec2& p, const Vec2& z) const = 0;

  virtual void distance_batch(std::span<const Vec2> pts, const Vec2& z,
                              std::span<double> out) const {
    for (std::size_t i = 0; i < pts.size(); ++i) out[i] = distance(pts[i], z);
  }

  // Radius of an origin-centred disk containing the zero level set for every
  // latent code, unit scale.
  virtual double bounding_radius() const = 0;

  // False when g ignores z; lets caches collapse all codes onto one entry.
  virtual bool depends_on_latent() const { return true; }

  virtual std::string name() const = 0;
};

// s * g(p / s, z): scaling applied by querying the unit-scale model at the
// down-scaled point. Exact for true distance functions, approximate for
// learned ones.
inline double sdf_query(const Vec2& p, const LatentShape& shape,
                        const ShapeModel& model) {
  return shape.s * model.distance(p / shape.s, shape.z);
}

inline constexpr double kGradientStep = 1e-4;  // m

// Central differences, not normalised.
inline Vec2 sdf_gradient(const Vec2& p, const LatentShape& shape,
                         const ShapeModel& model) {
  const Vec2 dx(kGradientStep, 0.0), dz(0.0, kGradientStep);
  return {(sdf_query(p + dx, shape, model) - sdf_query(p - dx, shape, model)) /
              (2.0 * kGradientStep),
          (sdf_query(p + dz, shape, model) - sdf_query(p - dz, shape, model)) /
              (2.0 * kGradientStep)};
}

// ---------------------------------------------------------------------------
// Analytic doubles.

class DiskShape final : public ShapeModel {
 public:
  explicit DiskShape(double radius) : radius_(radius) {
    if (!(radius > 0.0)) throw ConfigError("disk radius must be positive");
  }
  double distance(const Vec2& p, const Vec2&) const override {
    return p.norm() - radius_;
  }
  double bounding_radius() const override { return 1.5 * radius_; }
  bool depends_on_latent() const override { return false; }
  std::string name() const override { return "disk"; }
  double radius() const { return radius_; }

 private:
  double radius_;
};

// Axis-aligned rectangle centred at the origin, exact Euclidean distance.
class BoxShape final : public ShapeModel {
 public:
  BoxShape(double width, double height) : half_(0.5 * width, 0.5 * height) {
    if (!(width > 0.0 && height > 0.0))
      throw ConfigError("box extents must be positive");
  }
  double distance(const Vec2& p, const Vec2&) const override {
    const Vec2 d = p.cwiseAbs() - half_;
    return d.cwiseMax(0.0).norm() + std::min(std::max(d.x(), d.y()), 0.0);
  }
  double bounding_radius() const override { return 1.5 * half_.norm(); }
  bool depends_on_latent() const override { return false; }
  std::string name() const override { return "box"; }
  Vec2 half_extents() const { return half_; }

 private:
  Vec2 half_;
};

// Radial signed distance of the superellipse |x/a|^n + |z/b|^n = 1:
// |p| - R(theta). The zero set and the sign are exact; the magnitude
// over-estimates the Euclidean distance away from the boundary.
inline double superellipse_radial_distance(const Vec2& p, double a, double b,
                                           double n) {
  const double r = p.norm();
  if (r < 1e-300) return -std::min(a, b);
  const double f = std::pow(std::pow(std::abs(p.x()) / a, n) +
                                std::pow(std::abs(p.y()) / b, n),
                            1.0 / n);
  return r * (f - 1.0) / f;
}

class SuperellipseShape final : public ShapeModel {
 public:
  SuperellipseShape(double a, double b, double exponent)
      : a_(a), b_(b), n_(exponent) {
    if (!(a > 0.0 && b > 0.0 && exponent >= 1.0))
      throw ConfigError("superellipse needs a, b > 0 and exponent >= 1");
  }
  double distance(const Vec2& p, const Vec2&) const override {
    return superellipse_radial_distance(p, a_, b_, n_);
  }
  double bounding_radius() const override {
    return 1.5 * std::hypot(a_, b_);
  }
  bool depends_on_latent() const override { return false; }
  std::string name() const override { return "superellipse"; }

 private:
  double a_, b_, n_;
};

// Superellipse family whose aspect ratio follows z1 and squareness follows
// z2: a = r(1 + 0.35 z1), b = r(1 - 0.35 z1), n = 3.5 + 1.5 z2. A closed-form
// stand-in for a learned latent shape space.
class LatentSuperellipseShape final : public ShapeModel {
 public:
  explicit LatentSuperellipseShape(double radius = 0.05) : radius_(radius) {
    if (!(radius > 0.0)) throw ConfigError("radius must be positive");
  }
  double distance(const Vec2& p, const Vec2& z) const override {
    const Vec2 zc = z.cwiseMax(-1.0).cwiseMin(1.0);
    return superellipse_radial_distance(p, radius_ * (1.0 + 0.35 * zc.x()),
                                        radius_ * (1.0 - 0.35 * zc.x()),
                                        3.5 + 1.5 * zc.y());
  }
  double bounding_radius() const override {
    return 1.35 * radius_ * std::sqrt(2.0) * 1.2;
  }
  std::string name() const override { return "latent_superellipse"; }

 private:
  double radius_;
};

}  // namespace cdyn

#endif  // CDYN_SHAPE_HPP_
