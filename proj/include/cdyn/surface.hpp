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

#ifndef CDYN_SURFACE_HPP_
#define CDYN_SURFACE_HPP_

#include <cmath>
#include <cstdint>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "cdyn/shape.hpp"

namespace cdyn {

class DegenerateShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kSurfaceTolerance = 1e-4;  // m, on |sdf_query|

namespace internal {

// Zero crossings along n_pts rays cast from the object origin, unit scale.
// Each ray is traced inwards from the bounding circle so the outermost
// crossing is found, which is the one that can touch the environment. Rays
// run in lockstep to keep model evaluations batched.
struct TracedPoint {
  Vec2 p;    // unit scale
  double d;  // g(p, z) at p
};

inline std::vector<TracedPoint> trace_unit_surface(const ShapeModel& model,
                                            const Vec2& z, int n_pts,
                                            double tol) {
  const double r0 = model.bounding_radius();
  const auto n = static_cast<std::size_t>(n_pts);
  std::vector<Vec2> dir(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double a = 2.0 * kPi * static_cast<double>(k) / n_pts;
    dir[k] = {std::cos(a), std::sin(a)};
  }

  struct Ray {
    double t, d;           // current sample
    double t_prev, d_prev;  // previous sample, for the secant slope
    double t_out, d_out;    // outside bracket end (d > 0)
    double t_in, d_in;      // inside bracket end (d < 0)
    bool bracketed = false;
    bool done = false;
    bool failed = false;
    int last = 0;  // +1 outside end replaced last, -1 inside end
  };
  std::vector<Ray> rays(n);
  std::vector<Vec2> pts(n);
  std::vector<double> vals(n);
  for (std::size_t k = 0; k < n; ++k) pts[k] = r0 * dir[k];
  model.distance_batch(pts, z, vals);
  for (std::size_t k = 0; k < n; ++k) {
    Ray& r = rays[k];
    r.t = r.t_prev = r.t_out = r0;
    r.d = r.d_prev = r.d_out = vals[k];
    if (!(vals[k] > 0.0)) r.failed = true;  // bounding circle not outside
  }

  std::vector<std::size_t> active;
  std::vector<Vec2> batch;
  std::vector<double> out;
  for (int iter = 0; iter < 60; ++iter) {
    active.clear();
    batch.clear();
    for (std::size_t k = 0; k < n; ++k) {
      Ray& r = rays[k];
      if (r.done || r.failed) continue;
      if (std::abs(r.d) <= tol) {
        r.done = true;
        continue;
      }
      double t_next;
      if (r.bracketed) {
        // Illinois regula falsi between the bracket ends.
        t_next = r.t_out - r.d_out * (r.t_in - r.t_out) / (r.d_in - r.d_out);
      } else {
        // Sphere step, accelerated by the secant slope once two samples exist.
        double step = r.d;
        if (r.t_prev != r.t) {
          const double slope = (r.d_prev - r.d) / (r.t_prev - r.t);
          if (slope > 0.25) step = r.d / slope;
        }
        t_next = r.t - step;
        if (t_next <= 0.0) t_next = 0.5 * r.t;
        if (r.t < 1e-6 * r0) {
          r.failed = true;  // walked to the origin without crossing
          continue;
        }
      }
      r.t_prev = r.t;
      r.d_prev = r.d;
      r.t = t_next;
      active.push_back(k);
      batch.push_back(t_next * dir[k]);
    }
    if (active.empty()) break;
    out.resize(batch.size());
    model.distance_batch(batch, z, out);
    for (std::size_t i = 0; i < active.size(); ++i) {
      Ray& r = rays[active[i]];
      r.d = out[i];
      if (r.d > 0.0) {
        if (r.bracketed && r.last == 1) r.d_in *= 0.5;
        r.t_out = r.t;
        r.d_out = r.d;
        r.last = 1;
      } else {
        if (r.bracketed && r.last == -1) r.d_out *= 0.5;
        r.t_in = r.t;
        r.d_in = r.d;
        r.last = -1;
        r.bracketed = true;
      }
    }
  }

  std::vector<TracedPoint> result;
  result.reserve(n);
  for (std::size_t k = 0; k < n; ++k)
    if (!rays[k].failed) result.push_back({rays[k].t * dir[k], rays[k].d});
  return result;
}

}  // namespace internal

// Points on the zero level set of the scaled shape, object frame. Rays are
// seeded at uniform angles from the origin, marched to the surface, and then
// refined by at most 10 Newton projections p <- p - g grad g / |grad g|^2.
// Points that still miss |sdf_query| <= 1e-4 m are dropped.
inline std::vector<Vec2> surface_points(const LatentShape& shape,
                                        const ShapeModel& model,
                                        int n_pts = 64) {
  if (n_pts < 8) throw ConfigError("surface_points needs n_pts >= 8");
  const double tol = 1e-2 * kSurfaceTolerance;
  const auto traced =
      internal::trace_unit_surface(model, shape.z, n_pts, tol / shape.s);
  std::vector<Vec2> kept;
  kept.reserve(traced.size());
  for (const auto& tp : traced) {
    Vec2 p = shape.s * tp.p;
    double d = shape.s * tp.d;
    if (std::abs(d) > tol) d = sdf_query(p, shape, model);
    for (int it = 0; it < 10 && std::abs(d) > tol; ++it) {
      const Vec2 g = sdf_gradient(p, shape, model);
      const double g2 = g.squaredNorm();
      if (!(g2 > 1e-12)) break;
      p -= d * g / g2;
      d = sdf_query(p, shape, model);
    }
    if (std::abs(d) <= kSurfaceTolerance && p.allFinite()) kept.push_back(p);
  }
  if (2 * static_cast<int>(kept.size()) < n_pts)
    throw DegenerateShapeError("surface_points: only " +
                               std::to_string(kept.size()) + " of " +
                               std::to_string(n_pts) + " points converged");
  return kept;
}

// Unit-scale surface points keyed by the latent code quantised to `quantum`.
// Points are always computed at the cell centre, so lookups are independent
// of insertion order. Scale is applied by the caller (the level set of
// s g(p / s) is the unit level set scaled by s). Safe for concurrent use.
class SurfaceCache {
 public:
  using Points = std::shared_ptr<const std::vector<Vec2>>;

  SurfaceCache(const ShapeModel& model, int n_pts = 64, double quantum = 1e-3,
               std::size_t capacity = 50000)
      : model_(&model), n_pts_(n_pts), quantum_(quantum), capacity_(capacity) {}

  const ShapeModel& model() const { return *model_; }
  int n_pts() const { return n_pts_; }

  Vec2 quantize(const Vec2& z) const {
    if (!model_->depends_on_latent()) return Vec2::Zero();
    return {std::round(z.x() / quantum_) * quantum_,
            std::round(z.y() / quantum_) * quantum_};
  }

  // Throws DegenerateShapeError when the shape cannot be sampled.
  Points unit_points(const Vec2& z) const {
    const Key key = make_key(z);
    {
      std::shared_lock lock(mutex_);
      auto it = map_.find(key);
      if (it != map_.end()) return it->second;
    }
    auto pts = std::make_shared<const std::vector<Vec2>>(
        surface_points(LatentShape{quantize(z), 1.0}, *model_, n_pts_));
    std::unique_lock lock(mutex_);
    if (map_.size() >= capacity_) map_.clear();
    return map_.emplace(key, std::move(pts)).first->second;
  }

  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return map_.size();
  }

 private:
  using Key = std::uint64_t;
  Key make_key(const Vec2& z) const {
    const Vec2 q = quantize(z);
    const auto a = static_cast<std::int32_t>(std::lround(q.x() / quantum_));
    const auto b = static_cast<std::int32_t>(std::lround(q.y() / quantum_));
    return (static_cast<Key>(static_cast<std::uint32_t>(a)) << 32) |
           static_cast<std::uint32_t>(b);
  }

  const ShapeModel* model_;
  int n_pts_;
  double quantum_;
  std::size_t capacity_;
  mutable std::shared_mutex mutex_;
  mutable std::unordered_map<Key, Points> map_;
};

}  // namespace cdyn

#endif  // CDYN_SURFACE_HPP_
