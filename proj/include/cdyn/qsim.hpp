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

#ifndef CDYN_QSIM_HPP_
#define CDYN_QSIM_HPP_

#include <algorithm>
#include <array>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cdyn/environment.hpp"
#include "cdyn/qp_solver.hpp"
#include "cdyn/shape.hpp"
#include "cdyn/surface.hpp"
#include "cdyn/types.hpp"

namespace cdyn {

inline constexpr int kThetaDim = 9;
inline constexpr int kMaxContacts = 8;

// Estimation target. Flat order: [z1, z2, t_x, t_z, t_phi, s, mu, g_h, p_w].
struct ThetaParams {
  Vec2 z = Vec2::Zero();
  PlanarPose t_oe;  // object frame in end-effector frame
  double s = 1.0;
  double mu = 0.5;
  double g_h = 0.0;  // m
  double p_w = 0.15;  // m

  std::array<double, kThetaDim> to_array() const {
    return {z.x(), z.y(), t_oe.x, t_oe.z, t_oe.phi, s, mu, g_h, p_w};
  }
  static ThetaParams from_array(const std::array<double, kThetaDim>& a) {
    ThetaParams t;
    t.z = {a[0], a[1]};
    t.t_oe = {a[2], a[3], a[4]};
    t.s = a[5];
    t.mu = a[6];
    t.g_h = a[7];
    t.p_w = a[8];
    return t;
  }
  LatentShape shape() const { return {z, s}; }
  EnvModel env() const { return {g_h, p_w}; }
};

struct SimConfig {
  Vec3 K{100.0, 100.0, 50.0};  // N/m, N/m, N m/rad
  double h = 0.1;              // s
  int n_sub = 5;               // interpolated sub-targets per command
  int n_settle = 3;            // extra sub-steps holding the final target
  double contact_threshold = 2e-3;  // m
  double merge_distance = 5e-3;     // m
  double flat_tolerance = 5e-4;     // m, patch flatness, see detect_contacts
  int max_contacts = kMaxContacts;
  int n_surface_points = 64;
  bool gravity_comp = true;
  Vec3 gravity = Vec3::Zero();  // generalized external force when not compensated
  QpSettings qp;

  void validate() const {
    if (!(K.minCoeff() > 0.0)) throw ConfigError("K must be positive");
    if (!(h > 0.0)) throw ConfigError("h must be positive");
    if (n_sub < 1) throw ConfigError("n_sub must be >= 1");
    if (n_settle < 0) throw ConfigError("n_settle must be >= 0");
    if (max_contacts < 1 || max_contacts > kMaxContacts)
      throw ConfigError("max_contacts must be in [1, 8]");
    if (!(contact_threshold >= 0.0)) throw ConfigError("bad contact threshold");
  }

  bool operator==(const SimConfig& o) const {
    return K == o.K && h == o.h && n_sub == o.n_sub && n_settle == o.n_settle &&
           contact_threshold == o.contact_threshold &&
           merge_distance == o.merge_distance &&
           flat_tolerance == o.flat_tolerance &&
           max_contacts == o.max_contacts &&
           n_surface_points == o.n_surface_points &&
           gravity_comp == o.gravity_comp && gravity == o.gravity &&
           qp.rho == o.qp.rho && qp.sigma == o.qp.sigma &&
           qp.alpha == o.qp.alpha && qp.tolerance == o.qp.tolerance &&
           qp.max_iterations == o.qp.max_iterations &&
           qp.warm_passes == o.qp.warm_passes;
  }
};

struct ContactPoint {
  Vec2 p_world;
  Vec2 normal;   // unit, out of the environment
  Vec2 tangent;  // normal rotated +90 degrees
  double phi;    // signed distance, m
  Vec2 r;        // lever arm from the end-effector origin, m
  EnvFace face;
};

struct QpSolution {
  Vec3 v = Vec3::Zero();  // m/s, m/s, rad/s
  std::vector<std::pair<double, double>> lambdas;  // (+, -) generator impulses, N s
  Wrench wrench;
  double kkt_residual = 0.0;
  int iterations = 0;
};

class StepError : public std::runtime_error {
 public:
  StepError(const std::string& what, double kkt_residual)
      : std::runtime_error(what), kkt_residual_(kkt_residual) {}
  double kkt_residual() const { return kkt_residual_; }

 private:
  double kkt_residual_;
};

using ContactQp = DenseQp<3, 2 * kMaxContacts>;

namespace internal {

inline Vec3 contact_row(const ContactPoint& c, const Vec2& dir) {
  return {dir.x(), dir.y(), cross2(c.r, dir)};
}

inline PlanarPose interpolate(const PlanarPose& a, const Vec3& delta,
                              double t) {
  return {a.x + t * delta.x(), a.z + t * delta.y(),
          wrap_angle(a.phi + t * delta.z())};
}

}  // namespace internal

// Candidate contacts between the object and the environment.
//
// Object surface points are mapped to the world through ee_pose * t_oe and
// kept when closer than `threshold`. Within each face, kept points that chain
// together (closer than merge_distance, or neighbours along the sampled
// boundary) form one patch, represented by its deepest point. When every
// point of a patch lies within flat_tolerance of the chord between its two
// extreme points, the patch is a flat face and is represented by both
// extremes instead, so the face resists rotation. At most max_contacts
// survive, deepest first.
inline std::vector<ContactPoint> detect_contacts(
    const ThetaParams& theta, const PlanarPose& ee_pose, const SimConfig& cfg,
    const SurfaceCache& cache, double threshold) {
  const auto unit = cache.unit_points(theta.z);
  const PlanarPose obj = ee_pose.compose(theta.t_oe);
  const Mat2 R = rotation(obj.phi);
  const Vec2 o = obj.position();
  const Vec2 ee = ee_pose.position();
  const EnvModel env = theta.env();

  struct Cand {
    Vec2 p;
    EnvDistance e;
    int idx;
  };
  std::vector<Cand> cand;
  cand.reserve(unit->size());
  for (std::size_t i = 0; i < unit->size(); ++i) {
    const Vec2 p = o + R * (theta.s * (*unit)[i]);
    const EnvDistance e = env_sdf(p, env);
    if (e.distance < threshold) cand.push_back({p, e, static_cast<int>(i)});
  }
  std::vector<ContactPoint> out;
  if (cand.empty()) return out;

  const double merge2 = cfg.merge_distance * cfg.merge_distance;
  std::vector<int> parent(cand.size());
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  };
  auto unite = [&](int a, int b) {
    const int ra = find(a), rb = find(b);
    if (ra != rb) parent[std::max(ra, rb)] = std::min(ra, rb);
  };
  const int n_unit = static_cast<int>(unit->size());
  std::vector<int> slot(n_unit, -1);
  for (std::size_t a = 0; a < cand.size(); ++a) slot[cand[a].idx] = static_cast<int>(a);
  for (std::size_t a = 0; a < cand.size(); ++a) {
    const int next = slot[(cand[a].idx + 1) % n_unit];
    if (next >= 0 && cand[next].e.face == cand[a].e.face)
      unite(static_cast<int>(a), next);
  }
  // Distance merging between the runs found so far; runs whose bounding
  // boxes are merge_distance apart are skipped.
  struct Run {
    int root;
    EnvFace face;
    Vec2 lo, hi;
    std::vector<int> members;
  };
  std::vector<Run> runs;
  for (std::size_t a = 0; a < cand.size(); ++a) {
    const int r = find(static_cast<int>(a));
    auto it = std::find_if(runs.begin(), runs.end(),
                           [&](const Run& x) { return x.root == r; });
    if (it == runs.end()) {
      runs.push_back({r, cand[a].e.face, cand[a].p, cand[a].p, {}});
      it = runs.end() - 1;
    }
    it->lo = it->lo.cwiseMin(cand[a].p);
    it->hi = it->hi.cwiseMax(cand[a].p);
    it->members.push_back(static_cast<int>(a));
  }
  for (std::size_t i = 0; i < runs.size(); ++i)
    for (std::size_t j = i + 1; j < runs.size(); ++j) {
      const Run& ra = runs[i];
      const Run& rb = runs[j];
      if (ra.face != rb.face) continue;
      const Vec2 gap =
          (ra.lo - rb.hi).cwiseMax(rb.lo - ra.hi).cwiseMax(0.0);
      if (gap.squaredNorm() >= merge2) continue;
      for (int a : ra.members)
        for (int b : rb.members)
          if ((cand[a].p - cand[b].p).squaredNorm() < merge2) unite(a, b);
    }

  std::vector<int> picked;
  for (std::size_t root = 0; root < cand.size(); ++root) {
    if (find(static_cast<int>(root)) != static_cast<int>(root)) continue;
    int deep = -1, lo = -1, hi = -1;
    const Vec2 t = perp(cand[root].e.normal);
    for (std::size_t i = 0; i < cand.size(); ++i) {
      if (find(static_cast<int>(i)) != static_cast<int>(root)) continue;
      const int ii = static_cast<int>(i);
      if (deep < 0 || cand[i].e.distance < cand[deep].e.distance) deep = ii;
      const double s = t.dot(cand[i].p);
      if (lo < 0 || s < t.dot(cand[lo].p)) lo = ii;
      if (hi < 0 || s > t.dot(cand[hi].p)) hi = ii;
    }
    const Vec2 chord = cand[hi].p - cand[lo].p;
    bool flat = chord.squaredNorm() >= merge2;
    if (flat) {
      const Vec2 off = perp(chord.normalized());
      for (std::size_t i = 0; i < cand.size() && flat; ++i)
        if (find(static_cast<int>(i)) == static_cast<int>(root))
          flat = std::abs(off.dot(cand[i].p - cand[lo].p)) <= cfg.flat_tolerance;
    }
    if (flat) {
      picked.push_back(lo);
      picked.push_back(hi);
    } else {
      picked.push_back(deep);
    }
  }
  std::sort(picked.begin(), picked.end());
  picked.erase(std::unique(picked.begin(), picked.end()), picked.end());
  std::sort(picked.begin(), picked.end(), [&](int a, int b) {
    if (cand[a].e.distance != cand[b].e.distance)
      return cand[a].e.distance < cand[b].e.distance;
    return cand[a].idx < cand[b].idx;
  });
  if (static_cast<int>(picked.size()) > cfg.max_contacts)
    picked.resize(cfg.max_contacts);
  out.reserve(picked.size());
  for (int k : picked) {
    const Cand& c = cand[k];
    out.push_back({c.p, c.e.normal, perp(c.e.normal), c.e.distance, c.p - ee,
                   c.e.face});
  }
  return out;
}

inline std::vector<ContactPoint> detect_contacts(const ThetaParams& theta,
                                                 const PlanarPose& ee_pose,
                                                 const SimConfig& cfg,
                                                 const SurfaceCache& cache) {
  return detect_contacts(theta, ee_pose, cfg, cache, cfg.contact_threshold);
}

// Force on the object from generator impulses:
// f_i = (l+ (n + mu t) + l- (n - mu t)) / h, torque about the ee origin.
inline Wrench recover_wrench(const QpSolution& sol,
                             std::span<const ContactPoint> contacts, double mu,
                             const SimConfig& cfg) {
  Wrench w;
  for (std::size_t i = 0; i < contacts.size(); ++i) {
    const ContactPoint& c = contacts[i];
    const auto [lp, lm] = sol.lambdas[i];
    const Vec2 f = (lp * (c.normal + mu * c.tangent) +
                    lm * (c.normal - mu * c.tangent)) /
                   cfg.h;
    w.fx += f.x();
    w.fz += f.y();
    w.tau += cross2(c.r, f);
  }
  return w;
}

// Assembles the quasi-static step QP in velocity form,
//
//   min_v  1/2 h^2 v^T K v - h v^T (K (x* - x) + tau_ext)
//   s.t.   h (J_n +- mu J_t) v >= -phi     for every contact,
//
// with the two friction-cone generator rows per contact (convex relaxation
// of Coulomb friction). The solver multipliers are forces; impulses are h
// times those.
inline ContactQp build_contact_qp(std::span<const ContactPoint> contacts,
                                  const PlanarPose& x,
                                  const PlanarPose& x_star, double mu,
                                  const SimConfig& cfg) {
  ContactQp qp;
  const double h = cfg.h;
  qp.P = (h * h) * cfg.K.asDiagonal();
  Vec3 rhs = cfg.K.cwiseProduct(pose_delta(x_star, x));
  if (!cfg.gravity_comp) rhs += cfg.gravity;
  qp.q = -h * rhs;
  const auto m = static_cast<Eigen::Index>(2 * contacts.size());
  qp.A.resize(m, 3);
  qp.l.resize(m);
  for (std::size_t i = 0; i < contacts.size(); ++i) {
    const ContactPoint& c = contacts[i];
    const Vec3 jn = internal::contact_row(c, c.normal);
    const Vec3 jt = internal::contact_row(c, c.tangent);
    qp.A.row(2 * i) = h * (jn + mu * jt).transpose();
    qp.A.row(2 * i + 1) = h * (jn - mu * jt).transpose();
    qp.l[2 * i] = qp.l[2 * i + 1] = -c.phi;
  }
  return qp;
}

inline QpSolution build_and_solve_qp(std::span<const ContactPoint> contacts,
                                     const PlanarPose& x,
                                     const PlanarPose& x_star,
                                     const ThetaParams& theta,
                                     const SimConfig& cfg) {
  if (static_cast<int>(contacts.size()) > kMaxContacts)
    throw ConfigError("build_and_solve_qp: more than 8 contacts");
  QpSolution sol;
  if (contacts.empty()) {
    Vec3 target = pose_delta(x_star, x);
    if (!cfg.gravity_comp) target += cfg.gravity.cwiseQuotient(cfg.K);
    sol.v = target / cfg.h;
    return sol;
  }
  const ContactQp qp = build_contact_qp(contacts, x, x_star, theta.mu, cfg);
  const auto res = solve_qp(qp, cfg.qp);
  sol.kkt_residual = res.kkt_residual;
  sol.iterations = res.iterations;
  if (res.status != QpStatus::kSolved)
    throw StepError("contact QP did not converge", res.kkt_residual);
  sol.v = res.x;
  sol.lambdas.resize(contacts.size());
  for (std::size_t i = 0; i < contacts.size(); ++i) {
    sol.lambdas[i] = {cfg.h * res.y[2 * i], cfg.h * res.y[2 * i + 1]};
    // Without friction both generators are the same row; split evenly.
    if (theta.mu == 0.0) {
      const double half = 0.5 * (sol.lambdas[i].first + sol.lambdas[i].second);
      sol.lambdas[i] = {half, half};
    }
  }
  sol.wrench = recover_wrench(sol, contacts, theta.mu, cfg);
  return sol;
}

struct StepResult {
  PlanarPose pose;
  Wrench wrench;
};

// Quasi-static simulator f_theta(x, u) for one rigidly held object against
// static terrain. Stateless apart from the read-mostly surface cache, so a
// single instance can be shared by many workers.
class Simulator {
 public:
  Simulator(const ShapeModel& model, SimConfig cfg)
      : cfg_(std::move(cfg)),
        cache_(std::make_shared<SurfaceCache>(model, cfg_.n_surface_points)) {
    cfg_.validate();
  }

  const SimConfig& config() const { return cfg_; }
  const ShapeModel& model() const { return cache_->model(); }
  const SurfaceCache& cache() const { return *cache_; }

  std::vector<ContactPoint> detect_contacts(const ThetaParams& theta,
                                            const PlanarPose& ee_pose) const {
    return cdyn::detect_contacts(theta, ee_pose, cfg_, *cache_);
  }

  // The command is split into n_sub sub-targets interpolated from x to u,
  // followed by n_settle sub-steps that hold u. Each sub-step detects
  // contacts, solves the step QP and integrates x <- x + h v. The returned
  // wrench is the one of the last sub-step.
  //
  // The contact activation distance of a sub-step is widened by the largest
  // displacement the spring could impose on a surface point, so fast
  // sub-steps cannot tunnel past a contact.
  StepResult step(const ThetaParams& theta, const PlanarPose& x_l,
                  const PlanarPose& u_l) const {
    const auto unit = cache_->unit_points(theta.z);
    double reach = 0.0;
    for (const Vec2& p : *unit)
      reach = std::max(reach, (theta.t_oe.position() +
                               rotation(theta.t_oe.phi) * (theta.s * p))
                                  .norm());
    const Vec3 delta = pose_delta(u_l, x_l);
    PlanarPose x = x_l;
    Wrench w;
    const int total = cfg_.n_sub + cfg_.n_settle;
    for (int k = 1; k <= total; ++k) {
      const PlanarPose target =
          k >= cfg_.n_sub
              ? u_l
              : internal::interpolate(x_l, delta,
                                      static_cast<double>(k) / cfg_.n_sub);
      const Vec3 pull = pose_delta(target, x);
      const double motion = pull.head<2>().norm() + std::abs(pull.z()) * reach;
      const auto contacts = cdyn::detect_contacts(
          theta, x, cfg_, *cache_, cfg_.contact_threshold + motion);
      if (contacts.empty() && cfg_.gravity_comp) {
        x = target;
        w = Wrench{};
        continue;
      }
      const QpSolution sol = build_and_solve_qp(contacts, x, target, theta, cfg_);
      x = PlanarPose::from_vec(x.vec() + cfg_.h * sol.v);
      w = sol.wrench;
    }
    return {x, w};
  }

 private:
  SimConfig cfg_;
  std::shared_ptr<SurfaceCache> cache_;
};

}  // namespace cdyn

#endif  // CDYN_QSIM_HPP_
