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

#ifndef CDYN_BENCH_HPP_
#define CDYN_BENCH_HPP_

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cdyn/explore.hpp"
#include "cdyn/filter.hpp"
#include "cdyn/qsim.hpp"
#include "cdyn/sdf_net.hpp"
#include "cdyn/shape.hpp"

namespace cdyn {

// splitmix64 finalizer over (seed, tag, index).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag,
                                 std::uint64_t index = 0) {
  std::uint64_t x = seed ^ (tag * 0x9E3779B97F4A7C15ull) ^
                    (index * 0xD1B54A32D192ED03ull);
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

enum class Strategy { kRandom, kActive, kExpert };

inline Strategy parse_strategy(const std::string& s) {
  if (s == "random") return Strategy::kRandom;
  if (s == "active") return Strategy::kActive;
  if (s == "expert") return Strategy::kExpert;
  throw ConfigError("unknown strategy '" + s + "'");
}

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kRandom: return "random";
    case Strategy::kActive: return "active";
    case Strategy::kExpert: return "expert";
  }
  return "?";
}

// Waypoints are absolute commands. In the wall frame the x column is an
// offset from the true wall position.
struct Trajectory {
  enum class Frame { kWorld, kWall };
  Frame frame = Frame::kWorld;
  std::vector<PlanarPose> waypoints;

  // Command for step l; the last waypoint is held past the end.
  PlanarPose at(std::size_t l, double p_w) const {
    if (waypoints.empty()) throw ConfigError("empty trajectory");
    PlanarPose u = waypoints[std::min(l, waypoints.size() - 1)];
    if (frame == Frame::kWall) u.x += p_w;
    return u;
  }
};

struct ShapeSpec {
  std::string model = "disk";  // disk | box | superellipse | latent_superellipse | sdf_net
  double radius = 0.05;
  double width = 0.08, height = 0.08;
  double a = 0.05, b = 0.05, n = 4.0;
  std::string weights;      // sdf_net only, resolved path
  int reference_shape = -1;  // sdf_net: latent of this training shape as truth
};

struct Scenario {
  std::string name = "scenario";
  std::uint64_t seed = 0;
  ShapeSpec shape;
  ThetaParams theta_true;
  SimConfig sim;
  FilterConfig filter;
  PlanarPose initial_pose{-0.06, 0.15, 0.0};
  Trajectory base;
  Trajectory expert;
  std::vector<Trajectory> eval;
  int exploration_steps = 15;
  int eval_steps = 30;
  int top_k = 100;
  Vec3 random_std{0.03, 0.03, 0.25};
  double action_dx = 0.03, action_dz = 0.03, action_dphi = 0.025;
  Channels sensor_noise{};  // additive Gaussian std per channel, off by default

  void validate() const {
    sim.validate();
    filter.validate();
    const auto a = theta_true.to_array();
    for (int d = 0; d < kThetaDim; ++d)
      if (a[d] < filter.prior[d].lo || a[d] > filter.prior[d].hi)
        throw ConfigError("theta_true outside prior support");
    if (exploration_steps < 1 || eval_steps < 1 || top_k < 1)
      throw ConfigError("step counts must be positive");
    for (double v : sensor_noise)
      if (!(v >= 0.0)) throw ConfigError("sensor noise must be >= 0");
    static const std::set<std::string> models = {
        "disk", "box", "superellipse", "latent_superellipse", "sdf_net"};
    if (!models.count(shape.model))
      throw ConfigError("unknown shape model '" + shape.model + "'");
    if (shape.model == "sdf_net" && shape.weights.empty())
      throw ConfigError("sdf_net shape needs weights");
  }
};

inline std::unique_ptr<ShapeModel> make_shape_model(const ShapeSpec& s) {
  if (s.model == "disk") return std::make_unique<DiskShape>(s.radius);
  if (s.model == "box") return std::make_unique<BoxShape>(s.width, s.height);
  if (s.model == "superellipse")
    return std::make_unique<SuperellipseShape>(s.a, s.b, s.n);
  if (s.model == "latent_superellipse")
    return std::make_unique<LatentSuperellipseShape>(s.radius);
  if (s.model == "sdf_net")
    return std::make_unique<SdfNet>(SdfNet::load(s.weights));
  throw ConfigError("unknown shape model '" + s.model + "'");
}

namespace internal {

// Object view that rejects keys nobody asked for.
class StrictObject {
 public:
  StrictObject(const nlohmann::json& j, std::string where)
      : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }
  ~StrictObject() = default;

  bool has(const std::string& k) {
    seen_.insert(k);
    return j_.contains(k);
  }
  const nlohmann::json& at(const std::string& k) {
    seen_.insert(k);
    if (!j_.contains(k)) throw ConfigError(where_ + ": missing key '" + k + "'");
    return j_.at(k);
  }
  template <typename T>
  void get(const std::string& k, T& out) {
    if (!has(k)) return;
    try {
      out = j_.at(k).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(where_ + ": bad value for '" + k + "'");
    }
  }
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key()))
        throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
  }

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

inline PlanarPose pose_from(const nlohmann::json& j, const std::string& where) {
  if (j.is_array()) {
    if (j.size() != 3) throw ConfigError(where + ": pose needs 3 entries");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
  }
  StrictObject o(j, where);
  PlanarPose p;
  o.get("x_m", p.x);
  o.get("z_m", p.z);
  o.get("phi_rad", p.phi);
  o.finish();
  return p;
}

inline Trajectory trajectory_from(const nlohmann::json& j,
                                  const std::string& where) {
  Trajectory t;
  StrictObject o(j, where);
  std::string frame = "world";
  o.get("frame", frame);
  if (frame == "wall")
    t.frame = Trajectory::Frame::kWall;
  else if (frame != "world")
    throw ConfigError(where + ": frame must be 'world' or 'wall'");
  const auto& wp = o.at("waypoints");
  if (!wp.is_array() || wp.empty())
    throw ConfigError(where + ": waypoints must be a non-empty array");
  for (const auto& w : wp) t.waypoints.push_back(pose_from(w, where));
  o.finish();
  return t;
}

inline nlohmann::json trajectory_to(const Trajectory& t) {
  nlohmann::json wp = nlohmann::json::array();
  for (const auto& p : t.waypoints) wp.push_back({p.x, p.z, p.phi});
  return {{"frame", t.frame == Trajectory::Frame::kWall ? "wall" : "world"},
          {"waypoints", wp}};
}

inline const char* kThetaKeys[kThetaDim] = {
    "z1", "z2", "t_x_m", "t_z_m", "t_phi_rad", "s", "mu", "g_h_m", "p_w_m"};

}  // namespace internal

/**
 * Reads a scenario from JSON. Every key carries its unit in the name and
 * unknown keys are rejected. Relative weight paths resolve against
 * base_dir. When "theta_true" is absent the truth is drawn from the prior
 * with the scenario seed.
 */
inline Scenario scenario_from_json(const nlohmann::json& j,
                                   const std::filesystem::path& base_dir = {}) {
  using internal::StrictObject;
  Scenario sc;
  StrictObject o(j, "scenario");
  o.get("name", sc.name);
  o.get("seed", sc.seed);

  if (o.has("shape")) {
    StrictObject s(o.at("shape"), "shape");
    s.get("model", sc.shape.model);
    s.get("radius_m", sc.shape.radius);
    s.get("width_m", sc.shape.width);
    s.get("height_m", sc.shape.height);
    s.get("a_m", sc.shape.a);
    s.get("b_m", sc.shape.b);
    s.get("exponent", sc.shape.n);
    s.get("reference_shape", sc.shape.reference_shape);
    std::string w;
    s.get("weights", w);
    if (!w.empty()) {
      std::filesystem::path p(w);
      if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
      sc.shape.weights = p.string();
    }
    s.finish();
  }

  if (o.has("sim")) {
    StrictObject s(o.at("sim"), "sim");
    if (s.has("K")) {
      const auto k = s.at("K").get<std::vector<double>>();
      if (k.size() != 3) throw ConfigError("sim.K needs 3 entries");
      sc.sim.K = {k[0], k[1], k[2]};
    }
    s.get("h_s", sc.sim.h);
    s.get("n_sub", sc.sim.n_sub);
    s.get("n_settle", sc.sim.n_settle);
    s.get("contact_threshold_m", sc.sim.contact_threshold);
    s.get("merge_distance_m", sc.sim.merge_distance);
    s.get("flat_tolerance_m", sc.sim.flat_tolerance);
    s.get("max_contacts", sc.sim.max_contacts);
    s.get("surface_points", sc.sim.n_surface_points);
    s.get("gravity_comp", sc.sim.gravity_comp);
    if (s.has("gravity")) {
      const auto g = s.at("gravity").get<std::vector<double>>();
      if (g.size() != 3) throw ConfigError("sim.gravity needs 3 entries");
      sc.sim.gravity = {g[0], g[1], g[2]};
    }
    s.get("qp_tolerance", sc.sim.qp.tolerance);
    s.get("qp_max_iterations", sc.sim.qp.max_iterations);
    s.finish();
  }

  if (o.has("filter")) {
    StrictObject f(o.at("filter"), "filter");
    f.get("particles", sc.filter.M);
    f.get("memory", sc.filter.N);
    f.get("roughness", sc.filter.r);
    f.get("resample_frac", sc.filter.resample_frac);
    if (f.has("R")) {
      const auto r = f.at("R").get<std::vector<double>>();
      if (r.size() != kObsDim) throw ConfigError("filter.R needs 6 entries");
      std::copy(r.begin(), r.end(), sc.filter.R.begin());
    }
    std::string src;
    f.get("roughen_variance", src);
    if (src == "weighted")
      sc.filter.roughen_source = RoughenSource::kWeighted;
    else if (src == "particles")
      sc.filter.roughen_source = RoughenSource::kParticles;
    else if (!src.empty())
      throw ConfigError("filter.roughen_variance must be weighted|particles");
    if (f.has("prior")) {
      StrictObject p(f.at("prior"), "filter.prior");
      for (int d = 0; d < kThetaDim; ++d) {
        if (!p.has(internal::kThetaKeys[d])) continue;
        const auto v = p.at(internal::kThetaKeys[d]).get<std::vector<double>>();
        if (v.size() != 2) throw ConfigError("prior intervals need 2 entries");
        sc.filter.prior[d] = {v[0], v[1]};
      }
      p.finish();
    }
    f.finish();
  }

  bool have_theta = false;
  if (o.has("theta_true")) {
    StrictObject t(o.at("theta_true"), "theta_true");
    auto a = sc.theta_true.to_array();
    for (int d = 0; d < kThetaDim; ++d) t.get(internal::kThetaKeys[d], a[d]);
    t.finish();
    sc.theta_true = ThetaParams::from_array(a);
    have_theta = true;
  }

  if (o.has("initial_pose"))
    sc.initial_pose = internal::pose_from(o.at("initial_pose"), "initial_pose");
  if (o.has("base_trajectory"))
    sc.base = internal::trajectory_from(o.at("base_trajectory"), "base_trajectory");
  if (o.has("expert_trajectory"))
    sc.expert =
        internal::trajectory_from(o.at("expert_trajectory"), "expert_trajectory");
  if (o.has("eval_trajectories")) {
    const auto& e = o.at("eval_trajectories");
    if (!e.is_array()) throw ConfigError("eval_trajectories must be an array");
    for (const auto& t : e)
      sc.eval.push_back(internal::trajectory_from(t, "eval_trajectories"));
  }
  o.get("exploration_steps", sc.exploration_steps);
  o.get("eval_steps", sc.eval_steps);
  o.get("top_k", sc.top_k);
  if (o.has("random_std")) {
    const auto r = o.at("random_std").get<std::vector<double>>();
    if (r.size() != 3) throw ConfigError("random_std needs 3 entries");
    sc.random_std = {r[0], r[1], r[2]};
  }
  if (o.has("actions")) {
    StrictObject a(o.at("actions"), "actions");
    a.get("dx_m", sc.action_dx);
    a.get("dz_m", sc.action_dz);
    a.get("dphi_rad", sc.action_dphi);
    a.finish();
  }
  if (o.has("sensor_noise")) {
    const auto r = o.at("sensor_noise").get<std::vector<double>>();
    if (r.size() != kObsDim) throw ConfigError("sensor_noise needs 6 entries");
    std::copy(r.begin(), r.end(), sc.sensor_noise.begin());
  }
  o.finish();

  if (!have_theta) {
    std::mt19937_64 rng(derive_seed(sc.seed, 0x7e7a));
    Particle a;
    for (int d = 0; d < kThetaDim; ++d)
      a[d] = std::uniform_real_distribution<double>(sc.filter.prior[d].lo,
                                                    sc.filter.prior[d].hi)(rng);
    sc.theta_true = ThetaParams::from_array(a);
  }
  if (sc.shape.model == "sdf_net" && sc.shape.reference_shape >= 0) {
    const SdfNet net = SdfNet::load(sc.shape.weights);
    const auto& lat = net.reference_latents();
    if (sc.shape.reference_shape >= static_cast<int>(lat.size()))
      throw ConfigError("reference_shape out of range");
    sc.theta_true.z = lat[sc.shape.reference_shape];
  }
  if (sc.base.waypoints.empty()) sc.base.waypoints.push_back(sc.initial_pose);
  sc.validate();
  return sc;
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read scenario " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("scenario: ") + e.what());
  }
  return scenario_from_json(j, std::filesystem::path(path).parent_path());
}

inline nlohmann::json scenario_to_json(const Scenario& sc) {
  nlohmann::json j;
  j["name"] = sc.name;
  j["seed"] = sc.seed;
  nlohmann::json s = {{"model", sc.shape.model}};
  if (sc.shape.model == "disk" || sc.shape.model == "latent_superellipse")
    s["radius_m"] = sc.shape.radius;
  if (sc.shape.model == "box") {
    s["width_m"] = sc.shape.width;
    s["height_m"] = sc.shape.height;
  }
  if (sc.shape.model == "superellipse") {
    s["a_m"] = sc.shape.a;
    s["b_m"] = sc.shape.b;
    s["exponent"] = sc.shape.n;
  }
  if (sc.shape.model == "sdf_net") s["weights"] = sc.shape.weights;
  j["shape"] = s;
  j["sim"] = {{"K", {sc.sim.K[0], sc.sim.K[1], sc.sim.K[2]}},
              {"h_s", sc.sim.h},
              {"n_sub", sc.sim.n_sub},
              {"n_settle", sc.sim.n_settle},
              {"contact_threshold_m", sc.sim.contact_threshold},
              {"merge_distance_m", sc.sim.merge_distance},
              {"flat_tolerance_m", sc.sim.flat_tolerance},
              {"max_contacts", sc.sim.max_contacts},
              {"surface_points", sc.sim.n_surface_points},
              {"gravity_comp", sc.sim.gravity_comp},
              {"gravity", {sc.sim.gravity[0], sc.sim.gravity[1], sc.sim.gravity[2]}},
              {"qp_tolerance", sc.sim.qp.tolerance},
              {"qp_max_iterations", sc.sim.qp.max_iterations}};
  nlohmann::json prior;
  for (int d = 0; d < kThetaDim; ++d)
    prior[internal::kThetaKeys[d]] = {sc.filter.prior[d].lo, sc.filter.prior[d].hi};
  j["filter"] = {{"particles", sc.filter.M},
                 {"memory", sc.filter.N},
                 {"roughness", sc.filter.r},
                 {"resample_frac", sc.filter.resample_frac},
                 {"R", sc.filter.R},
                 {"roughen_variance", sc.filter.roughen_source ==
                                              RoughenSource::kWeighted
                                          ? "weighted"
                                          : "particles"},
                 {"prior", prior}};
  nlohmann::json t;
  const auto a = sc.theta_true.to_array();
  for (int d = 0; d < kThetaDim; ++d) t[internal::kThetaKeys[d]] = a[d];
  j["theta_true"] = t;
  j["initial_pose"] = {sc.initial_pose.x, sc.initial_pose.z, sc.initial_pose.phi};
  j["base_trajectory"] = internal::trajectory_to(sc.base);
  if (!sc.expert.waypoints.empty())
    j["expert_trajectory"] = internal::trajectory_to(sc.expert);
  j["eval_trajectories"] = nlohmann::json::array();
  for (const auto& e : sc.eval) j["eval_trajectories"].push_back(internal::trajectory_to(e));
  j["exploration_steps"] = sc.exploration_steps;
  j["eval_steps"] = sc.eval_steps;
  j["top_k"] = sc.top_k;
  j["random_std"] = {sc.random_std[0], sc.random_std[1], sc.random_std[2]};
  j["actions"] = {{"dx_m", sc.action_dx},
                  {"dz_m", sc.action_dz},
                  {"dphi_rad", sc.action_dphi}};
  j["sensor_noise"] = sc.sensor_noise;
  return j;
}

// ---------------------------------------------------------------------------
// Run log.

struct RunRow {
  int step = 0;
  PlanarPose cmd;
  Observation obs;
  Prediction pred;
  double neff = 0.0;
  bool resampled = false;
  double t_filter_ms = 0.0;
  double t_eig_ms = 0.0;
  Summary posterior;
  std::vector<double> gains;  // active runs only
  int chosen = -1;
};

struct RunLog {
  std::string strategy;
  std::vector<RunRow> rows;
  bool failed = false;
  std::string failure;
};

inline constexpr const char* kRunLogHeader =
    "step,cmd_x,cmd_z,cmd_phi,obs_x,obs_z,obs_phi,obs_fx,obs_fz,obs_tau,"
    "pred_fx,pred_fz,pred_tau,pred_fx_std,pred_fz_std,pred_tau_std,neff,"
    "resampled,t_filter_ms,t_eig_ms";

namespace internal {

inline std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

}  // namespace internal

// With zero_timings the two wall-clock columns are written as 0, which makes
// the file a pure function of (scenario, seed).
inline std::string run_log_csv(const RunLog& log, bool zero_timings = false) {
  using internal::fmt;
  std::ostringstream s;
  s << kRunLogHeader << "\n";
  for (const auto& r : log.rows) {
    s << r.step << "," << fmt(r.cmd.x) << "," << fmt(r.cmd.z) << ","
      << fmt(r.cmd.phi) << "," << fmt(r.obs.pose.x) << "," << fmt(r.obs.pose.z)
      << "," << fmt(r.obs.pose.phi) << "," << fmt(r.obs.wrench.fx) << ","
      << fmt(r.obs.wrench.fz) << "," << fmt(r.obs.wrench.tau) << ","
      << fmt(r.pred.mean[0]) << "," << fmt(r.pred.mean[1]) << ","
      << fmt(r.pred.mean[2]) << "," << fmt(r.pred.std[0]) << ","
      << fmt(r.pred.std[1]) << "," << fmt(r.pred.std[2]) << "," << fmt(r.neff)
      << "," << (r.resampled ? 1 : 0) << ","
      << (zero_timings ? "0" : fmt(r.t_filter_ms)) << ","
      << (zero_timings ? "0" : fmt(r.t_eig_ms)) << "\n";
  }
  return s.str();
}

inline std::string posterior_csv(const RunLog& log) {
  using internal::fmt;
  std::ostringstream s;
  s << "step";
  for (const char* k : internal::kThetaKeys) s << ",mean_" << k;
  for (const char* k : internal::kThetaKeys) s << ",std_" << k;
  s << "\n";
  for (const auto& r : log.rows) {
    s << r.step;
    for (double v : r.posterior.mean) s << "," << fmt(v);
    for (double v : r.posterior.std) s << "," << fmt(v);
    s << "\n";
  }
  return s.str();
}

// One row per step and candidate.
inline std::string eig_csv(const RunLog& log) {
  using internal::fmt;
  std::ostringstream s;
  s << "step,candidate,gain_nats,chosen\n";
  for (const auto& r : log.rows)
    for (std::size_t c = 0; c < r.gains.size(); ++c)
      s << r.step << "," << c << "," << fmt(r.gains[c]) << ","
        << (static_cast<int>(c) == r.chosen ? 1 : 0) << "\n";
  return s.str();
}

// ---------------------------------------------------------------------------
// Runs.

struct RunOptions {
  int threads = 0;
  std::optional<int> particles;  // overrides the scenario's M
};

struct Rig {
  std::unique_ptr<ShapeModel> model;
  std::unique_ptr<Simulator> truth;
  std::unique_ptr<Simulator> estimator;

  explicit Rig(const Scenario& sc)
      : model(make_shape_model(sc.shape)),
        truth(std::make_unique<Simulator>(*model, sc.sim)),
        estimator(std::make_unique<Simulator>(*model, sc.sim)) {
    // Same code path for truth and estimate; only theta differs.
    if (!(truth->config() == estimator->config()))
      throw ConfigError("truth and estimator simulator configs differ");
  }
};

inline Observation add_sensor_noise(Observation o, const Channels& sd,
                                    std::mt19937_64& rng) {
  Channels c = o.channels();
  std::normal_distribution<double> n(0.0, 1.0);
  for (int k = 0; k < kObsDim; ++k)
    if (sd[k] > 0.0) c[k] += sd[k] * n(rng);
  return Observation::from_channels(c);
}

struct ExplorationResult {
  ParticleSet belief;
  RunLog log;
};

/**
 * Runs one exploration episode: the strategy picks a command, the truth
 * simulator produces the observation and the filter updates on the last N
 * observations. A filter divergence ends the run early and marks it failed.
 */
inline ExplorationResult run_exploration(const Scenario& sc, Strategy strategy,
                                         const Rig& rig,
                                         const RunOptions& opt = {}) {
  using Clock = std::chrono::steady_clock;
  FilterConfig fcfg = sc.filter;
  if (opt.particles) fcfg.M = *opt.particles;
  fcfg.threads = opt.threads;
  fcfg.validate();
  if (strategy == Strategy::kExpert && sc.expert.waypoints.empty())
    throw ConfigError("expert strategy needs an expert_trajectory");

  ExplorationResult res;
  res.log.strategy = to_string(strategy);
  res.belief = init_particles(fcfg, derive_seed(sc.seed, 1));
  std::mt19937_64 noise_rng(derive_seed(sc.seed, 2));
  std::mt19937_64 random_rng(derive_seed(sc.seed, 3));
  const ActionSet actions =
      ActionSet::grid(sc.action_dx, sc.action_dz, sc.action_dphi);
  const double p_w = sc.theta_true.p_w;

  std::vector<Observation> obs;
  std::vector<PlanarPose> cmds;
  {
    const StepResult r0 = rig.truth->step(sc.theta_true, sc.initial_pose,
                                          sc.initial_pose);
    obs.push_back(add_sensor_noise({r0.pose, r0.wrench}, sc.sensor_noise,
                                   noise_rng));
  }
  for (int l = 0; l < sc.exploration_steps; ++l) {
    RunRow row;
    row.step = l;
    const PlanarPose x = obs.back().pose;
    const PlanarPose base = sc.base.at(l, p_w);
    const auto t0 = Clock::now();
    switch (strategy) {
      case Strategy::kRandom: {
        std::normal_distribution<double> n(0.0, 1.0);
        const double dx = sc.random_std[0] * n(random_rng);
        const double dz = sc.random_std[1] * n(random_rng);
        const double dp = sc.random_std[2] * n(random_rng);
        row.cmd = {base.x + dx, base.z + dz, wrap_angle(base.phi + dp)};
        break;
      }
      case Strategy::kActive: {
        auto [u, rep] = select_action(actions, res.belief, x, base, fcfg,
                                      *rig.estimator,
                                      derive_seed(sc.seed, 4, l));
        row.cmd = u;
        row.gains = std::move(rep.gains);
        row.chosen = rep.chosen;
        break;
      }
      case Strategy::kExpert:
        row.cmd = sc.expert.at(l, p_w);
        break;
    }
    const auto t1 = Clock::now();
    row.t_eig_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();

    try {
      row.pred = predict_dynamics(res.belief, x, row.cmd, *rig.estimator,
                                  sc.top_k, opt.threads);
    } catch (const PredictionError&) {
    }
    const StepResult r = rig.truth->step(sc.theta_true, x, row.cmd);
    row.obs = add_sensor_noise({r.pose, r.wrench}, sc.sensor_noise, noise_rng);
    obs.push_back(row.obs);
    cmds.push_back(row.cmd);

    const auto t2 = Clock::now();
    UpdateInfo info;
    try {
      res.belief = pf_update(res.belief, last_window(obs, cmds, fcfg.N), fcfg,
                             *rig.estimator, derive_seed(sc.seed, 5, l), &info);
    } catch (const FilterDivergenceError& e) {
      res.log.failed = true;
      res.log.failure = e.what();
      res.log.rows.push_back(row);
      break;
    }
    row.t_filter_ms =
        std::chrono::duration<double, std::milli>(Clock::now() - t2).count();
    row.neff = info.neff;
    row.resampled = info.resampled;
    row.posterior = posterior_summary(
        res.belief, std::min<std::size_t>(sc.top_k, res.belief.size()));
    res.log.rows.push_back(std::move(row));
  }
  return res;
}

inline ExplorationResult run_exploration(const Scenario& sc, Strategy strategy,
                                         const RunOptions& opt = {}) {
  const Rig rig(sc);
  return run_exploration(sc, strategy, rig, opt);
}

// Absolute errors per channel; pose columns in mm.
struct MetricsRow {
  std::string label;
  double fx = 0.0, fz = 0.0, tau = 0.0, x_mm = 0.0, z_mm = 0.0;
  double peak_force = 0.0;  // ground-truth max |F| over the trajectory, N

  std::array<double, 5> values() const { return {fx, fz, tau, x_mm, z_mm}; }
};

/**
 * Frozen-belief evaluation: the truth simulator runs the trajectory from the
 * scenario's initial pose; at every step the belief predicts the next
 * observation from the true current pose. Rotation is not scored.
 */
inline MetricsRow run_eval(const ParticleSet& frozen, const Scenario& sc,
                           const Trajectory& traj, const Rig& rig,
                           int threads = 0) {
  MetricsRow m;
  PlanarPose x =
      rig.truth->step(sc.theta_true, sc.initial_pose, sc.initial_pose).pose;
  for (int l = 0; l < sc.eval_steps; ++l) {
    const PlanarPose u = traj.at(l, sc.theta_true.p_w);
    const StepResult truth = rig.truth->step(sc.theta_true, x, u);
    const Prediction p = predict_dynamics(frozen, x, u, *rig.estimator,
                                          sc.top_k, threads);
    m.fx += std::abs(p.mean[0] - truth.wrench.fx);
    m.fz += std::abs(p.mean[1] - truth.wrench.fz);
    m.tau += std::abs(p.mean[2] - truth.wrench.tau);
    m.x_mm += 1e3 * std::abs(p.mean[3] - truth.pose.x);
    m.z_mm += 1e3 * std::abs(p.mean[4] - truth.pose.z);
    m.peak_force = std::max(
        m.peak_force, std::hypot(truth.wrench.fx, truth.wrench.fz));
    x = truth.pose;
  }
  const double n = sc.eval_steps;
  m.fx /= n;
  m.fz /= n;
  m.tau /= n;
  m.x_mm /= n;
  m.z_mm /= n;
  return m;
}

// Point-mass belief at the truth.
inline ParticleSet oracle_belief(const Scenario& sc, std::size_t m = 1) {
  ParticleSet ps;
  ps.particles.assign(m, sc.theta_true.to_array());
  ps.weights.assign(m, 1.0 / static_cast<double>(m));
  return ps;
}

struct MetricsReport {
  std::array<double, 5> mean{};
  std::array<double, 5> std{};  // population standard deviation
  std::size_t count = 0;
};

inline constexpr const char* kMetricNames[5] = {"fx_N", "fz_N", "tau_Nm",
                                                "x_mm", "z_mm"};

inline MetricsReport aggregate_metrics(std::span<const MetricsRow> rows) {
  if (rows.empty()) throw ConfigError("aggregate_metrics: no rows");
  MetricsReport r;
  r.count = rows.size();
  const double n = static_cast<double>(rows.size());
  for (const auto& row : rows) {
    const auto v = row.values();
    for (int c = 0; c < 5; ++c) r.mean[c] += v[c] / n;
  }
  for (const auto& row : rows) {
    const auto v = row.values();
    for (int c = 0; c < 5; ++c) r.std[c] += (v[c] - r.mean[c]) * (v[c] - r.mean[c]) / n;
  }
  for (double& s : r.std) s = std::sqrt(s);
  return r;
}

inline std::string metrics_csv(std::span<const MetricsRow> rows) {
  using internal::fmt;
  std::ostringstream s;
  s << "label,fx_N,fz_N,tau_Nm,x_mm,z_mm,peak_force_N\n";
  for (const auto& r : rows)
    s << r.label << "," << fmt(r.fx) << "," << fmt(r.fz) << "," << fmt(r.tau)
      << "," << fmt(r.x_mm) << "," << fmt(r.z_mm) << "," << fmt(r.peak_force)
      << "\n";
  return s.str();
}

inline std::vector<MetricsRow> metrics_from_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) ||
      line != "label,fx_N,fz_N,tau_Nm,x_mm,z_mm,peak_force_N")
    throw FormatError("metrics CSV: bad header");
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 7) throw FormatError("metrics CSV: bad row");
    MetricsRow r;
    try {
      r.label = cells[0];
      r.fx = std::stod(cells[1]);
      r.fz = std::stod(cells[2]);
      r.tau = std::stod(cells[3]);
      r.x_mm = std::stod(cells[4]);
      r.z_mm = std::stod(cells[5]);
      r.peak_force = std::stod(cells[6]);
    } catch (const std::exception&) {
      throw FormatError("metrics CSV: bad number");
    }
    rows.push_back(r);
  }
  return rows;
}

inline nlohmann::json metrics_json(std::span<const MetricsRow> rows) {
  nlohmann::json j;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json o = {{"label", r.label}, {"peak_force_N", r.peak_force}};
    const auto v = r.values();
    for (int c = 0; c < 5; ++c) o[kMetricNames[c]] = v[c];
    j["rows"].push_back(o);
  }
  if (!rows.empty()) {
    const MetricsReport rep = aggregate_metrics(rows);
    for (int c = 0; c < 5; ++c)
      j["aggregate"][kMetricNames[c]] = {{"mean", rep.mean[c]},
                                         {"std", rep.std[c]}};
    j["aggregate"]["count"] = rep.count;
  }
  return j;
}

// Plain-text "mean +- std" table, one line per group.
inline std::string metrics_table(
    const std::vector<std::pair<std::string, MetricsReport>>& groups) {
  std::ostringstream s;
  s << std::left << std::setw(12) << "group";
  for (const char* n : kMetricNames) s << std::setw(20) << n;
  s << "n\n";
  for (const auto& [name, rep] : groups) {
    s << std::setw(12) << name;
    for (int c = 0; c < 5; ++c) {
      std::ostringstream cell;
      cell << std::fixed << std::setprecision(c == 2 ? 3 : 2) << rep.mean[c]
           << " +- " << rep.std[c];
      s << std::setw(20) << cell.str();
    }
    s << rep.count << "\n";
  }
  return s.str();
}

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream f(p);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << s;
}

}  // namespace cdyn

#endif  // CDYN_BENCH_HPP_
