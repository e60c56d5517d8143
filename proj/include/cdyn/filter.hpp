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

#ifndef CDYN_FILTER_HPP_
#define CDYN_FILTER_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cdyn/parallel.hpp"
#include "cdyn/qsim.hpp"
#include "cdyn/types.hpp"

namespace cdyn {

inline constexpr int kObsDim = 6;

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool operator==(const Interval&) const = default;
};

using Particle = std::array<double, kThetaDim>;
using Channels = std::array<double, kObsDim>;

// Uniform prior support of the simulated benchmark, canonical theta order.
inline std::array<Interval, kThetaDim> sim_prior() {
  return {{{-1.0, 1.0},
           {-1.0, 1.0},
           {-0.02, 0.02},
           {-0.02, 0.02},
           {-0.2, 0.2},
           {0.8, 1.2},
           {0.1, 0.9},
           {-0.02, 0.02},
           {0.09, 0.18}}};
}

// Variance that scales the roughening noise.
enum class RoughenSource {
  kParticles,  // unweighted spread of the pre-resample particle set
  kWeighted,   // weighted variance of the pre-resample belief
};

struct FilterConfig {
  int M = 5000;
  int N = 5;  // memory length in observations
  double r = 0.3;
  // Per-channel standard deviations, order (fx, fz, tau, x, z, phi).
  Channels R{30.0, 30.0, 0.3, 1e-4, 1e-4, 0.002};
  std::array<Interval, kThetaDim> prior = sim_prior();
  double resample_frac = 0.5;
  RoughenSource roughen_source = RoughenSource::kParticles;
  int threads = 0;  // 0 picks default_thread_count()

  void validate() const {
    if (M < 2) throw ConfigError("M must be >= 2");
    if (N < 2) throw ConfigError("N must be >= 2");
    if (!(r >= 0.0)) throw ConfigError("r must be >= 0");
    for (double v : R)
      if (!(v > 0.0)) throw ConfigError("R must be positive");
    for (const auto& b : prior)
      if (!(b.hi > b.lo)) throw ConfigError("empty prior interval");
    if (!(resample_frac > 0.0 && resample_frac <= 1.0))
      throw ConfigError("resample_frac must be in (0, 1]");
  }
};

struct Observation {
  PlanarPose pose;
  Wrench wrench;

  // (fx, fz, tau, x, z, phi)
  Channels channels() const {
    return {wrench.fx, wrench.fz, wrench.tau, pose.x, pose.z, pose.phi};
  }
  static Observation from_channels(const Channels& c) {
    return {{c[3], c[4], c[5]}, {c[0], c[1], c[2]}};
  }
  bool operator==(const Observation&) const = default;
};

struct ParticleSet {
  std::vector<Particle> particles;
  std::vector<double> weights;

  std::size_t size() const { return particles.size(); }
  ThetaParams theta(std::size_t i) const {
    return ThetaParams::from_array(particles[i]);
  }
};

class FilterDivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class PredictionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline Particle clamp_to_prior(Particle p,
                               const std::array<Interval, kThetaDim>& prior) {
  for (int d = 0; d < kThetaDim; ++d)
    p[d] = std::clamp(p[d], prior[d].lo, prior[d].hi);
  return p;
}

inline ParticleSet init_particles(const FilterConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  ParticleSet ps;
  ps.particles.resize(cfg.M);
  ps.weights.assign(cfg.M, 1.0 / cfg.M);
  for (auto& p : ps.particles)
    for (int d = 0; d < kThetaDim; ++d)
      p[d] = std::uniform_real_distribution<double>(cfg.prior[d].lo,
                                                    cfg.prior[d].hi)(rng);
  return ps;
}

// Sum of independent Gaussian log densities over the six channels, with the
// angle residual wrapped.
inline double log_likelihood(const Observation& pred, const Observation& actual,
                             const Channels& R) {
  const Channels a = pred.channels(), b = actual.channels();
  double ll = 0.0;
  for (int c = 0; c < kObsDim; ++c) {
    double e = a[c] - b[c];
    if (c == 5) e = wrap_angle(e);
    const double u = e / R[c];
    ll += -0.5 * u * u - std::log(R[c]) - 0.5 * std::log(2.0 * kPi);
  }
  return ll;
}

inline double effective_sample_size(std::span<const double> w) {
  double s = 0.0;
  for (double v : w) s += v * v;
  return 1.0 / s;
}

// Exponentiates and normalizes log-weights in place. -inf entries get zero
// weight; shifted finite entries are floored at -700.
inline std::vector<double> normalize_log_weights(std::span<const double> lw) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : lw) mx = std::max(mx, v);
  if (!std::isfinite(mx))
    throw FilterDivergenceError("all particle weights vanished");
  std::vector<double> w(lw.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < lw.size(); ++i) {
    w[i] = std::isfinite(lw[i]) ? std::exp(std::max(lw[i] - mx, -700.0)) : 0.0;
    sum += w[i];
  }
  for (double& v : w) v /= sum;
  return w;
}

// Copy indices of systematic resampling with a single uniform offset.
inline std::vector<std::size_t> systematic_indices(std::span<const double> w,
                                                   std::size_t m,
                                                   std::mt19937_64& rng) {
  const double u0 = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  std::vector<std::size_t> idx(m);
  double cum = w.empty() ? 0.0 : w[0];
  std::size_t j = 0;
  for (std::size_t k = 0; k < m; ++k) {
    const double u = (u0 + static_cast<double>(k)) / static_cast<double>(m);
    while (u > cum && j + 1 < w.size()) cum += w[++j];
    idx[k] = j;
  }
  return idx;
}

inline ParticleSet resample_systematic(const ParticleSet& ps,
                                       std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto idx = systematic_indices(ps.weights, ps.size(), rng);
  ParticleSet out;
  out.particles.reserve(ps.size());
  for (std::size_t k : idx) out.particles.push_back(ps.particles[k]);
  out.weights.assign(ps.size(), 1.0 / static_cast<double>(ps.size()));
  return out;
}

// Per-dimension variance of a particle set, weighted or plain.
inline Particle particle_variance(const ParticleSet& ps, bool weighted) {
  Particle mean{}, var{};
  const double n = static_cast<double>(ps.size());
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const double w = weighted ? ps.weights[i] : 1.0 / n;
    for (int d = 0; d < kThetaDim; ++d) mean[d] += w * ps.particles[i][d];
  }
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const double w = weighted ? ps.weights[i] : 1.0 / n;
    for (int d = 0; d < kThetaDim; ++d) {
      const double e = ps.particles[i][d] - mean[d];
      var[d] += w * e * e;
    }
  }
  return var;
}

// Adds N(0, r var_d) to every dimension and clamps into the prior.
inline ParticleSet roughen(const ParticleSet& ps, double r, const Particle& var,
                           const std::array<Interval, kThetaDim>& prior,
                           std::uint64_t seed) {
  ParticleSet out = ps;
  if (r == 0.0) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Particle sd;
  for (int d = 0; d < kThetaDim; ++d) sd[d] = std::sqrt(r * var[d]);
  for (auto& p : out.particles) {
    for (int d = 0; d < kThetaDim; ++d) {
      const double e = normal(rng);
      if (sd[d] > 0.0) p[d] += sd[d] * e;
    }
    p = clamp_to_prior(p, prior);
  }
  return out;
}

// The last (up to) N observations and the commands between them:
// cmds[j] moved the system from obs[j] to obs[j + 1].
struct Window {
  std::span<const Observation> obs;
  std::span<const PlanarPose> cmds;
};

inline Window last_window(std::span<const Observation> obs,
                          std::span<const PlanarPose> cmds, int N) {
  if (cmds.size() + 1 != obs.size())
    throw ConfigError("need exactly one command between observations");
  const std::size_t n = std::min<std::size_t>(obs.size(), N);
  return {obs.subspan(obs.size() - n), cmds.subspan(cmds.size() - (n - 1))};
}

struct UpdateInfo {
  double neff = 0.0;  // before resampling
  bool resampled = false;
  int n_errors = 0;   // particles whose simulation failed
};

// Windowed log-likelihood of one particle; -inf when the simulation fails.
inline double window_log_likelihood(const ThetaParams& theta, const Window& win,
                                    const Channels& R, const Simulator& sim) {
  double ll = 0.0;
  try {
    for (std::size_t j = 0; j + 1 < win.obs.size(); ++j) {
      const StepResult r = sim.step(theta, win.obs[j].pose, win.cmds[j]);
      ll += log_likelihood({r.pose, r.wrench}, win.obs[j + 1], R);
    }
  } catch (const StepError&) {
    return -std::numeric_limits<double>::infinity();
  } catch (const DegenerateShapeError&) {
    return -std::numeric_limits<double>::infinity();
  }
  return ll;
}

/**
 * One particle filtering step.
 *
 * Every particle is re-scored against the whole memory window, its old
 * weight applied once. Weights are normalized in log space; when the
 * effective sample size drops to M * resample_frac or below, the set is
 * resampled systematically and roughened.
 *
 * @throws FilterDivergenceError when every particle has zero weight.
 */
inline ParticleSet pf_update(const ParticleSet& ps, const Window& win,
                             const FilterConfig& cfg, const Simulator& sim,
                             std::uint64_t seed, UpdateInfo* info = nullptr) {
  if (win.obs.size() < 2 || win.cmds.size() + 1 != win.obs.size())
    throw ConfigError("pf_update: window needs >= 2 observations");
  const std::size_t m = ps.size();
  std::vector<double> lw(m);
  parallel_for(
      m,
      [&](std::size_t i) {
        const double w0 = ps.weights[i];
        lw[i] = w0 > 0.0 ? std::log(w0) + window_log_likelihood(ps.theta(i), win,
                                                                 cfg.R, sim)
                         : -std::numeric_limits<double>::infinity();
      },
      cfg.threads);
  UpdateInfo local;
  for (double v : lw)
    if (v == -std::numeric_limits<double>::infinity()) ++local.n_errors;
  ParticleSet out;
  out.particles = ps.particles;
  out.weights = normalize_log_weights(lw);
  local.neff = effective_sample_size(out.weights);
  if (local.neff <= cfg.resample_frac * static_cast<double>(m)) {
    std::seed_seq seq{seed, std::uint64_t{0x5eed}};
    std::uint64_t s[2];
    seq.generate(s, s + 2);
    const Particle var = particle_variance(
        out, cfg.roughen_source == RoughenSource::kWeighted);
    out = roughen(resample_systematic(out, s[0]), cfg.r, var, cfg.prior, s[1]);
    local.resampled = true;
  }
  if (info) *info = local;
  return out;
}

// Indices of the k largest weights, ties by lower index.
inline std::vector<std::size_t> top_k_indices(std::span<const double> w,
                                              std::size_t k) {
  std::vector<std::size_t> idx(w.size());
  std::iota(idx.begin(), idx.end(), 0);
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      return w[a] != w[b] ? w[a] > w[b] : a < b;
                    });
  idx.resize(k);
  return idx;
}

struct Summary {
  Particle mean{};
  Particle std{};
};

// Weighted mean and std of the k heaviest particles after renormalization.
// t_phi uses the circular mean.
inline Summary posterior_summary(const ParticleSet& ps, std::size_t k = 100) {
  if (k == 0 || k > ps.size()) throw ConfigError("posterior_summary: bad k");
  const auto idx = top_k_indices(ps.weights, k);
  double total = 0.0;
  for (std::size_t i : idx) total += ps.weights[i];
  const bool uniform = !(total > 0.0);
  Summary s;
  double sn = 0.0, cs = 0.0;
  auto weight = [&](std::size_t i) {
    return uniform ? 1.0 / static_cast<double>(k) : ps.weights[i] / total;
  };
  for (std::size_t i : idx) {
    const double w = weight(i);
    for (int d = 0; d < kThetaDim; ++d) s.mean[d] += w * ps.particles[i][d];
    sn += w * std::sin(ps.particles[i][4]);
    cs += w * std::cos(ps.particles[i][4]);
  }
  s.mean[4] = std::atan2(sn, cs);
  for (std::size_t i : idx) {
    const double w = weight(i);
    for (int d = 0; d < kThetaDim; ++d) {
      double e = ps.particles[i][d] - s.mean[d];
      if (d == 4) e = wrap_angle(e);
      s.std[d] += w * e * e;
    }
  }
  for (double& v : s.std) v = std::sqrt(v);
  return s;
}

struct Prediction {
  Channels mean{};
  Channels std{};
  int n_used = 0;
};

/**
 * Belief-marginal prediction of the next observation from the k heaviest
 * particles. Failed simulations are dropped and the rest renormalized.
 *
 * @throws PredictionError when every simulation fails.
 */
inline Prediction predict_dynamics(const ParticleSet& ps, const PlanarPose& x,
                                   const PlanarPose& u, const Simulator& sim,
                                   std::size_t k = 100, int threads = 0) {
  k = std::min(k, ps.size());
  const auto idx = top_k_indices(ps.weights, k);
  std::vector<Channels> out(k);
  std::vector<char> ok(k, 0);
  parallel_for(
      k,
      [&](std::size_t j) {
        try {
          const StepResult r = sim.step(ps.theta(idx[j]), x, u);
          out[j] = Observation{r.pose, r.wrench}.channels();
          ok[j] = 1;
        } catch (const StepError&) {
        } catch (const DegenerateShapeError&) {
        }
      },
      threads);
  double total = 0.0;
  int used = 0;
  for (std::size_t j = 0; j < k; ++j)
    if (ok[j]) {
      total += ps.weights[idx[j]];
      ++used;
    }
  if (used == 0) throw PredictionError("every particle failed to simulate");
  const bool uniform = !(total > 0.0);
  auto weight = [&](std::size_t j) {
    return uniform ? 1.0 / used : ps.weights[idx[j]] / total;
  };
  Prediction p;
  p.n_used = used;
  double sn = 0.0, cs = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    if (!ok[j]) continue;
    const double w = weight(j);
    for (int c = 0; c < kObsDim; ++c) p.mean[c] += w * out[j][c];
    sn += w * std::sin(out[j][5]);
    cs += w * std::cos(out[j][5]);
  }
  p.mean[5] = std::atan2(sn, cs);
  for (std::size_t j = 0; j < k; ++j) {
    if (!ok[j]) continue;
    const double w = weight(j);
    for (int c = 0; c < kObsDim; ++c) {
      double e = out[j][c] - p.mean[c];
      if (c == 5) e = wrap_angle(e);
      p.std[c] += w * e * e;
    }
  }
  for (double& v : p.std) v = std::sqrt(v);
  return p;
}

// Versioned JSON belief snapshot.
inline constexpr int kBeliefVersion = 1;

inline nlohmann::json belief_to_json(const ParticleSet& ps) {
  nlohmann::json j;
  j["format"] = "cdyn-belief";
  j["version"] = kBeliefVersion;
  j["order"] = {"z1", "z2", "t_x", "t_z", "t_phi", "s", "mu", "g_h", "p_w"};
  j["particles"] = ps.particles;
  j["weights"] = ps.weights;
  return j;
}

inline ParticleSet belief_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("format", "") != "cdyn-belief")
    throw FormatError("not a belief snapshot");
  if (j.value("version", 0) != kBeliefVersion)
    throw FormatError("unsupported belief snapshot version");
  ParticleSet ps;
  try {
    ps.particles = j.at("particles").get<std::vector<Particle>>();
    ps.weights = j.at("weights").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed belief snapshot: ") + e.what());
  }
  if (ps.particles.empty() || ps.particles.size() != ps.weights.size())
    throw FormatError("belief snapshot size mismatch");
  double sum = 0.0;
  for (double w : ps.weights) {
    if (!(w >= 0.0)) throw FormatError("negative weight in snapshot");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw FormatError("weights do not sum to 1");
  return ps;
}

inline void save_belief(const ParticleSet& ps, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << belief_to_json(ps).dump() << "\n";
}

inline ParticleSet load_belief(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("belief snapshot: ") + e.what());
  }
  return belief_from_json(j);
}

}  // namespace cdyn

#endif  // CDYN_FILTER_HPP_
