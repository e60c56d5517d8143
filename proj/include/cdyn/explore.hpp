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

#ifndef CDYN_EXPLORE_HPP_
#define CDYN_EXPLORE_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "cdyn/filter.hpp"
#include "cdyn/parallel.hpp"
#include "cdyn/qsim.hpp"

namespace cdyn {

// Command deltas applied on top of the base trajectory target.
struct ActionSet {
  std::vector<PlanarPose> candidates;

  // 3 x 3 x 3 grid over {-dx, 0, dx} x {-dz, 0, dz} x {-dphi, 0, dphi}.
  static ActionSet grid(double dx = 0.03, double dz = 0.03,
                        double dphi = 0.025) {
    ActionSet a;
    for (double x : {-dx, 0.0, dx})
      for (double z : {-dz, 0.0, dz})
        for (double p : {-dphi, 0.0, dphi}) a.candidates.push_back({x, z, p});
    return a;
  }
};

struct EigReport {
  std::vector<double> gains;  // nats, one per candidate
  int chosen = 0;
  int n_retained = 0;
};

class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// KL(w_new || w_old) in nats, 0 log 0 = 0.
inline double kl_weights(std::span<const double> w_new,
                         std::span<const double> w_old) {
  if (w_new.size() != w_old.size())
    throw ContractError("kl_weights: length mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < w_new.size(); ++i) {
    if (w_new[i] == 0.0) continue;
    if (!(w_old[i] > 0.0))
      throw ContractError("kl_weights: new weight outside old support");
    kl += w_new[i] * std::log(w_new[i] / w_old[i]);
  }
  return kl;
}

// Uniform subset of ceil(M / 5) particles without replacement, weights
// renormalized. Kept in original order.
inline ParticleSet downsample(const ParticleSet& ps, std::uint64_t seed,
                              std::size_t divisor = 5) {
  const std::size_t m = ps.size();
  const std::size_t k = (m + divisor - 1) / divisor;
  std::vector<std::size_t> idx(m);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j =
        i + std::uniform_int_distribution<std::size_t>(0, m - 1 - i)(rng);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  ParticleSet out;
  double total = 0.0;
  for (std::size_t i : idx) total += ps.weights[i];
  for (std::size_t i : idx) {
    out.particles.push_back(ps.particles[i]);
    out.weights.push_back(total > 0.0 ? ps.weights[i] / total
                                      : 1.0 / static_cast<double>(k));
  }
  return out;
}

/**
 * Expected information gain of command u over the given (already retained)
 * particle subset.
 *
 * Every particle simulates its hypothetical observation from x. For each
 * observer i the subset is re-weighted by the likelihood of o_i alone and
 * the KL divergence to the current weights is accumulated with weight w_i.
 * Failed simulations drop out of both roles.
 */
inline double expected_info_gain(const PlanarPose& u, const ParticleSet& sub,
                                 const PlanarPose& x, const FilterConfig& cfg,
                                 const Simulator& sim) {
  const std::size_t k = sub.size();
  std::vector<Observation> o(k);
  std::vector<char> ok(k, 0);
  parallel_for(
      k,
      [&](std::size_t i) {
        try {
          const StepResult r = sim.step(sub.theta(i), x, u);
          o[i] = {r.pose, r.wrench};
          ok[i] = 1;
        } catch (const StepError&) {
        } catch (const DegenerateShapeError&) {
        }
      },
      cfg.threads);
  std::vector<std::size_t> valid;
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i)
    if (ok[i] && sub.weights[i] > 0.0) {
      valid.push_back(i);
      total += sub.weights[i];
    }
  if (valid.empty() || !(total > 0.0)) return 0.0;
  const std::size_t n = valid.size();
  std::vector<double> w(n);
  for (std::size_t a = 0; a < n; ++a) w[a] = sub.weights[valid[a]] / total;

  std::vector<double> kl(n);
  parallel_for(
      n,
      [&](std::size_t a) {
        std::vector<double> lw(n);
        bool flat = true;
        for (std::size_t b = 0; b < n; ++b) {
          lw[b] = log_likelihood(o[valid[b]], o[valid[a]], cfg.R);
          flat = flat && lw[b] == lw[0];
        }
        // A constant likelihood leaves the weights unchanged.
        if (flat) {
          kl[a] = 0.0;
          return;
        }
        for (std::size_t b = 0; b < n; ++b) lw[b] += std::log(w[b]);
        const auto upd = normalize_log_weights(lw);
        kl[a] = kl_weights(upd, w);
      },
      cfg.threads);
  double g = 0.0;
  for (std::size_t a = 0; a < n; ++a) g += w[a] * kl[a];
  return g;
}

// Downsamples the full belief first.
inline double expected_info_gain(const PlanarPose& u, const ParticleSet& ps,
                                 const PlanarPose& x, const FilterConfig& cfg,
                                 const Simulator& sim, std::uint64_t seed) {
  return expected_info_gain(u, downsample(ps, seed), x, cfg, sim);
}

/**
 * Scores every candidate delta on top of `base` with the same downsampled
 * subset and returns the argmax (lowest index among ties within 1e-12).
 */
inline std::pair<PlanarPose, EigReport> select_action(
    const ActionSet& actions, const ParticleSet& ps, const PlanarPose& x,
    const PlanarPose& base, const FilterConfig& cfg, const Simulator& sim,
    std::uint64_t seed) {
  if (actions.candidates.empty())
    throw ConfigError("select_action: empty action set");
  const ParticleSet sub = downsample(ps, seed);
  EigReport rep;
  rep.n_retained = static_cast<int>(sub.size());
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < actions.candidates.size(); ++c) {
    const PlanarPose& d = actions.candidates[c];
    const PlanarPose u{base.x + d.x, base.z + d.z, wrap_angle(base.phi + d.phi)};
    const double g = expected_info_gain(u, sub, x, cfg, sim);
    rep.gains.push_back(g);
    if (g > best + 1e-12) {
      best = g;
      rep.chosen = static_cast<int>(c);
    }
  }
  const PlanarPose& d = actions.candidates[rep.chosen];
  return {{base.x + d.x, base.z + d.z, wrap_angle(base.phi + d.phi)}, rep};
}

}  // namespace cdyn

#endif  // CDYN_EXPLORE_HPP_
