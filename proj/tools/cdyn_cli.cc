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

// Command-line front end: simulate, explore, eval, eig-bench, report.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cdyn/cdyn.hpp"

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string scenario;
  std::optional<std::uint64_t> seed;
  std::optional<int> particles;
  std::string out = "out";
  int threads = 0;
};

void add_common(CLI::App* app, Common& c, bool need_scenario = true) {
  auto* s = app->add_option("--scenario", c.scenario, "scenario JSON file");
  if (need_scenario) s->required();
  app->add_option("--seed", c.seed, "override the scenario seed");
  app->add_option("--particles", c.particles, "override the particle count M");
  app->add_option("--out", c.out, "output directory")->capture_default_str();
  app->add_option("--threads", c.threads, "worker threads (0 = auto)");
}

cdyn::Scenario load(const Common& c) {
  cdyn::Scenario sc = cdyn::load_scenario(c.scenario);
  if (c.seed) sc.seed = *c.seed;
  if (c.particles) sc.filter.M = *c.particles;
  sc.validate();
  return sc;
}

const cdyn::Trajectory& pick_trajectory(const cdyn::Scenario& sc,
                                        const std::string& name) {
  if (name == "base") return sc.base;
  if (name == "expert") return sc.expert;
  if (name.rfind("eval", 0) == 0) {
    const std::size_t k = std::stoul(name.substr(4));
    if (k < sc.eval.size()) return sc.eval[k];
  }
  throw cdyn::ConfigError("unknown trajectory '" + name + "'");
}

std::vector<cdyn::MetricsRow> evaluate(const cdyn::ParticleSet& belief,
                                       const cdyn::Scenario& sc,
                                       const cdyn::Rig& rig, int threads) {
  std::vector<cdyn::MetricsRow> rows;
  for (std::size_t k = 0; k < sc.eval.size(); ++k) {
    cdyn::MetricsRow m = cdyn::run_eval(belief, sc, sc.eval[k], rig, threads);
    m.label = sc.name + "/eval" + std::to_string(k);
    rows.push_back(m);
  }
  return rows;
}

void write_metrics(const fs::path& dir, const std::vector<cdyn::MetricsRow>& rows) {
  cdyn::write_text(dir / "metrics.csv", cdyn::metrics_csv(rows));
  cdyn::write_text(dir / "metrics.json", cdyn::metrics_json(rows).dump(2) + "\n");
}

int cmd_simulate(const Common& c, const std::string& traj, int steps) {
  const cdyn::Scenario sc = load(c);
  const cdyn::Rig rig(sc);
  const cdyn::Trajectory& t = pick_trajectory(sc, traj);
  fs::create_directories(c.out);
  std::ofstream f(fs::path(c.out) / "rollout.csv");
  f << "step,cmd_x,cmd_z,cmd_phi,x,z,phi,fx,fz,tau,contacts\n";
  f.precision(17);
  cdyn::PlanarPose x =
      rig.truth->step(sc.theta_true, sc.initial_pose, sc.initial_pose).pose;
  const int n = steps > 0 ? steps : static_cast<int>(t.waypoints.size());
  for (int l = 0; l < n; ++l) {
    const cdyn::PlanarPose u = t.at(l, sc.theta_true.p_w);
    const cdyn::StepResult r = rig.truth->step(sc.theta_true, x, u);
    const auto contacts = rig.truth->detect_contacts(sc.theta_true, r.pose);
    f << l << "," << u.x << "," << u.z << "," << u.phi << "," << r.pose.x << ","
      << r.pose.z << "," << r.pose.phi << "," << r.wrench.fx << ","
      << r.wrench.fz << "," << r.wrench.tau << "," << contacts.size() << "\n";
    x = r.pose;
  }
  std::cout << "wrote " << (fs::path(c.out) / "rollout.csv").string() << "\n";
  return 0;
}

int cmd_explore(const Common& c, const std::string& strategy, bool zero_timings) {
  const cdyn::Scenario sc = load(c);
  const cdyn::Rig rig(sc);
  const cdyn::Strategy s = cdyn::parse_strategy(strategy);
  cdyn::RunOptions opt;
  opt.threads = c.threads;
  const auto res = cdyn::run_exploration(sc, s, rig, opt);
  const fs::path dir(c.out);
  fs::create_directories(dir);
  cdyn::write_text(dir / "runlog.csv", cdyn::run_log_csv(res.log, zero_timings));
  cdyn::write_text(dir / "posterior.csv", cdyn::posterior_csv(res.log));
  if (s == cdyn::Strategy::kActive)
    cdyn::write_text(dir / "eig.csv", cdyn::eig_csv(res.log));
  cdyn::save_belief(res.belief, (dir / "belief.json").string());
  cdyn::write_text(dir / "scenario.json",
                   cdyn::scenario_to_json(sc).dump(2) + "\n");
  const auto post = cdyn::posterior_summary(
      res.belief, std::min<std::size_t>(sc.top_k, res.belief.size()));
  nlohmann::json run = {{"scenario", sc.name},
                        {"strategy", strategy},
                        {"seed", sc.seed},
                        {"particles", sc.filter.M},
                        {"failed", res.log.failed},
                        {"failure", res.log.failure},
                        {"theta_true", sc.theta_true.to_array()},
                        {"posterior_mean", post.mean},
                        {"posterior_std", post.std}};
  if (!res.log.failed) write_metrics(dir, evaluate(res.belief, sc, rig, c.threads));
  cdyn::write_text(dir / "run.json", run.dump(2) + "\n");
  std::cout << strategy << " run on " << sc.name << (res.log.failed ? " FAILED: " + res.log.failure : "")
            << "\n  g_h est " << post.mean[7] << " true " << sc.theta_true.g_h
            << "\n  p_w est " << post.mean[8] << " true " << sc.theta_true.p_w
            << "\n  output in " << dir.string() << "\n";
  return res.log.failed ? 2 : 0;
}

int cmd_eval(const Common& c, const std::string& belief_path, bool oracle) {
  const cdyn::Scenario sc = load(c);
  const cdyn::Rig rig(sc);
  const cdyn::ParticleSet belief =
      oracle ? cdyn::oracle_belief(sc) : cdyn::load_belief(belief_path);
  const auto rows = evaluate(belief, sc, rig, c.threads);
  const fs::path dir(c.out);
  fs::create_directories(dir);
  write_metrics(dir, rows);
  std::cout << cdyn::metrics_table({{"eval", cdyn::aggregate_metrics(rows)}});
  return 0;
}

int cmd_eig_bench(const Common& c, int warm_steps) {
  using Clock = std::chrono::steady_clock;
  cdyn::Scenario sc = load(c);
  const cdyn::Rig rig(sc);
  cdyn::FilterConfig fcfg = sc.filter;
  fcfg.threads = c.threads;
  // Contact-rich history from the expert (or base) script.
  const cdyn::Trajectory& t = sc.expert.waypoints.empty() ? sc.base : sc.expert;
  std::vector<cdyn::Observation> obs;
  std::vector<cdyn::PlanarPose> cmds;
  const auto r0 = rig.truth->step(sc.theta_true, sc.initial_pose, sc.initial_pose);
  obs.push_back({r0.pose, r0.wrench});
  for (int l = 0; l < warm_steps; ++l) {
    const auto u = t.at(l, sc.theta_true.p_w);
    const auto r = rig.truth->step(sc.theta_true, obs.back().pose, u);
    cmds.push_back(u);
    obs.push_back({r.pose, r.wrench});
  }
  const cdyn::ParticleSet ps = cdyn::init_particles(fcfg, cdyn::derive_seed(sc.seed, 1));
  const auto t0 = Clock::now();
  cdyn::UpdateInfo info;
  const cdyn::ParticleSet updated = cdyn::pf_update(
      ps, cdyn::last_window(obs, cmds, fcfg.N), fcfg, *rig.estimator,
      cdyn::derive_seed(sc.seed, 5), &info);
  const auto t1 = Clock::now();
  const auto [u, rep] = cdyn::select_action(
      cdyn::ActionSet::grid(sc.action_dx, sc.action_dz, sc.action_dphi), updated,
      obs.back().pose, t.at(warm_steps, sc.theta_true.p_w), fcfg, *rig.estimator,
      cdyn::derive_seed(sc.seed, 4));
  const auto t2 = Clock::now();
  const double filter_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
  const double eig_ms = std::chrono::duration<double, std::milli>(t2 - t1).count();
  nlohmann::json j = {{"particles", fcfg.M},
                      {"memory", fcfg.N},
                      {"threads", fcfg.threads > 0 ? fcfg.threads : cdyn::default_thread_count()},
                      {"filter_update_ms", filter_ms},
                      {"eig_step_ms", eig_ms},
                      {"retained", rep.n_retained},
                      {"candidates", rep.gains.size()},
                      {"chosen", rep.chosen},
                      {"neff", info.neff}};
  fs::create_directories(c.out);
  cdyn::write_text(fs::path(c.out) / "eig_bench.json", j.dump(2) + "\n");
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out) {
  std::map<std::string, std::vector<cdyn::MetricsRow>> groups;
  for (const auto& in : inputs) {
    const fs::path dir(in);
    std::string group = dir.filename().string();
    if (std::ifstream rf(dir / "run.json"); rf) {
      nlohmann::json run;
      rf >> run;
      group = run.value("strategy", group);
    }
    std::ifstream mf(dir / "metrics.csv");
    if (!mf) {
      std::cerr << "skipping " << in << ": no metrics.csv\n";
      continue;
    }
    const auto rows = cdyn::metrics_from_csv(mf);
    auto& g = groups[group];
    g.insert(g.end(), rows.begin(), rows.end());
  }
  if (groups.empty()) throw cdyn::ConfigError("report: no metrics found");
  std::vector<std::pair<std::string, cdyn::MetricsReport>> reps;
  nlohmann::json j;
  for (const auto& [name, rows] : groups) {
    reps.emplace_back(name, cdyn::aggregate_metrics(rows));
    j[name] = cdyn::metrics_json(rows)["aggregate"];
  }
  const std::string table = cdyn::metrics_table(reps);
  fs::create_directories(out);
  cdyn::write_text(fs::path(out) / "report.txt", table);
  cdyn::write_text(fs::path(out) / "report.json", j.dump(2) + "\n");
  std::cout << table;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cdyn: contact dynamics estimation and active exploration"};
  app.require_subcommand(1);

  Common sim_c, exp_c, eval_c, bench_c;
  std::string traj = "base", strategy = "expert", belief, report_out = "report";
  std::vector<std::string> inputs;
  int steps = 0, warm = 3;
  bool zero_timings = false, oracle = false;

  auto* sim = app.add_subcommand("simulate", "roll out the true parameters along a trajectory");
  add_common(sim, sim_c);
  sim->add_option("--trajectory", traj, "base | expert | evalK")->capture_default_str();
  sim->add_option("--steps", steps, "number of steps (default: waypoint count)");

  auto* exp = app.add_subcommand("explore", "run one exploration episode");
  add_common(exp, exp_c);
  exp->add_option("--strategy", strategy, "random | active | expert")
      ->check(CLI::IsMember({"random", "active", "expert"}))
      ->capture_default_str();
  exp->add_flag("--zero-timings", zero_timings, "write 0 in the timing columns");

  auto* ev = app.add_subcommand("eval", "evaluate a frozen belief on the eval trajectories");
  add_common(ev, eval_c);
  ev->add_option("--belief", belief, "belief snapshot (belief.json)");
  ev->add_flag("--oracle", oracle, "use a point mass at the true parameters");

  auto* eb = app.add_subcommand("eig-bench", "time one filter update and one EIG step");
  add_common(eb, bench_c);
  eb->add_option("--warm-steps", warm, "scripted steps before timing")->capture_default_str();

  auto* rep = app.add_subcommand("report", "aggregate metrics of several runs");
  rep->add_option("inputs", inputs, "run output directories")->required();
  rep->add_option("--out", report_out, "output directory")->capture_default_str();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*sim) return cmd_simulate(sim_c, traj, steps);
    if (*exp) return cmd_explore(exp_c, strategy, zero_timings);
    if (*ev) {
      if (belief.empty() && !oracle) throw cdyn::ConfigError("eval needs --belief or --oracle");
      return cmd_eval(eval_c, belief, oracle);
    }
    if (*eb) return cmd_eig_bench(bench_c, warm);
    if (*rep) return cmd_report(inputs, report_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
