/*
 Copyright 2026 The deepsafempc Authors

 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      https://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/

// Acceptance gate. Prints one PASS/FAIL line per criterion and exits nonzero
// when any criterion fails. Criteria 5-8 drive the command-line tool.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include <json.hpp>

#include "dsmpc/harness.hpp"
#include "dsmpc/mappo.hpp"
#include "dsmpc/mpc.hpp"
#include "dsmpc/neural.hpp"
#include "dsmpc/qp.hpp"
#include "oracles.hpp"

#ifndef DSMPC_CLI_PATH
#error "DSMPC_CLI_PATH must name the deepsafempc executable"
#endif

using namespace dsmpc;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

int g_failures = 0;

void report(int id, const std::string& name, const Outcome& o, double seconds, double limit_s) {
  const bool in_time = seconds < limit_s;
  const bool pass = o.pass && in_time;
  if (!pass) ++g_failures;
  std::printf("%s criterion %d (%s): %s; runtime %.1f s (limit %.0f s%s)\n", pass ? "PASS" : "FAIL", id,
              name.c_str(), o.detail.c_str(), seconds, limit_s, in_time ? "" : ", exceeded");
  std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("\"") + DSMPC_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int rc = std::system(cmd.c_str());
  return rc == -1 ? -1 : WEXITSTATUS(rc);
}

Outcome qp_oracle() {
  std::mt19937_64 rng(20260101);
  std::uniform_int_distribution<int> nd(1, 6);
  double worst_obj = 0.0, worst_kkt = 0.0;
  int mismatches = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const int n = nd(rng);
    const int m = std::uniform_int_distribution<int>(0, std::min(2, n))(rng);
    const QPProblem p = oracle::random_box_qp(rng, n, m);
    const oracle::EnumeratedQP ref = oracle::enumerate_box_qp(p);
    const QPSolution sol = solve_box_qp(p);
    if (!ref.feasible || sol.status != QPStatus::Solved) {
      ++mismatches;
      continue;
    }
    const double obj_err = std::abs(p.objective(sol.x) - ref.objective);
    const double kkt = qp_stationarity(p, sol);
    // Independent feasibility and sign checks on the returned point.
    double viol = 0.0;
    for (int i = 0; i < n; ++i) {
      viol = std::max({viol, p.lower(i) - sol.x(i), sol.x(i) - p.upper(i)});
      viol = std::max({viol, -sol.lower_multipliers(i), -sol.upper_multipliers(i)});
    }
    if (m > 0) viol = std::max(viol, (p.eq_matrix * sol.x - p.eq_rhs).cwiseAbs().maxCoeff());
    worst_obj = std::max(worst_obj, obj_err);
    worst_kkt = std::max({worst_kkt, kkt, viol});
  }
  Outcome o;
  o.pass = mismatches == 0 && worst_obj <= 1e-6 && worst_kkt <= 1e-8;
  o.detail = "max |objective - enumeration| " + fmt("%.2e", worst_obj) + ", max KKT residual " +
             fmt("%.2e", worst_kkt) + ", unsolved " + std::to_string(mismatches) + "/50";
  return o;
}

double rel_norm_err(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
}

Outcome gradient_fidelity() {
  std::mt19937_64 rng(20260102);
  std::uniform_int_distribution<int> width(1, 6);
  std::uniform_int_distribution<int> depth(1, 3);
  std::normal_distribution<double> normal(0.0, 1.0);
  double worst_param = 0.0, worst_input = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> sizes{width(rng)};
    const int hidden_layers = depth(rng);
    for (int l = 0; l < hidden_layers; ++l) sizes.push_back(width(rng) + 2);
    sizes.push_back(width(rng));
    MLPNet net = init_mlp(sizes, rng());
    for (auto& layer : net.layers) {
      for (Eigen::Index k = 0; k < layer.bias.size(); ++k) layer.bias(k) = 0.3 * normal(rng);
    }
    Vector x(sizes.front()), g(sizes.back());
    for (auto& v : x) v = normal(rng);
    for (auto& v : g) v = normal(rng);

    const GradientSet grads = mlp_backward(net, x, g);
    const Vector flat = flatten_gradients(grads);
    const std::vector<double> analytic(flat.data(), flat.data() + flat.size());
    worst_param = std::max(worst_param, rel_norm_err(analytic, oracle::fd_parameter_gradient(net, x, g)));

    std::vector<double> fd_in, an_in;
    const double h = 1e-6;
    for (Eigen::Index j = 0; j < x.size(); ++j) {
      std::vector<double> up(x.data(), x.data() + x.size()), down = up;
      up[j] += h;
      down[j] -= h;
      const auto yu = oracle::mlp_forward_loops(net, up);
      const auto yd = oracle::mlp_forward_loops(net, down);
      double d = 0.0;
      for (std::size_t i = 0; i < yu.size(); ++i) d += g(static_cast<Eigen::Index>(i)) * (yu[i] - yd[i]);
      fd_in.push_back(d / (2.0 * h));
      an_in.push_back(grads.input_gradient(j));
    }
    worst_input = std::max(worst_input, rel_norm_err(an_in, fd_in));
  }
  Outcome o;
  o.pass = worst_param < 1e-5 && worst_input < 1e-5;
  o.detail = "max relative error: parameters " + fmt("%.2e", worst_param) + ", inputs " + fmt("%.2e", worst_input);
  return o;
}

Outcome gae_oracle() {
  std::mt19937_64 rng(20260103);
  std::uniform_int_distribution<int> len(1, 50);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = len(rng);
    std::vector<double> rewards(n), values(n + 1);
    std::vector<int> dones(n);
    for (int t = 0; t < n; ++t) {
      rewards[t] = normal(rng);
      dones[t] = unit(rng) < 0.15;
    }
    for (auto& v : values) v = normal(rng);
    const double gamma = 0.8 + 0.2 * unit(rng);
    const double lambda = unit(rng);
    const GaeResult r = compute_gae(rewards, values, dones, gamma, lambda);
    const std::vector<double> ref = oracle::gae_by_definition(rewards, values, dones, gamma, lambda);
    for (int t = 0; t < n; ++t) {
      worst = std::max(worst, std::abs(r.advantages[t] - ref[t]));
      worst = std::max(worst, std::abs(r.returns[t] - (ref[t] + values[t])));
    }
  }
  Outcome o;
  o.pass = worst <= 1e-10;
  o.detail = "max |difference| over 200 sequences " + fmt("%.2e", worst);
  return o;
}

Outcome sqp_correctness() {
  EnvConfig env = env_preset("cheetah2");
  env.n_agents = 1;
  env.coupling_stiffness = 0.0;
  const TrueEnvDynamics dyn(env);
  const MPCBounds bounds = mpc_bounds(env);
  MPCOptions opt;
  opt.horizon = 1;
  std::mt19937_64 rng(20260104);
  std::uniform_real_distribution<double> vel(-4.0, 4.0);
  std::uniform_real_distribution<double> act(-env.action_bound, env.action_bound);
  double worst_action = 0.0, worst_kkt = 0.0;
  int accepted = 0, non_decreasing = 0, converged = 0;
  for (int trial = 0; trial < 20; ++trial) {
    JointState s = JointState::Zero(4);
    s(2) = vel(rng);
    s(3) = vel(rng);
    const JointAction policy = (JointAction(2) << act(rng), act(rng)).finished();
    const FilterResult f = safety_filter(policy, s, dyn, bounds, opt);
    const oracle::GridOptimum g =
        oracle::grid_search(env, {s.data(), s.data() + 4}, {policy(0), policy(1)}, opt.anchor_weight, opt.smooth_eps, 0.01);
    worst_action = std::max({worst_action, std::abs(f.action(0) - g.fx), std::abs(f.action(1) - g.fy)});
    for (const auto& it : f.diagnostics.iterations) {
      if (it.step_length <= 0.0) continue;
      ++accepted;
      if (!(it.merit_after < it.merit_value)) ++non_decreasing;
    }
    if (f.diagnostics.status == SQPStatus::Converged) {
      ++converged;
      worst_kkt = std::max(worst_kkt, f.diagnostics.final_kkt);
    }
  }
  Outcome o;
  o.pass = worst_action <= 0.02 && non_decreasing == 0 && worst_kkt <= 1e-6 && converged > 0;
  o.detail = "max |action - grid| " + fmt("%.4f", worst_action) + ", accepted steps " + std::to_string(accepted) +
             " with " + std::to_string(non_decreasing) + " non-decreasing, converged " + std::to_string(converged) +
             "/20 with max KKT " + fmt("%.2e", worst_kkt);
  return o;
}

// Least-squares slope of the moving average.
double smoothed_trend(const std::vector<double>& y, int window) {
  std::vector<double> s;
  for (std::size_t i = 0; i + window <= y.size(); ++i) {
    s.push_back(std::accumulate(y.begin() + i, y.begin() + i + window, 0.0) / window);
  }
  const double n = static_cast<double>(s.size());
  const double xm = (n - 1.0) / 2.0;
  const double ym = std::accumulate(s.begin(), s.end(), 0.0) / n;
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    num += (i - xm) * (s[i] - ym);
    den += (i - xm) * (i - xm);
  }
  return num / den;
}

}  // namespace

int main() {
  const fs::path work = fs::path(DSMPC_ACCEPTANCE_DIR);
  fs::remove_all(work);
  fs::create_directories(work);

  {
    const auto t0 = Clock::now();
    const Outcome o = qp_oracle();
    report(1, "QP oracle equivalence", o, seconds_since(t0), 10);
  }
  {
    const auto t0 = Clock::now();
    const Outcome o = gradient_fidelity();
    report(2, "gradient fidelity", o, seconds_since(t0), 30);
  }
  {
    const auto t0 = Clock::now();
    const Outcome o = gae_oracle();
    report(3, "GAE oracle", o, seconds_since(t0), 1);
  }
  {
    const auto t0 = Clock::now();
    const Outcome o = sqp_correctness();
    report(4, "SQP correctness", o, seconds_since(t0), 60);
  }

  // Shared training runs for criteria 5-8: default two-agent preset, single-thread.
  const fs::path config = work / "run.toml";
  const fs::path run_a = work / "run_a", run_b = work / "run_b";
  const int rc_cfg = run_cli("print-config --preset cheetah2", config);
  const auto t_train = Clock::now();
  const int rc_a = run_cli("train --config \"" + config.string() + "\" --single-thread --output-dir \"" +
                               run_a.string() + "\"",
                           work / "train_a.log");
  const double train_s = seconds_since(t_train);
  const RunConfig cfg = load_run_config(config);
  const bool trained = rc_cfg == 0 && rc_a == 0 && fs::exists(run_a / "training_summary.json");
  if (!trained) std::printf("training run failed (exit %d); see %s\n", rc_a, (work / "train_a.log").c_str());

  {
    const auto t0 = Clock::now();
    Outcome o;
    if (trained) {
      const json summary = json::parse(slurp(run_a / "training_summary.json"));
      double worst_mse = 0.0;
      for (const auto& v : summary["predictor"]["val_mse_per_dim"]) worst_mse = std::max(worst_mse, v.get<double>());
      const double rmse = summary["predictor"]["val_rmse"].get<double>();
      const int dataset = summary["predictor"]["dataset_size"].get<int>();
      const fs::path curve_dir = work / "pred_error";
      const int rc = run_cli("pred-error --config \"" + config.string() + "\" --checkpoints \"" +
                                 (run_a / "checkpoints").string() + "\" --output-dir \"" + curve_dir.string() + "\"",
                             work / "pred_error.log");
      double max_err = std::numeric_limits<double>::infinity();
      int steps = 0;
      if (rc == 0) {
        std::ifstream csv(curve_dir / "prediction_error.csv");
        std::string line;
        std::getline(csv, line);
        max_err = 0.0;
        while (std::getline(csv, line)) {
          max_err = std::max(max_err, std::stod(line.substr(line.find(',') + 1)));
          ++steps;
        }
      }
      o.pass = rc == 0 && dataset == 20000 && steps == 1000 && worst_mse < 1e-3 && max_err <= 5.0 * rmse;
      o.detail = "dataset " + std::to_string(dataset) + ", max per-dim val MSE " + fmt("%.2e", worst_mse) +
                 ", curve max " + fmt("%.4g", max_err) + " over " + std::to_string(steps) + " steps vs 5x val RMSE " +
                 fmt("%.4g", 5.0 * rmse);
    } else {
      o.detail = "training run failed";
    }
    // Runtime covers the whole training run, which contains predictor training.
    report(5, "predictor quality", o, train_s + seconds_since(t0), 300);
  }
  {
    const auto t0 = Clock::now();
    Outcome o;
    if (trained) {
      std::vector<double> rewards;
      for (const auto& r : read_metrics(run_a / "metrics.jsonl")) {
        if (r["phase"] == "train_policy") rewards.push_back(r["episode_reward"].get<double>());
      }
      const BaselineStats base = random_policy_baseline(cfg.env, 50, derive_seed(cfg.seed, 99));
      double last20 = 0.0;
      const std::size_t k = std::min<std::size_t>(20, rewards.size());
      for (std::size_t i = rewards.size() - k; i < rewards.size(); ++i) last20 += rewards[i] / static_cast<double>(k);
      const double trend = rewards.size() >= 40 ? smoothed_trend(rewards, 20) : 0.0;
      const double bar = base.mean_reward + 3.0 * base.std_reward;
      o.pass = rewards.size() == 300 && last20 >= bar && trend > 0.0;
      o.detail = std::to_string(rewards.size()) + " iterations, last-20 mean reward " + fmt("%.3f", last20) +
                 " vs baseline mean+3sd " + fmt("%.3f", bar) + ", smoothed trend " + fmt("%.4f", trend) + "/iter";
    } else {
      o.detail = "training run failed";
    }
    report(6, "learning progress", o, train_s + seconds_since(t0), 600);
  }
  {
    const auto t0 = Clock::now();
    Outcome o;
    if (trained) {
      const fs::path cmp = work / "compare";
      const int rc = run_cli("compare --config \"" + config.string() + "\" --checkpoints \"" +
                                 (run_a / "checkpoints").string() + "\" --episodes 50 --output-dir \"" +
                                 cmp.string() + "\"",
                             work / "compare.log");
      if (rc == 0) {
        const json s = json::parse(slurp(cmp / "comparison_summary.json"));
        const double off = s["mean_cost_off"], on = s["mean_cost_on"];
        const double ind_off = s["mean_indicator_rate_off"], ind_on = s["mean_indicator_rate_on"];
        o.pass = s["episodes"] == 50 && on <= 0.8 * off && ind_on < ind_off;
        o.detail = "mean cost off " + fmt("%.2f", off) + " on " + fmt("%.2f", on) + " (ratio " +
                   fmt("%.3f", on / off) + "), indicator rate off " + fmt("%.4f", ind_off) + " on " +
                   fmt("%.4f", ind_on);
      } else {
        o.detail = "compare exited with " + std::to_string(rc);
      }
    } else {
      o.detail = "training run failed";
    }
    report(7, "safety effect", o, seconds_since(t0), 300);
  }
  {
    const auto t0 = Clock::now();
    Outcome o;
    if (trained) {
      const int rc = run_cli("train --config \"" + config.string() + "\" --single-thread --output-dir \"" +
                                 run_b.string() + "\"",
                             work / "train_b.log");
      const std::string a = slurp(run_a / "metrics.jsonl");
      const std::string b = slurp(run_b / "metrics.jsonl");
      o.pass = rc == 0 && !a.empty() && a == b;
      o.detail = "metrics files " + std::to_string(a.size()) + " and " + std::to_string(b.size()) + " bytes, " +
                 (a == b ? "identical" : "different");
    } else {
      o.detail = "training run failed";
    }
    report(8, "determinism", o, seconds_since(t0), 600);
  }

  std::printf("%s: %d of 8 criteria failed\n", g_failures == 0 ? "ACCEPTANCE PASSED" : "ACCEPTANCE FAILED", g_failures);
  return g_failures == 0 ? 0 : 1;
}
