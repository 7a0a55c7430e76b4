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

#include "dsmpc/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <numeric>
#include <random>
#include <thread>

#include "dsmpc/error.hpp"

namespace dsmpc {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Stream tags for derive_seed, one per consumer of randomness.
enum SeedStream : std::uint64_t {
  kPolicySeed = 1,
  kRandomDataSeed = 2,
  kPredictorSeed = 3,
  kBufferSampleSeed = 4,
  kEvalSeed = 5,
  kCompareSeed = 6,
  kCurveSeed = 7,
};

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());
}

void write_json(const fs::path& path, const json& doc) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << doc.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

std::vector<double> to_vec(const Vector& v) { return {v.data(), v.data() + v.size()}; }

JointAction policy_action(const ActorPolicy& actor, const std::vector<Vector>& obs, double bound,
                          std::mt19937_64* rng) {
  JointAction a(kAgentActionDim * static_cast<int>(obs.size()));
  for (std::size_t i = 0; i < obs.size(); ++i) {
    a.segment(kAgentActionDim * static_cast<int>(i), kAgentActionDim) = act(actor, obs[i], bound, rng).action;
  }
  return a;
}

// Policy plus optional filter. In open-loop mode a solved sequence is played
// out before the next solve.
class Controller {
 public:
  Controller(const ActorPolicy& actor, const Dynamics* dynamics, const RunConfig& config,
             std::uint64_t noise_seed)
      : actor_(actor),
        dynamics_(dynamics),
        config_(config),
        bounds_(mpc_bounds(config.env)),
        rng_(noise_seed) {}

  struct Decision {
    JointAction action;
    std::optional<SQPDiagnostics> diagnostics;
    bool fallback = false;
  };

  Decision decide(const JointState& state, const std::vector<Vector>& obs) {
    Decision d;
    const JointAction proposal =
        policy_action(actor_, obs, config_.env.action_bound, config_.deterministic_eval ? nullptr : &rng_);
    if (dynamics_ == nullptr) {
      d.action = proposal;
      return d;
    }
    if (!plan_.empty()) {
      d.action = plan_.front();
      plan_.pop_front();
      return d;
    }
    FilterResult f = safety_filter(proposal, state, *dynamics_, bounds_, config_.mpc);
    d.action = f.action;
    d.fallback = f.fallback;
    d.diagnostics = std::move(f.diagnostics);
    if (config_.mpc.open_loop && !f.fallback) plan_.assign(f.sequence.begin() + 1, f.sequence.end());
    return d;
  }

  void reset() { plan_.clear(); }

 private:
  const ActorPolicy& actor_;
  const Dynamics* dynamics_;
  const RunConfig& config_;
  MPCBounds bounds_;
  std::mt19937_64 rng_;
  std::deque<JointAction> plan_;
};

struct EpisodeTotals {
  double reward = 0.0;
  double cost = 0.0;
  int indicator_steps = 0;
  int steps = 0;
  int solves = 0;
  int converged = 0;
  int fallbacks = 0;
  long sqp_iters = 0;

  double indicator_rate() const { return steps ? static_cast<double>(indicator_steps) / steps : 0.0; }
};

EpisodeTotals run_episode(const RunConfig& config, const ActorPolicy& actor, const Dynamics* dynamics,
                          std::uint64_t env_seed, std::uint64_t noise_seed) {
  Controller ctl(actor, dynamics, config, noise_seed);
  auto [state, obs] = reset(config.env, env_seed);
  EpisodeTotals tot;
  for (int t = 0; t < config.env.episode_length; ++t) {
    const Controller::Decision d = ctl.decide(state, obs);
    if (d.diagnostics) {
      ++tot.solves;
      tot.sqp_iters += d.diagnostics->sqp_iters();
      tot.converged += d.diagnostics->status == SQPStatus::Converged;
      tot.fallbacks += d.fallback;
    }
    StepOutcome out = step(state, d.action, t, config.env);
    tot.reward += out.reward;
    tot.cost += out.cost;
    tot.indicator_steps += out.cost_indicator;
    ++tot.steps;
    state = std::move(out.next_state);
    obs = std::move(out.observations);
    if (out.done) break;
  }
  return tot;
}

// Runs fn(i) for i in [0, n), on worker threads unless single_thread.
template <class Fn>
void for_each_index(int n, bool single_thread, Fn&& fn) {
  const int workers = single_thread ? 1 : std::max(1, std::min<int>(n, std::thread::hardware_concurrency()));
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

TransitionDataset mixed_dataset(const RunConfig& config, const std::vector<Transition>& buffer) {
  const PredictorHyper& h = config.predictor;
  const double rf = h.random_fraction;
  const int want_buffer = static_cast<int>(std::lround(h.dataset_size * (1.0 - rf)));
  const int from_buffer = std::min<int>(want_buffer, static_cast<int>(buffer.size()));
  const int from_random = rf >= 1.0 ? h.dataset_size
                                    : static_cast<int>(std::lround(from_buffer * rf / (1.0 - rf)));
  TransitionDataset ds;
  ds.records.reserve(from_buffer + from_random);

  std::mt19937_64 pick(derive_seed(config.seed, kBufferSampleSeed));
  std::vector<int> idx(buffer.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (int k = 0; k < from_buffer; ++k) {
    std::uniform_int_distribution<int> u(k, static_cast<int>(idx.size()) - 1);
    std::swap(idx[k], idx[u(pick)]);
    ds.records.push_back(buffer[idx[k]]);
  }

  const EnvConfig& env = config.env;
  std::uniform_real_distribution<double> ua(-env.action_bound, env.action_bound);
  for (std::uint64_t e = 0; static_cast<int>(ds.records.size()) < from_buffer + from_random; ++e) {
    std::mt19937_64 rng(derive_seed(config.seed, kRandomDataSeed, e));
    JointState s = reset(env, derive_seed(config.seed, kRandomDataSeed, e + (1ULL << 32))).first;
    for (int t = 0; t < env.episode_length && static_cast<int>(ds.records.size()) < from_buffer + from_random; ++t) {
      JointAction a(env.action_dim());
      for (int d = 0; d < a.size(); ++d) a(d) = ua(rng);
      JointState next = true_dynamics(s, a, env);
      ds.records.push_back({s, a, next});
      s = std::move(next);
    }
  }
  return ds;
}

}  // namespace

BaselineStats random_policy_baseline(const EnvConfig& env, int episodes, std::uint64_t seed) {
  env.validate();
  BaselineStats b;
  std::uniform_real_distribution<double> ua(-env.action_bound, env.action_bound);
  for (int e = 0; e < episodes; ++e) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(e), 1));
    auto [s, obs] = reset(env, derive_seed(seed, static_cast<std::uint64_t>(e)));
    double reward = 0.0, cost = 0.0;
    for (int t = 0; t < env.episode_length; ++t) {
      JointAction a(env.action_dim());
      for (int d = 0; d < a.size(); ++d) a(d) = ua(rng);
      StepOutcome out = step(s, a, t, env);
      reward += out.reward;
      cost += out.cost;
      s = std::move(out.next_state);
      if (out.done) break;
    }
    b.episode_rewards.push_back(reward);
    b.episode_costs.push_back(cost);
  }
  b.mean_reward = mean_of(b.episode_rewards);
  b.std_reward = std_of(b.episode_rewards);
  b.mean_cost = mean_of(b.episode_costs);
  return b;
}

CheckpointPaths checkpoint_paths(const fs::path& dir) {
  return {dir / "actor.json", dir / "critic.json", dir / "predictor.json"};
}

TrainingArtifacts run_training(const RunConfig& config) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  auto wallclock = [&]() -> std::optional<double> {
    if (config.single_thread) return std::nullopt;
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };

  TrainingArtifacts art;
  art.output_dir = config.output_dir;
  ensure_dir(art.output_dir / "checkpoints");
  art.metrics = art.output_dir / "metrics.jsonl";
  art.dataset = art.output_dir / "dataset.jsonl";
  art.summary = art.output_dir / "training_summary.json";
  art.checkpoints = checkpoint_paths(art.output_dir / "checkpoints");
  MetricsWriter metrics(art.metrics);
  json summary;
  summary["config"] = run_config_to_json(config);

  // Policy phase: the on-policy batch is rebuilt every iteration; applied
  // transitions accumulate in the data buffer.
  MappoTrainer trainer(config.env, config.ppo, derive_seed(config.seed, kPolicySeed));
  std::vector<Transition> buffer;
  for (int e = 0; e < config.episodes; ++e) {
    try {
      art.policy_stats.push_back(trainer.train_iteration(&buffer, config.single_thread));
    } catch (const Error& err) {
      throw Error(err.code(), std::string("train_policy: ") + err.what());
    }
    const IterationStats& st = art.policy_stats.back();
    MetricsRecord r;
    r.phase = Phase::TrainPolicy;
    r.step = e + 1;
    r.episode_reward = st.mean_episode_reward;
    r.episode_cost = st.mean_episode_cost;
    r.cost_indicator_rate = st.cost_indicator_rate;
    r.wallclock = wallclock();
    metrics.write(r);
  }
  save_actor(art.checkpoints.actor, trainer.actor());
  save_critic(art.checkpoints.critic, trainer.critic());
  summary["policy"] = {{"iterations", config.episodes}, {"buffer_transitions", buffer.size()}};
  if (!art.policy_stats.empty()) {
    summary["policy"]["final_mean_episode_reward"] = art.policy_stats.back().mean_episode_reward;
    summary["policy"]["final_mean_episode_cost"] = art.policy_stats.back().mean_episode_cost;
  }

  // Predictor phase.
  const TransitionDataset dataset = mixed_dataset(config, buffer);
  art.dataset_size = dataset.size();
  save_dataset_jsonl(art.dataset, dataset, config.env);
  DynamicsModel model;
  if (!dataset.empty()) {
    try {
      art.predictor = train_predictor(dataset, config.predictor, derive_seed(config.seed, kPredictorSeed));
    } catch (const Error& err) {
      throw Error(err.code(), std::string("train_predictor: ") + err.what());
    }
    art.predictor_trained = true;
    for (std::size_t k = 0; k < art.predictor.val_max_dim_mse.size(); ++k) {
      MetricsRecord r;
      r.phase = Phase::TrainPredictor;
      r.step = static_cast<int>(k) + 1;
      r.predictor_mse = art.predictor.val_max_dim_mse[k];
      r.wallclock = wallclock();
      metrics.write(r);
    }
    model = art.predictor.model;
  } else {
    model = zero_residual_model(config.env.state_dim(), config.env.action_dim(), config.predictor.hidden,
                                derive_seed(config.seed, kPredictorSeed));
  }
  save_predictor(art.checkpoints.predictor, model);
  summary["predictor"] = {{"trained", art.predictor_trained}, {"dataset_size", art.dataset_size}};
  if (art.predictor_trained) {
    summary["predictor"]["val_mse_per_dim"] = to_vec(art.predictor.val_mse_per_dim);
    summary["predictor"]["val_max_dim_mse"] = art.predictor.val_mse_per_dim.maxCoeff();
    summary["predictor"]["val_rmse"] = art.predictor.val_rmse;
    summary["predictor"]["val_error_bound"] = art.predictor.val_error_bound;
    summary["predictor"]["best_epoch"] = art.predictor.best_epoch + 1;
  }

  // Filtered control loop.
  const PredictorDynamics dynamics(model);
  const ActorPolicy& actor = trainer.actor();
  Controller ctl(actor, config.mpc_enabled ? &dynamics : nullptr, config,
                 derive_seed(config.seed, kEvalSeed, 0xa));
  std::uint64_t episode = 0;
  auto [state, obs] = reset(config.env, derive_seed(config.seed, kEvalSeed, episode));
  EpisodeTotals tot;     // current episode
  EpisodeTotals solver;  // filter statistics over the whole loop
  std::vector<double> eval_costs;
  int t_in_episode = 0;
  for (int t = 1; t <= config.max_steps; ++t) {
    Controller::Decision d;
    try {
      d = ctl.decide(state, obs);
    } catch (const Error& err) {
      throw Error(err.code(), std::string("eval: ") + err.what());
    }
    StepOutcome out = step(state, d.action, t_in_episode++, config.env);
    tot.reward += out.reward;
    tot.cost += out.cost;
    tot.indicator_steps += out.cost_indicator;
    ++tot.steps;
    MetricsRecord r;
    r.phase = Phase::Eval;
    r.step = t;
    if (d.diagnostics) {
      r.kkt_residual = d.diagnostics->final_kkt;
      r.sqp_iters = d.diagnostics->sqp_iters();
      r.mpc = d.diagnostics->to_json(d.fallback);
      solver.sqp_iters += d.diagnostics->sqp_iters();
      ++solver.solves;
      solver.converged += d.diagnostics->status == SQPStatus::Converged;
      solver.fallbacks += d.fallback;
    }
    if (out.done || t == config.max_steps) {
      r.episode_reward = tot.reward;
      r.episode_cost = tot.cost;
      r.cost_indicator_rate = tot.indicator_rate();
      if (out.done) eval_costs.push_back(tot.cost);
    }
    r.wallclock = wallclock();
    metrics.write(r);
    state = std::move(out.next_state);
    obs = std::move(out.observations);
    if (out.done) {
      ++episode;
      std::tie(state, obs) = reset(config.env, derive_seed(config.seed, kEvalSeed, episode));
      ctl.reset();
      t_in_episode = 0;
      tot = EpisodeTotals{};
    }
  }
  summary["eval"] = {{"steps", config.max_steps},
                     {"mpc_enabled", config.mpc_enabled},
                     {"episodes_completed", eval_costs.size()},
                     {"mean_episode_cost", mean_of(eval_costs)},
                     {"filter_solves", solver.solves},
                     {"filter_converged", solver.converged},
                     {"filter_fallbacks", solver.fallbacks},
                     {"mean_sqp_iters", solver.solves ? static_cast<double>(solver.sqp_iters) / solver.solves : 0.0}};
  summary["metrics_records"] = metrics.count();
  if (const auto w = wallclock()) summary["wallclock_seconds"] = *w;
  write_json(art.summary, summary);
  return art;
}

ComparisonReport run_comparison(const RunConfig& config, const fs::path& checkpoint_dir, int episodes) {
  config.validate();
  if (episodes < 0) throw Error(ErrorCode::ConfigInvalid, "compare: episodes must be >= 0");
  const CheckpointPaths paths = checkpoint_paths(checkpoint_dir);
  const ActorPolicy actor = load_actor(paths.actor);
  const DynamicsModel model = load_predictor(paths.predictor);
  if (actor.net.input_dim() != kAgentObsDim || actor.net.output_dim() != kAgentActionDim ||
      model.state_dim() != config.env.state_dim() || model.action_dim() != config.env.action_dim()) {
    throw Error(ErrorCode::ShapeMismatch, "compare: checkpoints do not match the configured environment");
  }
  const PredictorDynamics dynamics(model);

  ComparisonReport rep;
  rep.rows.resize(episodes);
  std::vector<EpisodeTotals> on_totals(episodes);
  for_each_index(episodes, config.single_thread, [&](int e) {
    const std::uint64_t env_seed = derive_seed(config.seed, kCompareSeed, static_cast<std::uint64_t>(e));
    const std::uint64_t noise_seed = derive_seed(env_seed, 0xa);
    const EpisodeTotals off = run_episode(config, actor, nullptr, env_seed, noise_seed);
    const EpisodeTotals on =
        run_episode(config, actor, config.mpc_enabled ? &dynamics : nullptr, env_seed, noise_seed);
    rep.rows[e] = {e, off.cost, on.cost, off.reward, on.reward, off.indicator_rate(), on.indicator_rate()};
    on_totals[e] = on;
  });

  std::vector<double> c_off, c_on, r_off, r_on, i_off, i_on;
  int solves = 0, converged = 0, fallbacks = 0;
  long iters = 0;
  for (int e = 0; e < episodes; ++e) {
    const ComparisonRow& row = rep.rows[e];
    c_off.push_back(row.cost_off);
    c_on.push_back(row.cost_on);
    r_off.push_back(row.reward_off);
    r_on.push_back(row.reward_on);
    i_off.push_back(row.indicator_rate_off);
    i_on.push_back(row.indicator_rate_on);
    solves += on_totals[e].solves;
    converged += on_totals[e].converged;
    fallbacks += on_totals[e].fallbacks;
    iters += on_totals[e].sqp_iters;
  }
  const double mean_off = mean_of(c_off), mean_on = mean_of(c_on);
  rep.summary = {{"episodes", episodes},
                 {"mpc_enabled", config.mpc_enabled},
                 {"mean_cost_off", mean_off},
                 {"std_cost_off", std_of(c_off)},
                 {"mean_cost_on", mean_on},
                 {"std_cost_on", std_of(c_on)},
                 {"mean_reward_off", mean_of(r_off)},
                 {"std_reward_off", std_of(r_off)},
                 {"mean_reward_on", mean_of(r_on)},
                 {"std_reward_on", std_of(r_on)},
                 {"mean_indicator_rate_off", mean_of(i_off)},
                 {"mean_indicator_rate_on", mean_of(i_on)},
                 {"reduction_pct", mean_off > 0.0 ? 100.0 * (1.0 - mean_on / mean_off) : 0.0},
                 {"filter_solves", solves},
                 {"filter_converged", converged},
                 {"filter_fallbacks", fallbacks},
                 {"mean_sqp_iters", solves ? static_cast<double>(iters) / solves : 0.0}};

  const fs::path out_dir = config.output_dir;
  ensure_dir(out_dir);
  rep.csv = out_dir / "comparison.csv";
  rep.summary_path = out_dir / "comparison_summary.json";
  rep.svg = out_dir / "comparison.svg";
  {
    std::ofstream csv(rep.csv);
    if (!csv) throw Error(ErrorCode::IoError, "cannot write " + rep.csv.string());
    csv << "episode,cost_off,cost_on,reward_off,reward_on,indicator_rate_off,indicator_rate_on\n";
    for (const auto& r : rep.rows) {
      csv << r.episode << ',' << format_number(r.cost_off) << ',' << format_number(r.cost_on) << ','
          << format_number(r.reward_off) << ',' << format_number(r.reward_on) << ','
          << format_number(r.indicator_rate_off) << ',' << format_number(r.indicator_rate_on) << '\n';
    }
    if (!csv) throw Error(ErrorCode::IoError, "write failed for " + rep.csv.string());
  }
  write_json(rep.summary_path, rep.summary);
  std::vector<double> xs(episodes);
  std::iota(xs.begin(), xs.end(), 0.0);
  write_line_chart_svg(rep.svg, "Episodic cost, paired seeds", "episode", "episode cost",
                       {{"filter off", xs, c_off}, {"filter on", xs, c_on}});
  return rep;
}

ErrorCurve emit_prediction_error_curve(const Dynamics& model, const ActorPolicy& actor,
                                       const RunConfig& config, int steps, const fs::path& out_dir) {
  if (steps < 0) throw Error(ErrorCode::ConfigInvalid, "error curve: steps must be >= 0");
  if (model.state_dim() != config.env.state_dim() || model.action_dim() != config.env.action_dim()) {
    throw Error(ErrorCode::ShapeMismatch, "error curve: predictor does not match the environment");
  }
  ErrorCurve curve;
  std::mt19937_64 rng(derive_seed(config.seed, kCurveSeed, 0xa));
  std::uint64_t episode = 0;
  auto [state, obs] = reset(config.env, derive_seed(config.seed, kCurveSeed, episode));
  int t_in_episode = 0;
  for (int t = 0; t < steps; ++t) {
    const JointAction a =
        policy_action(actor, obs, config.env.action_bound, config.deterministic_eval ? nullptr : &rng);
    StepOutcome out = step(state, a, t_in_episode++, config.env);
    curve.errors.push_back((model.next(state, a) - out.next_state).norm());
    state = std::move(out.next_state);
    obs = std::move(out.observations);
    if (out.done) {
      ++episode;
      std::tie(state, obs) = reset(config.env, derive_seed(config.seed, kCurveSeed, episode));
      t_in_episode = 0;
    }
  }
  curve.max_error = curve.errors.empty() ? 0.0 : *std::max_element(curve.errors.begin(), curve.errors.end());

  ensure_dir(out_dir);
  curve.csv = out_dir / "prediction_error.csv";
  curve.svg = out_dir / "prediction_error.svg";
  {
    std::ofstream csv(curve.csv);
    if (!csv) throw Error(ErrorCode::IoError, "cannot write " + curve.csv.string());
    csv << "step,error\n";
    for (std::size_t t = 0; t < curve.errors.size(); ++t) {
      csv << t + 1 << ',' << format_number(curve.errors[t]) << '\n';
    }
    if (!csv) throw Error(ErrorCode::IoError, "write failed for " + curve.csv.string());
  }
  std::vector<double> xs(curve.errors.size());
  std::iota(xs.begin(), xs.end(), 1.0);
  write_line_chart_svg(curve.svg, "One-step prediction error", "step", "||predicted - actual||",
                       {{"error", xs, curve.errors}});
  return curve;
}

ErrorCurve emit_prediction_error_curve(const RunConfig& config, const fs::path& checkpoint_dir) {
  config.validate();
  const CheckpointPaths paths = checkpoint_paths(checkpoint_dir);
  const ActorPolicy actor = load_actor(paths.actor);
  const DynamicsModel model = load_predictor(paths.predictor);
  return emit_prediction_error_curve(PredictorDynamics(model), actor, config, config.error_curve_steps,
                                     config.output_dir);
}

}  // namespace dsmpc
