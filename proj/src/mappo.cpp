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

#include "dsmpc/mappo.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>
#include <thread>

#include "dsmpc/error.hpp"

namespace dsmpc {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // ln(2 pi)

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::ConfigInvalid, "ppo: " + what);
}

std::vector<int> all_rows(int n) {
  std::vector<int> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  return rows;
}

Matrix gather(const Matrix& m, const std::vector<int>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = m.row(rows[k]);
  return out;
}

struct EpisodeRecord {
  std::vector<Vector> obs;     // per (t, agent)
  std::vector<Vector> global;  // per t
  std::vector<Vector> raw;     // per (t, agent)
  std::vector<double> log_prob;
  std::vector<double> values;  // per t, plus bootstrap
  std::vector<double> rewards;
  std::vector<double> costs;
  std::vector<int> indicators;
  std::vector<int> dones;
  std::vector<Transition> transitions;
};

EpisodeRecord run_episode(const ActorPolicy& actor, const CentralCritic& critic,
                          const EnvConfig& env, std::uint64_t seed, bool keep_transitions) {
  EpisodeRecord rec;
  std::mt19937_64 rng(derive_seed(seed, 0x5eed));
  auto [state, obs] = reset(env, seed);
  const int n = env.n_agents;
  for (int t = 0; t < env.episode_length; ++t) {
    const Vector g = global_observation(obs);
    rec.global.push_back(g);
    rec.values.push_back(critic_value(critic, g));
    JointAction joint(env.action_dim());
    for (int i = 0; i < n; ++i) {
      ActSample s = act(actor, obs[i], env.action_bound, &rng);
      joint.segment(kAgentActionDim * i, kAgentActionDim) = s.action;
      rec.obs.push_back(obs[i]);
      rec.raw.push_back(std::move(s.raw));
      rec.log_prob.push_back(s.log_prob);
    }
    StepOutcome out = step(state, joint, t, env);
    if (keep_transitions) rec.transitions.push_back({state, joint, out.next_state});
    rec.rewards.push_back(out.reward);
    rec.costs.push_back(out.cost);
    rec.indicators.push_back(out.cost_indicator);
    rec.dones.push_back(out.done ? 1 : 0);
    state = std::move(out.next_state);
    obs = std::move(out.observations);
  }
  rec.values.push_back(critic_value(critic, global_observation(obs)));
  return rec;
}

}  // namespace

void PPOHyper::validate() const {
  require(gamma >= 0.0 && gamma < 1.0, "gamma must be in [0, 1)");
  require(gae_lambda >= 0.0 && gae_lambda <= 1.0, "gae_lambda must be in [0, 1]");
  require(clip > 0.0, "clip must be > 0");
  require(entropy_coeff >= 0.0, "entropy_coeff must be >= 0");
  require(learning_iters >= 1, "learning_iters must be >= 1");
  require(actor_lr > 0.0 && critic_lr > 0.0, "learning rates must be > 0");
  require(minibatch_count >= 1, "minibatch_count must be >= 1");
  require(target_kl > 0.0, "target_kl must be > 0");
  require(max_grad_norm > 0.0, "max_grad_norm must be > 0");
  require(huber_delta >= 0.0, "huber_delta must be >= 0");
  require(n_envs >= 1, "n_envs must be >= 1");
  require(hidden >= 1, "hidden must be >= 1");
  require(std::isfinite(log_std_init), "log_std_init must be finite");
}

ActorPolicy make_actor(int obs_dim, int action_dim, int hidden, double log_std_init,
                       std::uint64_t seed) {
  const int sizes[] = {obs_dim, hidden, hidden, action_dim};
  return {init_mlp(sizes, seed, 0.01), Vector::Constant(action_dim, log_std_init)};
}

CentralCritic make_critic(int input_dim, int hidden, std::uint64_t seed) {
  const int sizes[] = {input_dim, hidden, hidden, 1};
  return {init_mlp(sizes, seed, 1.0)};
}

double gaussian_log_prob(const Vector& mean, const Vector& log_std, const Vector& x) {
  const Vector z = (x - mean).array() * (-log_std.array()).exp();
  return -0.5 * z.squaredNorm() - log_std.sum() - 0.5 * static_cast<double>(x.size()) * kLog2Pi;
}

double gaussian_entropy(const Vector& log_std) {
  return log_std.sum() + 0.5 * static_cast<double>(log_std.size()) * (kLog2Pi + 1.0);
}

ActSample act(const ActorPolicy& policy, const Vector& observation, double action_bound,
              std::mt19937_64* rng) {
  if (observation.size() != policy.net.input_dim()) {
    throw Error(ErrorCode::ShapeMismatch, "act: observation dimension mismatch");
  }
  const Vector mean = mlp_forward(policy.net, observation);
  ActSample s;
  s.raw = mean;
  if (rng != nullptr) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int d = 0; d < mean.size(); ++d) s.raw(d) += std::exp(policy.log_std(d)) * normal(*rng);
  }
  s.log_prob = gaussian_log_prob(mean, policy.log_std, s.raw);
  s.action = s.raw.cwiseMax(-action_bound).cwiseMin(action_bound);
  return s;
}

double critic_value(const CentralCritic& critic, const Vector& global_obs) {
  return mlp_forward(critic.net, global_obs)(0);
}

GaeResult compute_gae(const std::vector<double>& rewards, const std::vector<double>& values,
                      const std::vector<int>& dones, double gamma, double lambda) {
  const std::size_t n = rewards.size();
  if (values.size() != n + 1 || dones.size() != n) {
    throw Error(ErrorCode::LengthMismatch,
                "compute_gae: need |values| = |rewards| + 1 and |dones| = |rewards|");
  }
  GaeResult out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double next = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    const double live = dones[k] ? 0.0 : 1.0;
    const double delta = rewards[k] + gamma * values[k + 1] * live - values[k];
    next = delta + gamma * lambda * live * next;
    out.advantages[k] = next;
    out.returns[k] = next + values[k];
  }
  return out;
}

void normalize_advantages(RolloutBatch& batch) {
  const int n = batch.size();
  if (n == 0) return;
  const double mean = batch.advantages.mean();
  const double var = (batch.advantages.array() - mean).square().sum() / n;
  batch.advantages = (batch.advantages.array() - mean) / (std::sqrt(var) + 1e-8);
}

ActorLoss actor_loss_and_grads(const ActorPolicy& policy, const RolloutBatch& batch,
                               const std::vector<int>& rows_in, const PPOHyper& hyper) {
  const std::vector<int> rows = rows_in.empty() ? all_rows(batch.size()) : rows_in;
  const int n = static_cast<int>(rows.size());
  const int d = static_cast<int>(policy.log_std.size());
  BatchTrace trace;
  const Matrix means = forward_batch(policy.net, gather(batch.observations, rows), &trace);
  const Vector inv_var = (-2.0 * policy.log_std.array()).exp();

  ActorLoss out;
  out.entropy = gaussian_entropy(policy.log_std);
  Matrix mean_grads(n, d);
  out.log_std_grad = Vector::Zero(d);
  double surrogate = 0.0;
  double kl = 0.0;
  int clipped = 0;
  for (int k = 0; k < n; ++k) {
    const int r = rows[k];
    const Vector mu = means.row(k).transpose();
    const Vector x = batch.actions.row(r).transpose();
    const double logp = gaussian_log_prob(mu, policy.log_std, x);
    const double ratio = std::exp(logp - batch.log_prob_old(r));
    const double adv = batch.advantages(r);
    const double unclipped = ratio * adv;
    const double clipped_ratio = std::clamp(ratio, 1.0 - hyper.clip, 1.0 + hyper.clip);
    const double clipped_term = clipped_ratio * adv;
    // d(min)/d(logp): the unclipped branch carries ratio * adv, the clipped one is flat.
    double weight = 0.0;
    if (unclipped <= clipped_term) {
      surrogate += unclipped;
      weight = unclipped;
    } else {
      surrogate += clipped_term;
    }
    if (clipped_ratio != ratio) ++clipped;
    kl += batch.log_prob_old(r) - logp;
    const Vector diff = x - mu;
    mean_grads.row(k) = (-weight / n * diff.array() * inv_var.array()).transpose();
    out.log_std_grad.array() -= weight / n * (diff.array().square() * inv_var.array() - 1.0);
  }
  out.loss = -surrogate / n - hyper.entropy_coeff * out.entropy;
  out.approx_kl = kl / n;
  out.clip_fraction = static_cast<double>(clipped) / n;
  out.log_std_grad.array() -= hyper.entropy_coeff;
  if (!std::isfinite(out.loss)) throw Error(ErrorCode::NonFiniteLoss, "actor loss is not finite");
  out.grads = backward_batch(policy.net, trace, mean_grads);
  return out;
}

CriticLoss critic_loss_and_grads(const CentralCritic& critic, const RolloutBatch& batch,
                                 const std::vector<int>& rows_in, const PPOHyper& hyper) {
  const std::vector<int> rows = rows_in.empty() ? all_rows(batch.size()) : rows_in;
  const int n = static_cast<int>(rows.size());
  BatchTrace trace;
  const Matrix values = forward_batch(critic.net, gather(batch.global_states, rows), &trace);
  // Elementwise penalty and its derivative: squared error or Huber.
  auto penalty = [&](double e) {
    if (hyper.huber_delta > 0.0 && std::abs(e) > hyper.huber_delta) {
      return hyper.huber_delta * (2.0 * std::abs(e) - hyper.huber_delta);
    }
    return e * e;
  };
  auto penalty_grad = [&](double e) {
    if (hyper.huber_delta > 0.0 && std::abs(e) > hyper.huber_delta) {
      return 2.0 * hyper.huber_delta * (e > 0.0 ? 1.0 : -1.0);
    }
    return 2.0 * e;
  };
  CriticLoss out;
  Matrix grads(n, 1);
  double total = 0.0;
  for (int k = 0; k < n; ++k) {
    const int r = rows[k];
    const double v = values(k, 0);
    const double ret = batch.returns(r);
    const double old = batch.value_old(r);
    const double v_clip = std::clamp(v, old - hyper.clip, old + hyper.clip);
    const double a = penalty(v - ret);
    const double b = penalty(v_clip - ret);
    if (a >= b) {
      total += a;
      grads(k, 0) = penalty_grad(v - ret) / n;
    } else {
      total += b;
      grads(k, 0) = (v_clip == v) ? penalty_grad(v_clip - ret) / n : 0.0;
    }
  }
  out.loss = total / n;
  if (!std::isfinite(out.loss)) throw Error(ErrorCode::NonFiniteLoss, "critic loss is not finite");
  out.grads = backward_batch(critic.net, trace, grads);
  return out;
}

MappoTrainer::MappoTrainer(EnvConfig env, PPOHyper hyper, std::uint64_t seed)
    : env_(std::move(env)), hyper_(hyper), seed_(seed) {
  env_.validate();
  hyper_.validate();
  actor_ = make_actor(kAgentObsDim, kAgentActionDim, hyper_.hidden, hyper_.log_std_init,
                      derive_seed(seed_, 1));
  critic_ = make_critic(env_.global_obs_dim(), hyper_.hidden, derive_seed(seed_, 2));
  actor_adam_ = make_adam(actor_.net, hyper_.actor_lr, kAgentActionDim);
  critic_adam_ = make_adam(critic_.net, hyper_.critic_lr);
}

RolloutBatch MappoTrainer::collect(std::uint64_t stream, std::vector<Transition>* sink,
                                   bool single_thread, IterationStats* stats) const {
  const int envs = hyper_.n_envs;
  std::vector<EpisodeRecord> records(envs);
  auto job = [&](int k) {
    records[k] = run_episode(actor_, critic_, env_, derive_seed(seed_, stream, k), sink != nullptr);
  };
  if (single_thread || envs == 1) {
    for (int k = 0; k < envs; ++k) job(k);
  } else {
    std::vector<std::thread> workers;
    for (int k = 0; k < envs; ++k) workers.emplace_back(job, k);
    for (auto& w : workers) w.join();
  }

  const int n = env_.n_agents;
  const int steps = env_.episode_length;
  const int rows = envs * steps * n;
  RolloutBatch batch;
  batch.observations.resize(rows, kAgentObsDim);
  batch.global_states.resize(rows, env_.global_obs_dim());
  batch.actions.resize(rows, kAgentActionDim);
  batch.log_prob_old.resize(rows);
  batch.value_old.resize(rows);
  batch.advantages.resize(rows);
  batch.returns.resize(rows);
  double reward_sum = 0.0, cost_sum = 0.0, indicator_sum = 0.0;
  int row = 0;
  for (int k = 0; k < envs; ++k) {
    const EpisodeRecord& rec = records[k];
    const GaeResult gae =
        compute_gae(rec.rewards, rec.values, rec.dones, hyper_.gamma, hyper_.gae_lambda);
    for (int t = 0; t < steps; ++t) {
      for (int i = 0; i < n; ++i, ++row) {
        const int j = t * n + i;
        batch.observations.row(row) = rec.obs[j].transpose();
        batch.global_states.row(row) = rec.global[t].transpose();
        batch.actions.row(row) = rec.raw[j].transpose();
        batch.log_prob_old(row) = rec.log_prob[j];
        batch.value_old(row) = rec.values[t];
        batch.advantages(row) = gae.advantages[t];
        batch.returns(row) = gae.returns[t];
        batch.rewards.push_back(rec.rewards[t]);
        batch.costs.push_back(rec.costs[t]);
        batch.dones.push_back(rec.dones[t]);
      }
      reward_sum += rec.rewards[t];
      cost_sum += rec.costs[t];
      indicator_sum += rec.indicators[t];
    }
    if (sink != nullptr) sink->insert(sink->end(), rec.transitions.begin(), rec.transitions.end());
  }
  if (stats != nullptr) {
    stats->mean_episode_reward = reward_sum / envs;
    stats->mean_episode_cost = cost_sum / envs;
    stats->cost_indicator_rate = steps > 0 ? indicator_sum / (envs * steps) : 0.0;
  }
  return batch;
}

void MappoTrainer::update(const RolloutBatch& prepared, std::uint64_t stream,
                          IterationStats& stats) {
  RolloutBatch batch = prepared;
  normalize_advantages(batch);
  const int n = batch.size();
  if (n == 0) return;
  std::mt19937_64 rng(derive_seed(seed_, stream, 0xba7c));
  std::vector<int> order = all_rows(n);
  const int mb = hyper_.minibatch_count;
  bool actor_active = true;
  double actor_loss = 0.0, critic_loss = 0.0, kl = 0.0, entropy = 0.0;
  int actor_updates = 0, critic_updates = 0;
  stats.actor_epochs = 0;
  for (int epoch = 0; epoch < hyper_.learning_iters; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    bool epoch_complete = actor_active;
    for (int m = 0; m < mb; ++m) {
      const int begin = static_cast<int>(static_cast<long long>(n) * m / mb);
      const int end = static_cast<int>(static_cast<long long>(n) * (m + 1) / mb);
      if (end <= begin) continue;
      const std::vector<int> rows(order.begin() + begin, order.begin() + end);
      if (actor_active) {
        ActorLoss a = actor_loss_and_grads(actor_, batch, rows, hyper_);
        if (a.approx_kl > hyper_.target_kl) {
          // Stop policy updates for the rest of the iteration; the critic keeps fitting.
          actor_active = false;
          epoch_complete = false;
        } else {
          adam_step(actor_.net, a.grads, actor_.log_std, a.log_std_grad, actor_adam_,
                    hyper_.max_grad_norm);
          actor_loss += a.loss;
          kl += a.approx_kl;
          entropy += a.entropy;
          ++actor_updates;
        }
      }
      CriticLoss c = critic_loss_and_grads(critic_, batch, rows, hyper_);
      adam_step(critic_.net, c.grads, critic_adam_, hyper_.max_grad_norm);
      critic_loss += c.loss;
      ++critic_updates;
    }
    if (epoch_complete) ++stats.actor_epochs;
  }
  stats.actor_loss = actor_updates ? actor_loss / actor_updates : 0.0;
  stats.approx_kl = actor_updates ? kl / actor_updates : 0.0;
  stats.entropy = actor_updates ? entropy / actor_updates : gaussian_entropy(actor_.log_std);
  stats.critic_loss = critic_updates ? critic_loss / critic_updates : 0.0;
}

IterationStats MappoTrainer::train_iteration(std::vector<Transition>* sink, bool single_thread) {
  IterationStats stats;
  stats.iteration = iteration_;
  const std::uint64_t stream = static_cast<std::uint64_t>(iteration_) + 1;
  const RolloutBatch batch = collect(stream, sink, single_thread, &stats);
  update(batch, stream, stats);
  ++iteration_;
  return stats;
}

void save_actor(const std::filesystem::path& path, const ActorPolicy& policy) {
  nlohmann::json meta;
  meta["kind"] = "actor";
  meta["log_std"] = std::vector<double>(policy.log_std.data(), policy.log_std.data() + policy.log_std.size());
  save_checkpoint(path, policy.net, meta);
}

ActorPolicy load_actor(const std::filesystem::path& path) {
  nlohmann::json meta;
  ActorPolicy p;
  p.net = load_checkpoint(path, &meta);
  const auto log_std = meta.value("log_std", std::vector<double>{});
  if (static_cast<int>(log_std.size()) != p.net.output_dim()) {
    throw Error(ErrorCode::ShapeMismatch, path.string() + ": log_std length");
  }
  p.log_std = Eigen::Map<const Vector>(log_std.data(), static_cast<Eigen::Index>(log_std.size()));
  return p;
}

void save_critic(const std::filesystem::path& path, const CentralCritic& critic) {
  save_checkpoint(path, critic.net, nlohmann::json{{"kind", "critic"}});
}

CentralCritic load_critic(const std::filesystem::path& path) {
  return CentralCritic{load_checkpoint(path)};
}

}  // namespace dsmpc
