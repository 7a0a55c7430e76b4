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

#ifndef DSMPC_MAPPO_HPP_
#define DSMPC_MAPPO_HPP_

#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "dsmpc/env.hpp"
#include "dsmpc/neural.hpp"

namespace dsmpc {

struct PPOHyper {
  double gamma = 0.96;
  double gae_lambda = 0.95;
  double clip = 0.2;
  double entropy_coeff = 0.005;
  int learning_iters = 5;
  double actor_lr = 9e-5;
  double critic_lr = 5e-3;
  int minibatch_count = 4;
  double target_kl = 0.016;
  double max_grad_norm = 10.0;
  /// Huber threshold for the critic loss; 0 keeps the clipped squared loss.
  double huber_delta = 0.0;
  int n_envs = 4;
  int hidden = 128;
  double log_std_init = -0.5;

  /// Throws Error(ConfigInvalid).
  void validate() const;
};

/// Shared decentralized actor: local observation -> action mean, plus a
/// state-independent log standard deviation per action dimension.
struct ActorPolicy {
  MLPNet net;
  Vector log_std;
};

/// Centralized critic on the concatenated observations.
struct CentralCritic {
  MLPNet net;
};

ActorPolicy make_actor(int obs_dim, int action_dim, int hidden, double log_std_init,
                       std::uint64_t seed);
CentralCritic make_critic(int input_dim, int hidden, std::uint64_t seed);

double gaussian_log_prob(const Vector& mean, const Vector& log_std, const Vector& x);
double gaussian_entropy(const Vector& log_std);

struct ActSample {
  Vector action;  // clamped to the action box
  Vector raw;     // pre-clamp sample; log_prob refers to this value
  double log_prob = 0.0;
};

/// Samples from the policy. With rng == nullptr the mean is returned (deterministic mode).
ActSample act(const ActorPolicy& policy, const Vector& observation, double action_bound,
              std::mt19937_64* rng);

double critic_value(const CentralCritic& critic, const Vector& global_obs);

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

/// values carries one bootstrap entry past the rewards. Throws Error(LengthMismatch).
GaeResult compute_gae(const std::vector<double>& rewards, const std::vector<double>& values,
                      const std::vector<int>& dones, double gamma, double lambda);

/// One row per (environment instance, timestep, agent).
struct RolloutBatch {
  Matrix observations;
  Matrix global_states;
  Matrix actions;  // pre-clamp samples
  Vector log_prob_old;
  Vector value_old;
  Vector advantages;
  Vector returns;
  std::vector<double> rewards;
  std::vector<double> costs;
  std::vector<int> dones;

  int size() const { return static_cast<int>(observations.rows()); }
};

/// Zero mean, unit variance over the whole batch (epsilon 1e-8).
void normalize_advantages(RolloutBatch& batch);

struct ActorLoss {
  double loss = 0.0;
  double approx_kl = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  GradientSet grads;
  Vector log_std_grad;
};

struct CriticLoss {
  double loss = 0.0;
  GradientSet grads;
};

/// Clipped surrogate plus entropy bonus, negated. `rows` selects a minibatch;
/// empty means the whole batch. Throws Error(NonFiniteLoss).
ActorLoss actor_loss_and_grads(const ActorPolicy& policy, const RolloutBatch& batch,
                               const std::vector<int>& rows, const PPOHyper& hyper);

/// Clipped value loss around value_old. Throws Error(NonFiniteLoss).
CriticLoss critic_loss_and_grads(const CentralCritic& critic, const RolloutBatch& batch,
                                 const std::vector<int>& rows, const PPOHyper& hyper);

struct IterationStats {
  int iteration = 0;
  double mean_episode_reward = 0.0;
  double mean_episode_cost = 0.0;
  double cost_indicator_rate = 0.0;
  double actor_loss = 0.0;
  double critic_loss = 0.0;
  double approx_kl = 0.0;
  double entropy = 0.0;
  int actor_epochs = 0;
};

class MappoTrainer {
 public:
  MappoTrainer(EnvConfig env, PPOHyper hyper, std::uint64_t seed);

  /// Collects one full episode per environment instance, then runs the PPO
  /// epochs. Applied transitions are appended to `sink` when given. Results do
  /// not depend on `single_thread`.
  IterationStats train_iteration(std::vector<Transition>* sink = nullptr,
                                 bool single_thread = true);

  /// Rollout only (no update), exposed for tests.
  RolloutBatch collect(std::uint64_t stream, std::vector<Transition>* sink, bool single_thread,
                       IterationStats* stats) const;

  /// Runs the epochs over a prepared batch.
  void update(const RolloutBatch& batch, std::uint64_t stream, IterationStats& stats);

  const ActorPolicy& actor() const { return actor_; }
  const CentralCritic& critic() const { return critic_; }
  ActorPolicy& actor() { return actor_; }
  CentralCritic& critic() { return critic_; }
  const EnvConfig& env() const { return env_; }
  const PPOHyper& hyper() const { return hyper_; }
  int iteration() const { return iteration_; }

 private:
  EnvConfig env_;
  PPOHyper hyper_;
  std::uint64_t seed_;
  ActorPolicy actor_;
  CentralCritic critic_;
  AdamState actor_adam_;
  AdamState critic_adam_;
  int iteration_ = 0;
};

/// Checkpoints: the network JSON with log_std stored in "meta". Loading throws
/// Error(MissingCheckpoint) when the file is absent.
void save_actor(const std::filesystem::path& path, const ActorPolicy& policy);
ActorPolicy load_actor(const std::filesystem::path& path);
void save_critic(const std::filesystem::path& path, const CentralCritic& critic);
CentralCritic load_critic(const std::filesystem::path& path);

}  // namespace dsmpc

#endif  // DSMPC_MAPPO_HPP_
