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

#ifndef DSMPC_PREDICTOR_HPP_
#define DSMPC_PREDICTOR_HPP_

#include <cstdint>
#include <deque>
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "dsmpc/env.hpp"
#include "dsmpc/neural.hpp"

namespace dsmpc {

/// Per-dimension affine normalization; std entries are floored at 1e-8.
struct NormStats {
  Vector mean;
  Vector std;

  Vector normalize(const Vector& x) const;
  Vector denormalize(const Vector& z) const;
};

NormStats compute_norm_stats(const std::vector<Vector>& samples);

struct TransitionDataset {
  std::vector<Transition> records;

  bool empty() const { return records.empty(); }
  int size() const { return static_cast<int>(records.size()); }
};

/// s' = s + delta_mean + delta_std * net(normalized s, normalized a).
struct DynamicsModel {
  MLPNet net;
  NormStats state_stats;
  NormStats action_stats;
  NormStats delta_stats;

  int state_dim() const { return static_cast<int>(state_stats.mean.size()); }
  int action_dim() const { return static_cast<int>(action_stats.mean.size()); }
};

/// A model whose last layer is zero: prediction equals the input state.
DynamicsModel zero_residual_model(int state_dim, int action_dim, int hidden, std::uint64_t seed);

/// Throws Error(ShapeMismatch).
JointState predict(const DynamicsModel& model, const JointState& state, const JointAction& action);

/// Jacobians of predict through the normalization chain, including the +I
/// residual term.
void predict_jacobians(const DynamicsModel& model, const JointState& state,
                       const JointAction& action, Matrix& d_state, Matrix& d_action);

/// Chains predict from `state` over `actions`; returns the T predicted states.
std::vector<JointState> rollout_horizon(const DynamicsModel& model, const JointState& state,
                                        const std::vector<JointAction>& actions);

struct PredictorHyper {
  int hidden = 64;
  int epochs = 120;
  int batch_size = 256;
  double lr = 1e-3;
  double lr_decay = 0.98;  // per epoch
  double val_fraction = 0.1;
  double max_grad_norm = 10.0;
  /// Keep one minibatch order for every epoch.
  bool frozen_order = false;
  int dataset_size = 20000;
  double random_fraction = 0.5;

  /// Throws Error(ConfigInvalid).
  void validate() const;
};

struct PredictorTrainResult {
  DynamicsModel model;
  std::vector<double> train_loss;  // per epoch, normalized delta space
  std::vector<double> val_loss;    // per epoch, normalized delta space
  std::vector<double> val_max_dim_mse;  // per epoch, largest per-dimension MSE, raw units
  int best_epoch = -1;
  Vector val_mse_per_dim;          // raw state units, best model
  double val_rmse = 0.0;           // sqrt(mean ||s_hat' - s'||^2), raw units
  double val_error_bound = 0.0;    // ErrorMonitor bound over the validation errors
};

/// Minibatch Adam on the mean squared next-state error in normalized delta
/// space; returns the model with the best validation loss. Throws Error(EmptyDataset).
PredictorTrainResult train_predictor(const TransitionDataset& dataset, const PredictorHyper& hyper,
                                     std::uint64_t seed);

/// Mean squared error of predictions on `records`, per state dimension, raw units.
Vector prediction_mse_per_dim(const DynamicsModel& model, const std::vector<Transition>& records);

/// Sliding window of one-step prediction error norms.
class ErrorMonitor {
 public:
  explicit ErrorMonitor(int window_length = 100);

  void push(double error_norm);
  /// Pushes ||predicted - actual||_2. Throws Error(ShapeMismatch).
  double update(const JointState& predicted, const JointState& actual);

  int window_length() const { return window_length_; }
  const std::deque<double>& window() const { return window_; }
  double window_max() const;
  double window_mean() const;
  double bound_estimate() const { return window_max(); }
  std::int64_t count() const { return count_; }

 private:
  int window_length_;
  std::deque<double> window_;
  std::int64_t count_ = 0;
};

nlohmann::json predictor_to_json(const DynamicsModel& model);
DynamicsModel predictor_from_json(const nlohmann::json& doc);
void save_predictor(const std::filesystem::path& path, const DynamicsModel& model);
/// Throws Error(MissingCheckpoint).
DynamicsModel load_predictor(const std::filesystem::path& path);

/// JSONL, one transition per line: {"t","state","action","reward","cost","indicator","next_state"}.
void save_dataset_jsonl(const std::filesystem::path& path, const TransitionDataset& dataset,
                        const EnvConfig& env);
TransitionDataset load_dataset_jsonl(const std::filesystem::path& path);

}  // namespace dsmpc

#endif  // DSMPC_PREDICTOR_HPP_
