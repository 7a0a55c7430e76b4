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

#ifndef DSMPC_ENV_HPP_
#define DSMPC_ENV_HPP_

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dsmpc/numerics.hpp"

namespace dsmpc {

// Joint state layout: agent i occupies [4i, 4i+4) as (x, y, vx, vy).
// Joint action layout: agent i occupies [2i, 2i+2) as (fx, fy).
using JointState = Vector;
using JointAction = Vector;

inline constexpr int kAgentStateDim = 4;
inline constexpr int kAgentActionDim = 2;
inline constexpr int kAgentObsDim = 8;

struct EnvConfig {
  int n_agents = 2;
  double dt = 0.05;
  double drag_coeff = 0.1;
  double coupling_stiffness = 1.0;
  double action_bound = 2.0;
  // Per-agent (x, y, vx, vy) bounds, replicated for every agent.
  std::array<double, 4> state_lower{-100.0, -100.0, -10.0, -10.0};
  std::array<double, 4> state_upper{100.0, 100.0, 10.0, 10.0};
  double velocity_threshold = 3.227;
  double ctrl_cost_weight = 0.1;
  double alive_bonus = 0.0;
  int episode_length = 100;

  /// Throws Error(ConfigInvalid).
  void validate() const;

  int state_dim() const { return kAgentStateDim * n_agents; }
  int action_dim() const { return kAgentActionDim * n_agents; }
  int global_obs_dim() const { return kAgentObsDim * n_agents; }
  Vector state_lower_bounds() const;
  Vector state_upper_bounds() const;
};

/// Presets named after the task families whose velocity thresholds they carry:
/// "swimmer2" (0.04891), "ant2" (2.522), "cheetah2" (3.227).
EnvConfig env_preset(std::string_view name);
std::vector<std::string> env_preset_names();

struct CostValue {
  double value = 0.0;
  int indicator = 0;
};

/// One recorded (s, a, s') triple; actions are the clamped, applied values.
struct Transition {
  JointState state;
  JointAction action;
  JointState next_state;
};

struct StepOutcome {
  JointState next_state;
  std::vector<Vector> observations;
  double reward = 0.0;
  double cost = 0.0;
  int cost_indicator = 0;
  bool done = false;
};

/// Agents on a line at x_i = i, y = 0, velocities uniform in [-0.05, 0.05].
std::pair<JointState, std::vector<Vector>> reset(const EnvConfig& config, std::uint64_t seed);

/// Semi-implicit Euler step with quadratic drag and a nearest-neighbour spring
/// chain along x (rest length 1). Throws Error(ActionOutOfBounds).
JointState true_dynamics(const JointState& state, const JointAction& action,
                         const EnvConfig& config);

/// Jacobians of true_dynamics ignoring the state-bound clip.
void true_dynamics_jacobians(const JointState& state, const JointAction& action,
                             const EnvConfig& config, Matrix& d_state, Matrix& d_action);

/// Sum of agent speeds; indicator set when any speed exceeds the threshold.
CostValue cost(const JointState& state, const EnvConfig& config);

double reward(const JointState& state, const JointState& next_state, const JointAction& action,
              const EnvConfig& config);

/// Own (x, y, vx, vy), then offsets to the left and right chain neighbours
/// (zeros where a neighbour is missing).
std::vector<Vector> observe(const JointState& state, const EnvConfig& config);

/// Concatenated observations in agent order.
Vector global_observation(const std::vector<Vector>& observations);

StepOutcome step(const JointState& state, const JointAction& action, int t,
                 const EnvConfig& config);

Vector clamp_action(const JointAction& action, const EnvConfig& config);

/// One JSONL trajectory record: {"t","state","action","reward","cost","indicator"}.
nlohmann::json trajectory_record(int t, const JointState& state, const JointAction& action,
                                 double reward, double cost, int indicator);

nlohmann::json env_config_to_json(const EnvConfig& config);

}  // namespace dsmpc

#endif  // DSMPC_ENV_HPP_
