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

#include "dsmpc/env.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "dsmpc/error.hpp"

namespace dsmpc {

void EnvConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::ConfigInvalid, "env: " + what); };
  if (n_agents < 1) fail("n_agents must be >= 1");
  if (!(dt > 0.0)) fail("dt must be > 0");
  if (!(drag_coeff >= 0.0)) fail("drag_coeff must be >= 0");
  if (!(coupling_stiffness >= 0.0)) fail("coupling_stiffness must be >= 0");
  if (!(action_bound > 0.0)) fail("action_bound must be > 0");
  for (int d = 0; d < 4; ++d) {
    if (!(state_lower[d] < state_upper[d])) fail("state_lower must be < state_upper");
  }
  if (!(velocity_threshold > 0.0)) fail("velocity_threshold must be > 0");
  if (!(ctrl_cost_weight >= 0.0)) fail("ctrl_cost_weight must be >= 0");
  if (!(alive_bonus >= 0.0)) fail("alive_bonus must be >= 0");
  if (episode_length < 1) fail("episode_length must be >= 1");
}

Vector EnvConfig::state_lower_bounds() const {
  Vector lo(state_dim());
  for (int i = 0; i < n_agents; ++i)
    for (int d = 0; d < 4; ++d) lo(4 * i + d) = state_lower[d];
  return lo;
}

Vector EnvConfig::state_upper_bounds() const {
  Vector hi(state_dim());
  for (int i = 0; i < n_agents; ++i)
    for (int d = 0; d < 4; ++d) hi(4 * i + d) = state_upper[d];
  return hi;
}

EnvConfig env_preset(std::string_view name) {
  EnvConfig c;
  if (name == "cheetah2") {
    return c;
  }
  if (name == "ant2") {
    c.action_bound = 1.5;
    c.velocity_threshold = 2.522;
    c.ctrl_cost_weight = 0.5;
    c.alive_bonus = 1.0;
    return c;
  }
  if (name == "swimmer2") {
    c.action_bound = 0.1;
    c.drag_coeff = 10.0;
    c.coupling_stiffness = 0.1;
    c.velocity_threshold = 0.04891;
    c.ctrl_cost_weight = 1e-4;
    return c;
  }
  throw Error(ErrorCode::ConfigInvalid, "unknown preset '" + std::string(name) + "'");
}

std::vector<std::string> env_preset_names() { return {"swimmer2", "ant2", "cheetah2"}; }

std::pair<JointState, std::vector<Vector>> reset(const EnvConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> noise(-0.05, 0.05);
  JointState s = JointState::Zero(config.state_dim());
  for (int i = 0; i < config.n_agents; ++i) {
    s(4 * i) = static_cast<double>(i);
    s(4 * i + 2) = noise(rng);
    s(4 * i + 3) = noise(rng);
  }
  return {s, observe(s, config)};
}

namespace {

void check_shapes(const JointState& state, const JointAction& action, const EnvConfig& config) {
  if (state.size() != config.state_dim() || action.size() != config.action_dim()) {
    throw Error(ErrorCode::ShapeMismatch, "state/action length does not match n_agents");
  }
}

void check_action(const JointAction& action, const EnvConfig& config) {
  const double tol = 1e-12 * std::max(1.0, config.action_bound);
  for (Eigen::Index k = 0; k < action.size(); ++k) {
    if (!std::isfinite(action(k)) || std::abs(action(k)) > config.action_bound + tol) {
      throw Error(ErrorCode::ActionOutOfBounds,
                  "component " + std::to_string(k) + " = " + std::to_string(action(k)));
    }
  }
}

// Spring force along x from the chain neighbours, rest spacing 1.
double chain_force(const JointState& s, int i, const EnvConfig& config) {
  double f = 0.0;
  const double xi = s(4 * i);
  if (i > 0) f += s(4 * (i - 1)) - xi + 1.0;
  if (i + 1 < config.n_agents) f += s(4 * (i + 1)) - xi - 1.0;
  return config.coupling_stiffness * f;
}

}  // namespace

JointState true_dynamics(const JointState& state, const JointAction& action,
                         const EnvConfig& config) {
  check_shapes(state, action, config);
  check_action(action, config);
  JointState next = state;
  for (int i = 0; i < config.n_agents; ++i) {
    const double vx = state(4 * i + 2);
    const double vy = state(4 * i + 3);
    const double speed = std::hypot(vx, vy);
    const double ax = action(2 * i) - config.drag_coeff * speed * vx + chain_force(state, i, config);
    const double ay = action(2 * i + 1) - config.drag_coeff * speed * vy;
    const double nvx = vx + config.dt * ax;
    const double nvy = vy + config.dt * ay;
    next(4 * i + 2) = nvx;
    next(4 * i + 3) = nvy;
    next(4 * i) = state(4 * i) + config.dt * nvx;
    next(4 * i + 1) = state(4 * i + 1) + config.dt * nvy;
  }
  for (int i = 0; i < config.n_agents; ++i) {
    for (int d = 0; d < 2; ++d) {
      double& p = next(4 * i + d);
      if (p < config.state_lower[d] || p > config.state_upper[d]) {
        p = std::clamp(p, config.state_lower[d], config.state_upper[d]);
        next(4 * i + 2 + d) = 0.0;
      }
      double& v = next(4 * i + 2 + d);
      v = std::clamp(v, config.state_lower[2 + d], config.state_upper[2 + d]);
    }
  }
  return next;
}

void true_dynamics_jacobians(const JointState& state, const JointAction& action,
                             const EnvConfig& config, Matrix& d_state, Matrix& d_action) {
  check_shapes(state, action, config);
  const int ns = config.state_dim();
  const int na = config.action_dim();
  const double dt = config.dt;
  const double k = config.coupling_stiffness;
  // Acceleration Jacobians first; velocities and positions follow by the Euler chain.
  Matrix acc_s = Matrix::Zero(ns, ns);
  for (int i = 0; i < config.n_agents; ++i) {
    const double vx = state(4 * i + 2);
    const double vy = state(4 * i + 3);
    const double speed = std::hypot(vx, vy);
    const int rx = 4 * i + 2;
    const int ry = 4 * i + 3;
    if (speed > 0.0) {
      const double c = config.drag_coeff;
      acc_s(rx, rx) = -c * (speed + vx * vx / speed);
      acc_s(rx, ry) = -c * (vx * vy / speed);
      acc_s(ry, rx) = -c * (vx * vy / speed);
      acc_s(ry, ry) = -c * (speed + vy * vy / speed);
    }
    if (i > 0) {
      acc_s(rx, 4 * (i - 1)) += k;
      acc_s(rx, 4 * i) -= k;
    }
    if (i + 1 < config.n_agents) {
      acc_s(rx, 4 * (i + 1)) += k;
      acc_s(rx, 4 * i) -= k;
    }
  }
  d_state = Matrix::Zero(ns, ns);
  d_action = Matrix::Zero(ns, na);
  for (int i = 0; i < config.n_agents; ++i) {
    for (int d = 0; d < 2; ++d) {
      const int vrow = 4 * i + 2 + d;
      const int prow = 4 * i + d;
      d_state.row(vrow) = dt * acc_s.row(vrow);
      d_state(vrow, vrow) += 1.0;
      d_state.row(prow) = dt * d_state.row(vrow);
      d_state(prow, prow) += 1.0;
      d_action(vrow, 2 * i + d) = dt;
      d_action(prow, 2 * i + d) = dt * dt;
    }
  }
}

CostValue cost(const JointState& state, const EnvConfig& config) {
  if (state.size() != config.state_dim()) {
    throw Error(ErrorCode::ShapeMismatch, "state length does not match n_agents");
  }
  CostValue out;
  for (int i = 0; i < config.n_agents; ++i) {
    const double speed = std::hypot(state(4 * i + 2), state(4 * i + 3));
    out.value += speed;
    if (speed > config.velocity_threshold) out.indicator = 1;
  }
  return out;
}

double reward(const JointState& state, const JointState& next_state, const JointAction& action,
              const EnvConfig& config) {
  check_shapes(state, action, config);
  if (next_state.size() != state.size()) {
    throw Error(ErrorCode::ShapeMismatch, "next_state length mismatch");
  }
  double total = 0.0;
  for (int i = 0; i < config.n_agents; ++i) {
    const double progress = (next_state(4 * i) - state(4 * i)) / config.dt;
    const double effort = action.segment(2 * i, 2).squaredNorm();
    total += progress - config.ctrl_cost_weight * effort + config.alive_bonus;
  }
  return total / config.n_agents;
}

std::vector<Vector> observe(const JointState& state, const EnvConfig& config) {
  if (state.size() != config.state_dim()) {
    throw Error(ErrorCode::ShapeMismatch, "state length does not match n_agents");
  }
  std::vector<Vector> obs;
  obs.reserve(config.n_agents);
  for (int i = 0; i < config.n_agents; ++i) {
    Vector o = Vector::Zero(kAgentObsDim);
    o.head(4) = state.segment(4 * i, 4);
    if (i > 0) o.segment(4, 2) = state.segment(4 * (i - 1), 2) - state.segment(4 * i, 2);
    if (i + 1 < config.n_agents) {
      o.segment(6, 2) = state.segment(4 * (i + 1), 2) - state.segment(4 * i, 2);
    }
    obs.push_back(std::move(o));
  }
  return obs;
}

Vector global_observation(const std::vector<Vector>& observations) {
  Eigen::Index total = 0;
  for (const auto& o : observations) total += o.size();
  Vector g(total);
  Eigen::Index pos = 0;
  for (const auto& o : observations) {
    g.segment(pos, o.size()) = o;
    pos += o.size();
  }
  return g;
}

StepOutcome step(const JointState& state, const JointAction& action, int t,
                 const EnvConfig& config) {
  if (t < 0 || t >= config.episode_length) {
    throw Error(ErrorCode::ShapeMismatch, "step index outside the episode");
  }
  StepOutcome out;
  out.next_state = true_dynamics(state, action, config);
  out.reward = reward(state, out.next_state, action, config);
  const CostValue c = cost(out.next_state, config);
  out.cost = c.value;
  out.cost_indicator = c.indicator;
  out.observations = observe(out.next_state, config);
  out.done = (t + 1 == config.episode_length);
  return out;
}

Vector clamp_action(const JointAction& action, const EnvConfig& config) {
  return action.cwiseMax(-config.action_bound).cwiseMin(config.action_bound);
}

nlohmann::json trajectory_record(int t, const JointState& state, const JointAction& action,
                                 double reward_value, double cost_value, int indicator) {
  return {{"t", t},
          {"state", std::vector<double>(state.begin(), state.end())},
          {"action", std::vector<double>(action.begin(), action.end())},
          {"reward", reward_value},
          {"cost", cost_value},
          {"indicator", indicator}};
}

nlohmann::json env_config_to_json(const EnvConfig& c) {
  return {{"n_agents", c.n_agents},
          {"dt", c.dt},
          {"drag_coeff", c.drag_coeff},
          {"coupling_stiffness", c.coupling_stiffness},
          {"action_bound", c.action_bound},
          {"state_lower", c.state_lower},
          {"state_upper", c.state_upper},
          {"velocity_threshold", c.velocity_threshold},
          {"ctrl_cost_weight", c.ctrl_cost_weight},
          {"alive_bonus", c.alive_bonus},
          {"episode_length", c.episode_length}};
}

}  // namespace dsmpc
