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

#include <gtest/gtest.h>

#include <random>

#include "dsmpc/env.hpp"
#include "dsmpc/error.hpp"
#include "oracles.hpp"

using namespace dsmpc;

namespace {

EnvConfig single_agent_no_forces() {
  EnvConfig c = env_preset("cheetah2");
  c.n_agents = 1;
  c.drag_coeff = 0.0;
  c.coupling_stiffness = 0.0;
  return c;
}

JointAction random_action(std::mt19937_64& rng, const EnvConfig& c) {
  std::uniform_real_distribution<double> u(-c.action_bound, c.action_bound);
  JointAction a(c.action_dim());
  for (int i = 0; i < a.size(); ++i) a(i) = u(rng);
  return a;
}

JointState random_state(std::mt19937_64& rng, const EnvConfig& c, double pos = 5.0,
                        double vel = 3.0) {
  std::uniform_real_distribution<double> p(-pos, pos), v(-vel, vel);
  JointState s(c.state_dim());
  for (int i = 0; i < c.n_agents; ++i) {
    s(4 * i) = p(rng);
    s(4 * i + 1) = p(rng);
    s(4 * i + 2) = v(rng);
    s(4 * i + 3) = v(rng);
  }
  return s;
}

}  // namespace

TEST(Reset, DeterministicPerSeed) {
  const EnvConfig c = env_preset("cheetah2");
  EXPECT_EQ(reset(c, 7).first, reset(c, 7).first);
}

TEST(Reset, SingleAgentShape) {
  EnvConfig c = env_preset("cheetah2");
  c.n_agents = 1;
  const auto [s, obs] = reset(c, 0);
  EXPECT_EQ(s.size(), 4);
  EXPECT_EQ(obs.size(), 1u);
}

TEST(Reset, SeedsDifferOnlyInVelocities) {
  const EnvConfig c = env_preset("cheetah2");
  const JointState a = reset(c, 7).first;
  const JointState b = reset(c, 8).first;
  for (int i = 0; i < c.n_agents; ++i) {
    EXPECT_EQ(a(4 * i), static_cast<double>(i));
    EXPECT_EQ(b(4 * i), static_cast<double>(i));
    EXPECT_EQ(a(4 * i + 1), 0.0);
    EXPECT_EQ(b(4 * i + 1), 0.0);
    EXPECT_LE(std::abs(a(4 * i + 2)), 0.05);
    EXPECT_LE(std::abs(a(4 * i + 3)), 0.05);
  }
  EXPECT_NE(a, b);
}

TEST(TrueDynamics, FixedPointAtRest) {
  EnvConfig c = env_preset("cheetah2");
  c.coupling_stiffness = 0.0;
  JointState s = JointState::Zero(c.state_dim());
  s(0) = 0.3;
  s(4) = -2.0;
  EXPECT_EQ(true_dynamics(s, JointAction::Zero(c.action_dim()), c), s);
}

TEST(TrueDynamics, EulerArithmetic) {
  const EnvConfig c = single_agent_no_forces();
  const JointState next =
      true_dynamics(JointState::Zero(4), (JointAction(2) << 1.0, 0.0).finished(), c);
  EXPECT_DOUBLE_EQ(next(2), 0.05);
  EXPECT_DOUBLE_EQ(next(3), 0.0);
  EXPECT_DOUBLE_EQ(next(0), 0.0025);
}

TEST(TrueDynamics, SpringAtRestLengthIsNeutral) {
  EnvConfig c = env_preset("cheetah2");
  c.n_agents = 3;
  c.drag_coeff = 0.0;
  JointState s = JointState::Zero(12);
  s(0) = 0.0;
  s(4) = 1.0;
  s(8) = 2.0;
  EXPECT_EQ(true_dynamics(s, JointAction::Zero(6), c), s);
}

TEST(TrueDynamics, MatchesIndependentIntegrator) {
  std::mt19937_64 rng(21);
  for (const auto& name : env_preset_names()) {
    EnvConfig c = env_preset(name);
    for (int n_agents : {1, 2, 3}) {
      c.n_agents = n_agents;
      for (int trial = 0; trial < 100; ++trial) {
        const JointState s = random_state(rng, c, 120.0, 11.0).cwiseMax(c.state_lower_bounds())
                                 .cwiseMin(c.state_upper_bounds());
        const JointAction a = random_action(rng, c);
        const JointState next = true_dynamics(s, a, c);
        const auto ref = oracle::euler_step(c, std::vector<double>(s.begin(), s.end()),
                                            std::vector<double>(a.begin(), a.end()));
        for (int k = 0; k < s.size(); ++k) ASSERT_NEAR(next(k), ref[k], 1e-12) << name;
      }
    }
  }
}

TEST(TrueDynamics, RejectsOutOfBoundsAction) {
  const EnvConfig c = env_preset("cheetah2");
  JointAction a = JointAction::Zero(c.action_dim());
  a(1) = c.action_bound * 1.01;
  try {
    true_dynamics(reset(c, 0).first, a, c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ActionOutOfBounds);
  }
}

TEST(TrueDynamics, StaysWithinStateBounds) {
  std::mt19937_64 rng(4);
  EnvConfig c = env_preset("cheetah2");
  c.state_lower = {-1.0, -1.0, -0.5, -0.5};
  c.state_upper = {1.0, 1.0, 0.5, 0.5};
  JointState s = JointState::Zero(c.state_dim());
  for (int t = 0; t < 500; ++t) {
    s = true_dynamics(s, random_action(rng, c), c);
    for (int k = 0; k < s.size(); ++k) {
      ASSERT_GE(s(k), c.state_lower_bounds()(k));
      ASSERT_LE(s(k), c.state_upper_bounds()(k));
    }
  }
}

TEST(TrueDynamics, JacobiansMatchFiniteDifferences) {
  std::mt19937_64 rng(12);
  for (const auto& name : env_preset_names()) {
    const EnvConfig c = env_preset(name);
    for (int trial = 0; trial < 20; ++trial) {
      const JointState s = random_state(rng, c);
      // Keep the action interior so central differences stay within bounds.
      const JointAction a = 0.9 * random_action(rng, c);
      Matrix js, ja;
      true_dynamics_jacobians(s, a, c, js, ja);
      const Matrix fs = finite_diff_jacobian([&](const Vector& v) { return true_dynamics(v, a, c); }, s,
                                             1e-6);
      const Matrix fa = finite_diff_jacobian([&](const Vector& v) { return true_dynamics(s, v, c); }, a,
                                             1e-6 * c.action_bound);
      EXPECT_LE((js - fs).cwiseAbs().maxCoeff(), 1e-7) << name;
      EXPECT_LE((ja - fa).cwiseAbs().maxCoeff(), 1e-7) << name;
    }
  }
}

TEST(TrueDynamics, CouplingCarriesOneAgentsActionToAnother) {
  const EnvConfig c = env_preset("cheetah2");
  const JointState s = reset(c, 3).first;
  JointAction a = JointAction::Zero(c.action_dim());
  JointState base = s;
  for (int t = 0; t < 2; ++t) base = true_dynamics(base, a, c);
  a(0) = 1.0;  // push agent 0 only
  JointState pushed = true_dynamics(s, a, c);
  pushed = true_dynamics(pushed, JointAction::Zero(c.action_dim()), c);
  EXPECT_NE(pushed(6), base(6));  // agent 1 vx
  // Coupling acts through positions, so the effect appears from the second step on.
  EXPECT_GT(std::abs(pushed(6) - base(6)), 1e-6);
}

TEST(Cost, ZeroVelocities) {
  const EnvConfig c = env_preset("cheetah2");
  const CostValue v = cost(JointState::Zero(c.state_dim()), c);
  EXPECT_EQ(v.value, 0.0);
  EXPECT_EQ(v.indicator, 0);
}

TEST(Cost, ThreeFourFive) {
  EnvConfig c = env_preset("cheetah2");
  c.n_agents = 1;
  c.velocity_threshold = 6.0;
  const CostValue v = cost((JointState(4) << 0, 0, 3, 4).finished(), c);
  EXPECT_DOUBLE_EQ(v.value, 5.0);
  EXPECT_EQ(v.indicator, 0);
}

TEST(Cost, IndicatorAboveCheetahThreshold) {
  const EnvConfig c = env_preset("cheetah2");
  EXPECT_DOUBLE_EQ(c.velocity_threshold, 3.227);
  JointState s = JointState::Zero(8);
  s(2) = 3.3;
  EXPECT_EQ(cost(s, c).indicator, 1);
}

TEST(Cost, PresetThresholds) {
  EXPECT_DOUBLE_EQ(env_preset("swimmer2").velocity_threshold, 0.04891);
  EXPECT_DOUBLE_EQ(env_preset("ant2").velocity_threshold, 2.522);
  EXPECT_THROW(env_preset("walker"), Error);
}

TEST(Cost, Properties) {
  std::mt19937_64 rng(8);
  const EnvConfig c = env_preset("cheetah2");
  for (int trial = 0; trial < 1000; ++trial) {
    const JointState s = random_state(rng, c, 5.0, 4.0);
    const CostValue v = cost(s, c);
    EXPECT_GE(v.value, 0.0);
    EXPECT_TRUE(v.indicator == 0 || v.indicator == 1);
    if (v.indicator == 1) EXPECT_GT(v.value, c.velocity_threshold);
  }
}

TEST(Reward, ZeroCase) {
  const EnvConfig c = env_preset("cheetah2");
  const JointState s = reset(c, 0).first;
  EXPECT_EQ(reward(s, s, JointAction::Zero(c.action_dim()), c), 0.0);
}

TEST(Reward, ForwardProgress) {
  const EnvConfig c = env_preset("cheetah2");
  const JointState s = JointState::Zero(8);
  JointState next = s;
  next(0) = 0.05;
  next(4) = 0.05;
  EXPECT_DOUBLE_EQ(reward(s, next, JointAction::Zero(4), c), 1.0);
}

TEST(Reward, ControlPenaltyWeight) {
  EnvConfig c = env_preset("cheetah2");
  EXPECT_DOUBLE_EQ(c.ctrl_cost_weight, 0.1);
  c.n_agents = 1;
  const JointState s = JointState::Zero(4);
  EXPECT_DOUBLE_EQ(reward(s, s, (JointAction(2) << 1.0, 1.0).finished(), c), -0.2);
}

TEST(Observe, SingleAgentHasZeroNeighbours) {
  EnvConfig c = env_preset("cheetah2");
  c.n_agents = 1;
  const JointState s = (JointState(4) << 1, 2, 3, 4).finished();
  const auto obs = observe(s, c);
  ASSERT_EQ(obs.size(), 1u);
  EXPECT_EQ(obs[0], (Vector(8) << 1, 2, 3, 4, 0, 0, 0, 0).finished());
}

TEST(Observe, RightNeighbourOffset) {
  const EnvConfig c = env_preset("cheetah2");
  JointState s = JointState::Zero(8);
  s(4) = 1.0;
  const auto obs = observe(s, c);
  EXPECT_EQ(obs[0].segment(6, 2), (Vector(2) << 1.0, 0.0).finished());
  EXPECT_EQ(obs[1].segment(4, 2), (Vector(2) << -1.0, 0.0).finished());
  EXPECT_EQ(global_observation(obs).size(), 2 * kAgentObsDim);
}

TEST(Observe, ConcatenationRecoversState) {
  std::mt19937_64 rng(1);
  EnvConfig c = env_preset("cheetah2");
  c.n_agents = 3;
  const JointState s = random_state(rng, c);
  const Vector g = global_observation(observe(s, c));
  for (int i = 0; i < 3; ++i) EXPECT_EQ(g.segment(8 * i, 4), s.segment(4 * i, 4));
}

TEST(Step, EqualsComposition) {
  std::mt19937_64 rng(5);
  const EnvConfig c = env_preset("ant2");
  const JointState s = reset(c, 2).first;
  const JointAction a = random_action(rng, c);
  const StepOutcome out = step(s, a, 0, c);
  const JointState next = true_dynamics(s, a, c);
  EXPECT_EQ(out.next_state, next);
  EXPECT_EQ(out.reward, reward(s, next, a, c));
  EXPECT_EQ(out.cost, cost(next, c).value);
  EXPECT_EQ(out.cost_indicator, cost(next, c).indicator);
  const auto obs = observe(next, c);
  ASSERT_EQ(out.observations.size(), obs.size());
  for (std::size_t i = 0; i < obs.size(); ++i) EXPECT_EQ(out.observations[i], obs[i]);
  EXPECT_FALSE(out.done);
}

TEST(Step, DoneAtLastStep) {
  const EnvConfig c = env_preset("cheetah2");
  const JointState s = reset(c, 0).first;
  EXPECT_TRUE(step(s, JointAction::Zero(4), c.episode_length - 1, c).done);
  EXPECT_THROW(step(s, JointAction::Zero(4), c.episode_length, c), Error);
}

TEST(Step, RolloutIsBitIdentical) {
  auto rollout = [] {
    const EnvConfig c = env_preset("cheetah2");
    std::mt19937_64 rng(99);
    JointState s = reset(c, 99).first;
    std::vector<double> trace;
    for (int t = 0; t < 10; ++t) {
      const StepOutcome out = step(s, random_action(rng, c), t, c);
      s = out.next_state;
      trace.insert(trace.end(), s.begin(), s.end());
      trace.push_back(out.reward);
      trace.push_back(out.cost);
    }
    return trace;
  };
  EXPECT_EQ(rollout(), rollout());
}

TEST(EnvConfig, ValidateRejectsBadValues) {
  EnvConfig c = env_preset("cheetah2");
  c.dt = 0.0;
  EXPECT_THROW(c.validate(), Error);
  c = env_preset("cheetah2");
  c.n_agents = 0;
  EXPECT_THROW(c.validate(), Error);
  c = env_preset("cheetah2");
  c.state_lower[2] = c.state_upper[2];
  EXPECT_THROW(c.validate(), Error);
}

TEST(TrajectoryRecord, Fields) {
  const auto rec = trajectory_record(3, Vector::Zero(4), Vector::Ones(2), 1.5, 0.25, 0);
  for (const char* key : {"t", "state", "action", "reward", "cost", "indicator"}) {
    EXPECT_TRUE(rec.contains(key)) << key;
  }
  EXPECT_EQ(rec["state"].size(), 4u);
}
