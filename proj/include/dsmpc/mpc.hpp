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

#ifndef DSMPC_MPC_HPP_
#define DSMPC_MPC_HPP_

#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dsmpc/env.hpp"
#include "dsmpc/predictor.hpp"
#include "dsmpc/qp.hpp"

namespace dsmpc {

enum class HessianMode { Identity, GaussNewton, Bfgs, Lagrangian };

const char* to_string(HessianMode mode) noexcept;
HessianMode hessian_mode_from_string(const std::string& name);

struct MPCOptions {
  int horizon = 5;
  int max_sqp_iter = 30;
  double kkt_tol = 1e-6;
  double merit_penalty_init = 1.0;
  double armijo_c = 1e-4;
  double backtrack_factor = 0.5;
  int max_backtracks = 30;
  double anchor_weight = 0.1;
  double smooth_eps = 1e-8;
  HessianMode hessian_mode = HessianMode::Lagrangian;
  /// Apply the whole optimized sequence before re-solving instead of only its first action.
  bool open_loop = false;
  /// Positive multiplier on the whole objective.
  double cost_scale = 1.0;
  /// Weight of the squared-hinge penalty used when hard state bounds make the QP infeasible.
  double state_penalty_weight = 1e3;
  int qp_max_iter = 500;

  /// Throws Error(ConfigInvalid).
  void validate() const;
};

/// Transition model seen by the optimizer.
class Dynamics {
 public:
  virtual ~Dynamics() = default;
  virtual int state_dim() const = 0;
  virtual int action_dim() const = 0;
  virtual JointState next(const JointState& state, const JointAction& action) const = 0;
  virtual void jacobians(const JointState& state, const JointAction& action, Matrix& d_state,
                         Matrix& d_action) const = 0;
  /// Hessian of weights . next(s, a) over the stacked (s, a). The default
  /// differentiates `jacobians` by central differences.
  virtual Matrix weighted_hessian(const JointState& state, const JointAction& action,
                                  const Vector& weights) const;
};

/// The learned predictor.
class PredictorDynamics final : public Dynamics {
 public:
  explicit PredictorDynamics(const DynamicsModel& model) : model_(model) {}
  int state_dim() const override { return model_.state_dim(); }
  int action_dim() const override { return model_.action_dim(); }
  JointState next(const JointState& state, const JointAction& action) const override;
  void jacobians(const JointState& state, const JointAction& action, Matrix& d_state,
                 Matrix& d_action) const override;
  Matrix weighted_hessian(const JointState& state, const JointAction& action,
                          const Vector& weights) const override;

 private:
  const DynamicsModel& model_;
};

/// Ground-truth environment transition, for tests and diagnostics.
class TrueEnvDynamics final : public Dynamics {
 public:
  explicit TrueEnvDynamics(EnvConfig config) : config_(std::move(config)) {}
  int state_dim() const override { return config_.state_dim(); }
  int action_dim() const override { return config_.action_dim(); }
  JointState next(const JointState& state, const JointAction& action) const override;
  void jacobians(const JointState& state, const JointAction& action, Matrix& d_state,
                 Matrix& d_action) const override;

 private:
  EnvConfig config_;
};

struct MPCBounds {
  Vector state_lower;
  Vector state_upper;
  double action_bound = 1.0;
};

MPCBounds mpc_bounds(const EnvConfig& env);

/// Sum of smoothed agent speeds plus rho * ||action - anchor||^2.
double stage_cost(const JointState& state, const JointAction& action, const JointAction& anchor,
                  double rho, double smooth_eps);

/// Horizon trajectory: states s^1..s^T after the fixed initial state, actions a^0..a^{T-1}.
struct Trajectory {
  JointState initial;
  std::vector<JointState> states;
  std::vector<JointAction> actions;

  int horizon() const { return static_cast<int>(actions.size()); }
};

/// Stacked decision vector [s^1 .. s^T, a^0 .. a^{T-1}].
Vector pack(const Trajectory& traj);
Trajectory unpack(const Vector& z, const JointState& initial, int horizon, int state_dim,
                  int action_dim);

struct StageJacobians {
  std::vector<Matrix> d_state;
  std::vector<Matrix> d_action;
};

StageJacobians linearize(const Dynamics& dynamics, const Trajectory& traj);

/// f(s^k, a^k) - s^{k+1} for every stage, stacked.
Vector dynamics_defects(const Dynamics& dynamics, const Trajectory& traj);

/// Jacobian of dynamics_defects with respect to the decision vector.
Matrix defect_jacobian(const StageJacobians& jac, int state_dim, int action_dim);

/// Objective of the horizon problem: stage costs (anchor on stage 0 only),
/// times cost_scale, plus the state-bound penalty when `relaxed`.
struct HorizonObjective {
  JointAction anchor;
  MPCOptions options;
  MPCBounds bounds;
  bool relaxed = false;

  double value(const Trajectory& traj) const;
  Vector gradient(const Trajectory& traj) const;
  /// Positive semidefinite curvature of the objective (exact for the smoothed
  /// norm and the anchor), plus 1e-6 * cost_scale on the diagonal.
  Matrix curvature(const Trajectory& traj) const;
};

/// Adds the positive semidefinite part of each stage's multiplier-weighted
/// dynamics Hessian to `hessian` (used by HessianMode::Lagrangian).
void add_dynamics_curvature(const Dynamics& dynamics, const Trajectory& traj,
                            const Vector& eq_multipliers, Matrix& hessian);

/// Linearized subproblem in the step variable.
QPProblem build_qp(const Trajectory& traj, const StageJacobians& jac, const Vector& defects,
                   const Vector& cost_gradient, const Matrix& hessian, const MPCBounds& bounds,
                   bool state_bounds);

struct KktTerms {
  Vector z;
  Vector cost_gradient;
  Matrix constraint_jacobian;
  Vector defects;
  Vector lower;
  Vector upper;
  Vector eq_multipliers;
  Vector lower_multipliers;
  Vector upper_multipliers;
};

/// Infinity norm over stationarity, defects, bound violation, dual sign and
/// complementarity.
double kkt_residual(const KktTerms& terms);

/// l1 merit value: cost + penalty * ||defects||_1.
double l1_merit(double cost, const Vector& defects, double penalty);

struct LineSearchResult {
  bool accepted = false;
  double step = 0.0;
  double merit = 0.0;
  int backtracks = 0;
};

/// Backtracks from step 1 until merit(step) <= merit0 + armijo_c * step *
/// directional_derivative and merit(step) < merit0. A zero direction is
/// accepted at step 1 with the merit unchanged.
LineSearchResult merit_line_search(const std::function<double(double)>& merit, double merit0,
                                   double directional_derivative, bool zero_direction,
                                   const MPCOptions& options);

enum class SQPStatus { Converged, MaxIter, QPFailed, LineSearchFailed };
const char* to_string(SQPStatus status) noexcept;

struct SQPIterationRecord {
  double kkt_residual = 0.0;
  double merit_value = 0.0;
  double step_length = 0.0;
  QPStatus qp_status = QPStatus::Solved;
  int qp_iterations = 0;
  double directional_derivative = 0.0;
  double merit_after = 0.0;
};

struct SQPDiagnostics {
  std::vector<SQPIterationRecord> iterations;
  SQPStatus status = SQPStatus::MaxIter;
  double final_kkt = 0.0;
  double final_merit = 0.0;
  bool relaxed_state_bounds = false;

  int sqp_iters() const { return static_cast<int>(iterations.size()); }
  nlohmann::json to_json(bool fallback) const;
};

struct SQPResult {
  Trajectory trajectory;
  SQPDiagnostics diagnostics;
};

/// Multiple-shooting SQP from `initial_actions` (length = horizon). States are
/// initialized by rolling the dynamics forward. Returns the last accepted
/// iterate on every status.
SQPResult sqp_solve(const std::vector<JointAction>& initial_actions, const JointState& state,
                    const JointAction& anchor, const Dynamics& dynamics, const MPCBounds& bounds,
                    const MPCOptions& options);

struct FilterResult {
  JointAction action;
  std::vector<JointAction> sequence;
  SQPDiagnostics diagnostics;
  bool fallback = false;
};

/// Refines the policy action: repeats it over the horizon as the initial
/// guess, anchors stage 0 to it, and returns the first refined action. Falls
/// back to the clamped policy action when the subproblem cannot be solved.
FilterResult safety_filter(const JointAction& policy_action, const JointState& state,
                           const Dynamics& dynamics, const MPCBounds& bounds,
                           const MPCOptions& options);

}  // namespace dsmpc

#endif  // DSMPC_MPC_HPP_
