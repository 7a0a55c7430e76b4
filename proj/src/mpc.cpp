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

#include "dsmpc/mpc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "dsmpc/error.hpp"

namespace dsmpc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kCurvatureDamping = 1e-6;

int state_offset(int stage, int ns) { return (stage - 1) * ns; }  // stage in 1..T
int action_offset(int stage, int horizon, int ns, int na) { return horizon * ns + stage * na; }

// Squared-hinge distance outside [lo, hi].
double hinge(double x, double lo, double hi) {
  if (x > hi) return x - hi;
  if (x < lo) return x - lo;
  return 0.0;
}

// Step that satisfies the linearized dynamics with the actions held fixed.
Vector forward_step(const Trajectory& traj, const StageJacobians& jac, const Vector& defects,
                    int ns, int na) {
  const int horizon = traj.horizon();
  Vector step = Vector::Zero(horizon * (ns + na));
  Vector prev = Vector::Zero(ns);
  for (int k = 0; k < horizon; ++k) {
    Vector ds = defects.segment(k * ns, ns);
    if (k > 0) ds += jac.d_state[k] * prev;
    step.segment(state_offset(k + 1, ns), ns) = ds;
    prev = ds;
  }
  return step;
}

void bfgs_update(Matrix& b, const Vector& s, const Vector& y) {
  const Vector bs = b * s;
  const double sbs = s.dot(bs);
  if (!(sbs > 0.0)) return;
  const double sy = s.dot(y);
  // Powell damping keeps the update positive definite.
  const double theta = sy >= 0.2 * sbs ? 1.0 : 0.8 * sbs / (sbs - sy);
  const Vector r = theta * y + (1.0 - theta) * bs;
  const double sr = s.dot(r);
  if (!(sr > 0.0)) return;
  b += r * r.transpose() / sr - bs * bs.transpose() / sbs;
  b = 0.5 * (b + b.transpose()).eval();
}

}  // namespace

const char* to_string(HessianMode mode) noexcept {
  switch (mode) {
    case HessianMode::Identity: return "identity";
    case HessianMode::GaussNewton: return "gauss_newton";
    case HessianMode::Bfgs: return "bfgs";
    case HessianMode::Lagrangian: return "lagrangian";
  }
  return "unknown";
}

HessianMode hessian_mode_from_string(const std::string& name) {
  if (name == "identity") return HessianMode::Identity;
  if (name == "gauss_newton") return HessianMode::GaussNewton;
  if (name == "bfgs") return HessianMode::Bfgs;
  if (name == "lagrangian") return HessianMode::Lagrangian;
  throw Error(ErrorCode::ConfigInvalid, "unknown hessian_mode '" + name + "'");
}

const char* to_string(SQPStatus status) noexcept {
  switch (status) {
    case SQPStatus::Converged: return "converged";
    case SQPStatus::MaxIter: return "max_iter";
    case SQPStatus::QPFailed: return "qp_failed";
    case SQPStatus::LineSearchFailed: return "line_search_failed";
  }
  return "unknown";
}

void MPCOptions::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw Error(ErrorCode::ConfigInvalid, std::string("mpc: ") + what);
  };
  require(horizon >= 1, "horizon must be >= 1");
  require(max_sqp_iter >= 1, "max_sqp_iter must be >= 1");
  require(kkt_tol > 0.0, "kkt_tol must be > 0");
  require(merit_penalty_init >= 0.0, "merit_penalty_init must be >= 0");
  require(armijo_c > 0.0 && armijo_c < 1.0, "armijo_c must be in (0, 1)");
  require(backtrack_factor > 0.0 && backtrack_factor < 1.0, "backtrack_factor must be in (0, 1)");
  require(max_backtracks >= 1, "max_backtracks must be >= 1");
  require(anchor_weight >= 0.0, "anchor_weight must be >= 0");
  require(smooth_eps > 0.0, "smooth_eps must be > 0");
  require(cost_scale > 0.0, "cost_scale must be > 0");
  require(state_penalty_weight > 0.0, "state_penalty_weight must be > 0");
  require(qp_max_iter >= 1, "qp_max_iter must be >= 1");
}

Matrix Dynamics::weighted_hessian(const JointState& state, const JointAction& action,
                                  const Vector& weights) const {
  const int ns = state_dim();
  const int na = action_dim();
  auto weighted_gradient = [&](const Vector& x) {
    Matrix js, ja;
    jacobians(x.head(ns), x.tail(na), js, ja);
    Vector g(ns + na);
    g << js.transpose() * weights, ja.transpose() * weights;
    return g;
  };
  Vector x(ns + na);
  x << state, action;
  const Matrix h = finite_diff_jacobian(weighted_gradient, x, 1e-5);
  return 0.5 * (h + h.transpose());
}

JointState PredictorDynamics::next(const JointState& state, const JointAction& action) const {
  return predict(model_, state, action);
}

void PredictorDynamics::jacobians(const JointState& state, const JointAction& action,
                                  Matrix& d_state, Matrix& d_action) const {
  predict_jacobians(model_, state, action, d_state, d_action);
}

Matrix PredictorDynamics::weighted_hessian(const JointState& state, const JointAction& action,
                                           const Vector& weights) const {
  // The identity part of the residual map is linear; only the network
  // contributes curvature. Differentiate its weighted input gradient.
  const int ns = state_dim();
  const int na = action_dim();
  const Vector out_grad = model_.delta_stats.std.cwiseProduct(weights);
  Vector scale(ns + na);
  scale << model_.state_stats.std.cwiseInverse(), model_.action_stats.std.cwiseInverse();
  Vector x(ns + na);
  x << model_.state_stats.normalize(state), model_.action_stats.normalize(action);
  const Matrix h = finite_diff_jacobian(
      [&](const Vector& v) { return mlp_backward(model_.net, v, out_grad).input_gradient; }, x, 1e-5);
  const Matrix scaled = scale.asDiagonal() * h * scale.asDiagonal();
  return 0.5 * (scaled + scaled.transpose());
}

JointState TrueEnvDynamics::next(const JointState& state, const JointAction& action) const {
  return true_dynamics(state, action, config_);
}

void TrueEnvDynamics::jacobians(const JointState& state, const JointAction& action,
                                Matrix& d_state, Matrix& d_action) const {
  true_dynamics_jacobians(state, action, config_, d_state, d_action);
}

MPCBounds mpc_bounds(const EnvConfig& env) {
  return {env.state_lower_bounds(), env.state_upper_bounds(), env.action_bound};
}

double stage_cost(const JointState& state, const JointAction& action, const JointAction& anchor,
                  double rho, double smooth_eps) {
  double c = 0.0;
  for (int i = 0; i + kAgentStateDim <= state.size(); i += kAgentStateDim) {
    const double vx = state(i + 2), vy = state(i + 3);
    c += std::sqrt(vx * vx + vy * vy + smooth_eps);
  }
  return c + rho * (action - anchor).squaredNorm();
}

Vector pack(const Trajectory& traj) {
  const int horizon = traj.horizon();
  const int ns = static_cast<int>(traj.initial.size());
  const int na = horizon > 0 ? static_cast<int>(traj.actions.front().size()) : 0;
  Vector z(horizon * (ns + na));
  for (int k = 0; k < horizon; ++k) {
    z.segment(state_offset(k + 1, ns), ns) = traj.states[k];
    z.segment(action_offset(k, horizon, ns, na), na) = traj.actions[k];
  }
  return z;
}

Trajectory unpack(const Vector& z, const JointState& initial, int horizon, int state_dim,
                  int action_dim) {
  if (z.size() != horizon * (state_dim + action_dim)) {
    throw Error(ErrorCode::ShapeMismatch, "unpack: decision vector length mismatch");
  }
  Trajectory t;
  t.initial = initial;
  for (int k = 0; k < horizon; ++k) {
    t.states.push_back(z.segment(state_offset(k + 1, state_dim), state_dim));
    t.actions.push_back(z.segment(action_offset(k, horizon, state_dim, action_dim), action_dim));
  }
  return t;
}

StageJacobians linearize(const Dynamics& dynamics, const Trajectory& traj) {
  StageJacobians jac;
  const int horizon = traj.horizon();
  if (static_cast<int>(traj.states.size()) != horizon) {
    throw Error(ErrorCode::ShapeMismatch, "linearize: state/action sequence lengths differ");
  }
  jac.d_state.resize(horizon);
  jac.d_action.resize(horizon);
  for (int k = 0; k < horizon; ++k) {
    const JointState& s = k == 0 ? traj.initial : traj.states[k - 1];
    dynamics.jacobians(s, traj.actions[k], jac.d_state[k], jac.d_action[k]);
  }
  return jac;
}

Vector dynamics_defects(const Dynamics& dynamics, const Trajectory& traj) {
  const int horizon = traj.horizon();
  const int ns = dynamics.state_dim();
  Vector c(horizon * ns);
  for (int k = 0; k < horizon; ++k) {
    const JointState& s = k == 0 ? traj.initial : traj.states[k - 1];
    c.segment(k * ns, ns) = dynamics.next(s, traj.actions[k]) - traj.states[k];
  }
  return c;
}

Matrix defect_jacobian(const StageJacobians& jac, int ns, int na) {
  const int horizon = static_cast<int>(jac.d_state.size());
  Matrix a = Matrix::Zero(horizon * ns, horizon * (ns + na));
  for (int k = 0; k < horizon; ++k) {
    if (k > 0) a.block(k * ns, state_offset(k, ns), ns, ns) = jac.d_state[k];
    a.block(k * ns, action_offset(k, horizon, ns, na), ns, na) = jac.d_action[k];
    a.block(k * ns, state_offset(k + 1, ns), ns, ns) = -Matrix::Identity(ns, ns);
  }
  return a;
}

double HorizonObjective::value(const Trajectory& traj) const {
  const double eps = options.smooth_eps;
  double total = 0.0;
  for (int k = 0; k < traj.horizon(); ++k) {
    total += stage_cost(traj.states[k], traj.actions[k], anchor, k == 0 ? options.anchor_weight : 0.0,
                        eps);
    if (relaxed) {
      for (int d = 0; d < traj.states[k].size(); ++d) {
        const double h = hinge(traj.states[k](d), bounds.state_lower(d), bounds.state_upper(d));
        total += options.state_penalty_weight * h * h;
      }
    }
  }
  return options.cost_scale * total;
}

Vector HorizonObjective::gradient(const Trajectory& traj) const {
  const int horizon = traj.horizon();
  const int ns = static_cast<int>(traj.initial.size());
  const int na = static_cast<int>(anchor.size());
  Vector g = Vector::Zero(horizon * (ns + na));
  for (int k = 0; k < horizon; ++k) {
    const JointState& s = traj.states[k];
    const int off = state_offset(k + 1, ns);
    for (int i = 0; i + kAgentStateDim <= ns; i += kAgentStateDim) {
      const double vx = s(i + 2), vy = s(i + 3);
      const double r = std::sqrt(vx * vx + vy * vy + options.smooth_eps);
      g(off + i + 2) = vx / r;
      g(off + i + 3) = vy / r;
    }
    if (relaxed) {
      for (int d = 0; d < ns; ++d) {
        g(off + d) += 2.0 * options.state_penalty_weight *
                      hinge(s(d), bounds.state_lower(d), bounds.state_upper(d));
      }
    }
  }
  g.segment(action_offset(0, horizon, ns, na), na) =
      2.0 * options.anchor_weight * (traj.actions[0] - anchor);
  return options.cost_scale * g;
}

Matrix HorizonObjective::curvature(const Trajectory& traj) const {
  const int horizon = traj.horizon();
  const int ns = static_cast<int>(traj.initial.size());
  const int na = static_cast<int>(anchor.size());
  const int nz = horizon * (ns + na);
  Matrix h = Matrix::Zero(nz, nz);
  for (int k = 0; k < horizon; ++k) {
    const JointState& s = traj.states[k];
    const int off = state_offset(k + 1, ns);
    for (int i = 0; i + kAgentStateDim <= ns; i += kAgentStateDim) {
      const double vx = s(i + 2), vy = s(i + 3);
      const double r2 = vx * vx + vy * vy + options.smooth_eps;
      const double r3 = r2 * std::sqrt(r2);
      const int p = off + i + 2;
      h(p, p) = (r2 - vx * vx) / r3;
      h(p + 1, p + 1) = (r2 - vy * vy) / r3;
      h(p, p + 1) = h(p + 1, p) = -vx * vy / r3;
    }
    if (relaxed) {
      for (int d = 0; d < ns; ++d) {
        if (hinge(s(d), bounds.state_lower(d), bounds.state_upper(d)) != 0.0) {
          h(off + d, off + d) += 2.0 * options.state_penalty_weight;
        }
      }
    }
  }
  const int a0 = action_offset(0, horizon, ns, na);
  h.block(a0, a0, na, na).diagonal().array() += 2.0 * options.anchor_weight;
  h.diagonal().array() += kCurvatureDamping;
  return options.cost_scale * h;
}

void add_dynamics_curvature(const Dynamics& dynamics, const Trajectory& traj,
                            const Vector& eq_multipliers, Matrix& hessian) {
  const int horizon = traj.horizon();
  const int ns = dynamics.state_dim();
  const int na = dynamics.action_dim();
  for (int k = 0; k < horizon; ++k) {
    const Vector w = eq_multipliers.segment(k * ns, ns);
    if (w.isZero(0.0)) continue;
    const JointState& s = k == 0 ? traj.initial : traj.states[k - 1];
    const Matrix h = dynamics.weighted_hessian(s, traj.actions[k], w);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(h);
    const Eigen::MatrixXd psd = eig.eigenvectors() *
                                eig.eigenvalues().cwiseMax(0.0).asDiagonal() *
                                eig.eigenvectors().transpose();
    const int ao = action_offset(k, horizon, ns, na);
    hessian.block(ao, ao, na, na) += psd.bottomRightCorner(na, na);
    if (k > 0) {
      const int so = state_offset(k, ns);
      hessian.block(so, so, ns, ns) += psd.topLeftCorner(ns, ns);
      hessian.block(so, ao, ns, na) += psd.topRightCorner(ns, na);
      hessian.block(ao, so, na, ns) += psd.bottomLeftCorner(na, ns);
    }
  }
}

QPProblem build_qp(const Trajectory& traj, const StageJacobians& jac, const Vector& defects,
                   const Vector& cost_gradient, const Matrix& hessian, const MPCBounds& bounds,
                   bool state_bounds) {
  const int horizon = traj.horizon();
  const int ns = static_cast<int>(traj.initial.size());
  const int na = horizon > 0 ? static_cast<int>(traj.actions.front().size()) : 0;
  const int nz = horizon * (ns + na);
  if (cost_gradient.size() != nz || hessian.rows() != nz || defects.size() != horizon * ns) {
    throw Error(ErrorCode::ShapeMismatch, "build_qp: inconsistent dimensions");
  }
  QPProblem qp;
  qp.hessian = hessian;
  qp.gradient = cost_gradient;
  qp.eq_matrix = defect_jacobian(jac, ns, na);
  qp.eq_rhs = -defects;
  qp.lower.resize(nz);
  qp.upper.resize(nz);
  for (int k = 0; k < horizon; ++k) {
    const int so = state_offset(k + 1, ns);
    if (state_bounds) {
      qp.lower.segment(so, ns) = bounds.state_lower - traj.states[k];
      qp.upper.segment(so, ns) = bounds.state_upper - traj.states[k];
    } else {
      qp.lower.segment(so, ns).setConstant(-kInf);
      qp.upper.segment(so, ns).setConstant(kInf);
    }
    const int ao = action_offset(k, horizon, ns, na);
    qp.lower.segment(ao, na) = (-bounds.action_bound - traj.actions[k].array()).matrix();
    qp.upper.segment(ao, na) = (bounds.action_bound - traj.actions[k].array()).matrix();
  }
  return qp;
}

double kkt_residual(const KktTerms& t) {
  const Eigen::Index n = t.z.size();
  Vector stat = t.cost_gradient - t.lower_multipliers + t.upper_multipliers;
  if (t.eq_multipliers.size() > 0) stat += t.constraint_jacobian.transpose() * t.eq_multipliers;
  double r = stat.size() ? stat.cwiseAbs().maxCoeff() : 0.0;
  if (t.defects.size() > 0) r = std::max(r, t.defects.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < n; ++i) {
    r = std::max(r, t.lower(i) - t.z(i));
    r = std::max(r, t.z(i) - t.upper(i));
    r = std::max(r, -t.lower_multipliers(i));
    r = std::max(r, -t.upper_multipliers(i));
    if (std::isfinite(t.lower(i))) {
      r = std::max(r, std::abs(t.lower_multipliers(i) * (t.z(i) - t.lower(i))));
    } else {
      r = std::max(r, std::abs(t.lower_multipliers(i)));
    }
    if (std::isfinite(t.upper(i))) {
      r = std::max(r, std::abs(t.upper_multipliers(i) * (t.upper(i) - t.z(i))));
    } else {
      r = std::max(r, std::abs(t.upper_multipliers(i)));
    }
  }
  return r;
}

double l1_merit(double cost, const Vector& defects, double penalty) {
  return cost + penalty * defects.lpNorm<1>();
}

LineSearchResult merit_line_search(const std::function<double(double)>& merit, double merit0,
                                   double directional_derivative, bool zero_direction,
                                   const MPCOptions& options) {
  LineSearchResult r;
  if (zero_direction) {
    r.accepted = true;
    r.step = 1.0;
    r.merit = merit0;
    return r;
  }
  double step = 1.0;
  for (int k = 0; k < options.max_backtracks; ++k) {
    const double m = merit(step);
    if (std::isfinite(m) && m < merit0 &&
        m <= merit0 + options.armijo_c * step * directional_derivative) {
      r.accepted = true;
      r.step = step;
      r.merit = m;
      r.backtracks = k;
      return r;
    }
    step *= options.backtrack_factor;
  }
  r.backtracks = options.max_backtracks;
  r.merit = merit0;
  return r;
}

nlohmann::json SQPDiagnostics::to_json(bool fallback) const {
  return {{"kkt", final_kkt},
          {"sqp_iters", sqp_iters()},
          {"merit_final", final_merit},
          {"fallback", fallback},
          {"status", to_string(status)}};
}

SQPResult sqp_solve(const std::vector<JointAction>& initial_actions, const JointState& state,
                    const JointAction& anchor, const Dynamics& dynamics, const MPCBounds& bounds,
                    const MPCOptions& options) {
  options.validate();
  const int horizon = options.horizon;
  const int ns = dynamics.state_dim();
  const int na = dynamics.action_dim();
  if (static_cast<int>(initial_actions.size()) != horizon || state.size() != ns ||
      anchor.size() != na || bounds.state_lower.size() != ns || bounds.state_upper.size() != ns) {
    throw Error(ErrorCode::ShapeMismatch, "sqp_solve: inconsistent dimensions");
  }

  Trajectory traj;
  traj.initial = state;
  JointState s = state;
  for (const auto& a : initial_actions) {
    if (a.size() != na) throw Error(ErrorCode::ShapeMismatch, "sqp_solve: action length");
    const JointAction clamped = a.cwiseMax(-bounds.action_bound).cwiseMin(bounds.action_bound);
    s = dynamics.next(s, clamped);
    traj.actions.push_back(clamped);
    traj.states.push_back(s);
  }

  HorizonObjective objective{anchor, options, bounds, false};
  SQPResult result;
  SQPDiagnostics& diag = result.diagnostics;
  double penalty = options.merit_penalty_init * options.cost_scale;
  const int nz = horizon * (ns + na);
  Matrix bfgs = options.cost_scale * Matrix::Identity(nz, nz);
  diag.status = SQPStatus::MaxIter;
  Vector multipliers;

  for (int iter = 0; iter < options.max_sqp_iter; ++iter) {
    const StageJacobians jac = linearize(dynamics, traj);
    const Vector defects = dynamics_defects(dynamics, traj);
    const Vector grad = objective.gradient(traj);
    Matrix hess;
    switch (options.hessian_mode) {
      case HessianMode::Identity: hess = options.cost_scale * Matrix::Identity(nz, nz); break;
      case HessianMode::GaussNewton: hess = objective.curvature(traj); break;
      case HessianMode::Bfgs: hess = bfgs; break;
      case HessianMode::Lagrangian:
        hess = objective.curvature(traj);
        if (multipliers.size() > 0) add_dynamics_curvature(dynamics, traj, multipliers, hess);
        break;
    }
    QPProblem qp = build_qp(traj, jac, defects, grad, hess, bounds, !objective.relaxed);

    QPWarmStart warm;
    warm.x = forward_step(traj, jac, defects, ns, na);
    for (int k = 0; k < horizon; ++k) {
      for (int d = 0; d < na; ++d) {
        const int idx = action_offset(k, horizon, ns, na) + d;
        if (qp.lower(idx) == 0.0 || qp.upper(idx) == 0.0) warm.fixed.push_back(idx);
      }
    }
    QPSolution sol = solve_box_qp(qp, options.qp_max_iter, &warm);
    if (sol.status == QPStatus::Infeasible && !objective.relaxed) {
      // Move the state bounds into the objective and retry at the same iterate.
      objective.relaxed = true;
      diag.relaxed_state_bounds = true;
      Matrix relaxed_hess = hess;
      if (options.hessian_mode == HessianMode::GaussNewton ||
          options.hessian_mode == HessianMode::Lagrangian) {
        relaxed_hess = objective.curvature(traj);
        if (options.hessian_mode == HessianMode::Lagrangian && multipliers.size() > 0) {
          add_dynamics_curvature(dynamics, traj, multipliers, relaxed_hess);
        }
      }
      qp = build_qp(traj, jac, defects, objective.gradient(traj), relaxed_hess, bounds, false);
      sol = solve_box_qp(qp, options.qp_max_iter, &warm);
    }

    const Vector z = pack(traj);
    SQPIterationRecord rec;
    rec.qp_status = sol.status;
    rec.qp_iterations = sol.iterations;
    const double cost0 = objective.value(traj);
    rec.merit_value = l1_merit(cost0, defects, penalty);
    if (sol.status != QPStatus::Solved) {
      diag.iterations.push_back(rec);
      diag.status = SQPStatus::QPFailed;
      diag.final_merit = rec.merit_value;
      break;
    }

    KktTerms terms;
    terms.z = z;
    terms.cost_gradient = objective.gradient(traj);
    terms.constraint_jacobian = qp.eq_matrix;
    terms.defects = defects;
    terms.lower = z + qp.lower;
    terms.upper = z + qp.upper;
    terms.eq_multipliers = sol.eq_multipliers;
    terms.lower_multipliers = sol.lower_multipliers;
    terms.upper_multipliers = sol.upper_multipliers;
    rec.kkt_residual = kkt_residual(terms);
    diag.final_kkt = rec.kkt_residual;
    diag.final_merit = rec.merit_value;
    if (rec.kkt_residual <= options.kkt_tol) {
      rec.merit_after = rec.merit_value;
      diag.iterations.push_back(rec);
      diag.status = SQPStatus::Converged;
      break;
    }

    const double lambda_max = sol.eq_multipliers.size() ? sol.eq_multipliers.cwiseAbs().maxCoeff() : 0.0;
    if (penalty < lambda_max) penalty = 2.0 * lambda_max + options.cost_scale;
    rec.merit_value = l1_merit(cost0, defects, penalty);
    const Vector& step = sol.x;
    const double deriv = terms.cost_gradient.dot(step) - penalty * defects.lpNorm<1>();
    rec.directional_derivative = deriv;
    auto merit_at = [&](double alpha) {
      const Trajectory trial = unpack(z + alpha * step, state, horizon, ns, na);
      return l1_merit(objective.value(trial), dynamics_defects(dynamics, trial), penalty);
    };
    const LineSearchResult ls =
        merit_line_search(merit_at, rec.merit_value, deriv, step.isZero(0.0), options);
    if (!ls.accepted) {
      rec.merit_after = rec.merit_value;
      diag.iterations.push_back(rec);
      diag.status = SQPStatus::LineSearchFailed;
      break;
    }
    rec.step_length = ls.step;
    rec.merit_after = ls.merit;
    diag.iterations.push_back(rec);
    diag.final_merit = ls.merit;

    multipliers = sol.eq_multipliers;
    const Vector z_next = z + ls.step * step;
    Trajectory next = unpack(z_next, state, horizon, ns, na);
    // Roundoff may push an action a hair outside its box.
    for (auto& a : next.actions) a = a.cwiseMax(-bounds.action_bound).cwiseMin(bounds.action_bound);
    if (options.hessian_mode == HessianMode::Bfgs) {
      const Matrix a_next = defect_jacobian(linearize(dynamics, next), ns, na);
      const Vector lag_next = objective.gradient(next) + a_next.transpose() * sol.eq_multipliers;
      const Vector lag_prev = terms.cost_gradient + qp.eq_matrix.transpose() * sol.eq_multipliers;
      bfgs_update(bfgs, pack(next) - z, lag_next - lag_prev);
    }
    traj = std::move(next);
  }
  result.trajectory = std::move(traj);
  return result;
}

FilterResult safety_filter(const JointAction& policy_action, const JointState& state,
                           const Dynamics& dynamics, const MPCBounds& bounds,
                           const MPCOptions& options) {
  const JointAction anchor =
      policy_action.cwiseMax(-bounds.action_bound).cwiseMin(bounds.action_bound);
  FilterResult out;
  SQPResult r = sqp_solve(std::vector<JointAction>(options.horizon, anchor), state, anchor,
                          dynamics, bounds, options);
  out.diagnostics = std::move(r.diagnostics);
  if (out.diagnostics.status == SQPStatus::QPFailed) {
    out.fallback = true;
    out.action = anchor;
    out.sequence.assign(options.horizon, anchor);
    return out;
  }
  out.sequence = std::move(r.trajectory.actions);
  out.action = out.sequence.front();
  return out;
}

}  // namespace dsmpc
