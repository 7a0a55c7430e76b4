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

// Independent reference computations used by the unit and acceptance suites.
// Nothing here calls into the code paths it is used to check.

#ifndef DSMPC_TESTS_ORACLES_HPP_
#define DSMPC_TESTS_ORACLES_HPP_

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "dsmpc/env.hpp"
#include "dsmpc/neural.hpp"
#include "dsmpc/qp.hpp"

namespace dsmpc::oracle {

inline double rel_err(double a, double b, double floor = 1e-3) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Plain-loop forward pass over std::vector storage.
inline std::vector<double> mlp_forward_loops(const MLPNet& net, const std::vector<double>& input) {
  std::vector<double> a = input;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& w = net.layers[l].weight;
    std::vector<double> z(static_cast<std::size_t>(w.rows()));
    for (int i = 0; i < w.rows(); ++i) {
      double acc = net.layers[l].bias(i);
      for (int j = 0; j < w.cols(); ++j) acc += w(i, j) * a[j];
      z[i] = (l + 1 < net.layers.size()) ? std::tanh(acc) : acc;
    }
    a = std::move(z);
  }
  return a;
}

// Central finite differences of L(theta) = g . net(x) with respect to every
// parameter, in flatten order.
inline std::vector<double> fd_parameter_gradient(MLPNet net, const Vector& x, const Vector& g,
                                                 double h = 1e-6) {
  std::vector<double> out;
  auto loss = [&](const MLPNet& n) {
    const auto y = mlp_forward_loops(n, std::vector<double>(x.begin(), x.end()));
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += g(static_cast<Eigen::Index>(i)) * y[i];
    return s;
  };
  for (auto& layer : net.layers) {
    for (Eigen::Index k = 0; k < layer.weight.size(); ++k) {
      double& p = layer.weight.data()[k];
      const double keep = p;
      p = keep + h;
      const double up = loss(net);
      p = keep - h;
      const double down = loss(net);
      p = keep;
      out.push_back((up - down) / (2.0 * h));
    }
    for (Eigen::Index k = 0; k < layer.bias.size(); ++k) {
      double& p = layer.bias(k);
      const double keep = p;
      p = keep + h;
      const double up = loss(net);
      p = keep - h;
      const double down = loss(net);
      p = keep;
      out.push_back((up - down) / (2.0 * h));
    }
  }
  return out;
}

// Log density of a diagonal Gaussian, one dimension at a time.
inline double gaussian_log_density(const std::vector<double>& mean,
                                   const std::vector<double>& log_std,
                                   const std::vector<double>& x) {
  const double pi = 3.14159265358979323846;
  double total = 0.0;
  for (std::size_t d = 0; d < x.size(); ++d) {
    const double sd = std::exp(log_std[d]);
    const double z = (x[d] - mean[d]) / sd;
    total += std::log(1.0 / (sd * std::sqrt(2.0 * pi))) - 0.5 * z * z;
  }
  return total;
}

// Clipped surrogate with entropy bonus, negated, using the loop forward pass.
inline double actor_loss_scalar(const MLPNet& net, const std::vector<double>& log_std,
                                const std::vector<std::vector<double>>& obs,
                                const std::vector<std::vector<double>>& actions,
                                const std::vector<double>& logp_old,
                                const std::vector<double>& adv, double clip, double ent_coeff) {
  const double pi = 3.14159265358979323846;
  double sum = 0.0;
  for (std::size_t k = 0; k < obs.size(); ++k) {
    const auto mu = mlp_forward_loops(net, obs[k]);
    const double ratio = std::exp(gaussian_log_density(mu, log_std, actions[k]) - logp_old[k]);
    const double lo = 1.0 - clip, hi = 1.0 + clip;
    const double c = ratio < lo ? lo : (ratio > hi ? hi : ratio);
    sum += std::min(ratio * adv[k], c * adv[k]);
  }
  double entropy = 0.0;
  for (double l : log_std) entropy += l + 0.5 * std::log(2.0 * pi * std::exp(1.0));
  return -sum / static_cast<double>(obs.size()) - ent_coeff * entropy;
}

// Clipped value loss with the loop forward pass.
inline double critic_loss_scalar(const MLPNet& net, const std::vector<std::vector<double>>& states,
                                 const std::vector<double>& returns,
                                 const std::vector<double>& v_old, double clip) {
  double sum = 0.0;
  for (std::size_t k = 0; k < states.size(); ++k) {
    const double v = mlp_forward_loops(net, states[k])[0];
    const double vc = std::max(v_old[k] - clip, std::min(v_old[k] + clip, v));
    sum += std::max((v - returns[k]) * (v - returns[k]), (vc - returns[k]) * (vc - returns[k]));
  }
  return sum / static_cast<double>(states.size());
}


// Advantage by its defining truncated sum, sum_l (gamma*lambda)^l delta_{t+l}.
inline std::vector<double> gae_by_definition(const std::vector<double>& rewards,
                                             const std::vector<double>& values,
                                             const std::vector<int>& dones, double gamma,
                                             double lambda) {
  const std::size_t n = rewards.size();
  std::vector<double> delta(n);
  for (std::size_t t = 0; t < n; ++t) {
    delta[t] = rewards[t] + gamma * values[t + 1] * (1 - dones[t]) - values[t];
  }
  std::vector<double> adv(n, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    double weight = 1.0;
    double acc = 0.0;
    for (std::size_t k = t; k < n; ++k) {
      acc += weight * delta[k];
      if (dones[k]) break;
      weight *= gamma * lambda;
    }
    adv[t] = acc;
  }
  return adv;
}

// One semi-implicit Euler step written agent-by-agent without shared helpers.
inline std::vector<double> euler_step(const EnvConfig& c, const std::vector<double>& s,
                                      const std::vector<double>& a) {
  const int n = c.n_agents;
  std::vector<double> out(s.size());
  for (int i = 0; i < n; ++i) {
    const double x = s[4 * i], y = s[4 * i + 1], vx = s[4 * i + 2], vy = s[4 * i + 3];
    const double sp = std::sqrt(vx * vx + vy * vy);
    double spring = 0.0;
    if (i > 0) spring += (s[4 * (i - 1)] + 1.0) - x;
    if (i < n - 1) spring += (s[4 * (i + 1)] - 1.0) - x;
    const double ax = a[2 * i] - c.drag_coeff * sp * vx + c.coupling_stiffness * spring;
    const double ay = a[2 * i + 1] - c.drag_coeff * sp * vy;
    double nvx = vx + c.dt * ax;
    double nvy = vy + c.dt * ay;
    double nx = x + c.dt * nvx;
    double ny = y + c.dt * nvy;
    if (nx < c.state_lower[0] || nx > c.state_upper[0]) {
      nx = std::min(std::max(nx, c.state_lower[0]), c.state_upper[0]);
      nvx = 0.0;
    }
    if (ny < c.state_lower[1] || ny > c.state_upper[1]) {
      ny = std::min(std::max(ny, c.state_lower[1]), c.state_upper[1]);
      nvy = 0.0;
    }
    nvx = std::min(std::max(nvx, c.state_lower[2]), c.state_upper[2]);
    nvy = std::min(std::max(nvy, c.state_lower[3]), c.state_upper[3]);
    out[4 * i] = nx;
    out[4 * i + 1] = ny;
    out[4 * i + 2] = nvx;
    out[4 * i + 3] = nvy;
  }
  return out;
}

// Smoothed one-step objective written directly against the reference Euler step.
inline double one_step_objective(const EnvConfig& env, const std::vector<double>& s,
                                 const std::vector<double>& a, const std::vector<double>& anchor,
                                 double rho, double eps) {
  const std::vector<double> next = euler_step(env, s, a);
  double c = 0.0;
  for (int i = 0; i < env.n_agents; ++i) {
    c += std::sqrt(next[4 * i + 2] * next[4 * i + 2] + next[4 * i + 3] * next[4 * i + 3] + eps);
  }
  for (std::size_t d = 0; d < a.size(); ++d) c += rho * (a[d] - anchor[d]) * (a[d] - anchor[d]);
  return c;
}

struct GridOptimum {
  double fx = 0.0;
  double fy = 0.0;
  double value = std::numeric_limits<double>::infinity();
};

inline GridOptimum grid_search(const EnvConfig& env, const std::vector<double>& s,
                               const std::vector<double>& anchor, double rho, double eps, double h) {
  GridOptimum best;
  const int n = static_cast<int>(std::lround(2.0 * env.action_bound / h));
  for (int i = 0; i <= n; ++i) {
    for (int j = 0; j <= n; ++j) {
      const std::vector<double> a{-env.action_bound + i * h, -env.action_bound + j * h};
      const double v = one_step_objective(env, s, a, anchor, rho, eps);
      if (v < best.value) best = {a[0], a[1], v};
    }
  }
  return best;
}

struct EnumeratedQP {
  bool feasible = false;
  double objective = std::numeric_limits<double>::infinity();
  Eigen::VectorXd x;
};

// Brute force over every free/lower/upper assignment. For each assignment the
// equality-constrained problem on the free variables is solved with Eigen's
// full-pivot LU; the best feasible candidate is the global optimum of the
// convex QP because the optimal active set is among those enumerated.
inline EnumeratedQP enumerate_box_qp(const QPProblem& p) {
  const int n = p.num_variables();
  const int m = p.num_equalities();
  EnumeratedQP best;
  int total = 1;
  for (int i = 0; i < n; ++i) total *= 3;
  for (int code = 0; code < total; ++code) {
    std::vector<int> side(n);
    int c = code;
    bool ok = true;
    for (int i = 0; i < n; ++i) {
      side[i] = c % 3 - 1;  // -1 lower, 0 free, +1 upper
      c /= 3;
      if (side[i] == -1 && !std::isfinite(p.lower(i))) ok = false;
      if (side[i] == 1 && !std::isfinite(p.upper(i))) ok = false;
    }
    if (!ok) continue;
    std::vector<int> free;
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < n; ++i) {
      if (side[i] == 0) free.push_back(i);
      if (side[i] == -1) x(i) = p.lower(i);
      if (side[i] == 1) x(i) = p.upper(i);
    }
    const int nf = static_cast<int>(free.size());
    Eigen::MatrixXd k = Eigen::MatrixXd::Zero(nf + m, nf + m);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(nf + m);
    const Eigen::VectorXd gfix = p.gradient + p.hessian * x;
    for (int a = 0; a < nf; ++a) {
      for (int b = 0; b < nf; ++b) k(a, b) = p.hessian(free[a], free[b]);
      rhs(a) = -gfix(free[a]);
      for (int r = 0; r < m; ++r) {
        k(nf + r, a) = p.eq_matrix(r, free[a]);
        k(a, nf + r) = p.eq_matrix(r, free[a]);
      }
    }
    for (int r = 0; r < m; ++r) {
      double fixed = 0.0;
      for (int i = 0; i < n; ++i)
        if (side[i] != 0) fixed += p.eq_matrix(r, i) * x(i);
      rhs(nf + r) = p.eq_rhs(r) - fixed;
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(k);
    if (nf + m > 0 && !lu.isInvertible()) continue;
    if (nf + m > 0) {
      const Eigen::VectorXd sol = lu.solve(rhs);
      for (int a = 0; a < nf; ++a) x(free[a]) = sol(a);
    }
    bool feasible = true;
    for (int i = 0; i < n; ++i) {
      if (x(i) < p.lower(i) - 1e-9 || x(i) > p.upper(i) + 1e-9) feasible = false;
    }
    if (m > 0 && (p.eq_matrix * x - p.eq_rhs).cwiseAbs().maxCoeff() > 1e-8) feasible = false;
    if (!feasible) continue;
    const double obj = 0.5 * x.dot(p.hessian * x) + p.gradient.dot(x);
    if (obj < best.objective) {
      best.feasible = true;
      best.objective = obj;
      best.x = x;
    }
  }
  return best;
}

// Random convex box QP with a known feasible interior point.
inline QPProblem random_box_qp(std::mt19937_64& rng, int n, int m) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.2, 2.0);
  QPProblem p;
  Eigen::MatrixXd mm(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) mm(i, j) = normal(rng);
  p.hessian = mm.transpose() * mm + 0.1 * Eigen::MatrixXd::Identity(n, n);
  p.gradient = Vector(n);
  for (int i = 0; i < n; ++i) p.gradient(i) = 3.0 * normal(rng);
  Vector feasible(n);
  p.lower = Vector(n);
  p.upper = Vector(n);
  for (int i = 0; i < n; ++i) {
    feasible(i) = normal(rng) * 0.5;
    p.lower(i) = feasible(i) - unif(rng);
    p.upper(i) = feasible(i) + unif(rng);
  }
  p.eq_matrix = Matrix(m, n);
  for (int r = 0; r < m; ++r)
    for (int i = 0; i < n; ++i) p.eq_matrix(r, i) = normal(rng);
  p.eq_rhs = p.eq_matrix * feasible;
  return p;
}

}  // namespace dsmpc::oracle

#endif  // DSMPC_TESTS_ORACLES_HPP_
