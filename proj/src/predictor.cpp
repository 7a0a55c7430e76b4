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

#include "dsmpc/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <string>

#include "dsmpc/error.hpp"

namespace dsmpc {

namespace {

constexpr double kStdFloor = 1e-8;

nlohmann::json to_json(const Vector& v) { return std::vector<double>(v.begin(), v.end()); }

Vector vector_from_json(const nlohmann::json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

nlohmann::json stats_to_json(const NormStats& s) {
  return {{"mean", to_json(s.mean)}, {"std", to_json(s.std)}};
}

NormStats stats_from_json(const nlohmann::json& j) {
  return {vector_from_json(j.at("mean")), vector_from_json(j.at("std"))};
}

void check_shapes(const DynamicsModel& model, const JointState& state, const JointAction& action) {
  if (state.size() != model.state_dim() || action.size() != model.action_dim()) {
    throw Error(ErrorCode::ShapeMismatch, "predictor: state/action dimension mismatch");
  }
}

Vector model_input(const DynamicsModel& model, const JointState& state, const JointAction& action) {
  Vector in(model.state_dim() + model.action_dim());
  in << model.state_stats.normalize(state), model.action_stats.normalize(action);
  return in;
}

// Normalized inputs and delta targets, one row per record.
void design_matrices(const DynamicsModel& model, const std::vector<Transition>& records,
                     const std::vector<int>& rows, Matrix& inputs, Matrix& targets) {
  const int n = static_cast<int>(rows.size());
  inputs.resize(n, model.state_dim() + model.action_dim());
  targets.resize(n, model.state_dim());
  for (int k = 0; k < n; ++k) {
    const Transition& tr = records[rows[k]];
    inputs.row(k) = model_input(model, tr.state, tr.action).transpose();
    targets.row(k) = model.delta_stats.normalize(tr.next_state - tr.state).transpose();
  }
}

double mse(const Matrix& a, const Matrix& b) {
  if (a.size() == 0) return 0.0;
  return (a - b).squaredNorm() / static_cast<double>(a.size());
}

}  // namespace

Vector NormStats::normalize(const Vector& x) const {
  return (x - mean).cwiseQuotient(std);
}

Vector NormStats::denormalize(const Vector& z) const {
  return z.cwiseProduct(std) + mean;
}

NormStats compute_norm_stats(const std::vector<Vector>& samples) {
  if (samples.empty()) throw Error(ErrorCode::EmptyDataset, "no samples for normalization");
  const Eigen::Index d = samples.front().size();
  NormStats s{Vector::Zero(d), Vector::Zero(d)};
  for (const auto& x : samples) s.mean += x;
  s.mean /= static_cast<double>(samples.size());
  for (const auto& x : samples) s.std.array() += (x - s.mean).array().square();
  s.std = (s.std / static_cast<double>(samples.size())).cwiseSqrt().cwiseMax(kStdFloor);
  return s;
}

DynamicsModel zero_residual_model(int state_dim, int action_dim, int hidden, std::uint64_t seed) {
  DynamicsModel m;
  const int sizes[] = {state_dim + action_dim, hidden, hidden, state_dim};
  m.net = init_mlp(sizes, seed);
  m.net.layers.back().weight.setZero();
  m.net.layers.back().bias.setZero();
  m.state_stats = {Vector::Zero(state_dim), Vector::Ones(state_dim)};
  m.action_stats = {Vector::Zero(action_dim), Vector::Ones(action_dim)};
  m.delta_stats = {Vector::Zero(state_dim), Vector::Ones(state_dim)};
  return m;
}

JointState predict(const DynamicsModel& model, const JointState& state, const JointAction& action) {
  check_shapes(model, state, action);
  return state + model.delta_stats.denormalize(mlp_forward(model.net, model_input(model, state, action)));
}

void predict_jacobians(const DynamicsModel& model, const JointState& state,
                       const JointAction& action, Matrix& d_state, Matrix& d_action) {
  check_shapes(model, state, action);
  const int ns = model.state_dim();
  const int na = model.action_dim();
  const Matrix j = mlp_input_jacobian(model.net, model_input(model, state, action));
  const Vector out_scale = model.delta_stats.std;
  const Vector s_scale = model.state_stats.std.cwiseInverse();
  const Vector a_scale = model.action_stats.std.cwiseInverse();
  d_state = out_scale.asDiagonal() * j.leftCols(ns) * s_scale.asDiagonal();
  d_state += Matrix::Identity(ns, ns);
  d_action = out_scale.asDiagonal() * j.rightCols(na) * a_scale.asDiagonal();
}

std::vector<JointState> rollout_horizon(const DynamicsModel& model, const JointState& state,
                                        const std::vector<JointAction>& actions) {
  if (actions.empty()) throw Error(ErrorCode::ShapeMismatch, "rollout_horizon: empty action sequence");
  std::vector<JointState> out;
  out.reserve(actions.size());
  JointState s = state;
  for (const auto& a : actions) {
    s = predict(model, s, a);
    out.push_back(s);
  }
  return out;
}

void PredictorHyper::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw Error(ErrorCode::ConfigInvalid, std::string("predictor: ") + what);
  };
  require(hidden >= 1, "hidden must be >= 1");
  require(epochs >= 0, "epochs must be >= 0");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(lr > 0.0, "lr must be > 0");
  require(lr_decay > 0.0 && lr_decay <= 1.0, "lr_decay must be in (0, 1]");
  require(val_fraction > 0.0 && val_fraction < 1.0, "val_fraction must be in (0, 1)");
  require(max_grad_norm > 0.0, "max_grad_norm must be > 0");
  require(dataset_size >= 0, "dataset_size must be >= 0");
  require(random_fraction >= 0.0 && random_fraction <= 1.0, "random_fraction must be in [0, 1]");
}

PredictorTrainResult train_predictor(const TransitionDataset& dataset, const PredictorHyper& hyper,
                                     std::uint64_t seed) {
  hyper.validate();
  if (dataset.empty()) throw Error(ErrorCode::EmptyDataset, "train_predictor: empty dataset");
  const int n = dataset.size();
  const int ns = static_cast<int>(dataset.records.front().state.size());
  const int na = static_cast<int>(dataset.records.front().action.size());
  for (const auto& r : dataset.records) {
    if (r.state.size() != ns || r.next_state.size() != ns || r.action.size() != na) {
      throw Error(ErrorCode::ShapeMismatch, "train_predictor: inconsistent transition shapes");
    }
  }

  std::mt19937_64 rng(derive_seed(seed, 0x9ed));
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  int n_val = static_cast<int>(std::lround(hyper.val_fraction * n));
  n_val = std::clamp(n_val, n > 1 ? 1 : 0, n > 1 ? n - 1 : 0);
  std::vector<int> train(order.begin(), order.end() - n_val);
  std::vector<int> val(order.end() - n_val, order.end());
  if (val.empty()) val = train;

  std::vector<Vector> states, actions, deltas;
  for (int i : train) {
    const Transition& r = dataset.records[i];
    states.push_back(r.state);
    actions.push_back(r.action);
    deltas.push_back(r.next_state - r.state);
  }
  PredictorTrainResult result;
  DynamicsModel model;
  const int sizes[] = {ns + na, hyper.hidden, hyper.hidden, ns};
  model.net = init_mlp(sizes, derive_seed(seed, 0x1417));
  model.state_stats = compute_norm_stats(states);
  model.action_stats = compute_norm_stats(actions);
  model.delta_stats = compute_norm_stats(deltas);

  Matrix train_x, train_y, val_x, val_y;
  design_matrices(model, dataset.records, train, train_x, train_y);
  design_matrices(model, dataset.records, val, val_x, val_y);

  AdamState adam = make_adam(model.net, hyper.lr, 0, 1e-8);
  const int n_train = static_cast<int>(train.size());
  std::vector<int> batch_order(n_train);
  std::iota(batch_order.begin(), batch_order.end(), 0);
  if (hyper.frozen_order) std::shuffle(batch_order.begin(), batch_order.end(), rng);

  DynamicsModel best = model;
  double best_val = mse(forward_batch(model.net, val_x), val_y);
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    if (!hyper.frozen_order) std::shuffle(batch_order.begin(), batch_order.end(), rng);
    adam.lr = hyper.lr * std::pow(hyper.lr_decay, epoch);
    for (int begin = 0; begin < n_train; begin += hyper.batch_size) {
      const int end = std::min(n_train, begin + hyper.batch_size);
      Matrix x(end - begin, train_x.cols()), y(end - begin, train_y.cols());
      for (int k = begin; k < end; ++k) {
        x.row(k - begin) = train_x.row(batch_order[k]);
        y.row(k - begin) = train_y.row(batch_order[k]);
      }
      BatchTrace trace;
      const Matrix out = forward_batch(model.net, x, &trace);
      const Matrix grad = (out - y) * (2.0 / static_cast<double>(out.size()));
      adam_step(model.net, backward_batch(model.net, trace, grad), adam, hyper.max_grad_norm);
    }
    const double train_loss = mse(forward_batch(model.net, train_x), train_y);
    const Matrix val_out = forward_batch(model.net, val_x);
    const double val_loss = mse(val_out, val_y);
    // Normalized delta errors rescale per dimension into raw state units.
    const Vector raw_mse = ((val_out - val_y).array().square().colwise().mean().transpose() *
                            model.delta_stats.std.array().square()).matrix();
    result.val_max_dim_mse.push_back(raw_mse.maxCoeff());
    if (!std::isfinite(train_loss)) throw Error(ErrorCode::NonFiniteLoss, "predictor loss diverged");
    result.train_loss.push_back(train_loss);
    result.val_loss.push_back(val_loss);
    if (val_loss < best_val) {
      best_val = val_loss;
      best = model;
      result.best_epoch = epoch;
    }
  }

  std::vector<Transition> val_records;
  for (int i : val) val_records.push_back(dataset.records[i]);
  result.model = std::move(best);
  result.val_mse_per_dim = prediction_mse_per_dim(result.model, val_records);
  result.val_rmse = std::sqrt(result.val_mse_per_dim.sum());
  ErrorMonitor monitor(static_cast<int>(val_records.size()));
  for (const auto& r : val_records) monitor.update(predict(result.model, r.state, r.action), r.next_state);
  result.val_error_bound = monitor.bound_estimate();
  return result;
}

Vector prediction_mse_per_dim(const DynamicsModel& model, const std::vector<Transition>& records) {
  Vector acc = Vector::Zero(model.state_dim());
  if (records.empty()) return acc;
  for (const auto& r : records) {
    acc.array() += (predict(model, r.state, r.action) - r.next_state).array().square();
  }
  return acc / static_cast<double>(records.size());
}

ErrorMonitor::ErrorMonitor(int window_length) : window_length_(window_length) {
  if (window_length < 1) throw Error(ErrorCode::ConfigInvalid, "monitor window must be >= 1");
}

void ErrorMonitor::push(double error_norm) {
  window_.push_back(error_norm);
  if (static_cast<int>(window_.size()) > window_length_) window_.pop_front();
  ++count_;
}

double ErrorMonitor::update(const JointState& predicted, const JointState& actual) {
  if (predicted.size() != actual.size()) {
    throw Error(ErrorCode::ShapeMismatch, "error monitor: state dimension mismatch");
  }
  const double e = (predicted - actual).norm();
  push(e);
  return e;
}

double ErrorMonitor::window_max() const {
  return window_.empty() ? 0.0 : *std::max_element(window_.begin(), window_.end());
}

double ErrorMonitor::window_mean() const {
  if (window_.empty()) return 0.0;
  return std::accumulate(window_.begin(), window_.end(), 0.0) / static_cast<double>(window_.size());
}

nlohmann::json predictor_to_json(const DynamicsModel& model) {
  const nlohmann::json meta{{"role", "predictor"},
                            {"state_stats", stats_to_json(model.state_stats)},
                            {"action_stats", stats_to_json(model.action_stats)},
                            {"delta_stats", stats_to_json(model.delta_stats)}};
  return mlp_to_json(model.net, meta);
}

DynamicsModel predictor_from_json(const nlohmann::json& doc) {
  DynamicsModel m;
  nlohmann::json meta;
  m.net = mlp_from_json(doc, &meta);
  try {
    m.state_stats = stats_from_json(meta.at("state_stats"));
    m.action_stats = stats_from_json(meta.at("action_stats"));
    m.delta_stats = stats_from_json(meta.at("delta_stats"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MissingCheckpoint, std::string("predictor meta: ") + e.what());
  }
  if (m.net.input_dim() != m.state_dim() + m.action_dim() || m.net.output_dim() != m.state_dim() ||
      m.delta_stats.mean.size() != m.state_dim()) {
    throw Error(ErrorCode::ShapeMismatch, "predictor checkpoint shapes are inconsistent");
  }
  return m;
}

void save_predictor(const std::filesystem::path& path, const DynamicsModel& model) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << predictor_to_json(model).dump() << '\n';
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

DynamicsModel load_predictor(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingCheckpoint, "cannot open " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MissingCheckpoint, path.string() + ": " + e.what());
  }
  return predictor_from_json(doc);
}

void save_dataset_jsonl(const std::filesystem::path& path, const TransitionDataset& dataset,
                        const EnvConfig& env) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  int t = 0;
  for (const auto& r : dataset.records) {
    const CostValue c = cost(r.next_state, env);
    nlohmann::json rec = trajectory_record(t++, r.state, r.action,
                                           reward(r.state, r.next_state, r.action, env), c.value,
                                           c.indicator);
    rec["next_state"] = to_json(r.next_state);
    out << rec.dump() << '\n';
  }
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

TransitionDataset load_dataset_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingCheckpoint, "cannot open " + path.string());
  TransitionDataset ds;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto rec = nlohmann::json::parse(line);
      ds.records.push_back({vector_from_json(rec.at("state")), vector_from_json(rec.at("action")),
                            vector_from_json(rec.at("next_state"))});
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::IoError, path.string() + ": " + e.what());
    }
  }
  return ds;
}

}  // namespace dsmpc
