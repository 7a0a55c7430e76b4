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

#include "dsmpc/neural.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include "dsmpc/error.hpp"

namespace dsmpc {

const char* to_string(Activation a) noexcept {
  return a == Activation::Tanh ? "tanh" : "identity";
}

Activation activation_from_string(const std::string& name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "identity") return Activation::Identity;
  throw Error(ErrorCode::InvalidArchitecture, "unknown activation '" + name + "'");
}

int MLPNet::input_dim() const {
  return layers.empty() ? 0 : static_cast<int>(layers.front().weight.cols());
}

int MLPNet::output_dim() const {
  return layers.empty() ? 0 : static_cast<int>(layers.back().weight.rows());
}

std::vector<int> MLPNet::arch() const {
  std::vector<int> sizes;
  if (layers.empty()) return sizes;
  sizes.push_back(input_dim());
  for (const auto& layer : layers) sizes.push_back(static_cast<int>(layer.weight.rows()));
  return sizes;
}

std::size_t MLPNet::parameter_count() const {
  std::size_t count = 0;
  for (const auto& layer : layers) count += layer.weight.size() + layer.bias.size();
  return count;
}

namespace {

Matrix orthogonal(int rows, int cols, double gain, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const int big = std::max(rows, cols);
  const int small = std::min(rows, cols);
  Eigen::MatrixXd gauss(big, small);
  for (int i = 0; i < big; ++i)
    for (int j = 0; j < small; ++j) gauss(i, j) = normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gauss);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
  const Eigen::MatrixXd r = qr.matrixQR().topLeftCorner(small, small);
  // Sign fix makes the draw uniform over the orthogonal group.
  for (int j = 0; j < small; ++j) {
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  }
  Matrix w(rows, cols);
  if (rows >= cols) {
    w = q;
  } else {
    w = q.transpose();
  }
  return gain * w;
}

void check_input(const MLPNet& net, Eigen::Index cols) {
  if (net.layers.empty()) throw Error(ErrorCode::ShapeMismatch, "network has no layers");
  if (cols != net.input_dim()) {
    throw Error(ErrorCode::ShapeMismatch, "input length " + std::to_string(cols) +
                                              " != network input " +
                                              std::to_string(net.input_dim()));
  }
}

void apply_activation(Matrix& z, Activation a) {
  if (a == Activation::Tanh) z = z.array().tanh().matrix();
}

}  // namespace

MLPNet init_mlp(std::span<const int> sizes, std::uint64_t seed, double output_gain) {
  if (sizes.size() < 2) {
    throw Error(ErrorCode::InvalidArchitecture, "need at least input and output sizes");
  }
  for (int s : sizes) {
    if (s <= 0) throw Error(ErrorCode::InvalidArchitecture, "layer sizes must be positive");
  }
  std::mt19937_64 rng(seed);
  MLPNet net;
  const std::size_t n_layers = sizes.size() - 1;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const double gain = (l + 1 == n_layers) ? output_gain : std::sqrt(2.0);
    DenseLayer layer;
    layer.weight = orthogonal(sizes[l + 1], sizes[l], gain, rng);
    layer.bias = Vector::Zero(sizes[l + 1]);
    net.layers.push_back(std::move(layer));
  }
  return net;
}

Matrix forward_batch(const MLPNet& net, const Matrix& inputs, BatchTrace* trace) {
  check_input(net, inputs.cols());
  if (trace) {
    trace->activations.clear();
    trace->activations.reserve(net.layers.size() + 1);
    trace->activations.push_back(inputs);
  }
  Matrix a = inputs;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const DenseLayer& layer = net.layers[l];
    Matrix z = a * layer.weight.transpose();
    z.rowwise() += layer.bias.transpose();
    const bool last = (l + 1 == net.layers.size());
    apply_activation(z, last ? net.output_activation : net.hidden_activation);
    a = std::move(z);
    if (trace) trace->activations.push_back(a);
  }
  return a;
}

GradientSet backward_batch(const MLPNet& net, const BatchTrace& trace, const Matrix& output_grads,
                           Matrix* input_grads) {
  const std::size_t n_layers = net.layers.size();
  if (trace.activations.size() != n_layers + 1) {
    throw Error(ErrorCode::ShapeMismatch, "trace does not belong to this network");
  }
  if (output_grads.cols() != net.output_dim() ||
      output_grads.rows() != trace.activations.back().rows()) {
    throw Error(ErrorCode::ShapeMismatch, "output gradient shape mismatch");
  }
  GradientSet grads;
  grads.layers.resize(n_layers);
  Matrix delta = output_grads;
  if (net.output_activation == Activation::Tanh) {
    delta.array() *= 1.0 - trace.activations.back().array().square();
  }
  for (std::size_t k = n_layers; k-- > 0;) {
    const Matrix& a_in = trace.activations[k];
    grads.layers[k].weight = delta.transpose() * a_in;
    grads.layers[k].bias = delta.colwise().sum().transpose();
    if (k == 0 && input_grads == nullptr) break;
    Matrix prev = delta * net.layers[k].weight;
    if (k > 0 && net.hidden_activation == Activation::Tanh) {
      prev.array() *= 1.0 - a_in.array().square();
    }
    delta = std::move(prev);
  }
  if (input_grads) *input_grads = std::move(delta);
  return grads;
}

Vector mlp_forward(const MLPNet& net, const Vector& input) {
  check_input(net, input.size());
  Matrix row = input.transpose();
  return forward_batch(net, row).row(0).transpose();
}

GradientSet mlp_backward(const MLPNet& net, const Vector& input, const Vector& output_grad) {
  check_input(net, input.size());
  if (output_grad.size() != net.output_dim()) {
    throw Error(ErrorCode::ShapeMismatch, "output gradient length mismatch");
  }
  BatchTrace trace;
  forward_batch(net, Matrix(input.transpose()), &trace);
  Matrix in_grad;
  GradientSet grads = backward_batch(net, trace, Matrix(output_grad.transpose()), &in_grad);
  grads.input_gradient = in_grad.row(0).transpose();
  return grads;
}

Matrix mlp_input_jacobian(const MLPNet& net, const Vector& input) {
  check_input(net, input.size());
  BatchTrace trace;
  forward_batch(net, Matrix(input.transpose()), &trace);
  const std::size_t n_layers = net.layers.size();
  Matrix d = Matrix::Identity(net.output_dim(), net.output_dim());
  if (net.output_activation == Activation::Tanh) {
    const Vector slope = 1.0 - trace.activations.back().row(0).array().square().transpose();
    d = slope.asDiagonal();
  }
  for (std::size_t k = n_layers; k-- > 0;) {
    d = d * net.layers[k].weight;
    if (k > 0 && net.hidden_activation == Activation::Tanh) {
      const auto slope = (1.0 - trace.activations[k].row(0).array().square()).matrix();
      d.array().rowwise() *= slope.array();
    }
  }
  return d;
}

GradientSet zero_gradients(const MLPNet& net) {
  GradientSet g;
  for (const auto& layer : net.layers) {
    g.layers.push_back({Matrix::Zero(layer.weight.rows(), layer.weight.cols()),
                        Vector::Zero(layer.bias.size())});
  }
  g.input_gradient = Vector::Zero(net.input_dim());
  return g;
}

namespace {

template <typename Layers>
Vector flatten_layers(const Layers& layers, std::size_t total) {
  Vector flat(static_cast<Eigen::Index>(total));
  Eigen::Index pos = 0;
  for (const auto& layer : layers) {
    const Eigen::Index nw = layer.weight.size();
    flat.segment(pos, nw) = Eigen::Map<const Vector>(layer.weight.data(), nw);
    pos += nw;
    flat.segment(pos, layer.bias.size()) = layer.bias;
    pos += layer.bias.size();
  }
  return flat;
}

}  // namespace

Vector flatten_parameters(const MLPNet& net) {
  return flatten_layers(net.layers, net.parameter_count());
}

Vector flatten_gradients(const GradientSet& grads) {
  std::size_t total = 0;
  for (const auto& layer : grads.layers) total += layer.weight.size() + layer.bias.size();
  return flatten_layers(grads.layers, total);
}

void assign_parameters(MLPNet& net, const Vector& flat) {
  if (static_cast<std::size_t>(flat.size()) != net.parameter_count()) {
    throw Error(ErrorCode::ShapeMismatch, "flat parameter length mismatch");
  }
  Eigen::Index pos = 0;
  for (auto& layer : net.layers) {
    const Eigen::Index nw = layer.weight.size();
    Eigen::Map<Vector>(layer.weight.data(), nw) = flat.segment(pos, nw);
    pos += nw;
    layer.bias = flat.segment(pos, layer.bias.size());
    pos += layer.bias.size();
  }
}

AdamState make_adam(const MLPNet& net, double lr, std::size_t extra_params, double epsilon) {
  AdamState state;
  const auto n = static_cast<Eigen::Index>(net.parameter_count() + extra_params);
  state.first_moment = Vector::Zero(n);
  state.second_moment = Vector::Zero(n);
  state.lr = lr;
  state.epsilon = epsilon;
  return state;
}

namespace {

void adam_update(Vector& params, Vector grads, AdamState& state, double max_grad_norm) {
  if (params.size() != state.first_moment.size() || grads.size() != params.size()) {
    throw Error(ErrorCode::ShapeMismatch, "Adam state does not match parameters");
  }
  if (!grads.allFinite()) {
    throw Error(ErrorCode::NonFiniteGradient, "gradient contains non-finite entries");
  }
  const double norm = grads.norm();
  if (max_grad_norm > 0.0 && norm > max_grad_norm) grads *= max_grad_norm / norm;

  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads;
  state.second_moment =
      state.beta2 * state.second_moment + (1.0 - state.beta2) * grads.cwiseProduct(grads);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  params.array() -= state.lr * (state.first_moment.array() / c1) /
                    ((state.second_moment.array() / c2).sqrt() + state.epsilon);
}

}  // namespace

void adam_step(MLPNet& net, const GradientSet& grads, AdamState& state, double max_grad_norm) {
  Vector params = flatten_parameters(net);
  adam_update(params, flatten_gradients(grads), state, max_grad_norm);
  assign_parameters(net, params);
}

void adam_step(MLPNet& net, const GradientSet& grads, Vector& extra, const Vector& extra_grad,
               AdamState& state, double max_grad_norm) {
  if (extra.size() != extra_grad.size()) {
    throw Error(ErrorCode::ShapeMismatch, "extra parameter gradient length mismatch");
  }
  const Eigen::Index n_net = static_cast<Eigen::Index>(net.parameter_count());
  Vector params(n_net + extra.size());
  params << flatten_parameters(net), extra;
  Vector g(params.size());
  g << flatten_gradients(grads), extra_grad;
  adam_update(params, std::move(g), state, max_grad_norm);
  assign_parameters(net, params.head(n_net));
  extra = params.tail(extra.size());
}

nlohmann::json mlp_to_json(const MLPNet& net, const nlohmann::json& meta) {
  nlohmann::json doc;
  doc["arch"] = net.arch();
  doc["activation"] = to_string(net.hidden_activation);
  doc["output_activation"] = to_string(net.output_activation);
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : net.layers) {
    nlohmann::json w = nlohmann::json::array();
    for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) {
      w.push_back(std::vector<double>(layer.weight.row(i).begin(), layer.weight.row(i).end()));
    }
    layers.push_back({{"w", std::move(w)},
                      {"b", std::vector<double>(layer.bias.begin(), layer.bias.end())}});
  }
  doc["layers"] = std::move(layers);
  doc["meta"] = meta;
  return doc;
}

MLPNet mlp_from_json(const nlohmann::json& doc, nlohmann::json* meta) {
  try {
    MLPNet net;
    net.hidden_activation = activation_from_string(doc.at("activation").get<std::string>());
    if (doc.contains("output_activation")) {
      net.output_activation =
          activation_from_string(doc.at("output_activation").get<std::string>());
    }
    const auto arch = doc.at("arch").get<std::vector<int>>();
    const auto& layers = doc.at("layers");
    if (arch.size() < 2 || layers.size() != arch.size() - 1) {
      throw Error(ErrorCode::InvalidArchitecture, "arch and layers disagree");
    }
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto rows = layers[l].at("w").get<std::vector<std::vector<double>>>();
      const auto bias = layers[l].at("b").get<std::vector<double>>();
      const int out = arch[l + 1];
      const int in = arch[l];
      if (static_cast<int>(rows.size()) != out || static_cast<int>(bias.size()) != out) {
        throw Error(ErrorCode::InvalidArchitecture, "layer shape disagrees with arch");
      }
      DenseLayer layer{Matrix(out, in), Vector(out)};
      for (int i = 0; i < out; ++i) {
        if (static_cast<int>(rows[i].size()) != in) {
          throw Error(ErrorCode::InvalidArchitecture, "weight row length disagrees with arch");
        }
        for (int j = 0; j < in; ++j) layer.weight(i, j) = rows[i][j];
        layer.bias(i) = bias[i];
      }
      net.layers.push_back(std::move(layer));
    }
    if (meta) *meta = doc.value("meta", nlohmann::json::object());
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArchitecture, std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const MLPNet& net,
                     const nlohmann::json& meta) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << mlp_to_json(net, meta).dump() << '\n';
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

MLPNet load_checkpoint(const std::filesystem::path& path, nlohmann::json* meta) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingCheckpoint, "cannot open " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArchitecture, path.string() + ": " + e.what());
  }
  return mlp_from_json(doc, meta);
}

}  // namespace dsmpc
