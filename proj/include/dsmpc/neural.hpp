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

#ifndef DSMPC_NEURAL_HPP_
#define DSMPC_NEURAL_HPP_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dsmpc/numerics.hpp"

namespace dsmpc {

enum class Activation { Tanh, Identity };

const char* to_string(Activation a) noexcept;
Activation activation_from_string(const std::string& name);

/// One affine map y = W x + b. weight is (out x in).
struct DenseLayer {
  Matrix weight;
  Vector bias;
};

/// Feed-forward network: tanh on every hidden layer, identity output.
struct MLPNet {
  std::vector<DenseLayer> layers;
  Activation hidden_activation = Activation::Tanh;
  Activation output_activation = Activation::Identity;

  int input_dim() const;
  int output_dim() const;
  std::vector<int> arch() const;
  std::size_t parameter_count() const;
};

/// Parameter gradients mirror MLPNet shapes; input_gradient is d(out . g)/d(input).
struct GradientSet {
  std::vector<DenseLayer> layers;
  Vector input_gradient;
};

/// Orthogonal init: gain sqrt(2) on hidden layers, `output_gain` on the last
/// layer (0.01 for actors). Biases zero. Same (sizes, seed, gain) gives an
/// identical net.
MLPNet init_mlp(std::span<const int> sizes, std::uint64_t seed, double output_gain = 1.0);

Vector mlp_forward(const MLPNet& net, const Vector& input);

GradientSet mlp_backward(const MLPNet& net, const Vector& input, const Vector& output_grad);

/// Full input Jacobian (out x in), assembled by reverse accumulation over the
/// output basis.
Matrix mlp_input_jacobian(const MLPNet& net, const Vector& input);

// Batched variants used by the trainers. Rows are samples.
struct BatchTrace {
  std::vector<Matrix> activations;  // activations[0] is the input
};

Matrix forward_batch(const MLPNet& net, const Matrix& inputs, BatchTrace* trace = nullptr);

/// Sums parameter gradients over the batch. Fills input_grads (batch x in) when given.
GradientSet backward_batch(const MLPNet& net, const BatchTrace& trace, const Matrix& output_grads,
                           Matrix* input_grads = nullptr);

GradientSet zero_gradients(const MLPNet& net);

Vector flatten_parameters(const MLPNet& net);
void assign_parameters(MLPNet& net, const Vector& flat);
Vector flatten_gradients(const GradientSet& grads);

struct AdamState {
  Vector first_moment;
  Vector second_moment;
  std::int64_t step_count = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-5;
};

/// Moments sized for the net plus `extra_params` trailing scalars (e.g. an actor's log_std).
AdamState make_adam(const MLPNet& net, double lr, std::size_t extra_params = 0,
                    double epsilon = 1e-5);

/// Global-norm clipping at max_grad_norm, then one bias-corrected Adam update.
void adam_step(MLPNet& net, const GradientSet& grads, AdamState& state, double max_grad_norm);

/// Same as above, with extra parameters updated jointly (shared clipping norm).
void adam_step(MLPNet& net, const GradientSet& grads, Vector& extra, const Vector& extra_grad,
               AdamState& state, double max_grad_norm);

/// Checkpoint document: {"arch", "activation", "layers": [{"w", "b"}], "meta"}.
nlohmann::json mlp_to_json(const MLPNet& net, const nlohmann::json& meta = nlohmann::json::object());
MLPNet mlp_from_json(const nlohmann::json& doc, nlohmann::json* meta = nullptr);

void save_checkpoint(const std::filesystem::path& path, const MLPNet& net, const nlohmann::json& meta);
MLPNet load_checkpoint(const std::filesystem::path& path, nlohmann::json* meta = nullptr);

}  // namespace dsmpc

#endif  // DSMPC_NEURAL_HPP_
