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

#include <fstream>
#include <functional>
#include <sstream>

#include "dsmpc/error.hpp"
#include "dsmpc/harness.hpp"
#include "dsmpc/toml_lite.hpp"

namespace dsmpc {
namespace {

using nlohmann::json;

[[noreturn]] void invalid(const std::string& where, const std::string& what) {
  throw Error(ErrorCode::ConfigInvalid, where + ": " + what);
}

double as_real(const json& v, const std::string& where) {
  if (!v.is_number()) invalid(where, "expected a number");
  return v.get<double>();
}

int as_int(const json& v, const std::string& where) {
  if (!v.is_number_integer()) invalid(where, "expected an integer");
  const auto x = v.get<std::int64_t>();
  if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
    invalid(where, "integer out of range");
  }
  return static_cast<int>(x);
}

bool as_bool(const json& v, const std::string& where) {
  if (!v.is_boolean()) invalid(where, "expected true or false");
  return v.get<bool>();
}

std::string as_string(const json& v, const std::string& where) {
  if (!v.is_string()) invalid(where, "expected a string");
  return v.get<std::string>();
}

struct Binding {
  const char* section;
  const char* key;
  std::function<void(const json&, const std::string&)> read;
  std::function<json()> write;
};

Binding real(const char* section, const char* key, double& field) {
  return {section, key, [&field](const json& v, const std::string& w) { field = as_real(v, w); },
          [&field] { return json(field); }};
}

Binding integer(const char* section, const char* key, int& field) {
  return {section, key, [&field](const json& v, const std::string& w) { field = as_int(v, w); },
          [&field] { return json(field); }};
}

Binding flag(const char* section, const char* key, bool& field) {
  return {section, key, [&field](const json& v, const std::string& w) { field = as_bool(v, w); },
          [&field] { return json(field); }};
}

Binding text(const char* section, const char* key, std::string& field) {
  return {section, key, [&field](const json& v, const std::string& w) { field = as_string(v, w); },
          [&field] { return json(field); }};
}

Binding quad(const char* section, const char* key, std::array<double, 4>& field) {
  return {section, key,
          [&field](const json& v, const std::string& w) {
            if (!v.is_array() || v.size() != 4) invalid(w, "expected an array of 4 numbers");
            for (int i = 0; i < 4; ++i) field[i] = as_real(v[i], w);
          },
          [&field] { return json(std::vector<double>(field.begin(), field.end())); }};
}

std::vector<Binding> bindings(RunConfig& c) {
  EnvConfig& e = c.env;
  PPOHyper& p = c.ppo;
  PredictorHyper& d = c.predictor;
  MPCOptions& m = c.mpc;
  return {
      integer("env", "n_agents", e.n_agents),
      real("env", "dt", e.dt),
      real("env", "drag_coeff", e.drag_coeff),
      real("env", "coupling_stiffness", e.coupling_stiffness),
      real("env", "action_bound", e.action_bound),
      quad("env", "state_lower", e.state_lower),
      quad("env", "state_upper", e.state_upper),
      real("env", "velocity_threshold", e.velocity_threshold),
      real("env", "ctrl_cost_weight", e.ctrl_cost_weight),
      real("env", "alive_bonus", e.alive_bonus),
      integer("env", "episode_length", e.episode_length),

      real("ppo", "gamma", p.gamma),
      real("ppo", "gae_lambda", p.gae_lambda),
      real("ppo", "clip", p.clip),
      real("ppo", "entropy_coeff", p.entropy_coeff),
      integer("ppo", "learning_iters", p.learning_iters),
      real("ppo", "actor_lr", p.actor_lr),
      real("ppo", "critic_lr", p.critic_lr),
      integer("ppo", "minibatch_count", p.minibatch_count),
      real("ppo", "target_kl", p.target_kl),
      real("ppo", "max_grad_norm", p.max_grad_norm),
      real("ppo", "huber_delta", p.huber_delta),
      integer("ppo", "n_envs", p.n_envs),
      integer("ppo", "hidden", p.hidden),
      real("ppo", "log_std_init", p.log_std_init),

      integer("predictor", "hidden", d.hidden),
      integer("predictor", "epochs", d.epochs),
      integer("predictor", "batch_size", d.batch_size),
      real("predictor", "lr", d.lr),
      real("predictor", "lr_decay", d.lr_decay),
      real("predictor", "val_fraction", d.val_fraction),
      real("predictor", "max_grad_norm", d.max_grad_norm),
      flag("predictor", "frozen_order", d.frozen_order),
      integer("predictor", "dataset_size", d.dataset_size),
      real("predictor", "random_fraction", d.random_fraction),

      integer("mpc", "horizon", m.horizon),
      integer("mpc", "max_sqp_iter", m.max_sqp_iter),
      real("mpc", "kkt_tol", m.kkt_tol),
      real("mpc", "merit_penalty_init", m.merit_penalty_init),
      real("mpc", "armijo_c", m.armijo_c),
      real("mpc", "backtrack_factor", m.backtrack_factor),
      integer("mpc", "max_backtracks", m.max_backtracks),
      real("mpc", "anchor_weight", m.anchor_weight),
      real("mpc", "smooth_eps", m.smooth_eps),
      {"mpc", "hessian_mode",
       [&m](const json& v, const std::string& w) {
         try {
           m.hessian_mode = hessian_mode_from_string(as_string(v, w));
         } catch (const Error& err) {
           invalid(w, err.what());
         }
       },
       [&m] { return json(to_string(m.hessian_mode)); }},
      flag("mpc", "open_loop", m.open_loop),
      real("mpc", "cost_scale", m.cost_scale),
      real("mpc", "state_penalty_weight", m.state_penalty_weight),
      integer("mpc", "qp_max_iter", m.qp_max_iter),

      integer("run", "episodes", c.episodes),
      integer("run", "max_steps", c.max_steps),
      integer("run", "eval_episodes", c.eval_episodes),
      integer("run", "error_curve_steps", c.error_curve_steps),
      {"run", "seed",
       [&c](const json& v, const std::string& w) {
         if (!v.is_number_integer() || v.get<std::int64_t>() < 0) invalid(w, "expected a non-negative integer");
         c.seed = v.get<std::uint64_t>();
       },
       [&c] { return json(c.seed); }},
      text("run", "output_dir", c.output_dir),
      flag("run", "mpc_enabled", c.mpc_enabled),
      flag("run", "deterministic_eval", c.deterministic_eval),
      flag("run", "single_thread", c.single_thread),
  };
}

const char* const kSections[] = {"env", "ppo", "predictor", "mpc", "run"};

}  // namespace

void RunConfig::validate() const {
  auto wrap = [](const char* section, auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      if (e.code() == ErrorCode::ConfigInvalid) throw;
      invalid(section, e.what());
    }
  };
  wrap("env", [&] { env.validate(); });
  wrap("ppo", [&] { ppo.validate(); });
  wrap("predictor", [&] { predictor.validate(); });
  wrap("mpc", [&] { mpc.validate(); });
  if (episodes < 0) invalid("run.episodes", "must be >= 0");
  if (max_steps < 0) invalid("run.max_steps", "must be >= 0");
  if (eval_episodes < 0) invalid("run.eval_episodes", "must be >= 0");
  if (error_curve_steps < 0) invalid("run.error_curve_steps", "must be >= 0");
  if (output_dir.empty()) invalid("run.output_dir", "must not be empty");
}

RunConfig default_run_config(std::string_view preset) {
  RunConfig c;
  try {
    c.env = env_preset(preset);
  } catch (const Error& e) {
    invalid("env.preset", e.what());
  }
  c.preset = std::string(preset);
  c.output_dir = "runs/" + c.preset;
  return c;
}

RunConfig parse_run_config(std::string_view toml_text) {
  const json doc = parse_toml(toml_text);
  for (const auto& [key, value] : doc.items()) {
    if (std::find(std::begin(kSections), std::end(kSections), key) == std::end(kSections)) {
      invalid(key, value.is_object() ? "unknown section" : "keys must live inside a section");
    }
  }
  std::string preset = "cheetah2";
  if (doc.contains("env") && doc["env"].contains("preset")) {
    preset = as_string(doc["env"]["preset"], "env.preset");
  }
  RunConfig c = default_run_config(preset);
  const std::vector<Binding> table = bindings(c);
  for (const auto& [section, entries] : doc.items()) {
    for (const auto& [key, value] : entries.items()) {
      const std::string where = section + "." + key;
      if (section == "env" && key == "preset") continue;
      auto it = std::find_if(table.begin(), table.end(), [&](const Binding& b) {
        return section == b.section && key == b.key;
      });
      if (it == table.end()) invalid(where, "unknown key");
      it->read(value, where);
    }
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot read config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

json run_config_to_json(const RunConfig& config) {
  RunConfig copy = config;
  json doc = json::object();
  for (const char* s : kSections) doc[s] = json::object();
  doc["env"]["preset"] = copy.preset;
  for (const Binding& b : bindings(copy)) doc[b.section][b.key] = b.write();
  return doc;
}

std::string run_config_to_toml(const RunConfig& config) {
  return to_toml(run_config_to_json(config));
}

}  // namespace dsmpc
