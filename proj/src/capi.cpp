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

#include "deepsafempc.h"

#include <cstdlib>
#include <cstring>
#include <exception>
#include <fstream>
#include <memory>
#include <string>

#include "dsmpc/error.hpp"
#include "dsmpc/harness.hpp"

struct dsm_config {
  dsmpc::RunConfig config;
};

struct dsm_filter {
  dsmpc::DynamicsModel model;
  std::unique_ptr<dsmpc::PredictorDynamics> dynamics;
  dsmpc::MPCBounds bounds;
  dsmpc::MPCOptions options;
};

namespace {

thread_local std::string g_last_error;

dsm_status status_for(dsmpc::ErrorCode code) {
  using dsmpc::ErrorCode;
  switch (code) {
    case ErrorCode::ConfigInvalid: return DSM_ERR_CONFIG;
    case ErrorCode::MissingCheckpoint:
    case ErrorCode::IoError: return DSM_ERR_MISSING_ARTIFACT;
    default: return DSM_ERR_NUMERICAL;
  }
}

dsm_status fail(dsm_status status, std::string message) {
  g_last_error = std::move(message);
  return status;
}

template <class Fn>
dsm_status guarded(Fn&& fn) {
  g_last_error.clear();
  try {
    return fn();
  } catch (const dsmpc::Error& e) {
    return fail(status_for(e.code()), e.what());
  } catch (const std::bad_alloc&) {
    return fail(DSM_ERR_NUMERICAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(DSM_ERR_NUMERICAL, e.what());
  }
}

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

dsm_status wrap_config(dsmpc::RunConfig cfg, dsm_config** out) {
  *out = new dsm_config{std::move(cfg)};
  return DSM_OK;
}

}  // namespace

extern "C" {

const char* dsm_version(void) { return "0.1.0"; }

const char* dsm_last_error(void) { return g_last_error.c_str(); }

void dsm_string_free(char* s) { std::free(s); }

dsm_status dsm_config_default(const char* preset, dsm_config** out) {
  if (preset == nullptr || out == nullptr) return fail(DSM_ERR_ARGUMENT, "null argument");
  return guarded([&] { return wrap_config(dsmpc::default_run_config(preset), out); });
}

dsm_status dsm_config_load(const char* path, dsm_config** out) {
  if (path == nullptr || out == nullptr) return fail(DSM_ERR_ARGUMENT, "null argument");
  return guarded([&]() -> dsm_status {
    try {
      return wrap_config(dsmpc::load_run_config(path), out);
    } catch (const dsmpc::Error& e) {
      // An unreadable config file is a configuration problem for callers.
      if (e.code() == dsmpc::ErrorCode::IoError) return fail(DSM_ERR_CONFIG, e.what());
      throw;
    }
  });
}

dsm_status dsm_config_parse(const char* toml_text, dsm_config** out) {
  if (toml_text == nullptr || out == nullptr) return fail(DSM_ERR_ARGUMENT, "null argument");
  return guarded([&] { return wrap_config(dsmpc::parse_run_config(toml_text), out); });
}

void dsm_config_free(dsm_config* config) { delete config; }

dsm_status dsm_config_to_toml(const dsm_config* config, char** out) {
  if (config == nullptr || out == nullptr) return fail(DSM_ERR_ARGUMENT, "null argument");
  return guarded([&] {
    *out = copy_string(dsmpc::run_config_to_toml(config->config));
    return DSM_OK;
  });
}

dsm_status dsm_config_set_seed(dsm_config* config, uint64_t seed) {
  if (config == nullptr) return fail(DSM_ERR_ARGUMENT, "null config");
  config->config.seed = seed;
  return DSM_OK;
}

dsm_status dsm_config_set_single_thread(dsm_config* config, int enabled) {
  if (config == nullptr) return fail(DSM_ERR_ARGUMENT, "null config");
  config->config.single_thread = enabled != 0;
  return DSM_OK;
}

dsm_status dsm_config_set_output_dir(dsm_config* config, const char* dir) {
  if (config == nullptr || dir == nullptr) return fail(DSM_ERR_ARGUMENT, "null argument");
  if (*dir == '\0') return fail(DSM_ERR_CONFIG, "output directory must not be empty");
  config->config.output_dir = dir;
  return DSM_OK;
}

dsm_status dsm_config_output_dir(const dsm_config* config, char** out) {
  if (config == nullptr || out == nullptr) return fail(DSM_ERR_ARGUMENT, "null argument");
  return guarded([&] {
    *out = copy_string(config->config.output_dir);
    return DSM_OK;
  });
}

dsm_status dsm_config_eval_episodes(const dsm_config* config, int* episodes) {
  if (config == nullptr || episodes == nullptr) return fail(DSM_ERR_ARGUMENT, "null argument");
  *episodes = config->config.eval_episodes;
  return DSM_OK;
}

dsm_status dsm_config_dims(const dsm_config* config, size_t* state_dim, size_t* action_dim) {
  if (config == nullptr) return fail(DSM_ERR_ARGUMENT, "null config");
  if (state_dim) *state_dim = static_cast<size_t>(config->config.env.state_dim());
  if (action_dim) *action_dim = static_cast<size_t>(config->config.env.action_dim());
  return DSM_OK;
}

dsm_status dsm_train(const dsm_config* config, char** summary_json) {
  if (config == nullptr) return fail(DSM_ERR_ARGUMENT, "null config");
  return guarded([&] {
    const dsmpc::TrainingArtifacts art = dsmpc::run_training(config->config);
    if (summary_json != nullptr) {
      std::ifstream in(art.summary);
      nlohmann::json doc;
      in >> doc;
      *summary_json = copy_string(doc.dump());
    }
    return DSM_OK;
  });
}

dsm_status dsm_compare(const dsm_config* config, const char* checkpoint_dir, int episodes,
                       char** summary_json) {
  if (config == nullptr || checkpoint_dir == nullptr) return fail(DSM_ERR_ARGUMENT, "null argument");
  if (episodes < 1) return fail(DSM_ERR_ARGUMENT, "episodes must be >= 1");
  return guarded([&] {
    const dsmpc::ComparisonReport rep = dsmpc::run_comparison(config->config, checkpoint_dir, episodes);
    if (summary_json != nullptr) *summary_json = copy_string(rep.summary.dump());
    return DSM_OK;
  });
}

dsm_status dsm_pred_error(const dsm_config* config, const char* checkpoint_dir, double* max_error) {
  if (config == nullptr || checkpoint_dir == nullptr) return fail(DSM_ERR_ARGUMENT, "null argument");
  return guarded([&] {
    const dsmpc::ErrorCurve curve = dsmpc::emit_prediction_error_curve(config->config, checkpoint_dir);
    if (max_error != nullptr) *max_error = curve.max_error;
    return DSM_OK;
  });
}

dsm_status dsm_filter_create(const dsm_config* config, const char* predictor_path, dsm_filter** out) {
  if (config == nullptr || predictor_path == nullptr || out == nullptr) {
    return fail(DSM_ERR_ARGUMENT, "null argument");
  }
  return guarded([&]() -> dsm_status {
    auto f = std::make_unique<dsm_filter>();
    f->model = dsmpc::load_predictor(predictor_path);
    if (f->model.state_dim() != config->config.env.state_dim() ||
        f->model.action_dim() != config->config.env.action_dim()) {
      return fail(DSM_ERR_NUMERICAL, "predictor dimensions do not match the configured environment");
    }
    f->dynamics = std::make_unique<dsmpc::PredictorDynamics>(f->model);
    f->bounds = dsmpc::mpc_bounds(config->config.env);
    f->options = config->config.mpc;
    *out = f.release();
    return DSM_OK;
  });
}

void dsm_filter_free(dsm_filter* filter) { delete filter; }

dsm_status dsm_filter_apply(dsm_filter* filter, const double* state, size_t state_len,
                            const double* action, size_t action_len, double* out_action,
                            dsm_filter_info* info) {
  if (filter == nullptr || state == nullptr || action == nullptr || out_action == nullptr) {
    return fail(DSM_ERR_ARGUMENT, "null argument");
  }
  if (state_len != static_cast<size_t>(filter->model.state_dim()) ||
      action_len != static_cast<size_t>(filter->model.action_dim())) {
    return fail(DSM_ERR_ARGUMENT, "state or action length does not match the predictor");
  }
  return guarded([&] {
    const dsmpc::Vector s = Eigen::Map<const dsmpc::Vector>(state, static_cast<Eigen::Index>(state_len));
    const dsmpc::Vector a = Eigen::Map<const dsmpc::Vector>(action, static_cast<Eigen::Index>(action_len));
    const dsmpc::FilterResult r = dsmpc::safety_filter(a, s, *filter->dynamics, filter->bounds, filter->options);
    for (size_t i = 0; i < action_len; ++i) out_action[i] = r.action(static_cast<Eigen::Index>(i));
    if (info != nullptr) {
      info->sqp_iters = r.diagnostics.sqp_iters();
      info->kkt_residual = r.diagnostics.final_kkt;
      info->merit_final = r.diagnostics.final_merit;
      info->converged = r.diagnostics.status == dsmpc::SQPStatus::Converged;
      info->fallback = r.fallback;
    }
    return DSM_OK;
  });
}

}  // extern "C"
