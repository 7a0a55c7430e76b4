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

// Command-line front end over the C interface.

#include <cstdio>
#include <iostream>
#include <memory>
#include <string>

#include <CLI11.hpp>

#include "deepsafempc.h"

namespace {

struct ConfigDeleter {
  void operator()(dsm_config* c) const { dsm_config_free(c); }
};
using ConfigPtr = std::unique_ptr<dsm_config, ConfigDeleter>;

struct StringDeleter {
  void operator()(char* s) const { dsm_string_free(s); }
};
using StringPtr = std::unique_ptr<char, StringDeleter>;

int report(dsm_status status, const char* what) {
  if (status != DSM_OK) std::cerr << "deepsafempc " << what << ": " << dsm_last_error() << '\n';
  return static_cast<int>(status);
}

int load(const std::string& path, ConfigPtr& out) {
  dsm_config* raw = nullptr;
  const dsm_status st = dsm_config_load(path.c_str(), &raw);
  out.reset(raw);
  return report(st, "config");
}

int apply_output_dir(dsm_config* cfg, const std::string& dir) {
  return dir.empty() ? 0 : report(dsm_config_set_output_dir(cfg, dir.c_str()), "config");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Safe multi-agent RL with an MPC safety filter"};
  app.require_subcommand(1);
  app.set_version_flag("--version", dsm_version());

  std::string config_path, checkpoints, preset = "cheetah2", output_dir;
  std::uint64_t seed = 0;
  bool single_thread = false;
  int episodes = -1;

  CLI::App* train = app.add_subcommand("train", "MAPPO, predictor training and a filtered control run");
  train->add_option("--config", config_path, "TOML run configuration")->required();
  CLI::Option* seed_opt = train->add_option("--seed", seed, "Override run.seed");
  train->add_flag("--single-thread", single_thread, "Bit-exact mode: no worker threads, no wallclock");
  train->add_option("--output-dir", output_dir, "Override run.output_dir");

  CLI::App* compare = app.add_subcommand("compare", "Paired evaluation with the filter off and on");
  compare->add_option("--config", config_path, "TOML run configuration")->required();
  compare->add_option("--checkpoints", checkpoints, "Directory holding actor.json and predictor.json")->required();
  compare->add_option("--episodes", episodes, "Number of paired episodes (default: run.eval_episodes)");
  compare->add_option("--output-dir", output_dir, "Override run.output_dir");

  CLI::App* pred = app.add_subcommand("pred-error", "One-step prediction error curve");
  pred->add_option("--config", config_path, "TOML run configuration")->required();
  pred->add_option("--checkpoints", checkpoints, "Directory holding actor.json and predictor.json")->required();
  pred->add_option("--output-dir", output_dir, "Override run.output_dir");

  CLI::App* print = app.add_subcommand("print-config", "Print the default configuration of a preset");
  print->add_option("--preset", preset, "Environment preset")
      ->check(CLI::IsMember({"swimmer2", "ant2", "cheetah2"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(DSM_ERR_CONFIG);
  }

  if (print->parsed()) {
    dsm_config* raw = nullptr;
    if (const int rc = report(dsm_config_default(preset.c_str(), &raw), "print-config")) return rc;
    ConfigPtr cfg(raw);
    char* text = nullptr;
    if (const int rc = report(dsm_config_to_toml(cfg.get(), &text), "print-config")) return rc;
    StringPtr owned(text);
    std::cout << owned.get();
    return 0;
  }

  ConfigPtr cfg;
  if (const int rc = load(config_path, cfg)) return rc;
  if (const int rc = apply_output_dir(cfg.get(), output_dir)) return rc;

  if (train->parsed()) {
    if (*seed_opt) dsm_config_set_seed(cfg.get(), seed);
    if (single_thread) dsm_config_set_single_thread(cfg.get(), 1);
    char* summary = nullptr;
    if (const int rc = report(dsm_train(cfg.get(), &summary), "train")) return rc;
    StringPtr owned(summary);
    std::cout << owned.get() << '\n';
    return 0;
  }
  if (compare->parsed()) {
    if (episodes < 0) dsm_config_eval_episodes(cfg.get(), &episodes);
    char* summary = nullptr;
    if (const int rc = report(dsm_compare(cfg.get(), checkpoints.c_str(), episodes, &summary), "compare")) {
      return rc;
    }
    StringPtr owned(summary);
    std::cout << owned.get() << '\n';
    return 0;
  }
  double max_error = 0.0;
  if (const int rc = report(dsm_pred_error(cfg.get(), checkpoints.c_str(), &max_error), "pred-error")) return rc;
  char* dir = nullptr;
  dsm_config_output_dir(cfg.get(), &dir);
  StringPtr owned(dir);
  std::cout << "max_error " << max_error << "\nwrote " << owned.get() << "/prediction_error.csv\n";
  return 0;
}
