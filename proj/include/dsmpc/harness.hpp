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

#ifndef DSMPC_HARNESS_HPP_
#define DSMPC_HARNESS_HPP_

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "dsmpc/env.hpp"
#include "dsmpc/mappo.hpp"
#include "dsmpc/mpc.hpp"
#include "dsmpc/predictor.hpp"

namespace dsmpc {

struct RunConfig {
  std::string preset = "cheetah2";
  EnvConfig env;
  PPOHyper ppo;
  PredictorHyper predictor;
  MPCOptions mpc;
  /// MAPPO iterations; each runs one episode per environment instance.
  int episodes = 300;
  /// Control steps of the filtered loop that closes a training run.
  int max_steps = 1000;
  /// Paired episodes for `compare`.
  int eval_episodes = 50;
  /// Steps rolled for the prediction-error curve.
  int error_curve_steps = 1000;
  std::uint64_t seed = 0;
  std::string output_dir = "runs/cheetah2";
  bool mpc_enabled = true;
  bool deterministic_eval = true;
  /// Bit-exact mode: no worker threads, wallclock omitted from metrics.
  bool single_thread = false;

  /// Throws Error(ConfigInvalid).
  void validate() const;
};

/// Defaults for one of env_preset_names(). Throws Error(ConfigInvalid).
RunConfig default_run_config(std::string_view preset = "cheetah2");

/// TOML sections [env], [ppo], [predictor], [mpc], [run]. `env.preset`
/// selects the base environment; other keys override it. Unknown keys are
/// rejected. Throws Error(ConfigInvalid).
RunConfig parse_run_config(std::string_view toml_text);
/// Throws Error(IoError) when the file cannot be read, else as parse_run_config.
RunConfig load_run_config(const std::filesystem::path& path);
std::string run_config_to_toml(const RunConfig& config);
nlohmann::json run_config_to_json(const RunConfig& config);

// ---------------------------------------------------------------------------
// Metrics

enum class Phase { TrainPolicy, TrainPredictor, Eval };
const char* to_string(Phase phase) noexcept;

struct MetricsRecord {
  Phase phase = Phase::TrainPolicy;
  int step = 0;
  std::optional<double> episode_reward;
  std::optional<double> episode_cost;
  std::optional<double> cost_indicator_rate;
  std::optional<double> predictor_mse;
  std::optional<double> kkt_residual;
  std::optional<int> sqp_iters;
  std::optional<double> wallclock;
  /// Per-step filter diagnostics (eval phase): kkt, sqp_iters, merit_final, fallback, status.
  std::optional<nlohmann::json> mpc;
};

/// Every key of the schema is present; absent values are null.
nlohmann::json to_json(const MetricsRecord& record);

/// Empty when `record` satisfies the schema, otherwise one message per problem.
std::vector<std::string> metrics_schema_errors(const nlohmann::json& record);

/// Appends one JSON object per line. Enforces the schema and a strictly
/// increasing step within each phase. Throws Error(IoError).
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::filesystem::path& path);
  void write(const MetricsRecord& record);
  int count() const { return count_; }

 private:
  std::ofstream out_;
  std::filesystem::path path_;
  std::optional<Phase> last_phase_;
  int last_step_ = 0;
  int count_ = 0;
};

/// Reads a metrics file back. Throws Error(IoError) on unreadable or invalid lines.
std::vector<nlohmann::json> read_metrics(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Reports

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

/// Self-contained SVG line chart; data values are also embedded in a
/// <metadata> block as JSON. Throws Error(IoError).
void write_line_chart_svg(const std::filesystem::path& path, const std::string& title,
                          const std::string& x_label, const std::string& y_label,
                          const std::vector<Series>& series);

/// Shortest round-trip decimal form, used for CSV cells.
std::string format_number(double value);

struct BaselineStats {
  std::vector<double> episode_rewards;
  std::vector<double> episode_costs;
  double mean_reward = 0.0;
  double std_reward = 0.0;
  double mean_cost = 0.0;
};

/// Uniform random actions over the action box, one episode per seed.
BaselineStats random_policy_baseline(const EnvConfig& env, int episodes, std::uint64_t seed);

struct CheckpointPaths {
  std::filesystem::path actor;
  std::filesystem::path critic;
  std::filesystem::path predictor;
};
CheckpointPaths checkpoint_paths(const std::filesystem::path& checkpoint_dir);

struct TrainingArtifacts {
  std::filesystem::path output_dir;
  std::filesystem::path metrics;
  std::filesystem::path dataset;
  std::filesystem::path summary;
  CheckpointPaths checkpoints;
  std::vector<IterationStats> policy_stats;
  bool predictor_trained = false;
  PredictorTrainResult predictor;
  int dataset_size = 0;
};

/// Runs MAPPO (storing applied transitions in the data buffer), trains the
/// predictor on buffer samples mixed with random-policy rollouts, then runs
/// `max_steps` filtered control steps. Writes under output_dir:
/// checkpoints/{actor,critic,predictor}.json, dataset.jsonl, metrics.jsonl,
/// training_summary.json.
TrainingArtifacts run_training(const RunConfig& config);

struct ComparisonRow {
  int episode = 0;
  double cost_off = 0.0;
  double cost_on = 0.0;
  double reward_off = 0.0;
  double reward_on = 0.0;
  double indicator_rate_off = 0.0;
  double indicator_rate_on = 0.0;
};

struct ComparisonReport {
  std::vector<ComparisonRow> rows;
  nlohmann::json summary;
  std::filesystem::path csv;
  std::filesystem::path summary_path;
  std::filesystem::path svg;
};

/// Paired evaluation on identical seeds: filter off versus filter on (the
/// second arm is also unfiltered when config.mpc_enabled is false). Writes
/// comparison.csv, comparison_summary.json and comparison.svg to output_dir.
/// Throws Error(MissingCheckpoint).
ComparisonReport run_comparison(const RunConfig& config, const std::filesystem::path& checkpoint_dir,
                                int episodes);

struct ErrorCurve {
  std::vector<double> errors;
  double max_error = 0.0;
  std::filesystem::path csv;
  std::filesystem::path svg;
};

/// Rolls the policy in the environment for `steps` steps (resetting at
/// episode ends) and records ||predicted - actual||_2 per step. Writes
/// prediction_error.csv ("step,error") and prediction_error.svg to `out_dir`.
ErrorCurve emit_prediction_error_curve(const Dynamics& model, const ActorPolicy& actor,
                                       const RunConfig& config, int steps,
                                       const std::filesystem::path& out_dir);

/// Same, loading the actor and predictor from `checkpoint_dir` and writing to
/// config.output_dir. Throws Error(MissingCheckpoint).
ErrorCurve emit_prediction_error_curve(const RunConfig& config,
                                       const std::filesystem::path& checkpoint_dir);

}  // namespace dsmpc

#endif  // DSMPC_HARNESS_HPP_
