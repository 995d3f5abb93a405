// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration, the training loop, evaluation and report
// assembly. The CLI is a thin layer over these functions.

#ifndef MTLQE_EXPERIMENT_HPP_
#define MTLQE_EXPERIMENT_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtlqe/aggregators.hpp"
#include "mtlqe/checkpoint.hpp"
#include "mtlqe/data.hpp"
#include "mtlqe/metrics.hpp"
#include "mtlqe/model.hpp"
#include "mtlqe/optim.hpp"

namespace mtlqe::exp {

using linalg::Vector;

struct ExperimentConfig {
  // Exactly one of the two is set.
  std::optional<std::filesystem::path> dataset_path;
  std::optional<data::SyntheticSpec> synthetic;

  model::TaskSet tasks = model::TaskSet{model::Task::kSentence, model::Task::kWord};
  agg::AggregatorConfig aggregator;
  model::ModelConfig model;  // vocab_size is filled in from the training split
  optim::AdamWHyper adamw;
  double base_lr = 1e-3;
  double warmup_fraction = 0.1;
  std::size_t epochs = 10;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;

  void validate() const;
};

// Defaults as a JSON document (the layout accepted by config_from_json).
nlohmann::json default_config_json();

// Parses a full or partial config (missing keys take defaults). Unknown keys
// and type errors raise Errc::kConfigError.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& cfg);

// Applies a "dotted.path=value" override; value is parsed as JSON when
// possible, otherwise taken as a string.
void apply_override(nlohmann::json& config, const std::string& assignment);

struct EpochRecord {
  std::size_t epoch = 0;
  model::TaskLosses train_loss;
  model::TaskLosses validation_loss;
  Vector mean_alpha;  // enabled-task order
  std::size_t steps = 0;
  std::size_t fallback_count = 0;
  double condition_mean = 0.0;
  double condition_max = 0.0;
  double nash_residual_max = 0.0;
};

struct Evaluation {
  std::optional<double> spearman;
  std::optional<double> pearson;
  std::optional<metrics::MacroScores> word;
  std::optional<metrics::MacroScores> emotion;
  Vector sentence_predictions;  // raw score units
};

struct RunOutcome {
  nlohmann::json report;
  model::Checkpoint checkpoint;
  std::vector<EpochRecord> epochs;
  Evaluation test;
  double wall_clock_seconds = 0.0;
};

// Loads or generates the corpus and splits it 80/10/10 by seed.
data::DatasetSplit prepare_split(const ExperimentConfig& cfg);

Evaluation evaluate(const model::Parameters& params, const model::Vocabulary& vocab,
                    const model::ScoreNormalizer& normalizer,
                    std::span<const data::QEInstance> instances, std::size_t batch_size);

nlohmann::json evaluation_to_json(const Evaluation& ev, const model::TaskSet& tasks);

using ProgressFn = std::function<void(const EpochRecord&)>;

// Full training run. Deterministic given the config.
RunOutcome train(const ExperimentConfig& cfg, const ProgressFn& progress = {});

// train() + writes report.json, checkpoint.{bin,json} and timing.json to dir.
RunOutcome train_to_dir(const ExperimentConfig& cfg, const std::filesystem::path& dir,
                        const ProgressFn& progress = {});

struct CompareRow {
  std::string aggregator;
  bool ok = false;
  std::string error;
  RunOutcome outcome;
};

// One train_to_dir per aggregator into dir/<index>_<name>, then
// dir/comparison.csv. Runs may execute on up to `jobs` threads; rows keep
// the order of `kinds`.
std::vector<CompareRow> compare(const ExperimentConfig& base,
                                std::span<const agg::AggregatorKind> kinds,
                                const std::filesystem::path& dir, std::size_t jobs = 1);

std::string comparison_csv(std::span<const CompareRow> rows);

// Human-readable final metrics table.
std::string metrics_table(const nlohmann::json& report);

// Mean alpha per task over all steps, keyed by task name.
nlohmann::json mean_alpha_json(const nlohmann::json& report);

}  // namespace mtlqe::exp

#endif  // MTLQE_EXPERIMENT_HPP_
