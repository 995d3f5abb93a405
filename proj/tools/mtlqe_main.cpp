// SPDX-License-Identifier: Apache-2.0
//
// mtlqe: generate / prepare / train / evaluate / compare.
// Exit status: 0 success, 1 runtime failure, 2 invalid input.

#include <CLI11.hpp>
#include <json.hpp>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mtlqe/checkpoint.hpp"
#include "mtlqe/data.hpp"
#include "mtlqe/error.hpp"
#include "mtlqe/experiment.hpp"

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitInvalid = 2;

struct CommonOpts {
  std::string config_path;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> aggregator;
  std::optional<std::string> tasks;
  std::optional<std::size_t> epochs;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOpts& o, bool with_training_flags) {
  cmd->add_option("--config", o.config_path, "JSON config file");
  cmd->add_option("--seed", o.seed, "Seed (overrides the config)");
  if (with_training_flags) {
    cmd->add_option("--aggregator", o.aggregator, "linear|nash|aligned|dwa|imtl");
    cmd->add_option("--tasks", o.tasks, "Comma-separated tasks, e.g. sentence,word");
    cmd->add_option("--epochs", o.epochs, "Training epochs");
  }
  cmd->add_option("--set", o.overrides, "key.path=value override (repeatable)");
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw mtlqe::Error(mtlqe::Errc::kIoError, "cannot open " + path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw mtlqe::Error(mtlqe::Errc::kConfigError, path + " is not valid JSON");
  return j;
}

std::string default_out_dir(const std::string& fallback) {
  if (const char* env = std::getenv("MTLQE_OUT_DIR"); env && *env) return env;
  return fallback;
}

json experiment_json(const CommonOpts& o) {
  json j = o.config_path.empty() ? json::object() : read_json_file(o.config_path);
  if (o.seed) mtlqe::exp::apply_override(j, "seed=" + std::to_string(*o.seed));
  if (o.aggregator) j["aggregator"]["kind"] = *o.aggregator;
  if (o.epochs) j["epochs"] = *o.epochs;
  if (o.tasks) {
    json list = json::array();
    std::stringstream ss(*o.tasks);
    for (std::string t; std::getline(ss, t, ',');)
      if (!t.empty()) list.push_back(t);
    j["tasks"] = list;
  }
  for (const auto& kv : o.overrides) mtlqe::exp::apply_override(j, kv);
  return j;
}

void print_summary(const std::vector<mtlqe::data::QEInstance>& instances) {
  using namespace mtlqe::data;
  std::map<std::string, std::size_t> per_emotion;
  for (Emotion e : kAllEmotions) per_emotion[std::string(to_string(e))] = 0;
  // Histogram buckets: 0, (0,5], (5,10], (10,20], (20,40], >40.
  const std::array<const char*, 6> labels = {"0", "(0,5]", "(5,10]", "(10,20]", "(20,40]", ">40"};
  std::array<std::size_t, 6> hist{};
  for (const auto& inst : instances) {
    ++per_emotion[std::string(to_string(inst.emotion))];
    const double s = inst.qe_score;
    const std::size_t b = s <= 0 ? 0 : s <= 5 ? 1 : s <= 10 ? 2 : s <= 20 ? 3 : s <= 40 ? 4 : 5;
    ++hist[b];
  }
  std::printf("instances: %zu\nemotions:\n", instances.size());
  for (const auto& [name, n] : per_emotion) std::printf("  %-10s %zu\n", name.c_str(), n);
  std::printf("qe_score histogram:\n");
  for (std::size_t i = 0; i < hist.size(); ++i) std::printf("  %-8s %zu\n", labels[i], hist[i]);
}

int cmd_generate(const CommonOpts& o) {
  json spec_json = o.config_path.empty() ? json::object() : read_json_file(o.config_path);
  if (spec_json.contains("dataset")) spec_json = spec_json["dataset"].value("synthetic", json::object());
  if (o.seed) spec_json["seed"] = *o.seed;
  for (const auto& kv : o.overrides) mtlqe::exp::apply_override(spec_json, kv);
  const auto spec = mtlqe::data::synthetic_spec_from_json(spec_json);
  const auto instances = mtlqe::data::generate_synthetic(spec);
  const fs::path out = o.out.empty() ? fs::path(default_out_dir(".")) / "synthetic.jsonl" : fs::path(o.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  mtlqe::data::save_dataset(out, instances);
  print_summary(instances);
  std::printf("wrote %s\n", out.string().c_str());
  return kExitOk;
}

int cmd_prepare(const std::string& input, const std::string& out) {
  const auto instances = mtlqe::data::load_dataset(input);
  mtlqe::data::save_dataset(out, instances);
  std::printf("prepared %zu records -> %s\n", instances.size(), out.c_str());
  return kExitOk;
}

int cmd_train(const CommonOpts& o) {
  const auto cfg = mtlqe::exp::config_from_json(experiment_json(o));
  const fs::path dir = o.out.empty() ? fs::path(default_out_dir("runs")) / "train" : fs::path(o.out);
  const auto run = mtlqe::exp::train_to_dir(cfg, dir, [](const mtlqe::exp::EpochRecord& r) {
    std::fprintf(stderr, "epoch %zu  steps %zu  fallbacks %zu\n", r.epoch, r.steps, r.fallback_count);
  });
  std::cout << mtlqe::exp::metrics_table(run.report);
  std::printf("report: %s\n", (dir / "report.json").string().c_str());
  return kExitOk;
}

int cmd_evaluate(const std::string& checkpoint, const std::string& dataset, std::size_t batch_size) {
  const auto ckpt = mtlqe::model::load_checkpoint(checkpoint);
  const auto instances = mtlqe::data::load_dataset(dataset);
  const auto ev = mtlqe::exp::evaluate(ckpt.params, ckpt.vocab, ckpt.normalizer, instances, batch_size);
  std::cout << mtlqe::exp::evaluation_to_json(ev, ckpt.params.config.enabled_tasks).dump(2) << '\n';
  return kExitOk;
}

int cmd_compare(const CommonOpts& o, const std::string& aggregators, std::size_t jobs) {
  const auto cfg = mtlqe::exp::config_from_json(experiment_json(o));
  std::vector<mtlqe::agg::AggregatorKind> kinds;
  std::stringstream ss(aggregators);
  for (std::string a; std::getline(ss, a, ',');)
    if (!a.empty()) kinds.push_back(mtlqe::agg::aggregator_from_string(a));
  const fs::path dir = o.out.empty() ? fs::path(default_out_dir("runs")) / "compare" : fs::path(o.out);
  const auto rows = mtlqe::exp::compare(cfg, kinds, dir, jobs);
  std::cout << mtlqe::exp::comparison_csv(rows);
  int status = kExitOk;
  for (const auto& row : rows) {
    if (!row.ok) {
      std::fprintf(stderr, "run '%s' failed: %s\n", row.aggregator.c_str(), row.error.c_str());
      status = kExitRuntime;
    }
  }
  return status;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-task QE experiments with gradient-aggregated training"};
  app.require_subcommand(1);

  CommonOpts gen_opts, train_opts, compare_opts;
  auto* gen = app.add_subcommand("generate", "Write a synthetic JSONL corpus");
  add_common(gen, gen_opts, false);
  gen->add_option("--out", gen_opts.out, "Output JSONL path");

  std::string prep_in, prep_out;
  auto* prep = app.add_subcommand("prepare", "Derive qe_score and word labels for raw records");
  prep->add_option("input", prep_in, "Raw JSONL annotations")->required();
  prep->add_option("--out", prep_out, "Output JSONL path")->required();

  auto* train = app.add_subcommand("train", "Train one configuration");
  add_common(train, train_opts, true);
  train->add_option("--out", train_opts.out, "Run directory");

  std::string eval_ckpt, eval_data;
  std::size_t eval_batch = 8;
  auto* eval = app.add_subcommand("evaluate", "Score a checkpoint on a dataset");
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint manifest (checkpoint.json)")->required();
  eval->add_option("--data", eval_data, "JSONL dataset")->required();
  eval->add_option("--batch-size", eval_batch, "Batch size")->check(CLI::PositiveNumber);

  std::string aggregators;
  std::size_t jobs = 1;
  auto* cmp = app.add_subcommand("compare", "Train once per aggregator and tabulate");
  add_common(cmp, compare_opts, true);
  cmp->add_option("--out", compare_opts.out, "Output directory");
  cmp->add_option("--aggregators", aggregators, "Comma-separated list, e.g. linear,nash")->required();
  cmp->add_option("--jobs", jobs, "Parallel runs")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitInvalid;
  }

  try {
    if (*gen) return cmd_generate(gen_opts);
    if (*prep) return cmd_prepare(prep_in, prep_out);
    if (*train) return cmd_train(train_opts);
    if (*eval) return cmd_evaluate(eval_ckpt, eval_data, eval_batch);
    if (*cmp) return cmd_compare(compare_opts, aggregators, jobs);
  } catch (const mtlqe::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return mtlqe::is_validation_error(e.code()) ? kExitInvalid : kExitRuntime;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInvalid;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitRuntime;
}
