// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mtlqe/error.hpp"
#include "mtlqe/experiment.hpp"

namespace mtlqe::exp {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

// Small enough to train in well under a second.
json tiny_config() {
  return json::parse(R"({
    "seed": 3,
    "epochs": 2,
    "batch_size": 8,
    "dataset": {"synthetic": {"n_instances": 60, "vocab_size": 30}},
    "model": {"d_model": 8, "n_layers": 1, "max_len": 40}
  })");
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mtlqe_exp_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Errc config_error_code(const json& j) {
  try {
    config_from_json(j);
  } catch (const Error& e) {
    return e.code();
  }
  return Errc::kIoError;
}

TEST(Config, DefaultsParse) {
  const auto cfg = config_from_json(json::object());
  EXPECT_EQ(cfg.batch_size, 8u);
  EXPECT_EQ(cfg.epochs, 10u);
  EXPECT_TRUE(cfg.synthetic.has_value());
  EXPECT_EQ(cfg.synthetic->seed, cfg.seed);
  EXPECT_EQ(cfg.aggregator.kind, agg::AggregatorKind::kLinear);
}

TEST(Config, UnknownKeyRejected) {
  json j = tiny_config();
  j["optimizer"]["momentum"] = 0.9;
  EXPECT_EQ(config_error_code(j), Errc::kConfigError);
}

TEST(Config, InvalidValuesRejected) {
  json j = tiny_config();
  j["batch_size"] = 0;
  EXPECT_EQ(config_error_code(j), Errc::kConfigError);
  j = tiny_config();
  j["tasks"] = json::array();
  EXPECT_EQ(config_error_code(j), Errc::kConfigError);
  j = tiny_config();
  j["aggregator"] = {{"kind", "pcgrad"}};
  EXPECT_EQ(config_error_code(j), Errc::kConfigError);
  j = tiny_config();
  j["epochs"] = "ten";
  EXPECT_EQ(config_error_code(j), Errc::kConfigError);
}

TEST(Config, OverridesReplaceDatasetSource) {
  json j = tiny_config();
  apply_override(j, "dataset.path=/tmp/x.jsonl");
  apply_override(j, "aggregator.kind=nash");
  apply_override(j, "model.d_model=12");
  const auto cfg = config_from_json(j);
  EXPECT_FALSE(cfg.synthetic.has_value());
  EXPECT_EQ(cfg.dataset_path->string(), "/tmp/x.jsonl");
  EXPECT_EQ(cfg.aggregator.kind, agg::AggregatorKind::kNash);
  EXPECT_EQ(cfg.model.d_model, 12u);
  EXPECT_THROW(apply_override(j, "novalue"), Error);
}

TEST(Config, JsonRoundTrip) {
  const auto cfg = config_from_json(tiny_config());
  EXPECT_EQ(to_json(config_from_json(to_json(cfg))), to_json(cfg));
}

TEST(Train, SingleTaskReportHasOnlySentenceMetrics) {
  json j = tiny_config();
  j["tasks"] = {"sentence"};
  const auto run = train(config_from_json(j));
  const json& m = run.report["test_metrics"];
  EXPECT_TRUE(m.contains("sentence"));
  EXPECT_FALSE(m.contains("word"));
  EXPECT_FALSE(m.contains("emotion"));
  EXPECT_EQ(run.report["mean_alpha"].size(), 1u);
}

TEST(Train, AllTasksReportEveryMetric) {
  json j = tiny_config();
  j["tasks"] = {"sentence", "word", "emotion"};
  j["aggregator"] = {{"kind", "aligned"}};
  const auto run = train(config_from_json(j));
  const json& m = run.report["test_metrics"];
  for (const char* k : {"f1", "precision", "recall"}) {
    EXPECT_TRUE(m["word"][k].is_number());
    EXPECT_TRUE(m["emotion"][k].is_number());
  }
  EXPECT_EQ(run.report["epochs"].size(), 2u);
}

TEST(Train, FixedSeedGivesIdenticalReportAndParameters) {
  json j = tiny_config();
  j["epochs"] = 3;
  j["aggregator"] = {{"kind", "nash"}};
  const auto cfg = config_from_json(j);
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  const auto ra = train_to_dir(cfg, a);
  const auto rb = train_to_dir(cfg, b);
  EXPECT_EQ(ra.checkpoint.params, rb.checkpoint.params);
  EXPECT_EQ(slurp(a / "report.json"), slurp(b / "report.json"));
  EXPECT_EQ(slurp(a / "checkpoint.bin"), slurp(b / "checkpoint.bin"));
  EXPECT_TRUE(fs::exists(a / "timing.json"));

  json other = j;
  other["seed"] = 4;
  EXPECT_NE(train(config_from_json(other)).report.dump(), ra.report.dump());
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Train, EveryAggregatorRuns) {
  for (const char* kind : {"linear", "nash", "aligned", "dwa", "imtl"}) {
    json j = tiny_config();
    j["epochs"] = 3;
    j["aggregator"] = {{"kind", kind}};
    const auto run = train(config_from_json(j));
    EXPECT_EQ(run.report["config"]["aggregator"]["kind"], kind);
    EXPECT_TRUE(run.report["test_metrics"]["sentence"].contains("spearman")) << kind;
  }
}

TEST(Train, CheckpointEvaluatesToSameMetrics) {
  const auto cfg = config_from_json(tiny_config());
  const fs::path dir = scratch("eval");
  const auto run = train_to_dir(cfg, dir);
  const auto ckpt = model::load_checkpoint(dir / "checkpoint.json");
  const auto split = prepare_split(cfg);
  const auto ev = evaluate(ckpt.params, ckpt.vocab, ckpt.normalizer, split.test, cfg.batch_size);
  EXPECT_EQ(evaluation_to_json(ev, cfg.tasks), run.report["test_metrics"]);
  fs::remove_all(dir);
}

TEST(Train, SyntheticCorpusIsLearnableByWordHeadAlone) {
  json j = tiny_config();
  j["epochs"] = 5;
  j["tasks"] = {"word"};
  j["dataset"] = {{"synthetic", {{"n_instances", 1000}}}};
  j["model"] = {{"d_model", 16}, {"n_layers", 2}, {"max_len", 40}};
  const auto run = train(config_from_json(j));
  ASSERT_TRUE(run.test.word.has_value());
  EXPECT_GT(run.test.word->f1, 0.6);
}

TEST(Compare, RowsMatchStandaloneRuns) {
  const auto cfg = config_from_json(tiny_config());
  const fs::path dir = scratch("cmp");
  const std::vector<agg::AggregatorKind> kinds{agg::AggregatorKind::kLinear,
                                               agg::AggregatorKind::kNash,
                                               agg::AggregatorKind::kNash};
  const auto rows = compare(cfg, kinds, dir, 2);
  ASSERT_EQ(rows.size(), 3u);
  for (const auto& r : rows) EXPECT_TRUE(r.ok) << r.error;

  ExperimentConfig nash = cfg;
  nash.aggregator.kind = agg::AggregatorKind::kNash;
  EXPECT_EQ(rows[1].outcome.report, train(nash).report);
  EXPECT_EQ(rows[1].outcome.report, rows[2].outcome.report);

  std::istringstream csv(slurp(dir / "comparison.csv"));
  std::vector<std::string> lines;
  for (std::string l; std::getline(csv, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(lines[0].rfind("aggregator,status,spearman,pearson", 0), 0u);
  EXPECT_EQ(lines[2], lines[3]);
  EXPECT_EQ(lines[1].rfind("linear,ok,", 0), 0u);
  fs::remove_all(dir);
}

TEST(Compare, NeedsTwoAggregators) {
  const std::vector<agg::AggregatorKind> one{agg::AggregatorKind::kLinear};
  EXPECT_THROW(compare(config_from_json(tiny_config()), one, scratch("one")), Error);
}

TEST(Report, MetricsTableMentionsEnabledTasks) {
  const auto run = train(config_from_json(tiny_config()));
  const std::string table = metrics_table(run.report);
  EXPECT_NE(table.find("sentence spearman"), std::string::npos);
  EXPECT_NE(table.find("word f1"), std::string::npos);
  EXPECT_EQ(table.find("emotion f1"), std::string::npos);
}

}  // namespace
}  // namespace mtlqe::exp
