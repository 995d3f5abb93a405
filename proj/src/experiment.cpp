// SPDX-License-Identifier: Apache-2.0

#include "mtlqe/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <future>
#include <numeric>
#include <random>
#include <sstream>

#include "mtlqe/error.hpp"
#include "mtlqe/hash.hpp"

namespace mtlqe::exp {

using nlohmann::json;
using model::Task;

namespace {

// Independent 64-bit streams derived from the experiment seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kShuffleStream = 2;

[[noreturn]] void config_error(const std::string& what) { throw Error(Errc::kConfigError, what); }

// Recursively overlays `user` onto `base`, rejecting keys that the defaults
// do not know. Objects listed in `replace` are taken wholesale.
void overlay(json& base, const json& user, const std::string& where) {
  if (!user.is_object()) config_error("'" + where + "' must be an object");
  for (const auto& [key, value] : user.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!base.contains(key)) config_error("unknown config key '" + path + "'");
    json& slot = base[key];
    if (path == "dataset" || !slot.is_object()) {
      slot = value;
    } else {
      overlay(slot, value, path);
    }
  }
}

template <typename T>
T get_as(const json& j, const char* key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    config_error("config key '" + where + key + "' has the wrong type");
  }
}

json losses_json(const model::TaskLosses& l, const model::TaskSet& tasks) {
  json out = json::object();
  for (Task t : tasks) out[std::string(model::to_string(t))] = l.get(t);
  return out;
}

json optional_number(std::optional<double> v) { return v ? json(*v) : json(nullptr); }

json macro_json(const std::optional<metrics::MacroScores>& m) {
  if (!m) return nullptr;
  return {{"f1", m->f1}, {"precision", m->precision}, {"recall", m->recall}};
}

}  // namespace

void ExperimentConfig::validate() const {
  if (dataset_path.has_value() == synthetic.has_value())
    config_error("dataset needs exactly one of 'path' or 'synthetic'");
  if (tasks.empty()) config_error("tasks must not be empty");
  if (batch_size < 1) config_error("batch_size must be >= 1");
  if (epochs < 1) config_error("epochs must be >= 1");
  if (!(aggregator.dwa_temperature > 0.0)) config_error("dwa_temperature must be > 0");
  if (!(aggregator.rank_tol > 0.0 && aggregator.rank_tol < 1.0))
    config_error("rank_tol must lie in (0, 1)");
  if (!aggregator.importance.empty()) {
    if (aggregator.importance.size() != tasks.size())
      config_error("aggregator.importance needs one entry per enabled task");
    double total = 0.0;
    for (double w : aggregator.importance) {
      if (!(w >= 0.0)) config_error("aggregator.importance entries must be >= 0");
      total += w;
    }
    if (!(total > 0.0)) config_error("aggregator.importance needs a positive entry");
  }
  const auto& n = aggregator.nash;
  if (!(n.tol > 0.0) || n.max_iter < 1 || !(n.damping > 0.0 && n.damping <= 1.0))
    config_error("invalid Nash solver settings");
  if (!(adamw.beta1 >= 0.0 && adamw.beta1 < 1.0) || !(adamw.beta2 >= 0.0 && adamw.beta2 < 1.0) ||
      !(adamw.eps > 0.0) || adamw.weight_decay < 0.0)
    config_error("invalid AdamW settings");
  optim::ScheduleConfig{base_lr, warmup_fraction, 1}.validate();
  if (synthetic) synthetic->validate();
}

json default_config_json() {
  json synthetic = data::to_json(data::SyntheticSpec{});
  synthetic.erase("seed");  // follows the experiment seed unless given
  return {
      {"seed", 0},
      {"epochs", 10},
      {"batch_size", 8},
      {"tasks", {"sentence", "word"}},
      {"dataset", {{"synthetic", synthetic}}},
      {"aggregator",
       {{"kind", "linear"},
        {"nash", {{"tol", 1e-8}, {"max_iter", 200}, {"damping", 0.5}}},
        {"rank_tol", 1e-10},
        {"dwa_temperature", 2.0},
        {"importance", json::array()}}},
      {"model", {{"d_model", 64}, {"n_layers", 2}, {"d_ff", 0}, {"max_len", 200}, {"pooling", "max"}}},
      {"optimizer",
       {{"base_lr", 1e-3},
        {"warmup_fraction", 0.1},
        {"beta1", 0.9},
        {"beta2", 0.999},
        {"eps", 1e-8},
        {"weight_decay", 0.01}}},
  };
}

ExperimentConfig config_from_json(const json& user) {
  json j = default_config_json();
  overlay(j, user, "");

  ExperimentConfig cfg;
  cfg.seed = get_as<std::uint64_t>(j, "seed", "");
  cfg.epochs = get_as<std::size_t>(j, "epochs", "");
  cfg.batch_size = get_as<std::size_t>(j, "batch_size", "");

  std::vector<Task> tasks;
  if (!j["tasks"].is_array()) config_error("'tasks' must be a list");
  for (const auto& t : j["tasks"]) {
    if (!t.is_string()) config_error("'tasks' must be a list of strings");
    tasks.push_back(model::task_from_string(t.get<std::string>()));
  }
  cfg.tasks = model::TaskSet(tasks);

  const json& ds = j["dataset"];
  if (!ds.is_object()) config_error("'dataset' must be an object");
  for (const auto& [key, _] : ds.items())
    if (key != "path" && key != "synthetic") config_error("unknown config key 'dataset." + key + "'");
  if (ds.contains("path")) cfg.dataset_path = get_as<std::string>(ds, "path", "dataset.");
  if (ds.contains("synthetic")) {
    json spec = ds["synthetic"];
    if (spec.is_object() && !spec.contains("seed")) spec["seed"] = cfg.seed;
    cfg.synthetic = data::synthetic_spec_from_json(spec);
  }

  const json& a = j["aggregator"];
  cfg.aggregator.kind = agg::aggregator_from_string(get_as<std::string>(a, "kind", "aggregator."));
  cfg.aggregator.nash.tol = get_as<double>(a["nash"], "tol", "aggregator.nash.");
  cfg.aggregator.nash.max_iter = get_as<int>(a["nash"], "max_iter", "aggregator.nash.");
  cfg.aggregator.nash.damping = get_as<double>(a["nash"], "damping", "aggregator.nash.");
  cfg.aggregator.rank_tol = get_as<double>(a, "rank_tol", "aggregator.");
  cfg.aggregator.dwa_temperature = get_as<double>(a, "dwa_temperature", "aggregator.");
  cfg.aggregator.importance = get_as<std::vector<double>>(a, "importance", "aggregator.");

  const json& m = j["model"];
  cfg.model.d_model = get_as<std::size_t>(m, "d_model", "model.");
  cfg.model.n_layers = get_as<std::size_t>(m, "n_layers", "model.");
  cfg.model.d_ff = get_as<std::size_t>(m, "d_ff", "model.");
  cfg.model.max_len = get_as<std::size_t>(m, "max_len", "model.");
  const auto pooling = get_as<std::string>(m, "pooling", "model.");
  if (pooling == "max") {
    cfg.model.pooling = model::Pooling::kMax;
  } else if (pooling == "mean") {
    cfg.model.pooling = model::Pooling::kMean;
  } else {
    config_error("model.pooling must be 'max' or 'mean'");
  }
  cfg.model.enabled_tasks = cfg.tasks;

  const json& o = j["optimizer"];
  cfg.base_lr = get_as<double>(o, "base_lr", "optimizer.");
  cfg.warmup_fraction = get_as<double>(o, "warmup_fraction", "optimizer.");
  cfg.adamw.beta1 = get_as<double>(o, "beta1", "optimizer.");
  cfg.adamw.beta2 = get_as<double>(o, "beta2", "optimizer.");
  cfg.adamw.eps = get_as<double>(o, "eps", "optimizer.");
  cfg.adamw.weight_decay = get_as<double>(o, "weight_decay", "optimizer.");

  cfg.validate();
  return cfg;
}

json to_json(const ExperimentConfig& cfg) {
  json tasks = json::array();
  for (Task t : cfg.tasks) tasks.push_back(model::to_string(t));
  json dataset = json::object();
  if (cfg.dataset_path) dataset["path"] = cfg.dataset_path->generic_string();
  if (cfg.synthetic) dataset["synthetic"] = data::to_json(*cfg.synthetic);
  return {
      {"seed", cfg.seed},
      {"epochs", cfg.epochs},
      {"batch_size", cfg.batch_size},
      {"tasks", tasks},
      {"dataset", dataset},
      {"aggregator",
       {{"kind", agg::to_string(cfg.aggregator.kind)},
        {"nash",
         {{"tol", cfg.aggregator.nash.tol},
          {"max_iter", cfg.aggregator.nash.max_iter},
          {"damping", cfg.aggregator.nash.damping}}},
        {"rank_tol", cfg.aggregator.rank_tol},
        {"dwa_temperature", cfg.aggregator.dwa_temperature},
        {"importance", cfg.aggregator.importance}}},
      {"model",
       {{"d_model", cfg.model.d_model},
        {"n_layers", cfg.model.n_layers},
        {"d_ff", cfg.model.d_ff},
        {"max_len", cfg.model.max_len},
        {"pooling", cfg.model.pooling == model::Pooling::kMax ? "max" : "mean"}}},
      {"optimizer",
       {{"base_lr", cfg.base_lr},
        {"warmup_fraction", cfg.warmup_fraction},
        {"beta1", cfg.adamw.beta1},
        {"beta2", cfg.adamw.beta2},
        {"eps", cfg.adamw.eps},
        {"weight_decay", cfg.adamw.weight_decay}}},
  };
}

void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) config_error("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, /*allow_exceptions=*/false);
  if (value.is_discarded()) value = raw;

  std::vector<std::string> parts;
  std::stringstream ss(key);
  for (std::string part; std::getline(ss, part, '.');) {
    if (part.empty()) config_error("override key '" + key + "' has an empty component");
    parts.push_back(part);
  }
  if (parts.size() >= 2 && parts[0] == "dataset") {
    json& ds = config["dataset"];
    if (!ds.is_object()) ds = json::object();
    ds.erase(parts[1] == "path" ? "synthetic" : "path");
  }
  json* node = &config;
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    json& next = (*node)[parts[i]];
    if (next.is_null()) next = json::object();
    if (!next.is_object()) config_error("override key '" + key + "' descends into a non-object");
    node = &next;
  }
  (*node)[parts.back()] = std::move(value);
}

data::DatasetSplit prepare_split(const ExperimentConfig& cfg) {
  std::vector<data::QEInstance> instances =
      cfg.dataset_path ? data::load_dataset(*cfg.dataset_path) : data::generate_synthetic(*cfg.synthetic);
  return data::split_dataset(std::move(instances), cfg.seed);
}

namespace {

struct BatchLosses {
  model::TaskLosses sum;  // batch loss times batch size
  std::size_t count = 0;

  void add(const model::TaskLosses& l, std::size_t b) {
    sum.sentence += l.sentence * static_cast<double>(b);
    sum.word += l.word * static_cast<double>(b);
    sum.emotion += l.emotion * static_cast<double>(b);
    count += b;
  }
  model::TaskLosses mean() const {
    model::TaskLosses m;
    if (count == 0) return m;
    const double n = static_cast<double>(count);
    m.sentence = sum.sentence / n;
    m.word = sum.word / n;
    m.emotion = sum.emotion / n;
    return m;
  }
};

template <typename Fn>
void for_each_batch(std::span<const data::QEInstance> instances, std::size_t batch_size, Fn&& fn) {
  for (std::size_t at = 0; at < instances.size(); at += batch_size) {
    fn(instances.subspan(at, std::min(batch_size, instances.size() - at)));
  }
}

model::TaskLosses mean_losses(const model::Parameters& params, const model::Vocabulary& vocab,
                              const model::ScoreNormalizer& normalizer,
                              std::span<const data::QEInstance> instances, std::size_t batch_size) {
  BatchLosses acc;
  for_each_batch(instances, batch_size, [&](std::span<const data::QEInstance> batch) {
    const auto enc = model::encode_batch(batch, vocab, params.config.max_len);
    const auto fwd = model::forward(params, enc);
    const auto targets = model::make_targets(batch, normalizer);
    acc.add(model::task_losses(fwd.predictions, targets, params.config.enabled_tasks), batch.size());
  });
  return acc.mean();
}

std::optional<double> guarded(double (*fn)(std::span<const double>, std::span<const double>),
                              std::span<const double> x, std::span<const double> y) {
  try {
    return fn(x, y);
  } catch (const Error& e) {
    if (e.code() != Errc::kZeroVariance) throw;
    return std::nullopt;
  } catch (const std::invalid_argument&) {
    return std::nullopt;
  }
}

}  // namespace

Evaluation evaluate(const model::Parameters& params, const model::Vocabulary& vocab,
                    const model::ScoreNormalizer& normalizer,
                    std::span<const data::QEInstance> instances, std::size_t batch_size) {
  const model::TaskSet& tasks = params.config.enabled_tasks;
  Evaluation ev;
  Vector gold_scores;
  std::vector<std::size_t> word_pred, word_gold, emo_pred, emo_gold;
  for_each_batch(instances, batch_size, [&](std::span<const data::QEInstance> batch) {
    const auto enc = model::encode_batch(batch, vocab, params.config.max_len);
    const auto fwd = model::forward(params, enc);
    const auto& p = fwd.predictions;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto& inst = batch[b];
      if (tasks.contains(Task::kSentence)) {
        ev.sentence_predictions.push_back(normalizer.denormalize(p.sentence[b]));
        gold_scores.push_back(inst.qe_score);
      }
      if (tasks.contains(Task::kWord)) {
        std::size_t i = 0;
        for (const auto* labels : {&inst.src_labels, &inst.tgt_labels}) {
          for (auto l : *labels) {
            const double* probs = p.word_probs[b].data() + 2 * i;
            word_pred.push_back(probs[1] > probs[0] ? 1 : 0);
            word_gold.push_back(static_cast<std::size_t>(l));
            ++i;
          }
        }
      }
      if (tasks.contains(Task::kEmotion)) {
        const Vector& probs = p.emotion_probs[b];
        emo_pred.push_back(static_cast<std::size_t>(
            std::max_element(probs.begin(), probs.end()) - probs.begin()));
        emo_gold.push_back(static_cast<std::size_t>(inst.emotion));
      }
    }
  });
  if (tasks.contains(Task::kSentence)) {
    ev.spearman = guarded(&metrics::spearman, ev.sentence_predictions, gold_scores);
    ev.pearson = guarded(&metrics::pearson, ev.sentence_predictions, gold_scores);
  }
  if (tasks.contains(Task::kWord)) ev.word = metrics::macro_prf(word_pred, word_gold, 2);
  if (tasks.contains(Task::kEmotion))
    ev.emotion = metrics::macro_prf(emo_pred, emo_gold, params.config.n_emotions);
  return ev;
}

json evaluation_to_json(const Evaluation& ev, const model::TaskSet& tasks) {
  json out = json::object();
  if (tasks.contains(Task::kSentence))
    out["sentence"] = {{"spearman", optional_number(ev.spearman)},
                       {"pearson", optional_number(ev.pearson)}};
  if (tasks.contains(Task::kWord)) out["word"] = macro_json(ev.word);
  if (tasks.contains(Task::kEmotion)) out["emotion"] = macro_json(ev.emotion);
  return out;
}

RunOutcome train(const ExperimentConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const data::DatasetSplit split = prepare_split(cfg);
  if (split.train.empty()) throw Error(Errc::kTooFewInstances, "empty training split");

  RunOutcome run;
  model::Checkpoint& ckpt = run.checkpoint;
  ckpt.vocab = model::Vocabulary::build(split.train);
  ckpt.normalizer = model::ScoreNormalizer::fit(split.train);
  ckpt.seed = cfg.seed;
  model::ModelConfig mcfg = cfg.model;
  mcfg.vocab_size = ckpt.vocab.size();
  mcfg.enabled_tasks = cfg.tasks;
  ckpt.params = model::init_params(mcfg, derive_seed(cfg.seed, kInitStream));
  model::Parameters& params = ckpt.params;

  const std::size_t n_train = split.train.size();
  const std::size_t steps_per_epoch = (n_train + cfg.batch_size - 1) / cfg.batch_size;
  const optim::ScheduleConfig schedule{
      cfg.base_lr, cfg.warmup_fraction,
      static_cast<std::int64_t>(steps_per_epoch * cfg.epochs)};
  optim::OptimizerState opt = optim::OptimizerState::for_params(params);

  const std::size_t n_tasks = cfg.tasks.size();
  agg::LossHistory history;
  history.per_task.resize(n_tasks);
  std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, kShuffleStream));
  std::vector<std::size_t> order(n_train);
  std::vector<data::QEInstance> batch;
  std::int64_t global_step = 0;

  json warnings = json::array();
  constexpr std::size_t kMaxWarnings = 50;
  std::size_t total_fallbacks = 0;
  Vector alpha_total(n_tasks, 0.0);
  std::size_t total_steps = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.mean_alpha.assign(n_tasks, 0.0);
    BatchLosses train_acc;
    double cond_sum = 0.0;
    std::size_t cond_count = 0;

    for (std::size_t at = 0; at < n_train; at += cfg.batch_size) {
      batch.clear();
      for (std::size_t i = at; i < std::min(at + cfg.batch_size, n_train); ++i)
        batch.push_back(split.train[order[i]]);
      const auto enc = model::encode_batch(batch, ckpt.vocab, mcfg.max_len);
      const auto targets = model::make_targets(batch, ckpt.normalizer);
      const auto fwd = model::forward(params, enc);
      train_acc.add(model::task_losses(fwd.predictions, targets, cfg.tasks), batch.size());
      const auto grads = model::backward_per_task(params, fwd, targets);

      const double lr = optim::lr_at(global_step, schedule);
      const optim::StepDiagnostics diag =
          optim::mtl_step(params, grads, cfg.aggregator, history, opt, lr, cfg.adamw);
      ++global_step;

      for (std::size_t i = 0; i < n_tasks; ++i) rec.mean_alpha[i] += diag.alpha[i];
      ++rec.steps;
      if (diag.fallback) {
        ++rec.fallback_count;
        if (warnings.size() < kMaxWarnings) {
          warnings.push_back("epoch " + std::to_string(epoch) + " step " + std::to_string(rec.steps) +
                             ": " + std::string(agg::to_string(cfg.aggregator.kind)) +
                             " fell back to linear weights (" + diag.fallback_reason + ")");
        }
      }
      if (std::isfinite(diag.condition_number)) {
        cond_sum += diag.condition_number;
        ++cond_count;
        rec.condition_max = std::max(rec.condition_max, diag.condition_number);
      }
      rec.nash_residual_max = std::max(rec.nash_residual_max, diag.residual);
    }

    for (std::size_t i = 0; i < n_tasks; ++i) {
      alpha_total[i] += rec.mean_alpha[i];
      rec.mean_alpha[i] /= static_cast<double>(rec.steps);
    }
    total_steps += rec.steps;
    total_fallbacks += rec.fallback_count;
    rec.condition_mean = cond_count > 0 ? cond_sum / static_cast<double>(cond_count) : 0.0;
    rec.train_loss = train_acc.mean();
    for (std::size_t i = 0; i < n_tasks; ++i)
      history.per_task[i].push_back(rec.train_loss.get(cfg.tasks.tasks()[i]));
    rec.validation_loss =
        mean_losses(params, ckpt.vocab, ckpt.normalizer, split.validation, cfg.batch_size);
    if (progress) progress(rec);
    run.epochs.push_back(rec);
  }

  run.test = evaluate(params, ckpt.vocab, ckpt.normalizer, split.test, cfg.batch_size);

  // Report assembly; nothing time-dependent goes in here.
  json epochs = json::array();
  for (const auto& rec : run.epochs) {
    json alpha = json::object();
    for (std::size_t i = 0; i < n_tasks; ++i)
      alpha[std::string(model::to_string(cfg.tasks.tasks()[i]))] = rec.mean_alpha[i];
    epochs.push_back({{"epoch", rec.epoch},
                      {"steps", rec.steps},
                      {"train_loss", losses_json(rec.train_loss, cfg.tasks)},
                      {"validation_loss", losses_json(rec.validation_loss, cfg.tasks)},
                      {"mean_alpha", alpha},
                      {"fallback_count", rec.fallback_count},
                      {"condition_number", {{"mean", rec.condition_mean}, {"max", rec.condition_max}}},
                      {"nash_residual_max", rec.nash_residual_max}});
  }
  json mean_alpha = json::object();
  double a_max = -INFINITY, a_min = INFINITY;
  for (std::size_t i = 0; i < n_tasks; ++i) {
    const double a = alpha_total[i] / static_cast<double>(total_steps);
    mean_alpha[std::string(model::to_string(cfg.tasks.tasks()[i]))] = a;
    a_max = std::max(a_max, a);
    a_min = std::min(a_min, a);
  }

  std::ostringstream corpus;
  for (const auto* part : {&split.train, &split.validation, &split.test})
    data::write_dataset(corpus, *part);
  const json config_echo = to_json(cfg);

  run.report = {
      {"format", "mtlqe-run-report-v1"},
      {"config", config_echo},
      {"dataset",
       {{"source", cfg.dataset_path ? "file" : "synthetic"},
        {"train", split.train.size()},
        {"validation", split.validation.size()},
        {"test", split.test.size()},
        {"vocab_size", ckpt.vocab.size()},
        {"score_mean", ckpt.normalizer.mean},
        {"score_stddev", ckpt.normalizer.stddev}}},
      {"shared_parameters", params.shared.size()},
      {"total_steps", total_steps},
      {"epochs", epochs},
      {"mean_alpha", mean_alpha},
      {"alpha_ratio", a_min > 0.0 ? json(a_max / a_min) : json(nullptr)},
      {"fallback_count", total_fallbacks},
      {"warnings", warnings},
      {"test_metrics", evaluation_to_json(run.test, cfg.tasks)},
      {"checksums",
       {{"checkpoint_sha256", sha256_hex(model::serialize_parameters(params))},
        {"dataset_sha256", sha256_hex(corpus.str())},
        {"config_sha256", sha256_hex(config_echo.dump())}}},
  };
  run.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return run;
}

RunOutcome train_to_dir(const ExperimentConfig& cfg, const std::filesystem::path& dir,
                        const ProgressFn& progress) {
  RunOutcome run = train(cfg, progress);
  std::filesystem::create_directories(dir);
  model::save_checkpoint(dir, "checkpoint", run.checkpoint);
  {
    std::ofstream out(dir / "report.json", std::ios::binary);
    out << run.report.dump(2) << '\n';
    if (!out) throw Error(Errc::kIoError, "cannot write " + (dir / "report.json").string());
  }
  std::ofstream timing(dir / "timing.json", std::ios::binary);
  timing << json{{"wall_clock_seconds", run.wall_clock_seconds}}.dump(2) << '\n';
  return run;
}

std::vector<CompareRow> compare(const ExperimentConfig& base,
                                std::span<const agg::AggregatorKind> kinds,
                                const std::filesystem::path& dir, std::size_t jobs) {
  if (kinds.size() < 2) config_error("compare needs at least two aggregators");
  std::vector<CompareRow> rows(kinds.size());
  auto run_one = [&](std::size_t i) {
    CompareRow& row = rows[i];
    row.aggregator = std::string(agg::to_string(kinds[i]));
    ExperimentConfig cfg = base;
    cfg.aggregator.kind = kinds[i];
    try {
      row.outcome = train_to_dir(cfg, dir / (std::to_string(i) + "_" + row.aggregator));
      row.ok = true;
    } catch (const std::exception& e) {
      row.error = e.what();
    }
  };
  jobs = std::max<std::size_t>(jobs, 1);
  for (std::size_t start = 0; start < kinds.size(); start += jobs) {
    std::vector<std::future<void>> wave;
    for (std::size_t i = start; i < std::min(start + jobs, kinds.size()); ++i)
      wave.push_back(std::async(jobs > 1 ? std::launch::async : std::launch::deferred, run_one, i));
    for (auto& f : wave) f.get();
  }

  std::filesystem::create_directories(dir);
  std::ofstream csv(dir / "comparison.csv", std::ios::binary);
  csv << comparison_csv(rows);
  if (!csv) throw Error(Errc::kIoError, "cannot write comparison.csv");
  return rows;
}

}  // namespace mtlqe::exp
