// SPDX-License-Identifier: Apache-2.0

#include "mtlqe/data.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>

#include "mtlqe/error.hpp"

namespace mtlqe::data {

using nlohmann::json;

std::string_view to_string(Severity s) {
  switch (s) {
    case Severity::kMinor: return "minor";
    case Severity::kMajor: return "major";
    case Severity::kCritical: return "critical";
  }
  return "?";
}

std::string_view to_string(TextSide s) { return s == TextSide::kSource ? "source" : "target"; }

std::string_view to_string(Emotion e) {
  switch (e) {
    case Emotion::kAnger: return "anger";
    case Emotion::kJoy: return "joy";
    case Emotion::kSadness: return "sadness";
    case Emotion::kSurprise: return "surprise";
    case Emotion::kFear: return "fear";
  }
  return "?";
}

std::string_view to_string(WordLabel l) { return l == WordLabel::kOk ? "OK" : "BAD"; }

std::optional<Severity> severity_from_string(std::string_view s) {
  for (auto v : {Severity::kMinor, Severity::kMajor, Severity::kCritical})
    if (to_string(v) == s) return v;
  return std::nullopt;
}

std::optional<TextSide> side_from_string(std::string_view s) {
  for (auto v : {TextSide::kSource, TextSide::kTarget})
    if (to_string(v) == s) return v;
  return std::nullopt;
}

std::optional<Emotion> emotion_from_string(std::string_view s) {
  for (auto v : kAllEmotions)
    if (to_string(v) == s) return v;
  return std::nullopt;
}

std::optional<WordLabel> label_from_string(std::string_view s) {
  if (s == "OK") return WordLabel::kOk;
  if (s == "BAD") return WordLabel::kBad;
  return std::nullopt;
}

double derive_sentence_score(std::span<const ErrorAnnotation> errors) {
  int total = 0;
  for (const auto& e : errors) total += severity_weight(e.severity);
  return static_cast<double>(total);
}

std::vector<WordLabel> derive_word_labels(std::size_t token_count,
                                          std::span<const ErrorAnnotation> errors,
                                          TextSide side) {
  std::vector<WordLabel> labels(token_count, WordLabel::kOk);
  for (const auto& e : errors) {
    if (e.side != side) continue;
    if (e.start >= e.end || e.end > token_count) {
      throw Error(Errc::kSpanOutOfBounds,
                  "span [" + std::to_string(e.start) + "," + std::to_string(e.end) + ") on " +
                      std::string(to_string(side)) + " side with " + std::to_string(token_count) +
                      " tokens");
    }
    std::fill(labels.begin() + static_cast<std::ptrdiff_t>(e.start),
              labels.begin() + static_cast<std::ptrdiff_t>(e.end), WordLabel::kBad);
  }
  return labels;
}

void derive_fields(QEInstance& instance) {
  instance.src_labels =
      derive_word_labels(instance.src_tokens.size(), instance.errors, TextSide::kSource);
  instance.tgt_labels =
      derive_word_labels(instance.tgt_tokens.size(), instance.errors, TextSide::kTarget);
  instance.qe_score = derive_sentence_score(instance.errors);
}

DatasetSplit split_dataset(std::vector<QEInstance> instances, std::uint64_t seed) {
  const std::size_t n = instances.size();
  if (n < 10) {
    throw Error(Errc::kTooFewInstances, "need at least 10 instances, got " + std::to_string(n));
  }
  std::mt19937_64 rng(seed);
  std::shuffle(instances.begin(), instances.end(), rng);
  const std::size_t n_train = n * 8 / 10;
  const std::size_t n_val = n / 10;

  DatasetSplit split;
  auto first = std::make_move_iterator(instances.begin());
  split.train.assign(first, first + static_cast<std::ptrdiff_t>(n_train));
  split.validation.assign(first + static_cast<std::ptrdiff_t>(n_train),
                          first + static_cast<std::ptrdiff_t>(n_train + n_val));
  split.test.assign(first + static_cast<std::ptrdiff_t>(n_train + n_val),
                    std::make_move_iterator(instances.end()));
  return split;
}

json to_json(const QEInstance& instance, bool include_derived) {
  json errors = json::array();
  for (const auto& e : instance.errors) {
    errors.push_back({{"severity", to_string(e.severity)},
                      {"side", to_string(e.side)},
                      {"start", e.start},
                      {"end", e.end}});
  }
  json j = {{"src_tokens", instance.src_tokens},
            {"tgt_tokens", instance.tgt_tokens},
            {"errors", std::move(errors)},
            {"emotion", to_string(instance.emotion)}};
  if (include_derived) {
    auto labels = [](const std::vector<WordLabel>& ls) {
      json out = json::array();
      for (auto l : ls) out.push_back(to_string(l));
      return out;
    };
    j["qe_score"] = instance.qe_score;
    j["src_labels"] = labels(instance.src_labels);
    j["tgt_labels"] = labels(instance.tgt_labels);
  }
  return j;
}

namespace {

[[noreturn]] void schema_error(std::size_t line, const std::string& field, const std::string& what) {
  throw Error(Errc::kSchemaError,
              "line " + std::to_string(line) + ": field '" + field + "' " + what);
}

const json& require(const json& record, std::size_t line, const char* field) {
  auto it = record.find(field);
  if (it == record.end()) schema_error(line, field, "is missing");
  return *it;
}

std::vector<std::string> read_tokens(const json& record, std::size_t line, const char* field) {
  const json& arr = require(record, line, field);
  if (!arr.is_array()) schema_error(line, field, "must be a list of strings");
  std::vector<std::string> out;
  out.reserve(arr.size());
  for (const auto& t : arr) {
    if (!t.is_string()) schema_error(line, field, "must be a list of strings");
    out.push_back(t.get<std::string>());
  }
  return out;
}

std::size_t read_index(const json& e, std::size_t line, const char* field) {
  auto it = e.find(field);
  if (it == e.end() || !it->is_number_integer() || it->get<long long>() < 0) {
    schema_error(line, std::string("errors.") + field, "must be a non-negative integer");
  }
  return it->get<std::size_t>();
}

std::vector<WordLabel> read_labels(const json& arr, std::size_t line, const char* field) {
  if (!arr.is_array()) schema_error(line, field, "must be a list of \"OK\"/\"BAD\"");
  std::vector<WordLabel> out;
  for (const auto& l : arr) {
    auto parsed = l.is_string() ? label_from_string(l.get<std::string>()) : std::nullopt;
    if (!parsed) schema_error(line, field, "must be a list of \"OK\"/\"BAD\"");
    out.push_back(*parsed);
  }
  return out;
}

}  // namespace

QEInstance from_json(const json& record, std::size_t line, bool check_derived) {
  if (!record.is_object()) throw Error(Errc::kSchemaError, "line " + std::to_string(line) + ": record must be an object");
  QEInstance inst;
  inst.src_tokens = read_tokens(record, line, "src_tokens");
  inst.tgt_tokens = read_tokens(record, line, "tgt_tokens");

  const json& errors = require(record, line, "errors");
  if (!errors.is_array()) schema_error(line, "errors", "must be a list");
  for (const auto& e : errors) {
    if (!e.is_object()) schema_error(line, "errors", "entries must be objects");
    ErrorAnnotation ann;
    auto sev = e.contains("severity") && e["severity"].is_string()
                   ? severity_from_string(e["severity"].get<std::string>())
                   : std::nullopt;
    if (!sev) schema_error(line, "errors.severity", "must be one of minor|major|critical");
    auto side = e.contains("side") && e["side"].is_string()
                    ? side_from_string(e["side"].get<std::string>())
                    : std::nullopt;
    if (!side) schema_error(line, "errors.side", "must be one of source|target");
    ann.severity = *sev;
    ann.side = *side;
    ann.start = read_index(e, line, "start");
    ann.end = read_index(e, line, "end");
    inst.errors.push_back(ann);
  }

  const json& emotion = require(record, line, "emotion");
  auto emo = emotion.is_string() ? emotion_from_string(emotion.get<std::string>()) : std::nullopt;
  if (!emo) schema_error(line, "emotion", "must be one of anger|joy|sadness|surprise|fear");
  inst.emotion = *emo;

  try {
    derive_fields(inst);
  } catch (const Error& e) {
    throw Error(e.code(), "line " + std::to_string(line) + ": " + e.what());
  }

  if (!check_derived) return inst;
  if (auto it = record.find("qe_score"); it != record.end()) {
    if (!it->is_number()) schema_error(line, "qe_score", "must be a number");
    if (it->get<double>() != inst.qe_score) {
      throw Error(Errc::kScoreMismatch, "line " + std::to_string(line) + ": stored qe_score " +
                                            it->dump() + " but errors sum to " +
                                            std::to_string(static_cast<int>(inst.qe_score)));
    }
  }
  if (auto it = record.find("src_labels"); it != record.end()) {
    if (read_labels(*it, line, "src_labels") != inst.src_labels)
      schema_error(line, "src_labels", "disagrees with labels derived from errors");
  }
  if (auto it = record.find("tgt_labels"); it != record.end()) {
    if (read_labels(*it, line, "tgt_labels") != inst.tgt_labels)
      schema_error(line, "tgt_labels", "disagrees with labels derived from errors");
  }
  return inst;
}

std::vector<QEInstance> read_dataset(std::istream& in, bool check_derived) {
  std::vector<QEInstance> out;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json record;
    try {
      record = json::parse(text);
    } catch (const json::parse_error& e) {
      throw Error(Errc::kSchemaError, "line " + std::to_string(line) + ": invalid JSON (" + e.what() + ")");
    }
    out.push_back(from_json(record, line, check_derived));
  }
  return out;
}

std::vector<QEInstance> load_dataset(const std::filesystem::path& path, bool check_derived) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::kIoError, "cannot open " + path.string());
  return read_dataset(in, check_derived);
}

void write_dataset(std::ostream& out, std::span<const QEInstance> instances, bool include_derived) {
  for (const auto& inst : instances) out << to_json(inst, include_derived).dump() << '\n';
}

void save_dataset(const std::filesystem::path& path, std::span<const QEInstance> instances,
                  bool include_derived) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::kIoError, "cannot write " + path.string());
  write_dataset(out, instances, include_derived);
  if (!out) throw Error(Errc::kIoError, "write failed for " + path.string());
}

}  // namespace mtlqe::data
