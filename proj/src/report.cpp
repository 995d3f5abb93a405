// SPDX-License-Identifier: Apache-2.0

#include <charconv>
#include <cstdio>
#include <sstream>

#include "mtlqe/experiment.hpp"

namespace mtlqe::exp {

using nlohmann::json;

namespace {

// Shortest round-trip decimal, so CSV cells are reproducible byte-for-byte.
std::string number_cell(const json& v) {
  if (!v.is_number()) return "";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v.get<double>());
  return std::string(buf, res.ptr);
}

const json& at_path(const json& j, std::initializer_list<const char*> keys) {
  static const json kNull;
  const json* node = &j;
  for (const char* k : keys) {
    if (!node->is_object() || !node->contains(k)) return kNull;
    node = &(*node)[k];
  }
  return *node;
}

std::string quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

}  // namespace

std::string comparison_csv(std::span<const CompareRow> rows) {
  std::ostringstream out;
  out << "aggregator,status,spearman,pearson,word_f1,word_precision,word_recall,"
         "emotion_f1,emotion_precision,emotion_recall,alpha_sentence,alpha_word,"
         "alpha_emotion,fallback_count,error\n";
  for (const CompareRow& row : rows) {
    out << row.aggregator << ',' << (row.ok ? "ok" : "failed");
    const json& r = row.outcome.report;
    const json& m = at_path(r, {"test_metrics"});
    for (const json* cell :
         {&at_path(m, {"sentence", "spearman"}), &at_path(m, {"sentence", "pearson"}),
          &at_path(m, {"word", "f1"}), &at_path(m, {"word", "precision"}),
          &at_path(m, {"word", "recall"}), &at_path(m, {"emotion", "f1"}),
          &at_path(m, {"emotion", "precision"}), &at_path(m, {"emotion", "recall"}),
          &at_path(r, {"mean_alpha", "sentence"}), &at_path(r, {"mean_alpha", "word"}),
          &at_path(r, {"mean_alpha", "emotion"})}) {
      out << ',' << number_cell(*cell);
    }
    const json& fb = at_path(r, {"fallback_count"});
    out << ',' << (fb.is_number() ? std::to_string(fb.get<std::size_t>()) : std::string());
    out << ',' << quote(row.error) << '\n';
  }
  return out.str();
}

json mean_alpha_json(const json& report) { return at_path(report, {"mean_alpha"}); }

std::string metrics_table(const json& report) {
  std::ostringstream out;
  char line[128];
  auto fmt = [&](const char* label, const json& v) {
    if (v.is_number()) {
      std::snprintf(line, sizeof(line), "  %-20s %.4f\n", label, v.get<double>());
    } else {
      std::snprintf(line, sizeof(line), "  %-20s %s\n", label, "n/a");
    }
    out << line;
  };
  const json& m = at_path(report, {"test_metrics"});
  out << "test metrics\n";
  if (m.contains("sentence")) {
    fmt("sentence spearman", at_path(m, {"sentence", "spearman"}));
    fmt("sentence pearson", at_path(m, {"sentence", "pearson"}));
  }
  for (const char* task : {"word", "emotion"}) {
    if (!m.contains(task)) continue;
    for (const char* k : {"f1", "precision", "recall"}) {
      const std::string label = std::string(task) + " " + k;
      fmt(label.c_str(), at_path(m, {task, k}));
    }
  }
  const json& alpha = mean_alpha_json(report);
  if (alpha.is_object()) {
    out << "mean alpha\n";
    for (const auto& [task, v] : alpha.items()) fmt(task.c_str(), v);
  }
  const json& fb = at_path(report, {"fallback_count"});
  if (fb.is_number()) out << "  fallbacks            " << fb.get<std::size_t>() << '\n';
  return out.str();
}

}  // namespace mtlqe::exp
