// SPDX-License-Identifier: Apache-2.0
//
// Quality-estimation instances with MQM error annotations, the derivation of
// sentence scores and OK/BAD word labels from those annotations, JSONL
// ingestion and the train/validation/test split.

#ifndef MTLQE_DATA_HPP_
#define MTLQE_DATA_HPP_

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace mtlqe::data {

enum class Severity : std::uint8_t { kMinor, kMajor, kCritical };

// MQM weights: minor 1, major 5, critical 10.
constexpr int severity_weight(Severity s) {
  switch (s) {
    case Severity::kMinor: return 1;
    case Severity::kMajor: return 5;
    case Severity::kCritical: return 10;
  }
  return 0;
}

enum class TextSide : std::uint8_t { kSource, kTarget };

enum class Emotion : std::uint8_t { kAnger, kJoy, kSadness, kSurprise, kFear };
inline constexpr std::size_t kNumEmotions = 5;
inline constexpr std::array<Emotion, kNumEmotions> kAllEmotions = {
    Emotion::kAnger, Emotion::kJoy, Emotion::kSadness, Emotion::kSurprise, Emotion::kFear};

enum class WordLabel : std::uint8_t { kOk = 0, kBad = 1 };

std::string_view to_string(Severity s);
std::string_view to_string(TextSide s);
std::string_view to_string(Emotion e);
std::string_view to_string(WordLabel l);
std::optional<Severity> severity_from_string(std::string_view s);
std::optional<TextSide> side_from_string(std::string_view s);
std::optional<Emotion> emotion_from_string(std::string_view s);
std::optional<WordLabel> label_from_string(std::string_view s);

// Half-open token range [start, end) on one side of the pair.
struct ErrorAnnotation {
  Severity severity = Severity::kMinor;
  TextSide side = TextSide::kTarget;
  std::size_t start = 0;
  std::size_t end = 0;

  friend bool operator==(const ErrorAnnotation&, const ErrorAnnotation&) = default;
};

struct QEInstance {
  std::vector<std::string> src_tokens;
  std::vector<std::string> tgt_tokens;
  std::vector<ErrorAnnotation> errors;
  Emotion emotion = Emotion::kAnger;

  // Derived from `errors`; see derive_fields().
  double qe_score = 0.0;
  std::vector<WordLabel> src_labels;
  std::vector<WordLabel> tgt_labels;

  friend bool operator==(const QEInstance&, const QEInstance&) = default;
};

// Sum of severity weights, one contribution per annotation. Higher is worse.
double derive_sentence_score(std::span<const ErrorAnnotation> errors);

// Tokens covered by at least one span are BAD, the rest OK. Only annotations
// on `side` are considered. Throws Errc::kSpanOutOfBounds.
std::vector<WordLabel> derive_word_labels(std::size_t token_count,
                                          std::span<const ErrorAnnotation> errors,
                                          TextSide side);

// Recomputes qe_score, src_labels and tgt_labels from the annotations.
void derive_fields(QEInstance& instance);

struct DatasetSplit {
  std::vector<QEInstance> train;
  std::vector<QEInstance> validation;
  std::vector<QEInstance> test;
};

// Seeded shuffle, then sizes (floor(0.8 n), floor(0.1 n), remainder).
// Throws Errc::kTooFewInstances for n < 10.
DatasetSplit split_dataset(std::vector<QEInstance> instances, std::uint64_t seed);

// JSONL record <-> instance. `line` is only used in error messages.
nlohmann::json to_json(const QEInstance& instance, bool include_derived = true);
QEInstance from_json(const nlohmann::json& record, std::size_t line, bool check_derived = true);

// Parses one record per non-empty line. Derived fields are recomputed; stored
// values, when present, must agree (Errc::kScoreMismatch / kSchemaError).
std::vector<QEInstance> read_dataset(std::istream& in, bool check_derived = true);
std::vector<QEInstance> load_dataset(const std::filesystem::path& path, bool check_derived = true);

void write_dataset(std::ostream& out, std::span<const QEInstance> instances,
                   bool include_derived = true);
void save_dataset(const std::filesystem::path& path, std::span<const QEInstance> instances,
                  bool include_derived = true);

// Desk-scale stand-in for an annotated corpus. Target tokens are corrupted at
// per-severity rates; emotion marker tokens identify the emotion class.
struct SyntheticSpec {
  std::size_t n_instances = 2500;
  std::size_t vocab_size = 200;
  std::size_t min_length = 6;
  std::size_t max_length = 12;
  std::size_t markers_per_emotion = 4;
  std::size_t corruption_pool_size = 6;
  // Probability that a target token carries an error of each severity.
  double minor_rate = 0.08;
  double major_rate = 0.04;
  double critical_rate = 0.02;
  // Probability that an error is a wrong in-vocabulary translation rather
  // than an out-of-place token from a corruption pool.
  double mistranslation_share = 0.5;
  std::array<double, kNumEmotions> emotion_probs = {0.2, 0.2, 0.2, 0.2, 0.2};
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const SyntheticSpec& spec);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);

std::vector<QEInstance> generate_synthetic(const SyntheticSpec& spec);

}  // namespace mtlqe::data

#endif  // MTLQE_DATA_HPP_
