// SPDX-License-Identifier: Apache-2.0
//
// Compact three-head QE network with hand-written backpropagation.
//
// Input layout per sequence: [CLS] src [SEP] tgt [SEP], then padding.
// The encoder is a learned token + position embedding followed by n_layers
// residual blocks of single-head self-attention and a GELU feed-forward net.
// Heads:
//   sentence  affine map of the [CLS] state to a scalar score
//   word      affine map of every src/tgt token state to OK/BAD logits
//   emotion   affine map of the pooled (max by default) states to 5 logits
//
// Shared parameter ordering (flattened, row-major, weights as in x out):
//   tok_emb [V x d], pos_emb [max_len x d], then per layer l:
//   wq [d x d], bq [d], wk, bk, wv, bv, wo, bo, w1 [d x f], b1 [f], w2 [f x d], b2 [d]
// Head blocks: weight [d x out] followed by bias [out].

#ifndef MTLQE_MODEL_HPP_
#define MTLQE_MODEL_HPP_

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "mtlqe/aggregators.hpp"
#include "mtlqe/data.hpp"

namespace mtlqe::model {

using linalg::Vector;

enum class Task : std::uint8_t { kSentence = 0, kWord = 1, kEmotion = 2 };
inline constexpr std::size_t kNumTasks = 3;
inline constexpr std::array<Task, kNumTasks> kAllTasks = {Task::kSentence, Task::kWord,
                                                          Task::kEmotion};

std::string_view to_string(Task t);
Task task_from_string(std::string_view name);

// Canonically ordered (sentence, word, emotion), duplicate-free.
class TaskSet {
 public:
  TaskSet() = default;
  TaskSet(std::initializer_list<Task> tasks);
  explicit TaskSet(std::span<const Task> tasks);
  static TaskSet all() { return {Task::kSentence, Task::kWord, Task::kEmotion}; }

  bool contains(Task t) const { return mask_[static_cast<std::size_t>(t)]; }
  std::size_t size() const { return tasks_.size(); }
  bool empty() const { return tasks_.empty(); }
  // Column of task t in a gradient matrix over this set.
  std::size_t index_of(Task t) const;
  const std::vector<Task>& tasks() const { return tasks_; }
  auto begin() const { return tasks_.begin(); }
  auto end() const { return tasks_.end(); }

  friend bool operator==(const TaskSet& a, const TaskSet& b) { return a.tasks_ == b.tasks_; }

 private:
  std::array<bool, kNumTasks> mask_{};
  std::vector<Task> tasks_;
};

enum class Pooling : std::uint8_t { kMax, kMean };

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t d_ff = 0;  // 0 selects 4 * d_model
  std::size_t max_len = 200;
  std::size_t n_emotions = data::kNumEmotions;
  Pooling pooling = Pooling::kMax;
  TaskSet enabled_tasks = TaskSet::all();

  std::size_t ffn_width() const { return d_ff == 0 ? 4 * d_model : d_ff; }
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kUnkId = 1;
inline constexpr std::int32_t kClsId = 2;
inline constexpr std::int32_t kSepId = 3;

// Shared source/target vocabulary; ids 0..3 are [PAD] [UNK] [CLS] [SEP].
class Vocabulary {
 public:
  Vocabulary();
  static Vocabulary build(std::span<const data::QEInstance> instances);
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  std::int32_t id(const std::string& token) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  void add(const std::string& token);
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> index_;
};

enum class Position : std::uint8_t { kCls, kSrc, kSep, kTgt, kPad };

struct EncodedBatch {
  std::size_t batch_size = 0;
  std::size_t length = 0;
  std::vector<std::int32_t> ids;      // batch_size x length
  std::vector<Position> positions;    // batch_size x length

  bool is_pad(std::size_t b, std::size_t p) const {
    return positions[b * length + p] == Position::kPad;
  }
  // Number of leading non-pad positions of row b.
  std::size_t real_length(std::size_t b) const;
  // Appends `extra` padding columns to every row.
  EncodedBatch padded(std::size_t extra) const;
  // Throws std::invalid_argument unless every row is [CLS] src [SEP] tgt [SEP] pad*.
  void validate() const;
};

// Sentence scores in model units (normalized); see ScoreNormalizer.
struct TaskTargets {
  Vector qe_score;
  std::vector<std::vector<std::uint8_t>> word_labels;  // src then tgt, 1 = BAD
  std::vector<std::size_t> emotion;
};

// Throws Errc::kSequenceTooLong when 2 + |src| + 1 + |tgt| + 1 > max_len.
EncodedBatch encode_batch(std::span<const data::QEInstance> instances, const Vocabulary& vocab,
                          std::size_t max_len);

// z-normalization of the sentence regression target, fitted on training data.
struct ScoreNormalizer {
  double mean = 0.0;
  double stddev = 1.0;

  static ScoreNormalizer fit(std::span<const data::QEInstance> instances);
  double normalize(double raw) const { return (raw - mean) / stddev; }
  double denormalize(double z) const { return z * stddev + mean; }
};

TaskTargets make_targets(std::span<const data::QEInstance> instances,
                         const ScoreNormalizer& normalizer);

// Offsets of every named tensor inside the flattened shared vector.
struct TensorSlot {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t offset = 0;
  std::size_t size() const { return rows * cols; }
};

std::vector<TensorSlot> shared_layout(const ModelConfig& cfg);
std::size_t shared_size(const ModelConfig& cfg);
std::size_t head_outputs(const ModelConfig& cfg, Task t);
std::size_t head_size(const ModelConfig& cfg, Task t);

struct Parameters {
  ModelConfig config;
  Vector shared;
  std::array<Vector, kNumTasks> heads;

  Vector& head(Task t) { return heads[static_cast<std::size_t>(t)]; }
  const Vector& head(Task t) const { return heads[static_cast<std::size_t>(t)]; }
  friend bool operator==(const Parameters&, const Parameters&) = default;
};

// Xavier-uniform linear weights, N(0, 0.02) embeddings, zero biases.
Parameters init_params(const ModelConfig& cfg, std::uint64_t seed);

struct Predictions {
  Vector sentence;                   // per sequence, normalized units
  std::vector<Vector> word_probs;    // per sequence, (src+tgt count) x 2
  std::vector<Vector> word_log_probs;
  std::vector<Vector> emotion_probs;  // per sequence, n_emotions
  std::vector<Vector> emotion_log_probs;
};

struct LayerCache {
  Vector x, q, k, v, attn, ctx, h, u, act;
};

struct SequenceCache {
  std::size_t n = 0;
  std::vector<std::int32_t> ids;
  std::vector<std::size_t> word_positions;
  std::vector<LayerCache> layers;
  Vector out;                        // n x d
  Vector pooled;                     // d
  std::vector<std::size_t> pool_argmax;
};

struct ForwardCache {
  std::vector<SequenceCache> sequences;
};

struct ForwardResult {
  Predictions predictions;
  ForwardCache cache;
};

// Predictions for every enabled task. Throws Errc::kSequenceTooLong.
ForwardResult forward(const Parameters& params, const EncodedBatch& batch);

struct TaskLosses {
  double sentence = 0.0;
  double word = 0.0;
  double emotion = 0.0;

  double get(Task t) const;
  double& get(Task t);
};

// Batch means: sentence MSE, per-sequence mean token cross-entropy averaged
// over sequences, and emotion cross-entropy. Log-probabilities are clamped at -30.
TaskLosses task_losses(const Predictions& predictions, const TaskTargets& targets,
                       const TaskSet& tasks);

inline constexpr double kLogProbFloor = -30.0;

struct TaskGradients {
  TaskSet tasks;
  std::vector<Vector> shared;           // one per enabled task, in TaskSet order
  std::array<Vector, kNumTasks> heads;  // empty for disabled tasks

  agg::GradientMatrix matrix() const;
};

// Exact gradient of each enabled task's batch loss with respect to the shared
// parameters (one column per task) and to that task's own head.
TaskGradients backward_per_task(const Parameters& params, const ForwardResult& fwd,
                                const TaskTargets& targets);

}  // namespace mtlqe::model

#endif  // MTLQE_MODEL_HPP_
