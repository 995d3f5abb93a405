// SPDX-License-Identifier: Apache-2.0

#include "mtlqe/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "mtlqe/error.hpp"

namespace mtlqe::model {

// ---------------------------------------------------------------------------
// Tasks and configuration

std::string_view to_string(Task t) {
  switch (t) {
    case Task::kSentence: return "sentence";
    case Task::kWord: return "word";
    case Task::kEmotion: return "emotion";
  }
  return "?";
}

Task task_from_string(std::string_view name) {
  for (Task t : kAllTasks)
    if (to_string(t) == name) return t;
  throw Error(Errc::kConfigError, "unknown task '" + std::string(name) + "'");
}

TaskSet::TaskSet(std::initializer_list<Task> tasks)
    : TaskSet(std::span<const Task>(tasks.begin(), tasks.size())) {}

TaskSet::TaskSet(std::span<const Task> tasks) {
  for (Task t : tasks) mask_[static_cast<std::size_t>(t)] = true;
  for (Task t : kAllTasks)
    if (contains(t)) tasks_.push_back(t);
}

std::size_t TaskSet::index_of(Task t) const {
  auto it = std::find(tasks_.begin(), tasks_.end(), t);
  if (it == tasks_.end()) throw std::out_of_range("task not enabled");
  return static_cast<std::size_t>(it - tasks_.begin());
}

void ModelConfig::validate() const {
  if (vocab_size < 4) throw Error(Errc::kConfigError, "vocab_size must cover the special tokens");
  if (d_model == 0 || n_layers == 0 || max_len < 3 || n_emotions < 2)
    throw Error(Errc::kConfigError, "model dimensions must be positive (max_len >= 3)");
  if (enabled_tasks.empty()) throw Error(Errc::kConfigError, "enabled_tasks must not be empty");
}

nlohmann::json to_json(const ModelConfig& cfg) {
  nlohmann::json tasks = nlohmann::json::array();
  for (Task t : cfg.enabled_tasks) tasks.push_back(to_string(t));
  return {{"vocab_size", cfg.vocab_size}, {"d_model", cfg.d_model},
          {"n_layers", cfg.n_layers},     {"d_ff", cfg.d_ff},
          {"max_len", cfg.max_len},       {"n_emotions", cfg.n_emotions},
          {"pooling", cfg.pooling == Pooling::kMax ? "max" : "mean"},
          {"enabled_tasks", tasks}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  try {
    cfg.vocab_size = j.value("vocab_size", cfg.vocab_size);
    cfg.d_model = j.value("d_model", cfg.d_model);
    cfg.n_layers = j.value("n_layers", cfg.n_layers);
    cfg.d_ff = j.value("d_ff", cfg.d_ff);
    cfg.max_len = j.value("max_len", cfg.max_len);
    cfg.n_emotions = j.value("n_emotions", cfg.n_emotions);
    const std::string pooling = j.value("pooling", std::string("max"));
    if (pooling == "max") {
      cfg.pooling = Pooling::kMax;
    } else if (pooling == "mean") {
      cfg.pooling = Pooling::kMean;
    } else {
      throw Error(Errc::kConfigError, "pooling must be 'max' or 'mean'");
    }
    if (j.contains("enabled_tasks")) {
      std::vector<Task> tasks;
      for (const auto& t : j.at("enabled_tasks")) tasks.push_back(task_from_string(t.get<std::string>()));
      cfg.enabled_tasks = TaskSet(tasks);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::kConfigError, std::string("model config: ") + e.what());
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Vocabulary and encoding

Vocabulary::Vocabulary() {
  for (const char* special : {"[PAD]", "[UNK]", "[CLS]", "[SEP]"}) add(special);
}

void Vocabulary::add(const std::string& token) {
  if (index_.contains(token)) return;
  index_.emplace(token, static_cast<std::int32_t>(tokens_.size()));
  tokens_.push_back(token);
}

Vocabulary Vocabulary::build(std::span<const data::QEInstance> instances) {
  Vocabulary v;
  for (const auto& inst : instances) {
    for (const auto& t : inst.src_tokens) v.add(t);
    for (const auto& t : inst.tgt_tokens) v.add(t);
  }
  return v;
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  Vocabulary v;
  if (tokens.size() < 4 || tokens[0] != "[PAD]" || tokens[1] != "[UNK]" || tokens[2] != "[CLS]" ||
      tokens[3] != "[SEP]") {
    throw Error(Errc::kSchemaError, "vocabulary must start with [PAD] [UNK] [CLS] [SEP]");
  }
  for (std::size_t i = 4; i < tokens.size(); ++i) v.add(tokens[i]);
  if (v.size() != tokens.size()) throw Error(Errc::kSchemaError, "vocabulary has duplicates");
  return v;
}

std::int32_t Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnkId : it->second;
}

std::size_t EncodedBatch::real_length(std::size_t b) const {
  std::size_t n = 0;
  while (n < length && !is_pad(b, n)) ++n;
  return n;
}

EncodedBatch EncodedBatch::padded(std::size_t extra) const {
  EncodedBatch out;
  out.batch_size = batch_size;
  out.length = length + extra;
  out.ids.assign(out.batch_size * out.length, kPadId);
  out.positions.assign(out.batch_size * out.length, Position::kPad);
  for (std::size_t b = 0; b < batch_size; ++b) {
    std::copy_n(ids.begin() + static_cast<std::ptrdiff_t>(b * length), length,
                out.ids.begin() + static_cast<std::ptrdiff_t>(b * out.length));
    std::copy_n(positions.begin() + static_cast<std::ptrdiff_t>(b * length), length,
                out.positions.begin() + static_cast<std::ptrdiff_t>(b * out.length));
  }
  return out;
}

void EncodedBatch::validate() const {
  if (ids.size() != batch_size * length || positions.size() != batch_size * length)
    throw std::invalid_argument("EncodedBatch: storage does not match batch_size x length");
  for (std::size_t b = 0; b < batch_size; ++b) {
    const Position* row = positions.data() + b * length;
    std::size_t p = 0;
    if (length == 0 || row[p++] != Position::kCls || ids[b * length] != kClsId)
      throw std::invalid_argument("EncodedBatch: row must start with [CLS]");
    while (p < length && row[p] == Position::kSrc) ++p;
    if (p >= length || row[p++] != Position::kSep)
      throw std::invalid_argument("EncodedBatch: missing first [SEP]");
    while (p < length && row[p] == Position::kTgt) ++p;
    if (p >= length || row[p++] != Position::kSep)
      throw std::invalid_argument("EncodedBatch: missing second [SEP]");
    while (p < length && row[p] == Position::kPad) ++p;
    if (p != length) throw std::invalid_argument("EncodedBatch: tokens after padding");
  }
}

EncodedBatch encode_batch(std::span<const data::QEInstance> instances, const Vocabulary& vocab,
                          std::size_t max_len) {
  EncodedBatch batch;
  batch.batch_size = instances.size();
  for (const auto& inst : instances) {
    const std::size_t n = inst.src_tokens.size() + inst.tgt_tokens.size() + 3;
    if (n > max_len) {
      throw Error(Errc::kSequenceTooLong, "sequence of " + std::to_string(n) +
                                              " tokens exceeds max_len " + std::to_string(max_len));
    }
    batch.length = std::max(batch.length, n);
  }
  batch.ids.assign(batch.batch_size * batch.length, kPadId);
  batch.positions.assign(batch.batch_size * batch.length, Position::kPad);
  for (std::size_t b = 0; b < instances.size(); ++b) {
    std::int32_t* ids = batch.ids.data() + b * batch.length;
    Position* pos = batch.positions.data() + b * batch.length;
    std::size_t p = 0;
    auto put = [&](std::int32_t id, Position kind) {
      ids[p] = id;
      pos[p] = kind;
      ++p;
    };
    put(kClsId, Position::kCls);
    for (const auto& t : instances[b].src_tokens) put(vocab.id(t), Position::kSrc);
    put(kSepId, Position::kSep);
    for (const auto& t : instances[b].tgt_tokens) put(vocab.id(t), Position::kTgt);
    put(kSepId, Position::kSep);
  }
  return batch;
}

ScoreNormalizer ScoreNormalizer::fit(std::span<const data::QEInstance> instances) {
  ScoreNormalizer n;
  if (instances.empty()) return n;
  double sum = 0.0;
  for (const auto& i : instances) sum += i.qe_score;
  n.mean = sum / static_cast<double>(instances.size());
  double ss = 0.0;
  for (const auto& i : instances) ss += (i.qe_score - n.mean) * (i.qe_score - n.mean);
  const double sd = std::sqrt(ss / static_cast<double>(instances.size()));
  n.stddev = sd > 0.0 ? sd : 1.0;
  return n;
}

TaskTargets make_targets(std::span<const data::QEInstance> instances,
                         const ScoreNormalizer& normalizer) {
  TaskTargets t;
  for (const auto& inst : instances) {
    t.qe_score.push_back(normalizer.normalize(inst.qe_score));
    std::vector<std::uint8_t> labels;
    labels.reserve(inst.src_labels.size() + inst.tgt_labels.size());
    for (auto l : inst.src_labels) labels.push_back(l == data::WordLabel::kBad);
    for (auto l : inst.tgt_labels) labels.push_back(l == data::WordLabel::kBad);
    t.word_labels.push_back(std::move(labels));
    t.emotion.push_back(static_cast<std::size_t>(inst.emotion));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

struct LayerOffsets {
  std::size_t wq, bq, wk, bk, wv, bv, wo, bo, w1, b1, w2, b2;
};

struct Offsets {
  std::size_t tok = 0;
  std::size_t pos = 0;
  std::vector<LayerOffsets> layers;
};

Offsets offsets_of(const ModelConfig& cfg) {
  const std::size_t d = cfg.d_model;
  const std::size_t f = cfg.ffn_width();
  Offsets o;
  std::size_t at = 0;
  o.tok = at;
  at += cfg.vocab_size * d;
  o.pos = at;
  at += cfg.max_len * d;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    LayerOffsets lo{};
    auto take = [&](std::size_t n) {
      const std::size_t here = at;
      at += n;
      return here;
    };
    lo.wq = take(d * d);
    lo.bq = take(d);
    lo.wk = take(d * d);
    lo.bk = take(d);
    lo.wv = take(d * d);
    lo.bv = take(d);
    lo.wo = take(d * d);
    lo.bo = take(d);
    lo.w1 = take(d * f);
    lo.b1 = take(f);
    lo.w2 = take(f * d);
    lo.b2 = take(d);
    o.layers.push_back(lo);
  }
  return o;
}

}  // namespace

std::vector<TensorSlot> shared_layout(const ModelConfig& cfg) {
  const std::size_t d = cfg.d_model;
  const std::size_t f = cfg.ffn_width();
  std::vector<TensorSlot> slots;
  std::size_t at = 0;
  auto add = [&](std::string name, std::size_t rows, std::size_t cols) {
    slots.push_back({std::move(name), rows, cols, at});
    at += rows * cols;
  };
  add("tok_emb", cfg.vocab_size, d);
  add("pos_emb", cfg.max_len, d);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    add(p + "wq", d, d);
    add(p + "bq", 1, d);
    add(p + "wk", d, d);
    add(p + "bk", 1, d);
    add(p + "wv", d, d);
    add(p + "bv", 1, d);
    add(p + "wo", d, d);
    add(p + "bo", 1, d);
    add(p + "w1", d, f);
    add(p + "b1", 1, f);
    add(p + "w2", f, d);
    add(p + "b2", 1, d);
  }
  return slots;
}

std::size_t shared_size(const ModelConfig& cfg) {
  const auto slots = shared_layout(cfg);
  return slots.back().offset + slots.back().size();
}

std::size_t head_outputs(const ModelConfig& cfg, Task t) {
  switch (t) {
    case Task::kSentence: return 1;
    case Task::kWord: return 2;
    case Task::kEmotion: return cfg.n_emotions;
  }
  return 0;
}

std::size_t head_size(const ModelConfig& cfg, Task t) {
  return (cfg.d_model + 1) * head_outputs(cfg, t);
}

Parameters init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> embed(0.0, 0.02);

  auto xavier = [&](std::span<double> w, std::size_t fan_in, std::size_t fan_out) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (double& x : w) x = u(rng);
  };

  Parameters p;
  p.config = cfg;
  p.shared.assign(shared_size(cfg), 0.0);
  for (const auto& slot : shared_layout(cfg)) {
    std::span<double> w(p.shared.data() + slot.offset, slot.size());
    if (slot.name == "tok_emb" || slot.name == "pos_emb") {
      for (double& x : w) x = embed(rng);
    } else if (slot.rows > 1) {
      xavier(w, slot.rows, slot.cols);
    }
  }
  for (Task t : kAllTasks) {
    const std::size_t out = head_outputs(cfg, t);
    Vector& h = p.head(t);
    h.assign(head_size(cfg, t), 0.0);
    xavier(std::span<double>(h.data(), cfg.d_model * out), cfg.d_model, out);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Dense kernels on row-major buffers

namespace {

// C[n x m] += A[n x k] * B[k x m]
void gemm_nn(std::size_t n, std::size_t k, std::size_t m, const double* a, const double* b,
             double* c) {
  for (std::size_t i = 0; i < n; ++i) {
    double* ci = c + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      const double* bp = b + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += aip * bp[j];
    }
  }
}

// C[k x m] += A[n x k]^T * B[n x m]
void gemm_tn(std::size_t n, std::size_t k, std::size_t m, const double* a, const double* b,
             double* c) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* bi = b + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      double* cp = c + p * m;
      for (std::size_t j = 0; j < m; ++j) cp[j] += aip * bi[j];
    }
  }
}

// C[n x k] += A[n x m] * B[k x m]^T
void gemm_nt(std::size_t n, std::size_t m, std::size_t k, const double* a, const double* b,
             double* c) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = a + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * m;
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += ai[j] * bp[j];
      c[i * k + p] += s;
    }
  }
}

// Y[n x m] = X W + b
void affine(std::size_t n, std::size_t k, std::size_t m, const double* x, const double* w,
            const double* bias, Vector& y) {
  y.assign(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i) std::copy_n(bias, m, y.data() + i * m);
  gemm_nn(n, k, m, x, w, y.data());
}

void add_colsum(std::size_t n, std::size_t m, const double* x, double* out) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[j] += x[i * m + j];
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

double gelu(double u) { return 0.5 * u * (1.0 + std::tanh(kGeluC * (u + kGeluA * u * u * u))); }

double gelu_grad(double u) {
  const double t = std::tanh(kGeluC * (u + kGeluA * u * u * u));
  return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * u * u);
}

// Writes log-softmax of logits into log_probs and softmax into probs.
void log_softmax(std::span<const double> logits, std::span<double> log_probs,
                 std::span<double> probs) {
  const double top = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - top);
  const double lse = top + std::log(z);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    log_probs[i] = logits[i] - lse;
    probs[i] = std::exp(log_probs[i]);
  }
}

void encoder_forward(const Parameters& params, const Offsets& off, SequenceCache& seq) {
  const ModelConfig& cfg = params.config;
  const std::size_t n = seq.n;
  const std::size_t d = cfg.d_model;
  const std::size_t f = cfg.ffn_width();
  const double* theta = params.shared.data();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  Vector x(n * d);
  for (std::size_t p = 0; p < n; ++p) {
    const double* te = theta + off.tok + static_cast<std::size_t>(seq.ids[p]) * d;
    const double* pe = theta + off.pos + p * d;
    for (std::size_t j = 0; j < d; ++j) x[p * d + j] = te[j] + pe[j];
  }

  seq.layers.resize(cfg.n_layers);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const LayerOffsets& lo = off.layers[l];
    LayerCache& c = seq.layers[l];
    c.x = x;
    affine(n, d, d, x.data(), theta + lo.wq, theta + lo.bq, c.q);
    affine(n, d, d, x.data(), theta + lo.wk, theta + lo.bk, c.k);
    affine(n, d, d, x.data(), theta + lo.wv, theta + lo.bv, c.v);

    c.attn.assign(n * n, 0.0);
    gemm_nt(n, d, n, c.q.data(), c.k.data(), c.attn.data());
    for (std::size_t i = 0; i < n; ++i) {
      double* row = c.attn.data() + i * n;
      double top = -INFINITY;
      for (std::size_t j = 0; j < n; ++j) {
        row[j] *= scale;
        top = std::max(top, row[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        row[j] = std::exp(row[j] - top);
        z += row[j];
      }
      for (std::size_t j = 0; j < n; ++j) row[j] /= z;
    }
    c.ctx.assign(n * d, 0.0);
    gemm_nn(n, n, d, c.attn.data(), c.v.data(), c.ctx.data());

    affine(n, d, d, c.ctx.data(), theta + lo.wo, theta + lo.bo, c.h);
    for (std::size_t i = 0; i < n * d; ++i) c.h[i] += x[i];

    affine(n, d, f, c.h.data(), theta + lo.w1, theta + lo.b1, c.u);
    c.act.resize(n * f);
    for (std::size_t i = 0; i < n * f; ++i) c.act[i] = gelu(c.u[i]);

    affine(n, f, d, c.act.data(), theta + lo.w2, theta + lo.b2, x);
    for (std::size_t i = 0; i < n * d; ++i) x[i] += c.h[i];
  }
  seq.out = std::move(x);
}

// Accumulates d(loss)/d(theta_shared) into grad given d(loss)/d(out).
void encoder_backward(const Parameters& params, const Offsets& off, const SequenceCache& seq,
                      Vector d_out, double* grad) {
  const ModelConfig& cfg = params.config;
  const std::size_t n = seq.n;
  const std::size_t d = cfg.d_model;
  const std::size_t f = cfg.ffn_width();
  const double* theta = params.shared.data();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  Vector dx = std::move(d_out);
  Vector dh, d_act, d_ctx, d_attn, dq, dk, dv;
  for (std::size_t l = cfg.n_layers; l-- > 0;) {
    const LayerOffsets& lo = off.layers[l];
    const LayerCache& c = seq.layers[l];

    // y = h + gelu(h W1 + b1) W2 + b2
    dh = dx;
    d_act.assign(n * f, 0.0);
    gemm_nt(n, d, f, dx.data(), theta + lo.w2, d_act.data());
    gemm_tn(n, f, d, c.act.data(), dx.data(), grad + lo.w2);
    add_colsum(n, d, dx.data(), grad + lo.b2);
    for (std::size_t i = 0; i < n * f; ++i) d_act[i] *= gelu_grad(c.u[i]);
    gemm_nt(n, f, d, d_act.data(), theta + lo.w1, dh.data());
    gemm_tn(n, d, f, c.h.data(), d_act.data(), grad + lo.w1);
    add_colsum(n, f, d_act.data(), grad + lo.b1);

    // h = x + ctx Wo + bo
    dx = dh;
    d_ctx.assign(n * d, 0.0);
    gemm_nt(n, d, d, dh.data(), theta + lo.wo, d_ctx.data());
    gemm_tn(n, d, d, c.ctx.data(), dh.data(), grad + lo.wo);
    add_colsum(n, d, dh.data(), grad + lo.bo);

    // ctx = softmax(q k^T / sqrt(d)) v
    d_attn.assign(n * n, 0.0);
    gemm_nt(n, d, n, d_ctx.data(), c.v.data(), d_attn.data());
    dv.assign(n * d, 0.0);
    gemm_tn(n, n, d, c.attn.data(), d_ctx.data(), dv.data());
    for (std::size_t i = 0; i < n; ++i) {
      const double* a = c.attn.data() + i * n;
      double* da = d_attn.data() + i * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += a[j] * da[j];
      for (std::size_t j = 0; j < n; ++j) da[j] = a[j] * (da[j] - s) * scale;
    }
    dq.assign(n * d, 0.0);
    gemm_nn(n, n, d, d_attn.data(), c.k.data(), dq.data());
    dk.assign(n * d, 0.0);
    gemm_tn(n, n, d, d_attn.data(), c.q.data(), dk.data());

    // q, k, v = x W + b
    gemm_nt(n, d, d, dq.data(), theta + lo.wq, dx.data());
    gemm_nt(n, d, d, dk.data(), theta + lo.wk, dx.data());
    gemm_nt(n, d, d, dv.data(), theta + lo.wv, dx.data());
    gemm_tn(n, d, d, c.x.data(), dq.data(), grad + lo.wq);
    gemm_tn(n, d, d, c.x.data(), dk.data(), grad + lo.wk);
    gemm_tn(n, d, d, c.x.data(), dv.data(), grad + lo.wv);
    add_colsum(n, d, dq.data(), grad + lo.bq);
    add_colsum(n, d, dk.data(), grad + lo.bk);
    add_colsum(n, d, dv.data(), grad + lo.bv);
  }

  for (std::size_t p = 0; p < n; ++p) {
    double* gt = grad + off.tok + static_cast<std::size_t>(seq.ids[p]) * d;
    double* gp = grad + off.pos + p * d;
    for (std::size_t j = 0; j < d; ++j) {
      gt[j] += dx[p * d + j];
      gp[j] += dx[p * d + j];
    }
  }
}

// logits[out] = state[d] . W[d x out] + bias
void head_logits(const Vector& head, std::size_t d, std::size_t out, const double* state,
                 double* logits) {
  const double* bias = head.data() + d * out;
  std::copy_n(bias, out, logits);
  gemm_nn(1, d, out, state, head.data(), logits);
}

}  // namespace

ForwardResult forward(const Parameters& params, const EncodedBatch& batch) {
  const ModelConfig& cfg = params.config;
  if (batch.length > cfg.max_len) {
    throw Error(Errc::kSequenceTooLong, "batch length " + std::to_string(batch.length) +
                                            " exceeds max_len " + std::to_string(cfg.max_len));
  }
  batch.validate();
  const Offsets off = offsets_of(cfg);
  const std::size_t d = cfg.d_model;
  const TaskSet& tasks = cfg.enabled_tasks;

  ForwardResult r;
  r.cache.sequences.resize(batch.batch_size);
  Predictions& pred = r.predictions;
  for (std::size_t b = 0; b < batch.batch_size; ++b) {
    SequenceCache& seq = r.cache.sequences[b];
    seq.n = batch.real_length(b);
    seq.ids.assign(batch.ids.begin() + static_cast<std::ptrdiff_t>(b * batch.length),
                   batch.ids.begin() + static_cast<std::ptrdiff_t>(b * batch.length + seq.n));
    for (std::int32_t id : seq.ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size)
        throw std::out_of_range("token id outside the vocabulary");
    }
    for (std::size_t p = 0; p < seq.n; ++p) {
      const Position kind = batch.positions[b * batch.length + p];
      if (kind == Position::kSrc || kind == Position::kTgt) seq.word_positions.push_back(p);
    }
    encoder_forward(params, off, seq);

    if (tasks.contains(Task::kSentence)) {
      double s = 0.0;
      head_logits(params.head(Task::kSentence), d, 1, seq.out.data(), &s);
      pred.sentence.push_back(s);
    }
    if (tasks.contains(Task::kWord)) {
      const std::size_t nw = seq.word_positions.size();
      Vector probs(nw * 2), logps(nw * 2);
      for (std::size_t i = 0; i < nw; ++i) {
        double logits[2];
        head_logits(params.head(Task::kWord), d, 2, seq.out.data() + seq.word_positions[i] * d,
                    logits);
        log_softmax(logits, std::span<double>(logps.data() + 2 * i, 2),
                    std::span<double>(probs.data() + 2 * i, 2));
      }
      pred.word_probs.push_back(std::move(probs));
      pred.word_log_probs.push_back(std::move(logps));
    }
    if (tasks.contains(Task::kEmotion)) {
      seq.pooled.assign(d, 0.0);
      if (cfg.pooling == Pooling::kMax) {
        seq.pool_argmax.assign(d, 0);
        for (std::size_t j = 0; j < d; ++j) {
          double best = seq.out[j];
          for (std::size_t p = 1; p < seq.n; ++p) {
            if (seq.out[p * d + j] > best) {
              best = seq.out[p * d + j];
              seq.pool_argmax[j] = p;
            }
          }
          seq.pooled[j] = best;
        }
      } else {
        add_colsum(seq.n, d, seq.out.data(), seq.pooled.data());
        for (double& x : seq.pooled) x /= static_cast<double>(seq.n);
      }
      const std::size_t k = cfg.n_emotions;
      Vector logits(k), probs(k), logps(k);
      head_logits(params.head(Task::kEmotion), d, k, seq.pooled.data(), logits.data());
      log_softmax(logits, logps, probs);
      pred.emotion_probs.push_back(std::move(probs));
      pred.emotion_log_probs.push_back(std::move(logps));
    }
  }
  return r;
}

double TaskLosses::get(Task t) const {
  switch (t) {
    case Task::kSentence: return sentence;
    case Task::kWord: return word;
    case Task::kEmotion: return emotion;
  }
  return 0.0;
}

double& TaskLosses::get(Task t) {
  switch (t) {
    case Task::kSentence: return sentence;
    case Task::kWord: return word;
    case Task::kEmotion: return emotion;
  }
  throw std::logic_error("unhandled task");
}

namespace {

double clamped_nll(double log_p) { return -std::max(log_p, kLogProbFloor); }

}  // namespace

TaskLosses task_losses(const Predictions& predictions, const TaskTargets& targets,
                       const TaskSet& tasks) {
  TaskLosses out;
  if (tasks.contains(Task::kSentence)) {
    const std::size_t b = predictions.sentence.size();
    if (b != targets.qe_score.size()) throw std::invalid_argument("sentence shape mismatch");
    for (std::size_t i = 0; i < b; ++i) {
      const double e = predictions.sentence[i] - targets.qe_score[i];
      out.sentence += e * e;
    }
    if (b > 0) out.sentence /= static_cast<double>(b);
  }
  if (tasks.contains(Task::kWord)) {
    const std::size_t b = predictions.word_log_probs.size();
    if (b != targets.word_labels.size()) throw std::invalid_argument("word shape mismatch");
    for (std::size_t i = 0; i < b; ++i) {
      const auto& labels = targets.word_labels[i];
      if (labels.size() * 2 != predictions.word_log_probs[i].size())
        throw std::invalid_argument("word label count mismatch");
      if (labels.empty()) continue;
      double s = 0.0;
      for (std::size_t p = 0; p < labels.size(); ++p)
        s += clamped_nll(predictions.word_log_probs[i][2 * p + labels[p]]);
      out.word += s / static_cast<double>(labels.size());
    }
    if (b > 0) out.word /= static_cast<double>(b);
  }
  if (tasks.contains(Task::kEmotion)) {
    const std::size_t b = predictions.emotion_log_probs.size();
    if (b != targets.emotion.size()) throw std::invalid_argument("emotion shape mismatch");
    for (std::size_t i = 0; i < b; ++i)
      out.emotion += clamped_nll(predictions.emotion_log_probs[i][targets.emotion[i]]);
    if (b > 0) out.emotion /= static_cast<double>(b);
  }
  return out;
}

agg::GradientMatrix TaskGradients::matrix() const {
  return agg::GradientMatrix::from_columns(shared);
}

TaskGradients backward_per_task(const Parameters& params, const ForwardResult& fwd,
                                const TaskTargets& targets) {
  const ModelConfig& cfg = params.config;
  const Offsets off = offsets_of(cfg);
  const std::size_t d = cfg.d_model;
  const Predictions& pred = fwd.predictions;
  const auto& seqs = fwd.cache.sequences;
  const std::size_t batch = seqs.size();
  const double inv_b = batch > 0 ? 1.0 / static_cast<double>(batch) : 0.0;

  TaskGradients g;
  g.tasks = cfg.enabled_tasks;
  for (Task t : g.tasks) {
    g.shared.emplace_back(params.shared.size(), 0.0);
    g.heads[static_cast<std::size_t>(t)].assign(head_size(cfg, t), 0.0);
  }

  for (Task t : g.tasks) {
    double* shared_grad = g.shared[g.tasks.index_of(t)].data();
    Vector& head_grad = g.heads[static_cast<std::size_t>(t)];
    const Vector& head = params.head(t);
    const std::size_t out = head_outputs(cfg, t);
    double* dw = head_grad.data();
    double* db = head_grad.data() + d * out;

    for (std::size_t b = 0; b < batch; ++b) {
      const SequenceCache& seq = seqs[b];
      Vector d_out(seq.n * d, 0.0);
      bool any = false;

      if (t == Task::kSentence) {
        const double c = 2.0 * (pred.sentence[b] - targets.qe_score[b]) * inv_b;
        if (c != 0.0) {
          any = true;
          for (std::size_t j = 0; j < d; ++j) {
            d_out[j] += c * head[j];
            dw[j] += c * seq.out[j];
          }
          db[0] += c;
        }
      } else if (t == Task::kWord) {
        const auto& labels = targets.word_labels[b];
        if (labels.empty()) continue;
        const double w = inv_b / static_cast<double>(labels.size());
        for (std::size_t i = 0; i < labels.size(); ++i) {
          const double* logp = pred.word_log_probs[b].data() + 2 * i;
          if (logp[labels[i]] < kLogProbFloor) continue;
          const double* p = pred.word_probs[b].data() + 2 * i;
          double dl[2] = {p[0] * w, p[1] * w};
          dl[labels[i]] -= w;
          const std::size_t pos = seq.word_positions[i];
          const double* state = seq.out.data() + pos * d;
          for (std::size_t j = 0; j < d; ++j) {
            d_out[pos * d + j] += head[2 * j] * dl[0] + head[2 * j + 1] * dl[1];
            dw[2 * j] += state[j] * dl[0];
            dw[2 * j + 1] += state[j] * dl[1];
          }
          db[0] += dl[0];
          db[1] += dl[1];
          any = true;
        }
      } else {
        const std::size_t y = targets.emotion[b];
        if (pred.emotion_log_probs[b][y] < kLogProbFloor) continue;
        Vector dl(out);
        for (std::size_t c = 0; c < out; ++c) dl[c] = pred.emotion_probs[b][c] * inv_b;
        dl[y] -= inv_b;
        Vector d_pooled(d, 0.0);
        gemm_nt(1, out, d, dl.data(), head.data(), d_pooled.data());
        gemm_tn(1, d, out, seq.pooled.data(), dl.data(), dw);
        for (std::size_t c = 0; c < out; ++c) db[c] += dl[c];
        if (cfg.pooling == Pooling::kMax) {
          for (std::size_t j = 0; j < d; ++j) d_out[seq.pool_argmax[j] * d + j] += d_pooled[j];
        } else {
          const double inv_n = 1.0 / static_cast<double>(seq.n);
          for (std::size_t p = 0; p < seq.n; ++p)
            for (std::size_t j = 0; j < d; ++j) d_out[p * d + j] += d_pooled[j] * inv_n;
        }
        any = true;
      }
      if (any) encoder_backward(params, off, seq, std::move(d_out), shared_grad);
    }
  }
  return g;
}

}  // namespace mtlqe::model
