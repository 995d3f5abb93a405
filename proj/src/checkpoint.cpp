// SPDX-License-Identifier: Apache-2.0

#include "mtlqe/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "mtlqe/error.hpp"
#include "mtlqe/hash.hpp"

namespace mtlqe::model {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

namespace {

void append(std::string& out, const Vector& v) {
  const std::size_t at = out.size();
  out.resize(at + v.size() * sizeof(double));
  std::memcpy(out.data() + at, v.data(), v.size() * sizeof(double));
}

}  // namespace

std::string serialize_parameters(const Parameters& params) {
  std::string out;
  append(out, params.shared);
  for (const Vector& h : params.heads) append(out, h);
  return out;
}

nlohmann::json checkpoint_manifest(const Checkpoint& ckpt, const std::string& binary_name) {
  const ModelConfig& cfg = ckpt.params.config;
  nlohmann::json tensors = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& slot : shared_layout(cfg)) {
    tensors.push_back({{"name", slot.name}, {"block", "shared"}, {"rows", slot.rows},
                       {"cols", slot.cols}, {"offset", slot.offset}});
  }
  offset = shared_size(cfg);
  for (Task t : kAllTasks) {
    const std::size_t out = head_outputs(cfg, t);
    const std::string block = std::string(to_string(t)) + "_head";
    tensors.push_back({{"name", block + ".weight"}, {"block", block}, {"rows", cfg.d_model},
                       {"cols", out}, {"offset", offset}});
    offset += cfg.d_model * out;
    tensors.push_back({{"name", block + ".bias"}, {"block", block}, {"rows", 1}, {"cols", out},
                       {"offset", offset}});
    offset += out;
  }
  const std::string bytes = serialize_parameters(ckpt.params);
  return {{"format", kCheckpointFormat},
          {"dtype", "float64-le"},
          {"binary", binary_name},
          {"binary_sha256", sha256_hex(bytes)},
          {"num_values", offset},
          {"seed", ckpt.seed},
          {"model", to_json(cfg)},
          {"tensors", std::move(tensors)},
          {"vocabulary", ckpt.vocab.tokens()},
          {"score_normalizer", {{"mean", ckpt.normalizer.mean}, {"stddev", ckpt.normalizer.stddev}}}};
}

std::string save_checkpoint(const std::filesystem::path& dir, const std::string& stem,
                            const Checkpoint& ckpt) {
  std::filesystem::create_directories(dir);
  const std::string bin_name = stem + ".bin";
  const std::string bytes = serialize_parameters(ckpt.params);
  {
    std::ofstream out(dir / bin_name, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(Errc::kIoError, "cannot write " + (dir / bin_name).string());
  }
  const nlohmann::json manifest = checkpoint_manifest(ckpt, bin_name);
  std::ofstream out(dir / (stem + ".json"), std::ios::binary);
  out << manifest.dump(2) << '\n';
  if (!out) throw Error(Errc::kIoError, "cannot write checkpoint manifest");
  return manifest["binary_sha256"].get<std::string>();
}

Checkpoint load_checkpoint(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw Error(Errc::kIoError, "cannot open " + manifest_path.string());
  nlohmann::json m;
  try {
    in >> m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::kSchemaError, std::string("checkpoint manifest: ") + e.what());
  }
  if (m.value("format", "") != kCheckpointFormat)
    throw Error(Errc::kSchemaError, "unsupported checkpoint format");

  Checkpoint ckpt;
  ckpt.params.config = model_config_from_json(m.at("model"));
  ckpt.params.config.validate();
  ckpt.seed = m.at("seed").get<std::uint64_t>();
  ckpt.vocab = Vocabulary::from_tokens(m.at("vocabulary").get<std::vector<std::string>>());
  ckpt.normalizer.mean = m.at("score_normalizer").at("mean").get<double>();
  ckpt.normalizer.stddev = m.at("score_normalizer").at("stddev").get<double>();
  if (ckpt.vocab.size() != ckpt.params.config.vocab_size)
    throw Error(Errc::kSchemaError, "vocabulary size disagrees with model config");

  const auto bin_path = manifest_path.parent_path() / m.at("binary").get<std::string>();
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw Error(Errc::kIoError, "cannot open " + bin_path.string());
  const std::string bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  if (sha256_hex(bytes) != m.at("binary_sha256").get<std::string>())
    throw Error(Errc::kSchemaError, "checkpoint binary checksum mismatch");

  const ModelConfig& cfg = ckpt.params.config;
  std::size_t expected = shared_size(cfg);
  for (Task t : kAllTasks) expected += head_size(cfg, t);
  if (bytes.size() != expected * sizeof(double))
    throw Error(Errc::kSchemaError, "checkpoint binary has the wrong length");

  const char* at = bytes.data();
  auto take = [&](Vector& v, std::size_t n) {
    v.resize(n);
    std::memcpy(v.data(), at, n * sizeof(double));
    at += n * sizeof(double);
  };
  take(ckpt.params.shared, shared_size(cfg));
  for (Task t : kAllTasks) take(ckpt.params.head(t), head_size(cfg, t));
  return ckpt;
}

}  // namespace mtlqe::model
