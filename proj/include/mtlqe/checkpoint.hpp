// SPDX-License-Identifier: Apache-2.0
//
// Checkpoints are a flat little-endian float64 vector (shared block, then the
// sentence, word and emotion heads) plus a JSON manifest that records the
// tensor ordering and shapes, the model config, the seed, the vocabulary and
// the sentence-score normalizer.

#ifndef MTLQE_CHECKPOINT_HPP_
#define MTLQE_CHECKPOINT_HPP_

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "mtlqe/model.hpp"

namespace mtlqe::model {

struct Checkpoint {
  Parameters params;
  Vocabulary vocab;
  ScoreNormalizer normalizer;
  std::uint64_t seed = 0;
};

inline constexpr const char* kCheckpointFormat = "mtlqe-checkpoint-v1";

// Raw bytes of the flat parameter vector.
std::string serialize_parameters(const Parameters& params);

nlohmann::json checkpoint_manifest(const Checkpoint& ckpt, const std::string& binary_name);

// Writes <dir>/<stem>.bin and <dir>/<stem>.json; returns the binary's SHA-256.
std::string save_checkpoint(const std::filesystem::path& dir, const std::string& stem,
                            const Checkpoint& ckpt);

// Reads a manifest and the binary it names (resolved relative to the manifest).
// Throws Errc::kSchemaError on shape, format or checksum mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& manifest_path);

}  // namespace mtlqe::model

#endif  // MTLQE_CHECKPOINT_HPP_
