// SPDX-License-Identifier: Apache-2.0
//
// Synthetic QE corpus. Every source token k has a fixed translation t<k>;
// errors replace a target token either with a token from a per-severity
// corruption pool or with a wrong translation. Annotations record each
// replacement, so the derived score and labels match the planted errors.

#include <random>

#include "mtlqe/data.hpp"
#include "mtlqe/error.hpp"

namespace mtlqe::data {

void SyntheticSpec::validate() const {
  auto rate_ok = [](double r) { return r >= 0.0 && r <= 1.0; };
  if (n_instances == 0) throw Error(Errc::kConfigError, "synthetic n_instances must be > 0");
  if (vocab_size < 2) throw Error(Errc::kConfigError, "synthetic vocab_size must be >= 2");
  if (min_length < 1 || max_length < min_length)
    throw Error(Errc::kConfigError, "synthetic lengths need 1 <= min_length <= max_length");
  if (markers_per_emotion < 1 || corruption_pool_size < 1)
    throw Error(Errc::kConfigError, "synthetic marker and pool sizes must be >= 1");
  if (!rate_ok(minor_rate) || !rate_ok(major_rate) || !rate_ok(critical_rate) ||
      !rate_ok(minor_rate + major_rate + critical_rate) || !rate_ok(mistranslation_share))
    throw Error(Errc::kConfigError, "synthetic rates must lie in [0,1]");
  double total = 0.0;
  for (double p : emotion_probs) {
    if (p < 0.0) throw Error(Errc::kConfigError, "emotion probabilities must be >= 0");
    total += p;
  }
  if (!(total > 0.0)) throw Error(Errc::kConfigError, "emotion probabilities sum to zero");
}

nlohmann::json to_json(const SyntheticSpec& s) {
  return {{"n_instances", s.n_instances},
          {"vocab_size", s.vocab_size},
          {"min_length", s.min_length},
          {"max_length", s.max_length},
          {"markers_per_emotion", s.markers_per_emotion},
          {"corruption_pool_size", s.corruption_pool_size},
          {"minor_rate", s.minor_rate},
          {"major_rate", s.major_rate},
          {"critical_rate", s.critical_rate},
          {"mistranslation_share", s.mistranslation_share},
          {"emotion_probs", s.emotion_probs},
          {"seed", s.seed}};
}

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(Errc::kConfigError, "synthetic config must be an object");
  SyntheticSpec s;
  try {
    s.n_instances = j.value("n_instances", s.n_instances);
    s.vocab_size = j.value("vocab_size", s.vocab_size);
    s.min_length = j.value("min_length", s.min_length);
    s.max_length = j.value("max_length", s.max_length);
    s.markers_per_emotion = j.value("markers_per_emotion", s.markers_per_emotion);
    s.corruption_pool_size = j.value("corruption_pool_size", s.corruption_pool_size);
    s.minor_rate = j.value("minor_rate", s.minor_rate);
    s.major_rate = j.value("major_rate", s.major_rate);
    s.critical_rate = j.value("critical_rate", s.critical_rate);
    s.mistranslation_share = j.value("mistranslation_share", s.mistranslation_share);
    s.emotion_probs = j.value("emotion_probs", s.emotion_probs);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::kConfigError, std::string("synthetic config: ") + e.what());
  }
  for (const auto& [key, _] : j.items()) {
    if (!to_json(SyntheticSpec{}).contains(key))
      throw Error(Errc::kConfigError, "unknown synthetic config field '" + key + "'");
  }
  s.validate();
  return s;
}

std::vector<QEInstance> generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> length(spec.min_length, spec.max_length);
  std::uniform_int_distribution<std::size_t> word(0, spec.vocab_size - 1);
  std::uniform_int_distribution<std::size_t> marker(0, spec.markers_per_emotion - 1);
  std::uniform_int_distribution<std::size_t> pool(0, spec.corruption_pool_size - 1);
  std::discrete_distribution<std::size_t> emotion(spec.emotion_probs.begin(),
                                                  spec.emotion_probs.end());

  std::vector<QEInstance> out;
  out.reserve(spec.n_instances);
  for (std::size_t n = 0; n < spec.n_instances; ++n) {
    QEInstance inst;
    inst.emotion = kAllEmotions[emotion(rng)];
    const std::size_t len = length(rng);
    const std::size_t marker_pos = std::uniform_int_distribution<std::size_t>(0, len - 1)(rng);
    const std::string emo(to_string(inst.emotion));

    std::vector<std::size_t> words(len);
    for (std::size_t p = 0; p < len; ++p) {
      if (p == marker_pos) {
        const std::string m = emo + "_" + std::to_string(marker(rng));
        inst.src_tokens.push_back("s_" + m);
        inst.tgt_tokens.push_back("t_" + m);
      } else {
        words[p] = word(rng);
        inst.src_tokens.push_back("s" + std::to_string(words[p]));
        inst.tgt_tokens.push_back("t" + std::to_string(words[p]));
      }
    }

    for (std::size_t p = 0; p < len; ++p) {
      const double u = unit(rng);
      Severity sev;
      if (u < spec.critical_rate) {
        sev = Severity::kCritical;
      } else if (u < spec.critical_rate + spec.major_rate) {
        sev = Severity::kMajor;
      } else if (u < spec.critical_rate + spec.major_rate + spec.minor_rate) {
        sev = Severity::kMinor;
      } else {
        continue;
      }
      if (unit(rng) < spec.mistranslation_share) {
        std::size_t wrong = word(rng);
        if (p != marker_pos && wrong == words[p]) wrong = (wrong + 1) % spec.vocab_size;
        inst.tgt_tokens[p] = "t" + std::to_string(wrong);
      } else {
        inst.tgt_tokens[p] = "x_" + std::string(to_string(sev)) + "_" + std::to_string(pool(rng));
      }
      inst.errors.push_back({sev, TextSide::kTarget, p, p + 1});
    }
    derive_fields(inst);
    out.push_back(std::move(inst));
  }
  return out;
}

}  // namespace mtlqe::data
