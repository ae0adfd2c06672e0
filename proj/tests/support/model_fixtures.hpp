#pragma once

#include <vector>

#include "pianofill/encoding.hpp"
#include "pianofill/model/transformer.hpp"
#include "pianofill/rng.hpp"

namespace fixtures {

inline std::vector<int> random_tokens(pianofill::Rng& rng, std::size_t notes) {
  std::vector<int> out(notes * pianofill::kNumChannels);
  for (std::size_t t = 0; t < out.size(); ++t) {
    out[t] = static_cast<int>(rng.uniform_int(0, pianofill::alphabet_size(pianofill::channel_at(t)) - 1));
  }
  return out;
}

/// Constraints copied from `targets`, each token freed with probability p_free.
inline pianofill::model::ConstraintSequence random_constraints(pianofill::Rng& rng, const std::vector<int>& targets,
                                                               double p_free) {
  pianofill::model::ConstraintSequence c;
  c.tokens = targets;
  for (auto& tok : c.tokens) {
    if (rng.bernoulli(p_free)) tok = pianofill::model::kNoConstraint;
  }
  c.elapsed_s.resize(targets.size());
  double acc = 0.0;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    if (t > 0 && t % 4 == 0) acc += pianofill::TimeQuantizer::dequantize(targets[t - 1]);
    c.elapsed_s[t] = acc;
  }
  return c;
}

}  // namespace fixtures
