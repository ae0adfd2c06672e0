#pragma once

#include "pianofill/encoding.hpp"
#include "pianofill/rng.hpp"

namespace pianofill {

/// Training-time perturbations, applied to continuous values before re-quantization.
struct AugmentParams {
  double time_dilation = 1.0;  // multiplies every second-valued attribute
  int velocity_shift = 0;      // added, then clamped to [0, 127]
  int transposition = 0;       // added; notes leaving [21, 108] are dropped

  static AugmentParams sample(Rng& rng);
};

struct AugmentRanges {
  double dilation_lo = 0.9;
  double dilation_hi = 1.1;
  int velocity_shift_max = 20;
  int transposition_max = 6;
};

TokenSequence apply_augmentation(const TokenSequence& tokens, const AugmentParams& params);
TokenSequence augment(const TokenSequence& tokens, Rng& rng);

}  // namespace pianofill
