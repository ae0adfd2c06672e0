#include "pianofill/augment.hpp"

#include <algorithm>

namespace pianofill {

AugmentParams AugmentParams::sample(Rng& rng) {
  const AugmentRanges r;
  AugmentParams p;
  p.time_dilation = rng.uniform(r.dilation_lo, r.dilation_hi);
  p.velocity_shift = static_cast<int>(rng.uniform_int(-r.velocity_shift_max, r.velocity_shift_max));
  p.transposition = static_cast<int>(rng.uniform_int(-r.transposition_max, r.transposition_max));
  return p;
}

TokenSequence apply_augmentation(const TokenSequence& tokens, const AugmentParams& params) {
  const DecodedSequence decoded = decode_with_tail(tokens);
  Performance out;
  out.notes.reserve(decoded.performance.size());
  for (const NoteEvent& n : decoded.performance.notes) {
    const int pitch = n.pitch + params.transposition;
    if (pitch < kLowestPitch || pitch > kHighestPitch) continue;
    out.notes.push_back({pitch, std::clamp(n.velocity + params.velocity_shift, 0, 127),
                         n.onset_s * params.time_dilation, n.duration_s * params.time_dilation});
  }
  out.sort();
  // A dropped final note hands its trailing gap to the new last note.
  double tail = decoded.final_shift_s * params.time_dilation;
  if (!out.empty()) {
    const double end = (decoded.performance.notes.back().onset_s + decoded.final_shift_s) * params.time_dilation;
    tail = std::max(0.0, end - out.notes.back().onset_s);
  }
  return encode(out, {.final_shift_s = tail});
}

TokenSequence augment(const TokenSequence& tokens, Rng& rng) {
  return apply_augmentation(tokens, AugmentParams::sample(rng));
}

}  // namespace pianofill
