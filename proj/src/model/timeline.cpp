#include "pianofill/model/timeline.hpp"

#include "pianofill/encoding.hpp"
#include "pianofill/model/transformer.hpp"

namespace pianofill::model {

std::vector<double> spread_evenly(double lo, double hi, std::size_t n) {
  std::vector<double> out(n);
  for (std::size_t k = 0; k < n; ++k) out[k] = lo + (hi - lo) * (static_cast<double>(k) + 0.5) / static_cast<double>(n);
  return out;
}

std::vector<double> constraint_timeline(const std::vector<int>& constraint_tokens, const std::vector<double>& onsets_s,
                                        double end_s) {
  const std::size_t notes = constraint_tokens.size() / kNumChannels;
  if (onsets_s.size() != notes) throw StructureError("timeline needs one onset per slice");
  enum class Kind { kAnchor, kFree, kPad };
  std::vector<Kind> kind(notes);
  for (std::size_t i = 0; i < notes; ++i) {
    const int* slice = constraint_tokens.data() + i * kNumChannels;
    bool all_free = true, pad = false;
    for (int c = 0; c < kNumChannels; ++c) {
      all_free = all_free && slice[c] == kNoConstraint;
      pad = pad || slice[c] == kPadToken;
    }
    kind[i] = pad ? Kind::kPad : all_free ? Kind::kFree : Kind::kAnchor;
  }

  std::vector<double> note_time(notes, 0.0);
  double lo = 0.0;
  for (std::size_t i = 0; i < notes;) {
    if (kind[i] == Kind::kAnchor) {
      note_time[i] = onsets_s[i];
      const int shift = constraint_tokens[i * kNumChannels + 3];
      lo = shift >= 0 ? onsets_s[i] + TimeQuantizer::dequantize(shift) : onsets_s[i];
      ++i;
    } else if (kind[i] == Kind::kPad) {
      note_time[i] = lo;
      ++i;
    } else {
      std::size_t j = i;
      while (j < notes && kind[j] == Kind::kFree) ++j;
      std::size_t next = j;
      while (next < notes && kind[next] == Kind::kPad) ++next;
      const double hi = next < notes && kind[next] == Kind::kAnchor ? onsets_s[next] : end_s;
      const auto spread = spread_evenly(lo, std::max(lo, hi), j - i);
      for (std::size_t k = i; k < j; ++k) note_time[k] = spread[k - i];
      lo = std::max(lo, hi);
      i = j;
    }
  }

  std::vector<double> out(constraint_tokens.size());
  for (std::size_t t = 0; t < out.size(); ++t) out[t] = note_time[t / kNumChannels];
  return out;
}

}  // namespace pianofill::model
