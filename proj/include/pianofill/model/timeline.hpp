#pragma once

#include <cstddef>
#include <vector>

namespace pianofill::model {

/// n points at the bin midpoints of [lo, hi]: lo + (hi - lo) * (k + 0.5) / n.
std::vector<double> spread_evenly(double lo, double hi, std::size_t n);

/// Encoder-side elapsed time per token for a constraint sequence.
///
/// A note is an anchor unless all four of its tokens are NC; anchors keep their
/// true onset. Each run of non-anchor notes is spread evenly between the end of
/// the previous anchor's shift (its onset when that shift is NC, 0 at the
/// start) and the next anchor's onset (`end_s` after the last anchor). PAD
/// slices keep the time reached so far. `onsets_s` holds one entry per slice.
std::vector<double> constraint_timeline(const std::vector<int>& constraint_tokens, const std::vector<double>& onsets_s,
                                        double end_s);

}  // namespace pianofill::model
