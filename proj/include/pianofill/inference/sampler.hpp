#pragma once

#include <span>
#include <vector>

#include "pianofill/rng.hpp"

namespace pianofill::inference {

/// Nucleus distribution: softmax, keep the smallest descending-probability
/// prefix with mass >= p, renormalize. Entries of -inf are excluded.
std::vector<double> top_p_distribution(std::span<const float> logits, double p);

/// Draws from top_p_distribution using one uniform draw of `rng`.
int top_p_sample(std::span<const float> logits, double p, Rng& rng);

/// round(density * duration), halves rounded up. Throws on negative input.
int density_to_note_count(double density, double duration_s);

}  // namespace pianofill::inference
