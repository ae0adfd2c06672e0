#pragma once

#include <cstdint>
#include <vector>

namespace overfit {

struct Report {
  double uniform_baseline = 0.0;  // mean ln|A| over the evaluated masked tokens
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> train_losses;
  double seconds = 0.0;
};

/// Trains a small model for `steps` on the ten-performance toy corpus and
/// measures masked cross-entropy on fixed seeded masks of the same chunks.
Report run(std::size_t steps, std::uint64_t seed);

}  // namespace overfit
