#pragma once

// Timing harness for the sampling phase of contiguous inpainting.

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "pianofill/inference/engine.hpp"

namespace pianofill::inference {

enum class GapPosition { kFront, kMiddle, kBack };

std::string_view gap_position_name(GapPosition p);

struct BenchOptions {
  std::vector<int> total_notes = {256, 1024};
  std::vector<int> gap_notes = {16, 32, 64, 128};
  std::vector<GapPosition> positions = {GapPosition::kFront, GapPosition::kMiddle, GapPosition::kBack};
  int repeats = 5;  // median is reported
  std::uint64_t seed = 0;
  // Reference cells for the summary checks.
  int position_total = 1024;
  int position_gap = 32;
  int linear_total = 1024;
  GapPosition linear_position = GapPosition::kMiddle;
  int suffix_gap = 32;
  double tolerance = 0.20;
  double min_r2 = 0.98;
};

struct BenchRow {
  int total_notes = 0;
  int gap_notes = 0;
  GapPosition position = GapPosition::kMiddle;
  double encode_s = 0.0;
  double prefix_s = 0.0;
  double sampling_s = 0.0;
  double total_s = 0.0;
};

struct BenchSummary {
  double position_spread = 0.0;    // (max - min) / min over positions
  double suffix_difference = 0.0;  // |a - b| / min(a, b) between the smallest and largest T
  double slope_s_per_note = 0.0;
  double intercept_s = 0.0;
  double r2 = 0.0;
  bool position_ok = false;
  bool suffix_ok = false;
  bool linear_ok = false;
  bool ok() const { return position_ok && suffix_ok && linear_ok; }
};

struct BenchReport {
  std::vector<BenchRow> rows;
  BenchSummary summary;
};

/// Steady synthetic context of `total_notes` with a gap of `gap_notes` at `position`.
InpaintRequest bench_request(int total_notes, int gap_notes, GapPosition position, std::uint64_t seed);

BenchReport run_bench(const InpaintEngine& engine, const BenchOptions& options);

/// Least-squares line through (x, y): returns {slope, intercept, r2}.
struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};
LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y);

void write_bench_csv(std::ostream& out, const BenchReport& report);

}  // namespace pianofill::inference
