#pragma once

#include <vector>

#include "pianofill/encoding.hpp"

namespace fixtures {

/// Ten short, highly repetitive performances: each repeats an 8-note motif
/// with a fixed velocity contour and rhythm, transposed per performance.
inline std::vector<pianofill::TokenSequence> toy_corpus(int notes_per_performance = 32) {
  static const int motif[8] = {0, 4, 7, 12, 7, 4, 0, -5};
  static const int velocity[8] = {90, 60, 70, 100, 70, 60, 90, 50};
  static const double duration[8] = {0.4, 0.2, 0.2, 0.8, 0.2, 0.2, 0.4, 0.6};
  std::vector<pianofill::TokenSequence> out;
  for (int k = 0; k < 10; ++k) {
    pianofill::Performance p;
    double onset = 0.0;
    for (int i = 0; i < notes_per_performance; ++i) {
      const int m = i % 8;
      p.notes.push_back({52 + 2 * k + motif[m], velocity[m], onset, duration[m]});
      onset += m == 3 ? 0.5 : 0.25;
    }
    out.push_back(pianofill::encode(p));
  }
  return out;
}

}  // namespace fixtures
