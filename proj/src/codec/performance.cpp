#include "pianofill/performance.hpp"

#include <algorithm>
#include <cmath>

namespace pianofill {

bool note_order_less(const NoteEvent& a, const NoteEvent& b) {
  if (a.onset_s != b.onset_s) return a.onset_s < b.onset_s;
  return a.pitch < b.pitch;
}

void Performance::sort() { std::stable_sort(notes.begin(), notes.end(), note_order_less); }

bool Performance::is_sorted() const { return std::is_sorted(notes.begin(), notes.end(), note_order_less); }

void Performance::validate() const {
  for (std::size_t i = 0; i < notes.size(); ++i) {
    const NoteEvent& n = notes[i];
    const auto fail = [i](const std::string& why) {
      throw std::invalid_argument("note " + std::to_string(i) + ": " + why);
    };
    if (n.pitch < kLowestPitch || n.pitch > kHighestPitch) fail("pitch out of piano range");
    if (n.velocity < 0 || n.velocity > 127) fail("velocity out of range");
    if (!std::isfinite(n.onset_s) || n.onset_s < 0.0) fail("onset must be finite and non-negative");
    if (!std::isfinite(n.duration_s) || n.duration_s <= 0.0) fail("duration must be finite and positive");
    if (i > 0 && note_order_less(n, notes[i - 1])) fail("notes not in (onset, pitch) order");
  }
}

}  // namespace pianofill
