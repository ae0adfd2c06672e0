#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace pianofill {

inline constexpr int kLowestPitch = 21;
inline constexpr int kHighestPitch = 108;

struct NoteEvent {
  int pitch = 60;
  int velocity = 64;
  double onset_s = 0.0;
  double duration_s = 0.0;

  bool operator==(const NoteEvent&) const = default;
};

/// A piano performance: notes ordered by onset, ties broken by ascending pitch.
struct Performance {
  std::vector<NoteEvent> notes;

  std::size_t size() const { return notes.size(); }
  bool empty() const { return notes.empty(); }

  /// Restores the canonical (onset, pitch) order. Stable for exact duplicates.
  void sort();
  bool is_sorted() const;

  /// Throws std::invalid_argument naming the first offending note.
  void validate() const;

  bool operator==(const Performance&) const = default;
};

bool note_order_less(const NoteEvent& a, const NoteEvent& b);

}  // namespace pianofill
