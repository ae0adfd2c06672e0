#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pianofill/performance.hpp"

namespace pianofill {

class MidiParseError : public std::runtime_error {
 public:
  MidiParseError(std::size_t offset, const std::string& what);
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

struct MidiReadOptions {
  /// Hold notes released while CC64 >= 64 until the pedal comes up.
  bool sustain_pedal = true;
};

struct MidiReadResult {
  Performance performance;
  std::vector<std::string> warnings;
};

/// Parses a format 0 or 1 Standard MIDI File into wall-clock notes.
/// Notes outside the 88-key range are dropped; zero-length notes are dropped.
MidiReadResult read_midi(std::span<const std::uint8_t> bytes, const MidiReadOptions& options = {});

Performance parse_midi(std::span<const std::uint8_t> bytes, const MidiReadOptions& options = {});

inline constexpr int kWriteTicksPerQuarter = 480;
inline constexpr int kWriteTempoUsPerQuarter = 500000;  // 120 BPM

/// Writes a format 0 file at 480 TPQ, 120 BPM. Releases precede onsets on a shared tick.
std::vector<std::uint8_t> write_midi(const Performance& performance);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace pianofill
