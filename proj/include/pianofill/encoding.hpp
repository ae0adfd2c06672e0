#pragma once

// Structured note encoding: every note becomes four tokens
// (pitch, velocity, duration, time shift), always in that order.

#include <array>
#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pianofill/performance.hpp"

namespace pianofill {

enum class Channel : int { kPitch = 0, kVelocity = 1, kDuration = 2, kTimeShift = 3 };

inline constexpr int kNumChannels = 4;
inline constexpr std::array<Channel, kNumChannels> kChannels = {Channel::kPitch, Channel::kVelocity,
                                                                Channel::kDuration, Channel::kTimeShift};

constexpr Channel channel_at(std::size_t position) { return static_cast<Channel>(position % kNumChannels); }
constexpr int channel_index(Channel c) { return static_cast<int>(c); }
std::string_view channel_name(Channel c);

inline constexpr int kPitchAlphabetSize = kHighestPitch - kLowestPitch + 1;  // 88
inline constexpr int kVelocityAlphabetSize = 128;
inline constexpr int kTimeAlphabetSize = 106;

class StructureError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Adaptive time grid: 0..0.98 s step 0.02 (50 values), 1.0..4.9 s step 0.1
/// (40 values), 5..20 s step 1 (16 values). Shared by duration and time shift.
class TimeQuantizer {
 public:
  static constexpr int kShortCount = 50;
  static constexpr int kMediumCount = 40;
  static constexpr int kLongCount = 16;
  static constexpr int kSize = kShortCount + kMediumCount + kLongCount;

  static const std::array<double, kSize>& grid();

  /// Nearest grid value, ties toward the smaller one; values above 20 s clamp.
  /// Throws std::domain_error on negative or NaN input.
  static int quantize(double seconds);
  /// Throws std::domain_error when idx is outside [0, 106).
  static double dequantize(int idx);

  /// Half the spacing between idx and its neighbours (the worst-case rounding error).
  static double half_step(int idx);
};

/// One alphabet per channel. Token indices map one-to-one onto payload values.
struct Alphabet {
  Channel channel;
  int size;

  double value(int idx) const;
  static const Alphabet& of(Channel c);
};

int alphabet_size(Channel c);

struct StructuredToken {
  Channel channel = Channel::kPitch;
  int index = 0;

  bool operator==(const StructuredToken&) const = default;
};

/// A 4T-length token stream. Token t always carries channel t mod 4.
class TokenSequence {
 public:
  TokenSequence() = default;
  /// Validates structure and alphabet bounds; throws StructureError.
  explicit TokenSequence(std::vector<StructuredToken> tokens);
  /// Builds from bare indices, inferring channels from position.
  static TokenSequence from_indices(std::span<const int> indices);

  std::size_t size() const { return tokens_.size(); }
  std::size_t note_count() const { return tokens_.size() / kNumChannels; }
  bool empty() const { return tokens_.empty(); }

  const StructuredToken& operator[](std::size_t t) const { return tokens_[t]; }
  const std::vector<StructuredToken>& tokens() const { return tokens_; }
  std::vector<int> indices() const;

  void set(std::size_t t, int index);

  bool operator==(const TokenSequence&) const = default;

 private:
  std::vector<StructuredToken> tokens_;
};

struct EncodeOptions {
  /// Time shift emitted after the last note. Defaults to 0 s; a chunk cut from a
  /// longer performance passes the gap to the next note instead.
  std::optional<double> final_shift_s;
};

TokenSequence encode(const Performance& performance, const EncodeOptions& options = {});
/// As encode; order[i] is the index in performance.notes of the note in slice i.
TokenSequence encode_with_order(const Performance& performance, const EncodeOptions& options,
                                std::vector<std::size_t>& order);

struct DecodedSequence {
  Performance performance;
  double final_shift_s = 0.0;
};

/// Onsets are cumulative dequantized time shifts starting at 0.
DecodedSequence decode_with_tail(const TokenSequence& tokens);
Performance decode(const TokenSequence& tokens);

/// Cumulative elapsed seconds at each note (sum of preceding time shifts).
std::vector<double> note_elapsed_times(const TokenSequence& tokens);

/// Line format: one note per line, "pitch_idx vel_idx dur_idx shift_idx".
void write_token_text(std::ostream& out, const TokenSequence& tokens);
std::string to_token_text(const TokenSequence& tokens);
/// Blank lines and lines starting with '#' are ignored. Throws StructureError.
TokenSequence read_token_text(std::istream& in);
TokenSequence parse_token_text(std::string_view text);

}  // namespace pianofill
