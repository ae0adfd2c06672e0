#include "pianofill/encoding.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

namespace pianofill {

std::string_view channel_name(Channel c) {
  switch (c) {
    case Channel::kPitch:
      return "pitch";
    case Channel::kVelocity:
      return "velocity";
    case Channel::kDuration:
      return "duration";
    case Channel::kTimeShift:
      return "time_shift";
  }
  return "?";
}

const std::array<double, TimeQuantizer::kSize>& TimeQuantizer::grid() {
  static const std::array<double, kSize> values = [] {
    std::array<double, kSize> g{};
    int i = 0;
    // Division is correctly rounded, so k / 50.0 is the double nearest the decimal k * 0.02.
    for (int k = 0; k < kShortCount; ++k) g[i++] = k / 50.0;
    for (int k = 0; k < kMediumCount; ++k) g[i++] = (10 + k) / 10.0;
    for (int k = 0; k < kLongCount; ++k) g[i++] = 5.0 + k;
    return g;
  }();
  return values;
}

int TimeQuantizer::quantize(double seconds) {
  if (std::isnan(seconds) || seconds < 0.0) throw std::domain_error("time value must be non-negative");
  const auto& g = grid();
  if (seconds >= g.back()) return kSize - 1;
  const auto upper = std::lower_bound(g.begin(), g.end(), seconds);
  const auto hi = static_cast<int>(upper - g.begin());
  if (hi == 0) return 0;
  const int lo = hi - 1;
  return (seconds - g[lo] <= g[hi] - seconds) ? lo : hi;
}

double TimeQuantizer::dequantize(int idx) {
  if (idx < 0 || idx >= kSize) throw std::domain_error("time token index " + std::to_string(idx) + " out of range");
  return grid()[idx];
}

double TimeQuantizer::half_step(int idx) {
  const auto& g = grid();
  const double below = idx > 0 ? g[idx] - g[idx - 1] : 0.0;
  const double above = idx + 1 < kSize ? g[idx + 1] - g[idx] : 0.0;
  return 0.5 * std::max(below, above);
}

int alphabet_size(Channel c) {
  switch (c) {
    case Channel::kPitch:
      return kPitchAlphabetSize;
    case Channel::kVelocity:
      return kVelocityAlphabetSize;
    case Channel::kDuration:
    case Channel::kTimeShift:
      return kTimeAlphabetSize;
  }
  return 0;
}

const Alphabet& Alphabet::of(Channel c) {
  static const std::array<Alphabet, kNumChannels> alphabets = {
      Alphabet{Channel::kPitch, kPitchAlphabetSize}, Alphabet{Channel::kVelocity, kVelocityAlphabetSize},
      Alphabet{Channel::kDuration, kTimeAlphabetSize}, Alphabet{Channel::kTimeShift, kTimeAlphabetSize}};
  return alphabets[channel_index(c)];
}

double Alphabet::value(int idx) const {
  if (idx < 0 || idx >= size) {
    throw std::domain_error(std::string(channel_name(channel)) + " index " + std::to_string(idx) + " out of range");
  }
  switch (channel) {
    case Channel::kPitch:
      return kLowestPitch + idx;
    case Channel::kVelocity:
      return idx;
    case Channel::kDuration:
    case Channel::kTimeShift:
      return TimeQuantizer::dequantize(idx);
  }
  return 0.0;
}

TokenSequence::TokenSequence(std::vector<StructuredToken> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() % kNumChannels != 0) {
    throw StructureError("token sequence length " + std::to_string(tokens_.size()) + " is not a multiple of 4");
  }
  for (std::size_t t = 0; t < tokens_.size(); ++t) {
    if (tokens_[t].channel != channel_at(t)) {
      throw StructureError("token " + std::to_string(t) + " has channel " +
                           std::string(channel_name(tokens_[t].channel)) + ", expected " +
                           std::string(channel_name(channel_at(t))));
    }
    if (tokens_[t].index < 0 || tokens_[t].index >= alphabet_size(tokens_[t].channel)) {
      throw StructureError("token " + std::to_string(t) + " index " + std::to_string(tokens_[t].index) +
                           " outside the " + std::string(channel_name(tokens_[t].channel)) + " alphabet");
    }
  }
}

TokenSequence TokenSequence::from_indices(std::span<const int> indices) {
  std::vector<StructuredToken> tokens;
  tokens.reserve(indices.size());
  for (std::size_t t = 0; t < indices.size(); ++t) tokens.push_back({channel_at(t), indices[t]});
  return TokenSequence(std::move(tokens));
}

std::vector<int> TokenSequence::indices() const {
  std::vector<int> out;
  out.reserve(tokens_.size());
  for (const auto& tok : tokens_) out.push_back(tok.index);
  return out;
}

void TokenSequence::set(std::size_t t, int index) {
  if (t >= tokens_.size()) throw StructureError("token position out of range");
  if (index < 0 || index >= alphabet_size(channel_at(t))) {
    throw StructureError("index " + std::to_string(index) + " outside the " +
                         std::string(channel_name(channel_at(t))) + " alphabet");
  }
  tokens_[t].index = index;
}

TokenSequence encode_with_order(const Performance& performance, const EncodeOptions& options,
                                std::vector<std::size_t>& order) {
  const auto& notes = performance.notes;
  const std::size_t n = notes.size();
  std::vector<std::size_t> sorted(n);
  for (std::size_t i = 0; i < n; ++i) sorted[i] = i;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [&](std::size_t a, std::size_t b) { return note_order_less(notes[a], notes[b]); });
  Performance check;
  check.notes.reserve(n);
  for (std::size_t i : sorted) check.notes.push_back(notes[i]);
  check.validate();

  // Shifts are measured from the reconstructed onset of the previous note, so
  // the decoded onset of every note stays within one rounding step of the
  // original instead of accumulating error along the sequence.
  std::vector<int> shift_in(n, 0);  // token placing note i after note i - 1
  double recon = n ? check.notes[0].onset_s : 0.0;
  for (std::size_t i = 1; i < n; ++i) {
    shift_in[i] = TimeQuantizer::quantize(std::max(check.notes[i].onset_s - recon, 0.0));
    recon += TimeQuantizer::dequantize(shift_in[i]);
  }
  int final_shift = 0;
  if (n && options.final_shift_s) {
    final_shift = TimeQuantizer::quantize(std::max(check.notes[n - 1].onset_s + *options.final_shift_s - recon, 0.0));
  }

  // Notes that landed on the same grid time are re-ordered by pitch.
  order = sorted;
  for (std::size_t begin = 0; begin < n;) {
    std::size_t end = begin + 1;
    while (end < n && shift_in[end] == 0) ++end;
    const auto first = order.begin() + static_cast<std::ptrdiff_t>(begin);
    const auto last = order.begin() + static_cast<std::ptrdiff_t>(end);
    std::stable_sort(first, last, [&](std::size_t a, std::size_t b) { return notes[a].pitch < notes[b].pitch; });
    begin = end;
  }

  std::vector<StructuredToken> tokens;
  tokens.reserve(n * kNumChannels);
  for (std::size_t i = 0; i < n; ++i) {
    const NoteEvent& note = notes[order[i]];
    tokens.push_back({Channel::kPitch, note.pitch - kLowestPitch});
    tokens.push_back({Channel::kVelocity, note.velocity});
    tokens.push_back({Channel::kDuration, TimeQuantizer::quantize(note.duration_s)});
    tokens.push_back({Channel::kTimeShift, i + 1 < n ? shift_in[i + 1] : final_shift});
  }
  return TokenSequence(std::move(tokens));
}

TokenSequence encode(const Performance& performance, const EncodeOptions& options) {
  std::vector<std::size_t> order;
  return encode_with_order(performance, options, order);
}

DecodedSequence decode_with_tail(const TokenSequence& tokens) {
  DecodedSequence out;
  out.performance.notes.reserve(tokens.note_count());
  double onset = 0.0;
  for (std::size_t i = 0; i < tokens.note_count(); ++i) {
    const std::size_t t = i * kNumChannels;
    NoteEvent n;
    n.pitch = kLowestPitch + tokens[t].index;
    n.velocity = tokens[t + 1].index;
    n.duration_s = TimeQuantizer::dequantize(tokens[t + 2].index);
    n.onset_s = onset;
    out.performance.notes.push_back(n);
    const double shift = TimeQuantizer::dequantize(tokens[t + 3].index);
    if (i + 1 < tokens.note_count()) {
      onset += shift;
    } else {
      out.final_shift_s = shift;
    }
  }
  // Zero-length grid values are legal tokens but not legal notes.
  for (auto& n : out.performance.notes) {
    if (n.duration_s <= 0.0) n.duration_s = TimeQuantizer::grid()[1] / 2.0;
  }
  out.performance.sort();
  return out;
}

Performance decode(const TokenSequence& tokens) { return decode_with_tail(tokens).performance; }

std::vector<double> note_elapsed_times(const TokenSequence& tokens) {
  std::vector<double> out(tokens.note_count());
  double acc = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = acc;
    acc += TimeQuantizer::dequantize(tokens[i * kNumChannels + 3].index);
  }
  return out;
}

void write_token_text(std::ostream& out, const TokenSequence& tokens) {
  for (std::size_t i = 0; i < tokens.note_count(); ++i) {
    const std::size_t t = i * kNumChannels;
    out << tokens[t].index << ' ' << tokens[t + 1].index << ' ' << tokens[t + 2].index << ' ' << tokens[t + 3].index
        << '\n';
  }
}

std::string to_token_text(const TokenSequence& tokens) {
  std::ostringstream out;
  write_token_text(out, tokens);
  return out.str();
}

TokenSequence read_token_text(std::istream& in) {
  std::vector<int> indices;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream fields(line);
    int values[kNumChannels];
    for (int& v : values) {
      if (!(fields >> v)) throw StructureError("line " + std::to_string(line_no) + ": expected 4 integers");
    }
    std::string extra;
    if (fields >> extra) throw StructureError("line " + std::to_string(line_no) + ": trailing data '" + extra + "'");
    indices.insert(indices.end(), std::begin(values), std::end(values));
  }
  return TokenSequence::from_indices(indices);
}

TokenSequence parse_token_text(std::string_view text) {
  std::istringstream in{std::string(text)};
  return read_token_text(in);
}

}  // namespace pianofill
