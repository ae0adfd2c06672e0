#include "pianofill/midi_file.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <fstream>
#include <iterator>
#include <map>

namespace pianofill {

MidiParseError::MidiParseError(std::size_t offset, const std::string& what)
    : std::runtime_error("MIDI parse error at byte " + std::to_string(offset) + ": " + what), offset_(offset) {}

namespace {

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ >= bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  std::uint8_t peek() const {
    if (at_end()) throw MidiParseError(pos_, "unexpected end of data");
    return bytes_[pos_];
  }
  std::uint8_t u8() {
    std::uint8_t b = peek();
    ++pos_;
    return b;
  }
  std::uint16_t u16() { return static_cast<std::uint16_t>((u8() << 8) | u8()); }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | u8();
    return v;
  }
  std::uint32_t vlq() {
    const std::size_t start = pos_;
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      const std::uint8_t b = u8();
      v = (v << 7) | (b & 0x7F);
      if (!(b & 0x80)) return v;
    }
    throw MidiParseError(start, "variable-length quantity longer than 4 bytes");
  }
  std::string tag() {
    std::string s(4, '\0');
    for (auto& c : s) c = static_cast<char>(u8());
    return s;
  }
  void skip(std::size_t n) {
    if (n > remaining()) throw MidiParseError(pos_, "chunk extends past end of file");
    pos_ += n;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

struct TempoChange {
  std::uint64_t tick;
  std::uint32_t us_per_quarter;
};

enum class EventKind { kNoteOn, kNoteOff, kPedal };

struct ChannelEvent {
  std::uint64_t tick;
  EventKind kind;
  int channel;
  int key;    // pitch, or pedal value
  int value;  // velocity
};

struct Track {
  std::vector<ChannelEvent> events;
  std::uint64_t end_tick = 0;
};

Track parse_track(ByteReader& in, std::size_t chunk_end, std::vector<TempoChange>& tempos) {
  Track track;
  std::uint64_t tick = 0;
  int running = -1;
  bool ended = false;
  while (in.offset() < chunk_end && !ended) {
    tick += in.vlq();
    const std::size_t status_offset = in.offset();
    int status = in.peek();
    if (status & 0x80) {
      in.u8();
    } else {
      if (running < 0) throw MidiParseError(status_offset, "data byte without running status");
      status = running;
    }

    if (status == 0xFF) {
      const int type = in.u8();
      const std::uint32_t len = in.vlq();
      const std::size_t data_at = in.offset();
      if (len > in.remaining()) throw MidiParseError(data_at, "meta event extends past end of file");
      if (type == 0x51) {
        if (len != 3) throw MidiParseError(data_at, "tempo meta event must carry 3 bytes");
        const std::uint32_t us = (in.u8() << 16) | (in.u8() << 8) | in.u8();
        if (us == 0) throw MidiParseError(data_at, "zero tempo");
        tempos.push_back({tick, us});
      } else {
        in.skip(len);
        if (type == 0x2F) ended = true;
      }
      continue;
    }
    if (status == 0xF0 || status == 0xF7) {
      in.skip(in.vlq());
      running = -1;
      continue;
    }
    if (status >= 0xF0) throw MidiParseError(status_offset, "unexpected system message in track");

    running = status;
    const int type = status & 0xF0;
    const int channel = status & 0x0F;
    const int d1 = in.u8();
    const int d2 = (type == 0xC0 || type == 0xD0) ? 0 : in.u8();
    if ((d1 | d2) & 0x80) throw MidiParseError(status_offset, "data byte with high bit set");
    if (type == 0x90 && d2 > 0) {
      track.events.push_back({tick, EventKind::kNoteOn, channel, d1, d2});
    } else if (type == 0x80 || type == 0x90) {
      track.events.push_back({tick, EventKind::kNoteOff, channel, d1, 0});
    } else if (type == 0xB0 && d1 == 64) {
      track.events.push_back({tick, EventKind::kPedal, channel, d2, 0});
    }
  }
  if (in.offset() > chunk_end) throw MidiParseError(chunk_end, "event crosses track chunk boundary");
  track.end_tick = tick;
  return track;
}

class TickClock {
 public:
  TickClock(std::int16_t division, std::vector<TempoChange> tempos) {
    if (division < 0) {
      const int fps = -(division >> 8);
      const int ticks_per_frame = division & 0xFF;
      smpte_seconds_per_tick_ = 1.0 / (fps * std::max(ticks_per_frame, 1));
      return;
    }
    ppq_ = division;
    std::stable_sort(tempos.begin(), tempos.end(),
                     [](const TempoChange& a, const TempoChange& b) { return a.tick < b.tick; });
    segments_.push_back({0, kWriteTempoUsPerQuarter, 0.0});
    for (const TempoChange& t : tempos) {
      const Segment& last = segments_.back();
      const double at = last.seconds + static_cast<double>(t.tick - last.tick) * last.us / (1e6 * ppq_);
      if (t.tick == last.tick) {
        segments_.back().us = t.us_per_quarter;
      } else {
        segments_.push_back({t.tick, t.us_per_quarter, at});
      }
    }
  }

  double seconds(std::uint64_t tick) const {
    if (smpte_seconds_per_tick_ > 0.0) return static_cast<double>(tick) * smpte_seconds_per_tick_;
    auto it = std::upper_bound(segments_.begin(), segments_.end(), tick,
                               [](std::uint64_t t, const Segment& s) { return t < s.tick; });
    const Segment& s = *std::prev(it);
    return s.seconds + static_cast<double>(tick - s.tick) * s.us / (1e6 * ppq_);
  }

 private:
  struct Segment {
    std::uint64_t tick;
    std::uint32_t us;
    double seconds;
  };
  int ppq_ = kWriteTicksPerQuarter;
  double smpte_seconds_per_tick_ = 0.0;
  std::vector<Segment> segments_;
};

struct OpenNote {
  std::uint64_t onset_tick;
  int velocity;
};

struct TickNote {
  int pitch;
  int velocity;
  std::uint64_t on;
  std::uint64_t off;
};

void resolve_notes(const Track& track, std::size_t track_index, const MidiReadOptions& options,
                   std::vector<TickNote>& out, std::vector<std::string>& warnings) {
  std::map<std::pair<int, int>, std::deque<OpenNote>> open;
  std::map<std::pair<int, int>, std::vector<OpenNote>> held;  // released under pedal
  std::array<bool, 16> pedal_down{};

  const auto close_held = [&](int channel, int pitch, std::uint64_t tick) {
    auto it = held.find({channel, pitch});
    if (it == held.end()) return;
    for (const OpenNote& n : it->second) out.push_back({pitch, n.velocity, n.onset_tick, tick});
    held.erase(it);
  };

  for (const ChannelEvent& e : track.events) {
    switch (e.kind) {
      case EventKind::kNoteOn:
        close_held(e.channel, e.key, e.tick);
        open[{e.channel, e.key}].push_back({e.tick, e.value});
        break;
      case EventKind::kNoteOff: {
        auto it = open.find({e.channel, e.key});
        if (it == open.end() || it->second.empty()) break;
        const OpenNote n = it->second.front();
        it->second.pop_front();
        if (options.sustain_pedal && pedal_down[e.channel]) {
          held[{e.channel, e.key}].push_back(n);
        } else {
          out.push_back({e.key, n.velocity, n.onset_tick, e.tick});
        }
        break;
      }
      case EventKind::kPedal: {
        const bool down = e.key >= 64;
        if (pedal_down[e.channel] && !down) {
          for (auto it = held.begin(); it != held.end();) {
            if (it->first.first == e.channel) {
              for (const OpenNote& n : it->second) out.push_back({it->first.second, n.velocity, n.onset_tick, e.tick});
              it = held.erase(it);
            } else {
              ++it;
            }
          }
        }
        pedal_down[e.channel] = down;
        break;
      }
    }
  }
  for (auto& [key, notes] : open) {
    for (const OpenNote& n : notes) {
      warnings.push_back("track " + std::to_string(track_index) + ": note " + std::to_string(key.second) +
                         " never released; closed at end of track");
      out.push_back({key.second, n.velocity, n.onset_tick, track.end_tick});
    }
  }
  for (auto& [key, notes] : held) {
    for (const OpenNote& n : notes) out.push_back({key.second, n.velocity, n.onset_tick, track.end_tick});
  }
}

}  // namespace

MidiReadResult read_midi(std::span<const std::uint8_t> bytes, const MidiReadOptions& options) {
  ByteReader in(bytes);
  if (in.remaining() < 14) throw MidiParseError(0, "file too short for an MThd header");
  if (in.tag() != "MThd") throw MidiParseError(0, "missing MThd header");
  const std::uint32_t header_len = in.u32();
  if (header_len < 6) throw MidiParseError(4, "MThd length below 6");
  const std::size_t header_body = in.offset();
  const std::uint16_t format = in.u16();
  const std::uint16_t declared_tracks = in.u16();
  const auto division = static_cast<std::int16_t>(in.u16());
  if (format > 1) throw MidiParseError(header_body, "unsupported SMF format " + std::to_string(format));
  if (division == 0) throw MidiParseError(header_body + 4, "zero time division");
  in.skip(header_len - 6);

  std::vector<Track> tracks;
  std::vector<TempoChange> tempos;
  while (tracks.size() < declared_tracks) {
    if (in.at_end()) throw MidiParseError(in.offset(), "expected " + std::to_string(declared_tracks) +
                                                           " tracks, found " + std::to_string(tracks.size()));
    const std::size_t chunk_at = in.offset();
    if (in.remaining() < 8) throw MidiParseError(chunk_at, "truncated chunk header");
    const std::string tag = in.tag();
    const std::uint32_t len = in.u32();
    if (len > in.remaining()) throw MidiParseError(chunk_at, "chunk '" + tag + "' extends past end of file");
    if (tag != "MTrk") {
      in.skip(len);
      continue;
    }
    const std::size_t chunk_end = in.offset() + len;
    tracks.push_back(parse_track(in, chunk_end, tempos));
    in.skip(chunk_end - in.offset());
  }

  MidiReadResult result;
  std::vector<TickNote> tick_notes;
  for (std::size_t i = 0; i < tracks.size(); ++i) resolve_notes(tracks[i], i, options, tick_notes, result.warnings);

  const TickClock clock(division, std::move(tempos));
  std::size_t dropped_range = 0;
  for (const TickNote& n : tick_notes) {
    if (n.pitch < kLowestPitch || n.pitch > kHighestPitch) {
      ++dropped_range;
      continue;
    }
    const double on = clock.seconds(n.on);
    const double off = clock.seconds(n.off);
    if (!(off > on)) {
      result.warnings.push_back("zero-length note " + std::to_string(n.pitch) + " dropped");
      continue;
    }
    result.performance.notes.push_back({n.pitch, n.velocity, on, off - on});
  }
  if (dropped_range > 0) {
    result.warnings.push_back(std::to_string(dropped_range) + " notes outside the piano range dropped");
  }
  result.performance.sort();
  return result;
}

Performance parse_midi(std::span<const std::uint8_t> bytes, const MidiReadOptions& options) {
  return read_midi(bytes, options).performance;
}

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>((v >> shift) & 0xFF));
}

void put_vlq(std::vector<std::uint8_t>& out, std::uint32_t v) {
  std::array<std::uint8_t, 5> buf{};
  int n = 0;
  buf[n++] = v & 0x7F;
  while ((v >>= 7) != 0) buf[n++] = static_cast<std::uint8_t>((v & 0x7F) | 0x80);
  while (n > 0) out.push_back(buf[--n]);
}

}  // namespace

std::vector<std::uint8_t> write_midi(const Performance& performance) {
  constexpr double kTicksPerSecond = kWriteTicksPerQuarter * 1e6 / kWriteTempoUsPerQuarter;

  struct WriteEvent {
    std::uint64_t tick;
    bool on;
    int pitch;
    int velocity;
  };
  std::vector<WriteEvent> events;
  events.reserve(performance.notes.size() * 2);
  for (const NoteEvent& n : performance.notes) {
    const auto on = static_cast<std::uint64_t>(std::llround(n.onset_s * kTicksPerSecond));
    auto off = static_cast<std::uint64_t>(std::llround((n.onset_s + n.duration_s) * kTicksPerSecond));
    off = std::max(off, on + 1);
    // Velocity 0 would read back as a release.
    events.push_back({on, true, n.pitch, std::clamp(n.velocity, 1, 127)});
    events.push_back({off, false, n.pitch, 0});
  }
  std::stable_sort(events.begin(), events.end(), [](const WriteEvent& a, const WriteEvent& b) {
    if (a.tick != b.tick) return a.tick < b.tick;
    if (a.on != b.on) return !a.on;
    return a.pitch < b.pitch;
  });

  std::vector<std::uint8_t> body;
  put_vlq(body, 0);
  body.insert(body.end(), {0xFF, 0x51, 0x03});
  body.push_back((kWriteTempoUsPerQuarter >> 16) & 0xFF);
  body.push_back((kWriteTempoUsPerQuarter >> 8) & 0xFF);
  body.push_back(kWriteTempoUsPerQuarter & 0xFF);
  std::uint64_t last = 0;
  for (const WriteEvent& e : events) {
    put_vlq(body, static_cast<std::uint32_t>(e.tick - last));
    last = e.tick;
    body.push_back(e.on ? 0x90 : 0x80);
    body.push_back(static_cast<std::uint8_t>(e.pitch));
    body.push_back(static_cast<std::uint8_t>(e.velocity));
  }
  put_vlq(body, 0);
  body.insert(body.end(), {0xFF, 0x2F, 0x00});

  std::vector<std::uint8_t> out{'M', 'T', 'h', 'd'};
  put_u32(out, 6);
  put_u16(out, 0);
  put_u16(out, 1);
  put_u16(out, kWriteTicksPerQuarter);
  out.insert(out.end(), {'M', 'T', 'r', 'k'});
  put_u32(out, static_cast<std::uint32_t>(body.size()));
  out.insert(out.end(), body.begin(), body.end());
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed for " + path);
}

}  // namespace pianofill
