#pragma once

#include <map>
#include <string>

#include "pianofill/inference/engine.hpp"

namespace fixtures {

/// Empty when the result keeps every constrained token and every note outside
/// the edit bit-exactly, and edited notes only differ in the attributes their
/// mode regenerates. Otherwise describes the first violation.
inline std::string preservation_violation(const pianofill::inference::InpaintRequest& req,
                                          const pianofill::inference::InpaintResult& res) {
  using namespace pianofill;
  using inference::Mode;
  const auto& plan = res.plan;
  for (std::size_t t = 0; t < plan.size(); ++t) {
    if (!plan.sampled[t] && res.tokens[t] != plan.known[t]) return "constrained token changed at " + std::to_string(t);
    if (plan.sampled[t]) {
      const Channel c = channel_at(t);
      const bool allowed = req.mode == Mode::kPitchify ? c == Channel::kPitch
                           : req.mode == Mode::kVelocify
                               ? c == Channel::kVelocity || (c == Channel::kDuration && !req.velocity_only)
                               : true;
      if (!allowed) return "sampled a " + std::string(channel_name(c)) + " token in " + std::string(mode_name(req.mode));
    }
  }
  if (req.mode == Mode::kUnconditional) {
    return res.performance.size() == static_cast<std::size_t>(req.target_note_count()) ? "" : "wrong note count";
  }

  std::multimap<double, NoteEvent> out;
  for (const auto& n : res.performance.notes) out.emplace(n.onset_s, n);
  const auto take = [&](auto&& match, double onset) {
    auto [lo, hi] = out.equal_range(onset);
    for (auto it = lo; it != hi; ++it) {
      if (match(it->second)) {
        out.erase(it);
        return true;
      }
    }
    return false;
  };
  const bool nothing_to_do = req.mode == Mode::kContiguous && req.target_note_count() == 0;
  const auto in_region = [&](const NoteEvent& n) { return n.onset_s >= req.start_s && n.onset_s < req.end_s; };
  std::size_t edited = 0;
  for (const auto& n : req.context.notes) {
    if (in_region(n) && !nothing_to_do) {
      ++edited;
      continue;
    }
    if (!take([&](const NoteEvent& o) { return o == n; }, n.onset_s)) {
      return "context note at " + std::to_string(n.onset_s) + " s (pitch " + std::to_string(n.pitch) + ") lost";
    }
  }
  const std::size_t expected_new = req.mode == Mode::kContiguous ? static_cast<std::size_t>(req.target_note_count()) : edited;
  if (out.size() != expected_new) return "expected " + std::to_string(expected_new) + " edited notes, got " + std::to_string(out.size());
  if (req.mode == Mode::kPitchify || req.mode == Mode::kVelocify) {
    for (const auto& n : req.context.notes) {
      if (!in_region(n)) continue;
      const bool ok = take(
          [&](const NoteEvent& o) {
            if (req.mode == Mode::kPitchify) return o.velocity == n.velocity && o.duration_s == n.duration_s;
            return o.pitch == n.pitch && (!req.velocity_only || o.duration_s == n.duration_s);
          },
          n.onset_s);
      if (!ok) return std::string(mode_name(req.mode)) + " changed a fixed attribute of the note at " + std::to_string(n.onset_s);
    }
  }
  return "";
}

}  // namespace fixtures
