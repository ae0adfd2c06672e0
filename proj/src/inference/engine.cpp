#include "pianofill/inference/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <utility>

#include "pianofill/inference/sampler.hpp"
#include "pianofill/model/timeline.hpp"

namespace pianofill::inference {

using model::kNoConstraint;

namespace {

constexpr std::size_t kMaxNotes = 20000;
constexpr double kMinNoteLength = 0.01;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void append_slices(GenerationPlan& plan, const TokenSequence& tokens, const std::vector<std::size_t>& order,
                   const std::vector<std::size_t>& note_index) {
  for (std::size_t i = 0; i < tokens.note_count(); ++i) {
    for (int c = 0; c < kNumChannels; ++c) {
      const int tok = tokens[i * kNumChannels + c].index;
      plan.constraints.tokens.push_back(tok);
      plan.known.push_back(tok);
      plan.sampled.push_back(false);
    }
    plan.source_note.push_back(static_cast<int>(note_index[order[i]]));
    plan.generated.push_back(false);
    plan.region_slice.push_back(false);
  }
}

void append_free_slices(GenerationPlan& plan, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < kNumChannels; ++c) {
      plan.constraints.tokens.push_back(kNoConstraint);
      plan.known.push_back(-1);
      plan.sampled.push_back(true);
    }
    plan.source_note.push_back(-1);
    plan.generated.push_back(true);
    plan.region_slice.push_back(true);
  }
}

void free_position(GenerationPlan& plan, std::size_t t, bool constrain_encoder) {
  if (constrain_encoder) plan.constraints.tokens[t] = kNoConstraint;
  plan.known[t] = -1;
  plan.sampled[t] = true;
}

bool in_region(const NoteEvent& n, double start, double end) { return n.onset_s >= start && n.onset_s < end; }

}  // namespace

std::string_view mode_name(Mode m) {
  switch (m) {
    case Mode::kUnconditional:
      return "unconditional";
    case Mode::kContiguous:
      return "contiguous";
    case Mode::kVelocify:
      return "velocify";
    case Mode::kPitchify:
      return "pitchify";
    case Mode::kVariation:
      return "variation";
  }
  return "?";
}

std::optional<Mode> parse_mode(std::string_view name) {
  for (Mode m : {Mode::kUnconditional, Mode::kContiguous, Mode::kVelocify, Mode::kPitchify, Mode::kVariation}) {
    if (mode_name(m) == name) return m;
  }
  return std::nullopt;
}

std::string_view overflow_name(Overflow o) {
  switch (o) {
    case Overflow::kRescale:
      return "rescale";
    case Overflow::kTruncate:
      return "truncate";
    case Overflow::kFree:
      return "free";
  }
  return "?";
}

std::optional<Overflow> parse_overflow(std::string_view name) {
  for (Overflow o : {Overflow::kRescale, Overflow::kTruncate, Overflow::kFree}) {
    if (overflow_name(o) == name) return o;
  }
  return std::nullopt;
}

int InpaintRequest::target_note_count() const {
  if (note_count) return *note_count;
  if (density) {
    try {
      return density_to_note_count(*density, end_s - start_s);
    } catch (const std::invalid_argument& e) {
      throw RequestError(e.what());
    }
  }
  return 0;
}

void InpaintRequest::validate() const {
  try {
    context.validate();
  } catch (const std::invalid_argument& e) {
    throw RequestError(std::string("context: ") + e.what());
  }
  if (!std::isfinite(start_s) || !std::isfinite(end_s) || start_s < 0.0 || end_s < start_s) {
    throw RequestError("region must satisfy 0 <= start_s <= end_s");
  }
  if (!(top_p > 0.0 && top_p <= 1.0)) throw RequestError("top_p must lie in (0, 1]");
  if (note_count && *note_count < 0) throw RequestError("note_count must be >= 0");
  if (density && !(*density >= 0.0 && std::isfinite(*density))) throw RequestError("density must be >= 0");
  if (context.size() > kMaxNotes) throw RequestError("context exceeds " + std::to_string(kMaxNotes) + " notes");
  const bool needs_count = mode == Mode::kContiguous || mode == Mode::kUnconditional;
  if (needs_count) {
    if (!note_count && !density) throw RequestError("note_count or density is required for this mode");
    const int n = target_note_count();
    if (static_cast<std::size_t>(n) > kMaxNotes) throw RequestError("note count exceeds " + std::to_string(kMaxNotes));
    if (n > 0 && end_s <= start_s) throw RequestError("an empty region cannot hold new notes");
  }
  if (mode != Mode::kUnconditional && !context.empty()) {
    double end = 0.0;
    for (const auto& n : context.notes) end = std::max(end, n.onset_s + n.duration_s);
    if (start_s > end) throw RequestError("region starts after the end of the context");
  }
}

std::size_t GenerationPlan::first_sampled() const {
  const auto it = std::find(sampled.begin(), sampled.end(), true);
  return static_cast<std::size_t>(it - sampled.begin());
}

std::size_t GenerationPlan::last_sampled() const {
  for (std::size_t t = sampled.size(); t-- > 0;) {
    if (sampled[t]) return t;
  }
  return sampled.size();
}

std::size_t GenerationPlan::sampled_count() const {
  return static_cast<std::size_t>(std::count(sampled.begin(), sampled.end(), true));
}

GenerationPlan build_plan(const InpaintRequest& request) {
  request.validate();
  GenerationPlan plan;
  plan.mode = request.mode;
  plan.start_s = request.start_s;
  plan.end_s = request.end_s;
  const auto& notes = request.context.notes;
  const double S = request.start_s, E = request.end_s;

  if (request.mode == Mode::kUnconditional) {
    const auto n = static_cast<std::size_t>(request.target_note_count());
    plan.origin_s = S;
    append_free_slices(plan, n);
    for (double e : model::spread_evenly(0.0, E - S, n)) plan.constraints.elapsed_s.insert(plan.constraints.elapsed_s.end(), kNumChannels, e);
    return plan;
  }

  if (request.mode == Mode::kContiguous) {
    const auto n = static_cast<std::size_t>(request.target_note_count());
    Performance prefix, suffix;
    std::vector<std::size_t> prefix_idx, suffix_idx;
    for (std::size_t i = 0; i < notes.size(); ++i) {
      if (n > 0 && in_region(notes[i], S, E)) continue;
      if (n > 0 && notes[i].onset_s < S) {
        prefix.notes.push_back(notes[i]);
        prefix_idx.push_back(i);
      } else {
        suffix.notes.push_back(notes[i]);
        suffix_idx.push_back(i);
      }
    }
    std::vector<std::size_t> prefix_order, suffix_order;
    const TokenSequence prefix_tokens = encode_with_order(prefix, {}, prefix_order);
    const TokenSequence suffix_tokens = encode_with_order(suffix, {}, suffix_order);
    plan.origin_s = prefix.empty() ? (n > 0 ? S : (suffix.empty() ? 0.0 : notes[suffix_idx[suffix_order[0]]].onset_s))
                                   : notes[prefix_idx[prefix_order[0]]].onset_s;
    append_slices(plan, prefix_tokens, prefix_order, prefix_idx);
    if (n > 0 && !prefix.empty()) free_position(plan, plan.known.size() - 1, true);
    append_free_slices(plan, n);
    append_slices(plan, suffix_tokens, suffix_order, suffix_idx);

    auto& el = plan.constraints.elapsed_s;
    for (std::size_t i = 0; i < prefix_tokens.note_count(); ++i) {
      el.insert(el.end(), kNumChannels, notes[prefix_idx[prefix_order[i]]].onset_s - plan.origin_s);
    }
    for (double e : model::spread_evenly(S - plan.origin_s, E - plan.origin_s, n)) el.insert(el.end(), kNumChannels, e);
    for (std::size_t i = 0; i < suffix_tokens.note_count(); ++i) {
      el.insert(el.end(), kNumChannels, notes[suffix_idx[suffix_order[i]]].onset_s - plan.origin_s);
    }
    return plan;
  }

  // Attribute modes and variation keep every note in place.
  std::vector<std::size_t> order, identity(notes.size());
  for (std::size_t i = 0; i < notes.size(); ++i) identity[i] = i;
  const TokenSequence tokens = encode_with_order(request.context, {}, order);
  append_slices(plan, tokens, order, identity);
  plan.origin_s = notes.empty() ? 0.0 : notes[order[0]].onset_s;
  for (std::size_t i = 0; i < tokens.note_count(); ++i) {
    const NoteEvent& note = notes[order[i]];
    plan.constraints.elapsed_s.insert(plan.constraints.elapsed_s.end(), kNumChannels, note.onset_s - plan.origin_s);
    if (!in_region(note, S, E)) continue;
    const std::size_t t = i * kNumChannels;
    plan.generated[i] = true;
    switch (request.mode) {
      case Mode::kVelocify:
        free_position(plan, t + 1, true);
        if (!request.velocity_only) free_position(plan, t + 2, true);
        break;
      case Mode::kPitchify:
        free_position(plan, t, true);
        break;
      case Mode::kVariation:
        for (int c = 0; c < kNumChannels; ++c) free_position(plan, t + c, false);
        plan.region_slice[i] = true;
        break;
      default:
        break;
    }
  }
  return plan;
}

InpaintEngine::InpaintEngine(const model::ModelConfig& config, model::ModelParams<float> params)
    : params_(std::move(params)), model_(config, params_) {}

InpaintResult InpaintEngine::inpaint(const InpaintRequest& request, const NoteCallback& on_note) const {
  return run(build_plan(request), request, on_note);
}

InpaintResult InpaintEngine::run(const GenerationPlan& plan, const InpaintRequest& request,
                                 const NoteCallback& on_note) const {
  const auto t0 = Clock::now();
  InpaintResult result;
  result.plan = plan;
  result.tokens = plan.known;
  auto& tokens = result.tokens;
  const std::size_t len = plan.size();
  const std::size_t slices = len / kNumChannels;
  const auto& grid = TimeQuantizer::grid();
  const auto& context = request.context.notes;

  // Absolute onset of each output slice; retimed slices follow the generated shifts.
  std::vector<double> onset(slices, 0.0);
  const auto slice_onset = [&](std::size_t i) {
    if (!plan.region_slice[i] && plan.source_note[i] >= 0) return context[static_cast<std::size_t>(plan.source_note[i])].onset_s;
    if (i == 0) return plan.mode == Mode::kVariation ? plan.origin_s : plan.start_s;
    return onset[i - 1] + TimeQuantizer::dequantize(tokens[(i - 1) * kNumChannels + 3]);
  };
  std::vector<std::size_t> last_in_slice(slices, len);
  for (std::size_t t = 0; t < len; ++t) {
    if (plan.sampled[t]) last_in_slice[t / kNumChannels] = t;
  }

  const auto make_note = [&](std::size_t i) {
    const std::size_t t = i * kNumChannels;
    NoteEvent n = plan.source_note[i] >= 0 ? context[static_cast<std::size_t>(plan.source_note[i])] : NoteEvent{};
    if (plan.source_note[i] < 0 || plan.sampled[t]) n.pitch = kLowestPitch + tokens[t];
    if (plan.source_note[i] < 0 || plan.sampled[t + 1]) n.velocity = tokens[t + 1];
    if (plan.source_note[i] < 0 || plan.sampled[t + 2]) {
      n.duration_s = std::max(TimeQuantizer::dequantize(tokens[t + 2]), kMinNoteLength);
    }
    if (plan.region_slice[i] || plan.source_note[i] < 0) n.onset_s = onset[i];
    return n;
  };

  std::vector<NoteEvent> emitted_by_slice(slices);
  std::vector<std::size_t> emitted_slices;
  const auto emit = [&](std::size_t i) {
    const NoteEvent n = make_note(i);
    emitted_by_slice[i] = n;
    emitted_slices.push_back(i);
    if (result.timings.first_note_s < 0) result.timings.first_note_s = seconds_since(t0);
    if (on_note) on_note(n);
  };

  const std::size_t first = plan.first_sampled();
  if (first < len) {
    const auto te = Clock::now();
    const model::Mat<float> enc = model_.encode(plan.constraints);
    result.timings.encode_s = seconds_since(te);

    const auto tp = Clock::now();
    model::DecoderState<float> state;
    if (request.prefix_mode == PrefixMode::kParallel && first > 0) {
      state = model_.prefix_state(std::span<const int>(tokens).first(first - 1), enc);
    } else {
      state = model_.initial_state();
      for (std::size_t t = 0; t < first; ++t) {
        model_.step(state, t == 0 ? model::kPadToken : tokens[t - 1], enc.col(static_cast<Eigen::Index>(t)), false);
      }
    }
    for (std::size_t i = 0; i * kNumChannels < first; ++i) onset[i] = slice_onset(i);
    result.timings.prefix_s = seconds_since(tp);

    const auto ts = Clock::now();
    Rng rng(request.seed);
    const std::size_t last = plan.last_sampled();
    std::vector<float> logits_buf;
    for (std::size_t t = first; t <= last; ++t) {
      const std::size_t i = t / kNumChannels;
      if (t % kNumChannels == 0) onset[i] = slice_onset(i);
      const int input = t == 0 ? model::kPadToken : tokens[t - 1];
      const model::Vec<float> logits =
          model_.step(state, input, enc.col(static_cast<Eigen::Index>(t)), plan.sampled[t]);
      if (!plan.sampled[t]) continue;
      if (!logits.allFinite()) {
        throw GenerationError("non-finite logits at position " + std::to_string(t) + " (slice " + std::to_string(i) +
                              ", channel " + std::string(channel_name(channel_at(t))) + ")");
      }
      logits_buf.assign(logits.data(), logits.data() + logits.size());
      const bool next_retimed = i + 1 < slices && plan.region_slice[i + 1];
      if (request.overflow == Overflow::kTruncate && channel_at(t) == Channel::kTimeShift && next_retimed) {
        // The next note must start inside [start, end).
        bool any = false;
        int nearest = 0;
        double nearest_gap = INFINITY;
        for (int k = 0; k < TimeQuantizer::kSize; ++k) {
          const double next = onset[i] + grid[k];
          const bool ok = next >= plan.start_s - 1e-9 && next < plan.end_s;
          const double gap = ok ? 0.0 : next < plan.start_s ? plan.start_s - next : next - plan.end_s;
          if (gap < nearest_gap) nearest_gap = gap, nearest = k;
          if (!ok) logits_buf[static_cast<std::size_t>(k)] = -INFINITY;
          any = any || ok;
        }
        if (!any) logits_buf[static_cast<std::size_t>(nearest)] = 0.0f;
      }
      tokens[t] = top_p_sample(logits_buf, request.top_p, rng);
      if (t == last_in_slice[i] && plan.generated[i]) emit(i);
    }
    result.timings.sampling_s = seconds_since(ts);
  }
  for (std::size_t i = 0; i < slices; ++i) {
    if (plan.generated[i] && (plan.region_slice[i] || plan.source_note[i] < 0)) onset[i] = slice_onset(i);
  }

  // Rescale retimed notes that left [start, end).
  if (request.overflow == Overflow::kRescale) {
    double lo = INFINITY, hi = -INFINITY, tail = 0.0;
    for (std::size_t i : emitted_slices) {
      if (!plan.region_slice[i]) continue;
      lo = std::min(lo, emitted_by_slice[i].onset_s);
      if (emitted_by_slice[i].onset_s >= hi) {
        hi = emitted_by_slice[i].onset_s;
        tail = TimeQuantizer::dequantize(tokens[i * kNumChannels + 3]);
      }
    }
    if (lo <= hi && (lo < plan.start_s || hi >= plan.end_s)) {
      const double span_end = hi + std::max(tail, kMinNoteLength);
      const double scale = (plan.end_s - plan.start_s) / (span_end - lo);
      for (std::size_t i : emitted_slices) {
        if (plan.region_slice[i]) {
          emitted_by_slice[i].onset_s = plan.start_s + (emitted_by_slice[i].onset_s - lo) * scale;
        }
      }
      result.rescaled = true;
    }
  }

  std::vector<bool> replaced(context.size(), false);
  if (plan.mode == Mode::kContiguous) {
    std::vector<bool> kept(context.size(), false);
    for (int src : plan.source_note) {
      if (src >= 0) kept[static_cast<std::size_t>(src)] = true;
    }
    for (std::size_t k = 0; k < context.size(); ++k) replaced[k] = !kept[k];
  }
  for (std::size_t i : emitted_slices) {
    if (plan.source_note[i] >= 0) replaced[static_cast<std::size_t>(plan.source_note[i])] = true;
  }
  if (plan.mode != Mode::kUnconditional) {
    for (std::size_t k = 0; k < context.size(); ++k) {
      if (!replaced[k]) result.performance.notes.push_back(context[k]);
    }
  }
  for (std::size_t i : emitted_slices) {
    result.emitted.push_back(emitted_by_slice[i]);
    result.performance.notes.push_back(emitted_by_slice[i]);
  }
  result.performance.sort();
  result.timings.total_s = seconds_since(t0);
  return result;
}

}  // namespace pianofill::inference
