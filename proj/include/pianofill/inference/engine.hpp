#pragma once

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pianofill/encoding.hpp"
#include "pianofill/model/transformer.hpp"

namespace pianofill::inference {

enum class Mode { kUnconditional, kContiguous, kVelocify, kPitchify, kVariation };
enum class Overflow { kRescale, kTruncate, kFree };
enum class PrefixMode { kParallel, kRecurrent };

std::string_view mode_name(Mode m);
std::optional<Mode> parse_mode(std::string_view name);
std::string_view overflow_name(Overflow o);
std::optional<Overflow> parse_overflow(std::string_view name);

class RequestError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct InpaintRequest {
  Performance context;
  Mode mode = Mode::kContiguous;
  double start_s = 0.0;
  double end_s = 0.0;
  /// Notes to generate (contiguous, unconditional). Derived from density when unset.
  std::optional<int> note_count;
  std::optional<double> density;
  double top_p = 0.95;
  std::uint64_t seed = 0;
  Overflow overflow = Overflow::kRescale;
  bool velocity_only = false;  // velocify: keep durations
  PrefixMode prefix_mode = PrefixMode::kParallel;

  /// Resolved note count; throws RequestError.
  int target_note_count() const;
  /// Throws RequestError describing the first problem.
  void validate() const;
};

/// Everything the sampler needs, derived from a request.
struct GenerationPlan {
  model::ConstraintSequence constraints;  // encoder input
  std::vector<int> known;                 // forced token per position, -1 where sampled
  std::vector<bool> sampled;
  /// Per slice: index of the context note it carries (-1 for new notes).
  std::vector<int> source_note;
  /// Per slice: true if the output note is produced from sampled tokens.
  std::vector<bool> generated;
  std::vector<bool> region_slice;  // slices whose onsets must land in [start, end) under truncate
  double origin_s = 0.0;           // absolute time of elapsed 0
  double start_s = 0.0;
  double end_s = 0.0;
  Mode mode = Mode::kContiguous;

  std::size_t size() const { return known.size(); }
  std::size_t first_sampled() const;
  std::size_t last_sampled() const;
  std::size_t sampled_count() const;
};

GenerationPlan build_plan(const InpaintRequest& request);

struct Timings {
  double encode_s = 0.0;    // phase 1: encoder over the whole constraint sequence
  double prefix_s = 0.0;    // phase 1: decoder state up to the first sampled position
  double sampling_s = 0.0;  // phase 2: recurrent sampling up to the last sampled position
  double first_note_s = -1.0;
  double total_s = 0.0;
};

struct InpaintResult {
  std::vector<int> tokens;         // aligned with the plan: forced and sampled tokens
  Performance performance;         // context outside the edit plus new notes, sorted
  std::vector<NoteEvent> emitted;  // notes in emission order, final values
  GenerationPlan plan;
  Timings timings;
  bool rescaled = false;
};

/// Receives each new or modified note as soon as its last sampled token is drawn.
using NoteCallback = std::function<void(const NoteEvent&)>;

class InpaintEngine {
 public:
  InpaintEngine(const model::ModelConfig& config, model::ModelParams<float> params);
  InpaintEngine(const InpaintEngine&) = delete;
  InpaintEngine& operator=(const InpaintEngine&) = delete;

  InpaintResult inpaint(const InpaintRequest& request, const NoteCallback& on_note = {}) const;
  InpaintResult run(const GenerationPlan& plan, const InpaintRequest& request, const NoteCallback& on_note = {}) const;

  const model::Transformer<float>& model() const { return model_; }

 private:
  model::ModelParams<float> params_;  // model_ refers to it
  model::Transformer<float> model_;
};

}  // namespace pianofill::inference
