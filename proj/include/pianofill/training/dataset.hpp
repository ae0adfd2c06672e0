#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "pianofill/encoding.hpp"
#include "pianofill/model/transformer.hpp"
#include "pianofill/rng.hpp"

namespace pianofill::training {

enum class ShortChunkPolicy { kPad, kSkip };
enum class MaskMode { kSlice, kChannel };

struct Corpus {
  std::vector<TokenSequence> train;
  std::vector<TokenSequence> valid;
  std::vector<std::string> train_names;
  std::vector<std::string> valid_names;
};

/// Every tenth item (index % 10 == 9) goes to validation.
bool is_validation_index(std::size_t index);

/// Reads *.mid / *.midi below `dir` in sorted path order, encodes each file
/// and splits train/valid. Unreadable files are reported in `warnings`.
Corpus load_corpus(const std::string& dir, bool sustain_pedal, std::vector<std::string>* warnings = nullptr);
Corpus split_corpus(std::vector<TokenSequence> items, std::vector<std::string> names = {});

/// `tokens` always spans chunk_notes slices; slices past `notes` hold kPadToken.
struct Chunk {
  std::vector<int> tokens;
  std::size_t notes = 0;
  std::size_t source = 0;  // index of the performance it came from
};

/// Non-overlapping windows of chunk_notes notes. Throws std::invalid_argument on an empty corpus.
std::vector<Chunk> make_chunks(const std::vector<TokenSequence>& corpus, std::size_t chunk_notes,
                               ShortChunkPolicy policy);

struct MaskOptions {
  double ratio_lo = 0.5;
  double ratio_hi = 1.0;
  MaskMode mode = MaskMode::kSlice;
  std::optional<double> forced_ratio;
};

/// Channel patterns used by MaskMode::kChannel, one drawn per example.
enum class ChannelPattern { kWholeNote, kPitch, kVelocityDuration };

struct TrainingExample {
  std::vector<int> targets;  // kPadToken on padding slices
  model::ConstraintSequence constraints;
  std::vector<bool> loss_mask;  // true exactly where constraints hold NC
  double mask_ratio = 0.0;
};

/// Draws p in [ratio_lo, ratio_hi] and masks each real slice with probability p.
TrainingExample sample_constraints(const Chunk& chunk, const MaskOptions& options, Rng& rng);

/// Onset of each slice of a chunk (PAD slices repeat the last time) and the chunk end time.
std::vector<double> chunk_onsets(const std::vector<int>& tokens, double* end_s = nullptr);

/// Re-quantized augmentation of the real notes of a chunk, re-padded to the same length.
Chunk augment_chunk(const Chunk& chunk, Rng& rng);

}  // namespace pianofill::training
