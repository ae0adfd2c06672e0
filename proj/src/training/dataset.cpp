#include "pianofill/training/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <stdexcept>

#include "pianofill/augment.hpp"
#include "pianofill/midi_file.hpp"
#include "pianofill/model/timeline.hpp"

namespace pianofill::training {

using model::kNoConstraint;
using model::kPadToken;

bool is_validation_index(std::size_t index) { return index % 10 == 9; }

Corpus split_corpus(std::vector<TokenSequence> items, std::vector<std::string> names) {
  names.resize(items.size());
  Corpus c;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (is_validation_index(i)) {
      c.valid.push_back(std::move(items[i]));
      c.valid_names.push_back(std::move(names[i]));
    } else {
      c.train.push_back(std::move(items[i]));
      c.train_names.push_back(std::move(names[i]));
    }
  }
  return c;
}

Corpus load_corpus(const std::string& dir, bool sustain_pedal, std::vector<std::string>* warnings) {
  namespace fs = std::filesystem;
  std::vector<fs::path> paths;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (ext == ".mid" || ext == ".midi") paths.push_back(entry.path());
  }
  std::sort(paths.begin(), paths.end());
  std::vector<TokenSequence> items;
  std::vector<std::string> names;
  for (const auto& path : paths) {
    try {
      const auto result = read_midi(read_file_bytes(path.string()), {.sustain_pedal = sustain_pedal});
      if (result.performance.empty()) continue;
      items.push_back(encode(result.performance));
      names.push_back(path.string());
    } catch (const std::exception& e) {
      if (warnings != nullptr) warnings->push_back(path.string() + ": " + e.what());
    }
  }
  return split_corpus(std::move(items), std::move(names));
}

std::vector<Chunk> make_chunks(const std::vector<TokenSequence>& corpus, std::size_t chunk_notes,
                               ShortChunkPolicy policy) {
  if (corpus.empty()) throw std::invalid_argument("cannot chunk an empty corpus");
  if (chunk_notes == 0) throw std::invalid_argument("chunk_notes must be positive");
  std::vector<Chunk> out;
  for (std::size_t src = 0; src < corpus.size(); ++src) {
    const auto indices = corpus[src].indices();
    const std::size_t notes = corpus[src].note_count();
    for (std::size_t begin = 0; begin < notes; begin += chunk_notes) {
      const std::size_t n = std::min(chunk_notes, notes - begin);
      if (n < chunk_notes && policy == ShortChunkPolicy::kSkip) continue;
      Chunk c;
      c.notes = n;
      c.source = src;
      c.tokens.assign(chunk_notes * kNumChannels, kPadToken);
      std::copy_n(indices.begin() + static_cast<std::ptrdiff_t>(begin * kNumChannels), n * kNumChannels,
                  c.tokens.begin());
      out.push_back(std::move(c));
    }
  }
  return out;
}

std::vector<double> chunk_onsets(const std::vector<int>& tokens, double* end_s) {
  const std::size_t notes = tokens.size() / kNumChannels;
  std::vector<double> onsets(notes);
  double t = 0.0;
  for (std::size_t i = 0; i < notes; ++i) {
    onsets[i] = t;
    const int shift = tokens[i * kNumChannels + 3];
    if (shift >= 0) t += TimeQuantizer::dequantize(shift);
  }
  if (end_s != nullptr) *end_s = t;
  return onsets;
}

TrainingExample sample_constraints(const Chunk& chunk, const MaskOptions& options, Rng& rng) {
  TrainingExample ex;
  ex.targets = chunk.tokens;
  ex.mask_ratio = options.forced_ratio ? *options.forced_ratio : rng.uniform(options.ratio_lo, options.ratio_hi);

  std::array<bool, kNumChannels> pattern = {true, true, true, true};
  if (options.mode == MaskMode::kChannel) {
    switch (static_cast<ChannelPattern>(rng.uniform_int(0, 2))) {
      case ChannelPattern::kWholeNote:
        break;
      case ChannelPattern::kPitch:
        pattern = {true, false, false, false};
        break;
      case ChannelPattern::kVelocityDuration:
        pattern = {false, true, true, false};
        break;
    }
  }

  auto& c = ex.constraints;
  c.tokens = chunk.tokens;
  const std::size_t slices = chunk.tokens.size() / kNumChannels;
  for (std::size_t i = 0; i < chunk.notes && i < slices; ++i) {
    if (!rng.bernoulli(ex.mask_ratio)) continue;
    for (int ch = 0; ch < kNumChannels; ++ch) {
      if (pattern[ch]) c.tokens[i * kNumChannels + ch] = kNoConstraint;
    }
  }
  double end_s = 0.0;
  const auto onsets = chunk_onsets(chunk.tokens, &end_s);
  c.elapsed_s = model::constraint_timeline(c.tokens, onsets, end_s);
  ex.loss_mask.resize(c.tokens.size());
  for (std::size_t t = 0; t < c.tokens.size(); ++t) ex.loss_mask[t] = c.tokens[t] == kNoConstraint;
  return ex;
}

Chunk augment_chunk(const Chunk& chunk, Rng& rng) {
  if (chunk.notes == 0) return chunk;
  const std::vector<int> real(chunk.tokens.begin(), chunk.tokens.begin() + static_cast<std::ptrdiff_t>(chunk.notes * kNumChannels));
  const TokenSequence out = augment(TokenSequence::from_indices(real), rng);
  Chunk c = chunk;
  c.notes = out.note_count();
  std::fill(c.tokens.begin(), c.tokens.end(), kPadToken);
  const auto idx = out.indices();
  std::copy(idx.begin(), idx.end(), c.tokens.begin());
  return c;
}

}  // namespace pianofill::training
