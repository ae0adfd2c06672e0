#pragma once

// Encoder-decoder over structured token streams.
//
// The encoder reads the constraint sequence anti-causally, so its output at t
// summarizes c_{>=t}. The decoder is causal over x_{<t} and receives exactly
// one encoder vector, E(c_{>=t}), injected at every layer (diagonal
// cross-attention). Every sublayer is pre-normalized and merged into the
// residual stream with a GRU gate. Predictions for position t go through the
// output head of channel t mod 4.

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "pianofill/model/attention.hpp"
#include "pianofill/model/config.hpp"
#include "pianofill/model/params.hpp"
#include "pianofill/rng.hpp"

namespace pianofill::model {

/// Constraint-sequence symbols besides alphabet indices.
inline constexpr int kNoConstraint = -1;
inline constexpr int kPadToken = -2;

/// Channel-aligned constraints: each entry is an alphabet index, kNoConstraint
/// or kPadToken. elapsed_s holds the encoder's elapsed-time value per token.
struct ConstraintSequence {
  std::vector<int> tokens;
  std::vector<double> elapsed_s;

  std::size_t size() const { return tokens.size(); }
  bool is_free(std::size_t t) const { return tokens[t] == kNoConstraint; }
  std::size_t free_count() const;

  /// Throws StructureError on length or alphabet violations.
  void validate() const;
};

/// Sinusoid with dim/2 frequency pairs: [sin(pos/10000^(2i/d)), cos(...)], d = dim/2.
template <typename T>
void sinusoid(double pos, int dim, Eigen::Ref<Vec<T>> out);

/// p(t) = (channel_embedding[:, t mod 4], SE(floor(t/4)), SE(elapsed_scale * elapsed_s)).
template <typename T>
Vec<T> positional_embedding(const ModelConfig& config, const Mat<T>& channel_embedding, std::size_t t,
                            double elapsed_s);

/// Decoder-side elapsed time for positions [0, positions): the sum of time
/// shifts of earlier notes, read from the token stream (PAD counts as zero).
std::vector<double> decoder_elapsed(std::span<const int> tokens, std::size_t positions);

template <typename T>
struct DecoderState {
  std::vector<std::vector<HeadState<T>>> layers;  // [layer][head]
  std::size_t position = 0;                       // next position to compute
  double elapsed_s = 0.0;                         // elapsed time of position - 1
};

struct LossResult {
  double loss_sum = 0.0;    // summed cross-entropy over free positions (nats)
  std::size_t count = 0;    // number of free positions
  double mean() const { return count ? loss_sum / static_cast<double>(count) : 0.0; }
};

template <typename T>
class Transformer {
 public:
  Transformer(const ModelConfig& config, const ModelParams<T>& params);

  const ModelConfig& config() const { return config_; }
  const ModelParams<T>& params() const { return params_; }

  /// E(c_{>=t}) for every position, model_dim x length. Inference mode (no dropout).
  Mat<T> encode(const ConstraintSequence& constraints) const;

  /// Decoder logits for every position given the full input token stream
  /// (position t is fed tokens[t-1], START at t = 0). tokens may hold kPadToken.
  std::vector<Vec<T>> decode_parallel(std::span<const int> tokens, const Mat<T>& encoded) const;

  DecoderState<T> initial_state() const;

  /// Runs the decoder in parallel over positions [0, prefix.size() + 1), i.e.
  /// inputs START, prefix[0..]. Returns the recurrent state ready to compute
  /// position prefix.size() + 1 from input token x_{prefix.size()}.
  DecoderState<T> prefix_state(std::span<const int> prefix, const Mat<T>& encoded) const;

  /// Computes position state.position, fed `input_token` (ignored at position 0,
  /// where START is used). Returns logits over the alphabet of that position's
  /// channel when `with_logits`, otherwise an empty vector.
  Vec<T> step(DecoderState<T>& state, int input_token, const Eigen::Ref<const Vec<T>>& encoded_col,
              bool with_logits = true) const;

  /// Masked cross-entropy. Loss positions are those where constraints are
  /// kNoConstraint; decoder inputs take the constraint token wherever one
  /// exists and the target elsewhere, so targets at constrained positions never
  /// influence the result. When `grads` is set, adds grad_scale * d(loss_sum)
  /// into it. A non-null `dropout` enables training-mode dropout.
  LossResult loss(std::span<const int> targets, const ConstraintSequence& constraints, ModelParams<T>* grads,
                  T grad_scale = T(1), Rng* dropout = nullptr) const;

 private:
  struct Impl;
  ModelConfig config_;
  const ModelParams<T>& params_;
};

/// Decoder input stream: the constraint where one exists, the target elsewhere.
std::vector<int> merge_inputs(std::span<const int> targets, const ConstraintSequence& constraints);

extern template class Transformer<float>;
extern template class Transformer<double>;

}  // namespace pianofill::model
