#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "pianofill/model/config.hpp"
#include "pianofill/model/params.hpp"
#include "pianofill/training/dataset.hpp"

namespace pianofill::training {

struct TrainConfig {
  std::size_t chunk_notes = 1024;
  std::size_t batch_size = 8;
  double learning_rate = 3e-4;
  std::size_t warmup_steps = 1000;
  std::size_t total_steps = 10000;
  double mask_ratio_lo = 0.5;
  double mask_ratio_hi = 1.0;
  MaskMode mask_mode = MaskMode::kSlice;
  ShortChunkPolicy short_policy = ShortChunkPolicy::kPad;
  bool augment = true;
  double grad_clip = 1.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;
  std::size_t log_every = 10;
  std::size_t checkpoint_every = 1000;
  std::size_t valid_examples = 16;

  /// Throws std::invalid_argument.
  void validate() const;
};

struct StepResult {
  double loss = 0.0;           // summed masked cross-entropy / masked count
  std::size_t masked = 0;      // masked tokens in the batch
  double grad_norm = 0.0;      // before clipping
  double learning_rate = 0.0;  // applied this step
  bool applied = false;        // false for empty batches and aborted steps
  std::string error;           // set when the step was aborted
};

/// Adam with linear warmup and global gradient-norm clipping.
class Trainer {
 public:
  Trainer(const model::ModelConfig& config, model::ModelParams<float> params, const TrainConfig& train);

  /// One optimizer step over `batch`. Non-finite loss or gradients abort the
  /// step and leave parameters untouched.
  StepResult step(const std::vector<TrainingExample>& batch);

  /// Mean masked cross-entropy without updating anything (dropout off).
  double evaluate(const std::vector<TrainingExample>& examples, std::size_t* masked = nullptr) const;

  const model::ModelParams<float>& params() const { return params_; }
  const model::ModelConfig& config() const { return config_; }
  std::uint64_t steps_taken() const { return steps_; }
  double scheduled_lr(std::uint64_t step) const;

 private:
  model::ModelConfig config_;
  TrainConfig train_;
  model::ModelParams<float> params_;
  model::ModelParams<float> m_;
  model::ModelParams<float> v_;
  std::uint64_t steps_ = 0;
  std::uint64_t adam_t_ = 0;
};

/// Deterministic stream of training batches: epoch-shuffled chunks, optional
/// augmentation, then constraint sampling. Draw n depends only on (seed, n).
class BatchSampler {
 public:
  BatchSampler(std::vector<Chunk> chunks, const TrainConfig& train);
  std::vector<TrainingExample> next();
  std::size_t chunk_count() const { return chunks_.size(); }

 private:
  void reshuffle();

  std::vector<Chunk> chunks_;
  TrainConfig train_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::uint64_t epoch_ = 0;
  std::uint64_t drawn_ = 0;
};

/// Fixed validation examples (seeded masks, no augmentation).
std::vector<TrainingExample> fixed_examples(const std::vector<Chunk>& chunks, const TrainConfig& train,
                                            std::size_t count, std::uint64_t seed);

struct TrainRunOptions {
  std::string checkpoint_path;  // empty: no checkpoints written
  std::ostream* log = nullptr;  // line-delimited JSON progress
};

/// Full loop: samples batches, steps, logs, validates, checkpoints. Returns the trainer.
Trainer run_training(const model::ModelConfig& config, model::ModelParams<float> init, const Corpus& corpus,
                     const TrainConfig& train, const TrainRunOptions& options);

}  // namespace pianofill::training
