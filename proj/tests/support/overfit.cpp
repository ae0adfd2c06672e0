#include "overfit.hpp"

#include <chrono>
#include <cmath>

#include "pianofill/training/trainer.hpp"
#include "toy_corpus.hpp"

namespace overfit {

using namespace pianofill;

Report run(std::size_t steps, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  model::ModelConfig cfg = model::ModelConfig::desk();
  cfg.n_heads = 4;
  cfg.head_dim = 16;
  cfg.model_dim = 64;
  cfg.ff_dim = 128;
  cfg.encoder_layers = 2;
  cfg.decoder_layers = 2;
  cfg.dropout = 0.0;

  training::TrainConfig t;
  t.chunk_notes = 32;
  t.batch_size = 8;
  t.learning_rate = 3e-3;
  t.warmup_steps = 50;
  t.total_steps = steps;
  t.augment = false;
  t.seed = seed;

  const auto chunks = training::make_chunks(fixtures::toy_corpus(32), t.chunk_notes, training::ShortChunkPolicy::kPad);
  const auto eval = training::fixed_examples(chunks, t, 40, seed + 1);

  Report r;
  std::size_t count = 0;
  for (const auto& ex : eval) {
    for (std::size_t i = 0; i < ex.targets.size(); ++i) {
      if (ex.loss_mask[i]) {
        r.uniform_baseline += std::log(static_cast<double>(alphabet_size(channel_at(i))));
        ++count;
      }
    }
  }
  r.uniform_baseline /= static_cast<double>(count);

  Rng rng(seed);
  training::Trainer trainer(cfg, model::ModelParams<float>::initialize(cfg, rng), t);
  training::BatchSampler sampler(chunks, t);
  r.initial_loss = trainer.evaluate(eval);
  for (std::size_t s = 0; s < steps; ++s) r.train_losses.push_back(trainer.step(sampler.next()).loss);
  r.final_loss = trainer.evaluate(eval);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

}  // namespace overfit
