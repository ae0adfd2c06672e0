#include "pianofill/training/trainer.hpp"

#include <chrono>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include <json.hpp>

#include "pianofill/model/checkpoint.hpp"
#include "pianofill/model/transformer.hpp"

namespace pianofill::training {

using model::ModelParams;

void TrainConfig::validate() const {
  const auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("invalid training config: ") + what);
  };
  require(chunk_notes > 0 && batch_size > 0, "chunk_notes and batch_size must be positive");
  require(learning_rate > 0.0, "learning_rate must be positive");
  require(0.0 <= mask_ratio_lo && mask_ratio_lo <= mask_ratio_hi && mask_ratio_hi <= 1.0,
          "mask ratio bounds must satisfy 0 <= lo <= hi <= 1");
  require(grad_clip > 0.0, "grad_clip must be positive");
}

Trainer::Trainer(const model::ModelConfig& config, ModelParams<float> params, const TrainConfig& train)
    : config_(config),
      train_(train),
      params_(std::move(params)),
      m_(ModelParams<float>::zeros(config)),
      v_(ModelParams<float>::zeros(config)) {
  train_.validate();
}

double Trainer::scheduled_lr(std::uint64_t step) const {
  if (train_.warmup_steps == 0) return train_.learning_rate;
  return train_.learning_rate * std::min(1.0, static_cast<double>(step + 1) / static_cast<double>(train_.warmup_steps));
}

StepResult Trainer::step(const std::vector<TrainingExample>& batch) {
  StepResult r;
  const std::uint64_t step_index = steps_++;
  for (const auto& ex : batch) r.masked += ex.constraints.free_count();
  if (r.masked == 0) return r;

  const model::Transformer<float> net(config_, params_);
  ModelParams<float> grads = ModelParams<float>::zeros(config_);
  const float scale = 1.0f / static_cast<float>(r.masked);
  double loss_sum = 0.0;
  Rng dropout_root(train_.seed, 0xD0D0ULL);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Rng dropout = dropout_root.fork(step_index * 1000003ULL + i);
    loss_sum += net.loss(batch[i].targets, batch[i].constraints, &grads, scale,
                         config_.dropout > 0.0 ? &dropout : nullptr)
                    .loss_sum;
  }
  r.loss = loss_sum / static_cast<double>(r.masked);

  double sq = 0.0;
  for_each_tensor(grads, [&](const std::string&, const model::Mat<float>& g) { sq += g.cast<double>().squaredNorm(); });
  r.grad_norm = std::sqrt(sq);
  if (!std::isfinite(r.loss) || !std::isfinite(r.grad_norm)) {
    r.error = "non-finite " + std::string(std::isfinite(r.loss) ? "gradient norm" : "loss") + " at step " +
              std::to_string(step_index) + " (loss " + std::to_string(r.loss) + ", grad norm " +
              std::to_string(r.grad_norm) + ")";
    return r;
  }

  const float clip = r.grad_norm > train_.grad_clip ? static_cast<float>(train_.grad_clip / r.grad_norm) : 1.0f;
  r.learning_rate = scheduled_lr(step_index);
  ++adam_t_;
  const double b1 = train_.adam_beta1, b2 = train_.adam_beta2;
  const auto lr_t = static_cast<float>(r.learning_rate * std::sqrt(1.0 - std::pow(b2, adam_t_)) /
                                       (1.0 - std::pow(b1, adam_t_)));
  const auto eps = static_cast<float>(train_.adam_epsilon);
  auto p = model::tensor_list(params_);
  auto g = model::tensor_list(grads);
  auto m = model::tensor_list(m_);
  auto v = model::tensor_list(v_);
  for (std::size_t k = 0; k < p.size(); ++k) {
    const model::Mat<float> gk = *g[k].second * clip;
    *m[k].second = static_cast<float>(b1) * *m[k].second + static_cast<float>(1.0 - b1) * gk;
    *v[k].second = static_cast<float>(b2) * *v[k].second + static_cast<float>(1.0 - b2) * gk.cwiseAbs2();
    p[k].second->array() -= lr_t * m[k].second->array() / (v[k].second->array().sqrt() + eps);
  }
  r.applied = true;
  return r;
}

double Trainer::evaluate(const std::vector<TrainingExample>& examples, std::size_t* masked) const {
  const model::Transformer<float> net(config_, params_);
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& ex : examples) {
    const auto l = net.loss(ex.targets, ex.constraints, nullptr);
    sum += l.loss_sum;
    count += l.count;
  }
  if (masked != nullptr) *masked = count;
  return count ? sum / static_cast<double>(count) : 0.0;
}

BatchSampler::BatchSampler(std::vector<Chunk> chunks, const TrainConfig& train)
    : chunks_(std::move(chunks)), train_(train) {
  if (chunks_.empty()) throw std::invalid_argument("no training chunks");
  reshuffle();
}

void BatchSampler::reshuffle() {
  order_.resize(chunks_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  Rng rng(train_.seed, 0x5EEDULL + epoch_);
  for (std::size_t i = order_.size(); i > 1; --i) {
    std::swap(order_[i - 1], order_[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
  }
  cursor_ = 0;
}

std::vector<TrainingExample> BatchSampler::next() {
  std::vector<TrainingExample> batch;
  const MaskOptions mask{train_.mask_ratio_lo, train_.mask_ratio_hi, train_.mask_mode, std::nullopt};
  for (std::size_t b = 0; b < train_.batch_size; ++b) {
    if (cursor_ == order_.size()) {
      ++epoch_;
      reshuffle();
    }
    Rng rng(train_.seed, 0xE8A3ULL + drawn_++);
    Chunk chunk = chunks_[order_[cursor_++]];
    if (train_.augment) chunk = augment_chunk(chunk, rng);
    batch.push_back(sample_constraints(chunk, mask, rng));
  }
  return batch;
}

std::vector<TrainingExample> fixed_examples(const std::vector<Chunk>& chunks, const TrainConfig& train,
                                            std::size_t count, std::uint64_t seed) {
  std::vector<TrainingExample> out;
  if (chunks.empty()) return out;
  const MaskOptions mask{train.mask_ratio_lo, train.mask_ratio_hi, train.mask_mode, std::nullopt};
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(seed, 0xF1ED0000ULL + i);
    out.push_back(sample_constraints(chunks[i % chunks.size()], mask, rng));
  }
  return out;
}

Trainer run_training(const model::ModelConfig& config, ModelParams<float> init, const Corpus& corpus,
                     const TrainConfig& train, const TrainRunOptions& options) {
  train.validate();
  Trainer trainer(config, std::move(init), train);
  BatchSampler sampler(make_chunks(corpus.train, train.chunk_notes, train.short_policy), train);
  std::vector<TrainingExample> valid;
  if (!corpus.valid.empty()) {
    valid = fixed_examples(make_chunks(corpus.valid, train.chunk_notes, ShortChunkPolicy::kPad), train,
                           train.valid_examples, train.seed);
  }

  using clock = std::chrono::steady_clock;
  auto window_start = clock::now();
  std::size_t window_tokens = 0;
  for (std::size_t s = 0; s < train.total_steps; ++s) {
    const auto batch = sampler.next();
    for (const auto& ex : batch) window_tokens += ex.targets.size();
    const StepResult r = trainer.step(batch);
    const bool last = s + 1 == train.total_steps;
    if (options.log != nullptr && (!r.error.empty() || (train.log_every && (s + 1) % train.log_every == 0) || last)) {
      const double secs = std::chrono::duration<double>(clock::now() - window_start).count();
      nlohmann::json line = {{"step", s + 1},
                             {"loss", r.loss},
                             {"masked_tokens", r.masked},
                             {"tokens_per_sec", secs > 0 ? static_cast<double>(window_tokens) / secs : 0.0},
                             {"lr", r.learning_rate},
                             {"grad_norm", r.grad_norm}};
      if (!r.error.empty()) line["error"] = r.error;
      if (!valid.empty() && (last || (train.checkpoint_every && (s + 1) % train.checkpoint_every == 0))) {
        line["valid_loss"] = trainer.evaluate(valid);
      }
      *options.log << line.dump() << '\n' << std::flush;
      window_start = clock::now();
      window_tokens = 0;
    }
    if (!options.checkpoint_path.empty() &&
        (last || (train.checkpoint_every && (s + 1) % train.checkpoint_every == 0))) {
      model::save_checkpoint(options.checkpoint_path, trainer.params(), config, trainer.steps_taken());
    }
  }
  return trainer;
}

}  // namespace pianofill::training
