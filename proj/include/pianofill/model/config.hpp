#pragma once

#include <string>

#include <json.hpp>

namespace pianofill::model {

struct ModelConfig {
  int n_heads = 8;
  int head_dim = 64;
  int model_dim = 512;
  int ff_dim = 1024;
  int encoder_layers = 4;
  int decoder_layers = 8;
  double dropout = 0.1;
  int channel_embed_dim = 12;
  int token_pos_dim = 128;
  int elapsed_dim = 128;
  /// Elapsed-time sinusoid phase = elapsed_scale * seconds (centisecond resolution).
  double elapsed_scale = 100.0;
  int max_notes_per_chunk = 1024;
  double top_p_default = 0.95;
  /// Update-gate bias offset; larger values start closer to pass-through.
  double gate_bias = 2.0;
  double norm_epsilon = 1e-5;

  int positional_total() const { return channel_embed_dim + token_pos_dim + elapsed_dim; }

  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;

  /// The full-size architecture: 8x64 heads, 4 encoder and 8 decoder layers.
  static ModelConfig reference();
  /// Small enough for interactive CPU use and desk-scale training.
  static ModelConfig desk();
  /// Tiny configuration for gradient checks and unit tests.
  static ModelConfig toy();
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace pianofill::model
