#include "pianofill/model/config.hpp"

#include <stdexcept>

namespace pianofill::model {

void ModelConfig::validate() const {
  const auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("invalid model config: ") + what);
  };
  require(n_heads > 0 && head_dim > 0 && model_dim > 0 && ff_dim > 0, "dimensions must be positive");
  require(model_dim == n_heads * head_dim, "model_dim must equal n_heads * head_dim");
  require(encoder_layers > 0 && decoder_layers > 0, "layer counts must be positive");
  require(channel_embed_dim > 0, "channel_embed_dim must be positive");
  require(token_pos_dim > 0 && token_pos_dim % 2 == 0, "token_pos_dim must be positive and even");
  require(elapsed_dim > 0 && elapsed_dim % 2 == 0, "elapsed_dim must be positive and even");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
  require(top_p_default > 0.0 && top_p_default <= 1.0, "top_p_default must lie in (0, 1]");
  require(max_notes_per_chunk > 0, "max_notes_per_chunk must be positive");
  require(elapsed_scale > 0.0 && norm_epsilon > 0.0, "scales must be positive");
}

ModelConfig ModelConfig::reference() { return ModelConfig{}; }

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.n_heads = 4;
  c.head_dim = 32;
  c.model_dim = 128;
  c.ff_dim = 256;
  c.encoder_layers = 2;
  c.decoder_layers = 4;
  return c;
}

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.n_heads = 2;
  c.head_dim = 4;
  c.model_dim = 8;
  c.ff_dim = 16;
  c.encoder_layers = 2;
  c.decoder_layers = 2;
  c.dropout = 0.0;
  c.channel_embed_dim = 4;
  c.token_pos_dim = 8;
  c.elapsed_dim = 8;
  c.max_notes_per_chunk = 16;
  return c;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"n_heads", c.n_heads},
                     {"head_dim", c.head_dim},
                     {"model_dim", c.model_dim},
                     {"ff_dim", c.ff_dim},
                     {"encoder_layers", c.encoder_layers},
                     {"decoder_layers", c.decoder_layers},
                     {"dropout", c.dropout},
                     {"channel_embed_dim", c.channel_embed_dim},
                     {"token_pos_dim", c.token_pos_dim},
                     {"elapsed_dim", c.elapsed_dim},
                     {"elapsed_scale", c.elapsed_scale},
                     {"max_notes_per_chunk", c.max_notes_per_chunk},
                     {"top_p_default", c.top_p_default},
                     {"gate_bias", c.gate_bias},
                     {"norm_epsilon", c.norm_epsilon}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("n_heads").get_to(c.n_heads);
  j.at("head_dim").get_to(c.head_dim);
  j.at("model_dim").get_to(c.model_dim);
  j.at("ff_dim").get_to(c.ff_dim);
  j.at("encoder_layers").get_to(c.encoder_layers);
  j.at("decoder_layers").get_to(c.decoder_layers);
  j.at("dropout").get_to(c.dropout);
  j.at("channel_embed_dim").get_to(c.channel_embed_dim);
  j.at("token_pos_dim").get_to(c.token_pos_dim);
  j.at("elapsed_dim").get_to(c.elapsed_dim);
  j.at("elapsed_scale").get_to(c.elapsed_scale);
  j.at("max_notes_per_chunk").get_to(c.max_notes_per_chunk);
  j.at("top_p_default").get_to(c.top_p_default);
  c.gate_bias = j.value("gate_bias", 2.0);
  c.norm_epsilon = j.value("norm_epsilon", 1e-5);
}

}  // namespace pianofill::model
