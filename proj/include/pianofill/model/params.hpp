#pragma once

#include <array>
#include <string>
#include <vector>

#include "pianofill/encoding.hpp"
#include "pianofill/model/attention.hpp"
#include "pianofill/model/config.hpp"
#include "pianofill/rng.hpp"

namespace pianofill::model {

template <typename T>
struct LinearParams {
  Mat<T> w;  // out x in
  Mat<T> b;  // out x 1
};

template <typename T>
struct NormParams {
  Mat<T> gain;
  Mat<T> bias;
};

template <typename T>
struct AttentionParams {
  LinearParams<T> q, k, v, o;
};

/// GRU-style merge of a residual stream x with a sublayer output y:
///   r = sigmoid(Wr y + Ur x + br), z = sigmoid(Wz y + Uz x + bz)
///   h = tanh(Wg y + Ug (r * x) + bg), out = (1 - z) * x + z * h
template <typename T>
struct GateParams {
  Mat<T> wy;  // [Wr; Wz; Wg], 3D x D
  Mat<T> ux;  // [Ur; Uz], 2D x D
  Mat<T> ug;  // D x D
  Mat<T> b;   // [br; bz; bg], 3D x 1
};

template <typename T>
struct FeedForwardParams {
  LinearParams<T> fc1, fc2;
};

template <typename T>
struct EncoderLayerParams {
  NormParams<T> attn_norm;
  AttentionParams<T> attn;
  GateParams<T> attn_gate;
  NormParams<T> ff_norm;
  FeedForwardParams<T> ff;
  GateParams<T> ff_gate;
};

template <typename T>
struct DecoderLayerParams {
  NormParams<T> attn_norm;
  AttentionParams<T> attn;
  GateParams<T> attn_gate;
  LinearParams<T> cross;  // projects the aligned encoder vector into the stream
  GateParams<T> cross_gate;
  NormParams<T> ff_norm;
  FeedForwardParams<T> ff;
  GateParams<T> ff_gate;
};

/// Token tables (one per channel, one column per symbol), the trainable
/// 4-row channel embedding, and the projection of p(t) into the model width.
template <typename T>
struct StackInputParams {
  std::array<Mat<T>, kNumChannels> tables;
  Mat<T> channel_embedding;  // channel_embed_dim x 4
  LinearParams<T> position;  // model_dim x positional_total
};

template <typename T>
struct ModelParams {
  StackInputParams<T> encoder_input;
  std::vector<EncoderLayerParams<T>> encoder;
  NormParams<T> encoder_norm;

  StackInputParams<T> decoder_input;
  Mat<T> start;  // model_dim x 1
  std::vector<DecoderLayerParams<T>> decoder;
  NormParams<T> decoder_norm;

  std::array<LinearParams<T>, kNumChannels> heads;

  /// Zero-filled parameters with the shapes implied by `config`.
  static ModelParams zeros(const ModelConfig& config);
  /// Fan-in scaled uniform projections, unit norms, pass-through gate bias.
  static ModelParams initialize(const ModelConfig& config, Rng& rng);

  template <typename U>
  ModelParams<U> cast() const;

  std::size_t parameter_count() const;
  void set_zero();
};

// Encoder table rows: alphabet symbols, then NC, then PAD.
inline int encoder_nc_row(Channel c) { return alphabet_size(c); }
inline int encoder_pad_row(Channel c) { return alphabet_size(c) + 1; }
// Decoder table rows: alphabet symbols, then PAD.
inline int decoder_pad_row(Channel c) { return alphabet_size(c); }

namespace detail {

template <typename P, typename F>
void visit_linear(P& p, const std::string& name, F& f) {
  f(name + ".w", p.w);
  f(name + ".b", p.b);
}
template <typename P, typename F>
void visit_norm(P& p, const std::string& name, F& f) {
  f(name + ".gain", p.gain);
  f(name + ".bias", p.bias);
}
template <typename P, typename F>
void visit_attention(P& p, const std::string& name, F& f) {
  visit_linear(p.q, name + ".q", f);
  visit_linear(p.k, name + ".k", f);
  visit_linear(p.v, name + ".v", f);
  visit_linear(p.o, name + ".o", f);
}
template <typename P, typename F>
void visit_gate(P& p, const std::string& name, F& f) {
  f(name + ".wy", p.wy);
  f(name + ".ux", p.ux);
  f(name + ".ug", p.ug);
  f(name + ".b", p.b);
}
template <typename P, typename F>
void visit_ff(P& p, const std::string& name, F& f) {
  visit_linear(p.fc1, name + ".fc1", f);
  visit_linear(p.fc2, name + ".fc2", f);
}
template <typename P, typename F>
void visit_input(P& p, const std::string& name, F& f) {
  for (int c = 0; c < kNumChannels; ++c) {
    f(name + ".table." + std::string(channel_name(static_cast<Channel>(c))), p.tables[c]);
  }
  f(name + ".channel_embedding", p.channel_embedding);
  visit_linear(p.position, name + ".position", f);
}

}  // namespace detail

/// Calls f(name, matrix) for every tensor in a fixed order. Works on const params.
template <typename Params, typename F>
void for_each_tensor(Params& p, F&& f) {
  using namespace detail;
  visit_input(p.encoder_input, "encoder.input", f);
  for (std::size_t i = 0; i < p.encoder.size(); ++i) {
    auto& l = p.encoder[i];
    const std::string n = "encoder.layer" + std::to_string(i);
    visit_norm(l.attn_norm, n + ".attn_norm", f);
    visit_attention(l.attn, n + ".attn", f);
    visit_gate(l.attn_gate, n + ".attn_gate", f);
    visit_norm(l.ff_norm, n + ".ff_norm", f);
    visit_ff(l.ff, n + ".ff", f);
    visit_gate(l.ff_gate, n + ".ff_gate", f);
  }
  visit_norm(p.encoder_norm, "encoder.norm", f);
  visit_input(p.decoder_input, "decoder.input", f);
  f(std::string("decoder.start"), p.start);
  for (std::size_t i = 0; i < p.decoder.size(); ++i) {
    auto& l = p.decoder[i];
    const std::string n = "decoder.layer" + std::to_string(i);
    visit_norm(l.attn_norm, n + ".attn_norm", f);
    visit_attention(l.attn, n + ".attn", f);
    visit_gate(l.attn_gate, n + ".attn_gate", f);
    visit_linear(l.cross, n + ".cross", f);
    visit_gate(l.cross_gate, n + ".cross_gate", f);
    visit_norm(l.ff_norm, n + ".ff_norm", f);
    visit_ff(l.ff, n + ".ff", f);
    visit_gate(l.ff_gate, n + ".ff_gate", f);
  }
  visit_norm(p.decoder_norm, "decoder.norm", f);
  for (int c = 0; c < kNumChannels; ++c) {
    visit_linear(p.heads[c], "head." + std::string(channel_name(static_cast<Channel>(c))), f);
  }
}

template <typename Params>
auto tensor_list(Params& p) {
  using M = std::remove_reference_t<decltype((p.start))>;
  std::vector<std::pair<std::string, M*>> out;
  for_each_tensor(p, [&](const std::string& name, M& m) { out.emplace_back(name, &m); });
  return out;
}

template <typename T>
template <typename U>
ModelParams<U> ModelParams<T>::cast() const {
  ModelParams<U> out;
  out.encoder.resize(encoder.size());
  out.decoder.resize(decoder.size());
  std::vector<const Mat<T>*> src;
  for_each_tensor(*this, [&](const std::string&, const Mat<T>& m) { src.push_back(&m); });
  std::size_t i = 0;
  for_each_tensor(out, [&](const std::string&, Mat<U>& m) { m = src[i++]->template cast<U>(); });
  return out;
}

extern template struct ModelParams<float>;
extern template struct ModelParams<double>;

}  // namespace pianofill::model
