#include "pianofill/model/params.hpp"

#include <cmath>

namespace pianofill::model {

namespace {

template <typename T>
LinearParams<T> linear_zeros(int out, int in) {
  return {Mat<T>::Zero(out, in), Mat<T>::Zero(out, 1)};
}

template <typename T>
NormParams<T> norm_zeros(int dim) {
  return {Mat<T>::Zero(dim, 1), Mat<T>::Zero(dim, 1)};
}

template <typename T>
AttentionParams<T> attention_zeros(int dim) {
  return {linear_zeros<T>(dim, dim), linear_zeros<T>(dim, dim), linear_zeros<T>(dim, dim), linear_zeros<T>(dim, dim)};
}

template <typename T>
GateParams<T> gate_zeros(int dim) {
  return {Mat<T>::Zero(3 * dim, dim), Mat<T>::Zero(2 * dim, dim), Mat<T>::Zero(dim, dim), Mat<T>::Zero(3 * dim, 1)};
}

template <typename T>
FeedForwardParams<T> ff_zeros(int dim, int ff) {
  return {linear_zeros<T>(ff, dim), linear_zeros<T>(dim, ff)};
}

template <typename T>
StackInputParams<T> input_zeros(const ModelConfig& c, bool encoder) {
  StackInputParams<T> p;
  for (int ch = 0; ch < kNumChannels; ++ch) {
    const Channel channel = static_cast<Channel>(ch);
    const int rows = encoder ? encoder_pad_row(channel) + 1 : decoder_pad_row(channel) + 1;
    p.tables[ch] = Mat<T>::Zero(c.model_dim, rows);
  }
  p.channel_embedding = Mat<T>::Zero(c.channel_embed_dim, kNumChannels);
  p.position = linear_zeros<T>(c.model_dim, c.positional_total());
  return p;
}

template <typename T>
void fill_uniform(Mat<T>& m, double bound, Rng& rng) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T>
void init_linear(LinearParams<T>& p, Rng& rng) {
  fill_uniform(p.w, 1.0 / std::sqrt(static_cast<double>(p.w.cols())), rng);
}

template <typename T>
void init_norm(NormParams<T>& p) {
  p.gain.setOnes();
}

template <typename T>
void init_gate(GateParams<T>& p, double gate_bias, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(p.ug.cols()));
  fill_uniform(p.wy, bound, rng);
  fill_uniform(p.ux, bound, rng);
  fill_uniform(p.ug, bound, rng);
  const Eigen::Index dim = p.ug.rows();
  p.b.middleRows(dim, dim).setConstant(static_cast<T>(-gate_bias));
}

template <typename T>
void init_attention(AttentionParams<T>& p, Rng& rng) {
  init_linear(p.q, rng);
  init_linear(p.k, rng);
  init_linear(p.v, rng);
  init_linear(p.o, rng);
}

template <typename T>
void init_input(StackInputParams<T>& p, Rng& rng) {
  for (auto& table : p.tables) fill_uniform(table, 1.0, rng);
  fill_uniform(p.channel_embedding, 1.0, rng);
  init_linear(p.position, rng);
}

}  // namespace

template <typename T>
ModelParams<T> ModelParams<T>::zeros(const ModelConfig& c) {
  c.validate();
  ModelParams<T> p;
  const int d = c.model_dim;
  p.encoder_input = input_zeros<T>(c, true);
  for (int i = 0; i < c.encoder_layers; ++i) {
    p.encoder.push_back({norm_zeros<T>(d), attention_zeros<T>(d), gate_zeros<T>(d), norm_zeros<T>(d),
                         ff_zeros<T>(d, c.ff_dim), gate_zeros<T>(d)});
  }
  p.encoder_norm = norm_zeros<T>(d);
  p.decoder_input = input_zeros<T>(c, false);
  p.start = Mat<T>::Zero(d, 1);
  for (int i = 0; i < c.decoder_layers; ++i) {
    p.decoder.push_back({norm_zeros<T>(d), attention_zeros<T>(d), gate_zeros<T>(d), linear_zeros<T>(d, d),
                         gate_zeros<T>(d), norm_zeros<T>(d), ff_zeros<T>(d, c.ff_dim), gate_zeros<T>(d)});
  }
  p.decoder_norm = norm_zeros<T>(d);
  for (int ch = 0; ch < kNumChannels; ++ch) p.heads[ch] = linear_zeros<T>(alphabet_size(static_cast<Channel>(ch)), d);
  return p;
}

template <typename T>
ModelParams<T> ModelParams<T>::initialize(const ModelConfig& c, Rng& rng) {
  ModelParams<T> p = zeros(c);
  init_input(p.encoder_input, rng);
  for (auto& l : p.encoder) {
    init_norm(l.attn_norm);
    init_attention(l.attn, rng);
    init_gate(l.attn_gate, c.gate_bias, rng);
    init_norm(l.ff_norm);
    init_linear(l.ff.fc1, rng);
    init_linear(l.ff.fc2, rng);
    init_gate(l.ff_gate, c.gate_bias, rng);
  }
  init_norm(p.encoder_norm);
  init_input(p.decoder_input, rng);
  fill_uniform(p.start, 1.0, rng);
  for (auto& l : p.decoder) {
    init_norm(l.attn_norm);
    init_attention(l.attn, rng);
    init_gate(l.attn_gate, c.gate_bias, rng);
    init_linear(l.cross, rng);
    init_gate(l.cross_gate, c.gate_bias, rng);
    init_norm(l.ff_norm);
    init_linear(l.ff.fc1, rng);
    init_linear(l.ff.fc2, rng);
    init_gate(l.ff_gate, c.gate_bias, rng);
  }
  init_norm(p.decoder_norm);
  for (auto& h : p.heads) init_linear(h, rng);
  return p;
}

template <typename T>
std::size_t ModelParams<T>::parameter_count() const {
  std::size_t n = 0;
  for_each_tensor(*this, [&](const std::string&, const Mat<T>& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

template <typename T>
void ModelParams<T>::set_zero() {
  for_each_tensor(*this, [](const std::string&, Mat<T>& m) { m.setZero(); });
}

template struct ModelParams<float>;
template struct ModelParams<double>;

}  // namespace pianofill::model
