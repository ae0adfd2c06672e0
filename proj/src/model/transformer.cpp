#include "pianofill/model/transformer.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace pianofill::model {

std::size_t ConstraintSequence::free_count() const {
  std::size_t n = 0;
  for (int tok : tokens) n += tok == kNoConstraint;
  return n;
}

void ConstraintSequence::validate() const {
  if (tokens.size() % kNumChannels != 0) {
    throw StructureError("constraint sequence length " + std::to_string(tokens.size()) + " is not a multiple of 4");
  }
  if (elapsed_s.size() != tokens.size()) throw StructureError("elapsed_s must have one value per token");
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const int tok = tokens[t];
    if (tok == kNoConstraint || tok == kPadToken) continue;
    if (tok < 0 || tok >= alphabet_size(channel_at(t))) {
      throw StructureError("constraint " + std::to_string(t) + " holds index " + std::to_string(tok) +
                           " outside the " + std::string(channel_name(channel_at(t))) + " alphabet");
    }
  }
}

template <typename T>
void sinusoid(double pos, int dim, Eigen::Ref<Vec<T>> out) {
  const int pairs = dim / 2;
  for (int i = 0; i < pairs; ++i) {
    const double angle = pos / std::pow(10000.0, 2.0 * i / pairs);
    out(2 * i) = static_cast<T>(std::sin(angle));
    out(2 * i + 1) = static_cast<T>(std::cos(angle));
  }
}

template <typename T>
Vec<T> positional_embedding(const ModelConfig& config, const Mat<T>& channel_embedding, std::size_t t,
                            double elapsed_s) {
  Vec<T> p(config.positional_total());
  p.head(config.channel_embed_dim) = channel_embedding.col(static_cast<Eigen::Index>(t % kNumChannels));
  sinusoid<T>(static_cast<double>(t / kNumChannels), config.token_pos_dim,
              p.segment(config.channel_embed_dim, config.token_pos_dim));
  sinusoid<T>(config.elapsed_scale * elapsed_s, config.elapsed_dim, p.tail(config.elapsed_dim));
  return p;
}

std::vector<double> decoder_elapsed(std::span<const int> tokens, std::size_t positions) {
  std::vector<double> out(positions, 0.0);
  double acc = 0.0;
  for (std::size_t t = 0; t < positions; ++t) {
    if (t > 0 && t % kNumChannels == 0) {
      const int shift = tokens[t - 1];
      if (shift >= 0) acc += TimeQuantizer::dequantize(shift);
    }
    out[t] = acc;
  }
  return out;
}

std::vector<int> merge_inputs(std::span<const int> targets, const ConstraintSequence& constraints) {
  if (targets.size() != constraints.size()) throw StructureError("targets and constraints differ in length");
  std::vector<int> merged(targets.size());
  for (std::size_t t = 0; t < targets.size(); ++t) {
    merged[t] = constraints.tokens[t] == kNoConstraint ? targets[t] : constraints.tokens[t];
  }
  return merged;
}

namespace {

template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

template <typename T>
Mat<T> linear_fwd(const LinearParams<T>& p, const Mat<T>& x) {
  Mat<T> y = p.w * x;
  y.colwise() += p.b.col(0);
  return y;
}

template <typename T>
Mat<T> linear_bwd(const LinearParams<T>& p, const Mat<T>& x, const Mat<T>& dy, LinearParams<T>* g) {
  if (g != nullptr) {
    g->w.noalias() += dy * x.transpose();
    g->b.col(0) += dy.rowwise().sum();
  }
  return p.w.transpose() * dy;
}

template <typename T>
Mat<T> dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng* rng) {
  if (rng == nullptr || rate <= 0.0) return {};
  Mat<T> m(rows, cols);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng->uniform() < rate ? T(0) : keep_scale;
  return m;
}

template <typename T>
struct NormCache {
  Mat<T> xhat;
  RowVec<T> inv;
};

template <typename T>
Mat<T> norm_fwd(const NormParams<T>& p, const Mat<T>& x, double eps, NormCache<T>* cache) {
  const RowVec<T> mean = x.colwise().mean();
  Mat<T> xhat = x.rowwise() - mean;
  const RowVec<T> var = xhat.array().square().colwise().sum() / static_cast<T>(x.rows());
  const RowVec<T> inv = (var.array() + static_cast<T>(eps)).rsqrt();
  xhat.array().rowwise() *= inv.array();
  Mat<T> y = (xhat.array().colwise() * p.gain.col(0).array()).colwise() + p.bias.col(0).array();
  if (cache != nullptr) {
    cache->xhat = std::move(xhat);
    cache->inv = inv;
  }
  return y;
}

template <typename T>
Mat<T> norm_bwd(const NormParams<T>& p, const NormCache<T>& c, const Mat<T>& dy, NormParams<T>* g) {
  if (g != nullptr) {
    g->gain.col(0) += (dy.array() * c.xhat.array()).rowwise().sum().matrix();
    g->bias.col(0) += dy.rowwise().sum();
  }
  const Mat<T> dxhat = dy.array().colwise() * p.gain.col(0).array();
  const RowVec<T> mean_d = dxhat.colwise().mean();
  const RowVec<T> mean_dx = (dxhat.array() * c.xhat.array()).colwise().mean();
  Mat<T> dx = dxhat.rowwise() - mean_d;
  dx.array() -= c.xhat.array().rowwise() * mean_dx.array();
  dx.array().rowwise() *= c.inv.array();
  return dx;
}

template <typename T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <typename T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
  const T pdf = std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * std::numbers::pi_v<T>);
  return cdf + x * pdf;
}

template <typename T>
struct FeedForwardCache {
  Mat<T> x;
  Mat<T> a1;
  Mat<T> h;
  Mat<T> drop;
};

template <typename T>
Mat<T> ff_fwd(const FeedForwardParams<T>& p, const Mat<T>& x, double rate, Rng* rng, FeedForwardCache<T>* cache) {
  Mat<T> a1 = linear_fwd(p.fc1, x);
  Mat<T> h = a1.unaryExpr([](T v) { return gelu(v); });
  Mat<T> y = linear_fwd(p.fc2, h);
  Mat<T> drop = dropout_mask<T>(y.rows(), y.cols(), rate, rng);
  if (drop.size() > 0) y.array() *= drop.array();
  if (cache != nullptr) *cache = {x, std::move(a1), std::move(h), std::move(drop)};
  return y;
}

template <typename T>
Mat<T> ff_bwd(const FeedForwardParams<T>& p, const FeedForwardCache<T>& c, Mat<T> dy, FeedForwardParams<T>* g) {
  if (c.drop.size() > 0) dy.array() *= c.drop.array();
  Mat<T> dh = linear_bwd(p.fc2, c.h, dy, g ? &g->fc2 : nullptr);
  dh.array() *= c.a1.unaryExpr([](T v) { return gelu_grad(v); }).array();
  return linear_bwd(p.fc1, c.x, dh, g ? &g->fc1 : nullptr);
}

template <typename T>
struct GateCache {
  Mat<T> x, y, r, z, h;
};

template <typename T>
Mat<T> gate_fwd(const GateParams<T>& p, const Mat<T>& x, const Mat<T>& y, GateCache<T>* cache) {
  const Eigen::Index d = x.rows();
  Mat<T> pre_y = p.wy * y;
  pre_y.colwise() += p.b.col(0);
  const Mat<T> pre_x = p.ux * x;
  Mat<T> r = (pre_y.topRows(d) + pre_x.topRows(d)).unaryExpr([](T v) { return sigmoid(v); });
  Mat<T> z = (pre_y.middleRows(d, d) + pre_x.bottomRows(d)).unaryExpr([](T v) { return sigmoid(v); });
  const Mat<T> rx = r.cwiseProduct(x);
  Mat<T> h = (pre_y.bottomRows(d) + p.ug * rx).array().tanh().matrix();
  Mat<T> out = x + z.cwiseProduct(h - x);
  if (cache != nullptr) *cache = {x, y, std::move(r), std::move(z), std::move(h)};
  return out;
}

template <typename T>
void gate_bwd(const GateParams<T>& p, const GateCache<T>& c, const Mat<T>& dout, GateParams<T>* g, Mat<T>& dx,
              Mat<T>& dy) {
  const Eigen::Index d = c.x.rows();
  const Eigen::Index n = c.x.cols();
  Mat<T> da(3 * d, n);
  da.middleRows(d, d) = dout.cwiseProduct(c.h - c.x).cwiseProduct(c.z.cwiseProduct(Mat<T>::Ones(d, n) - c.z));
  da.bottomRows(d) = dout.cwiseProduct(c.z).cwiseProduct(Mat<T>::Ones(d, n) - c.h.cwiseProduct(c.h));
  const Mat<T> drx = p.ug.transpose() * da.bottomRows(d);
  da.topRows(d) = drx.cwiseProduct(c.x).cwiseProduct(c.r.cwiseProduct(Mat<T>::Ones(d, n) - c.r));

  dx = dout.cwiseProduct(Mat<T>::Ones(d, n) - c.z) + drx.cwiseProduct(c.r);
  dx.noalias() += p.ux.transpose() * da.topRows(2 * d);
  dy = p.wy.transpose() * da;
  if (g != nullptr) {
    g->wy.noalias() += da * c.y.transpose();
    g->ux.noalias() += da.topRows(2 * d) * c.x.transpose();
    g->ug.noalias() += da.bottomRows(d) * c.r.cwiseProduct(c.x).transpose();
    g->b.col(0) += da.rowwise().sum();
  }
}

template <typename T>
struct AttentionCache {
  Mat<T> x, q, k, v, phi_q, phi_k, a, drop;
};

template <typename T>
Mat<T> attention_fwd(const AttentionParams<T>& p, const Mat<T>& x, AttentionMask mask, int heads, int head_dim,
                     double rate, Rng* rng, AttentionCache<T>* cache, std::vector<HeadState<T>>* final_states) {
  Mat<T> q = linear_fwd(p.q, x);
  Mat<T> k = linear_fwd(p.k, x);
  Mat<T> v = linear_fwd(p.v, x);
  Mat<T> phi_q = feature_map<T>(q);
  Mat<T> phi_k = feature_map<T>(k);
  Mat<T> a(x.rows(), x.cols());
  if (final_states != nullptr) final_states->resize(heads);
  for (int h = 0; h < heads; ++h) {
    const Eigen::Index r0 = static_cast<Eigen::Index>(h) * head_dim;
    linear_attention_mapped<T>(phi_q.middleRows(r0, head_dim), phi_k.middleRows(r0, head_dim),
                               v.middleRows(r0, head_dim), mask, a.middleRows(r0, head_dim),
                               final_states ? &(*final_states)[h] : nullptr);
  }
  Mat<T> y = linear_fwd(p.o, a);
  Mat<T> drop = dropout_mask<T>(y.rows(), y.cols(), rate, rng);
  if (drop.size() > 0) y.array() *= drop.array();
  if (cache != nullptr) {
    *cache = {x, std::move(q), std::move(k), std::move(v), std::move(phi_q), std::move(phi_k), std::move(a),
              std::move(drop)};
  }
  return y;
}

template <typename T>
Mat<T> attention_bwd(const AttentionParams<T>& p, const AttentionCache<T>& c, Mat<T> dy, AttentionMask mask,
                     int heads, int head_dim, AttentionParams<T>* g) {
  if (c.drop.size() > 0) dy.array() *= c.drop.array();
  const Mat<T> da = linear_bwd(p.o, c.a, dy, g ? &g->o : nullptr);
  Mat<T> dq(c.q.rows(), c.q.cols());
  Mat<T> dk(c.k.rows(), c.k.cols());
  Mat<T> dv(c.v.rows(), c.v.cols());
  for (int h = 0; h < heads; ++h) {
    const Eigen::Index r0 = static_cast<Eigen::Index>(h) * head_dim;
    linear_attention_mapped_backward<T>(c.phi_q.middleRows(r0, head_dim), c.phi_k.middleRows(r0, head_dim),
                                        c.v.middleRows(r0, head_dim), c.a.middleRows(r0, head_dim),
                                        da.middleRows(r0, head_dim), mask, dq.middleRows(r0, head_dim),
                                        dk.middleRows(r0, head_dim), dv.middleRows(r0, head_dim));
  }
  dq.array() *= c.q.unaryExpr([](T v) { return elu_feature_grad(v); }).array();
  dk.array() *= c.k.unaryExpr([](T v) { return elu_feature_grad(v); }).array();
  Mat<T> dx = linear_bwd(p.q, c.x, dq, g ? &g->q : nullptr);
  dx += linear_bwd(p.k, c.x, dk, g ? &g->k : nullptr);
  dx += linear_bwd(p.v, c.x, dv, g ? &g->v : nullptr);
  return dx;
}

// Which table column feeds each position. table == -1 selects the START vector.
struct InputRef {
  int table;
  int column;
};

template <typename T>
struct InputCache {
  std::vector<InputRef> refs;
  Mat<T> positions;
};

template <typename T>
Mat<T> input_fwd(const ModelConfig& config, const StackInputParams<T>& p, const Mat<T>* start,
                 const std::vector<InputRef>& refs, std::span<const double> elapsed, InputCache<T>* cache) {
  const auto len = static_cast<Eigen::Index>(refs.size());
  Mat<T> pos(config.positional_total(), len);
  for (Eigen::Index t = 0; t < len; ++t) {
    pos.col(t) = positional_embedding<T>(config, p.channel_embedding, static_cast<std::size_t>(t), elapsed[t]);
  }
  Mat<T> x = linear_fwd(p.position, pos);
  for (Eigen::Index t = 0; t < len; ++t) {
    const InputRef& r = refs[t];
    x.col(t) += r.table < 0 ? start->col(0) : p.tables[r.table].col(r.column);
  }
  if (cache != nullptr) *cache = {refs, std::move(pos)};
  return x;
}

template <typename T>
void input_bwd(const ModelConfig& config, const StackInputParams<T>& p, const InputCache<T>& c, const Mat<T>& dx,
               StackInputParams<T>* g, Mat<T>* g_start) {
  if (g == nullptr) return;
  const Mat<T> dpos = linear_bwd(p.position, c.positions, dx, &g->position);
  for (Eigen::Index t = 0; t < dx.cols(); ++t) {
    const InputRef& r = c.refs[t];
    if (r.table < 0) {
      g_start->col(0) += dx.col(t);
    } else {
      g->tables[r.table].col(r.column) += dx.col(t);
    }
    g->channel_embedding.col(t % kNumChannels) += dpos.col(t).head(config.channel_embed_dim);
  }
}

std::vector<InputRef> encoder_refs(std::span<const int> tokens) {
  std::vector<InputRef> refs(tokens.size());
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const Channel ch = channel_at(t);
    int col = tokens[t];
    if (col == kNoConstraint) col = encoder_nc_row(ch);
    if (col == kPadToken) col = encoder_pad_row(ch);
    refs[t] = {channel_index(ch), col};
  }
  return refs;
}

InputRef decoder_ref(std::size_t position, int input_token) {
  if (position == 0) return {-1, 0};
  const Channel ch = channel_at(position - 1);
  const int col = input_token >= 0 ? input_token : decoder_pad_row(ch);
  return {channel_index(ch), col};
}

template <typename T>
struct EncoderLayerCache {
  NormCache<T> n1;
  AttentionCache<T> attn;
  GateCache<T> g1;
  NormCache<T> n2;
  FeedForwardCache<T> ff;
  GateCache<T> g2;
};

template <typename T>
struct DecoderLayerCache {
  NormCache<T> n1;
  AttentionCache<T> attn;
  GateCache<T> g1;
  GateCache<T> g2;
  NormCache<T> n3;
  FeedForwardCache<T> ff;
  GateCache<T> g3;
};

template <typename T>
struct ForwardCache {
  InputCache<T> enc_in;
  std::vector<EncoderLayerCache<T>> enc;
  NormCache<T> enc_norm;
  Mat<T> encoded;
  InputCache<T> dec_in;
  std::vector<DecoderLayerCache<T>> dec;
  NormCache<T> dec_norm;
};

}  // namespace

template <typename T>
struct Transformer<T>::Impl {
  static Mat<T> encoder_forward(const Transformer& m, const ConstraintSequence& c, Rng* rng, ForwardCache<T>* fc) {
    c.validate();
    const ModelConfig& cfg = m.config_;
    const ModelParams<T>& P = m.params_;
    Mat<T> x = input_fwd<T>(cfg, P.encoder_input, nullptr, encoder_refs(c.tokens), c.elapsed_s,
                         fc ? &fc->enc_in : nullptr);
    if (fc != nullptr) fc->enc.resize(P.encoder.size());
    for (std::size_t l = 0; l < P.encoder.size(); ++l) {
      const auto& L = P.encoder[l];
      EncoderLayerCache<T>* lc = fc ? &fc->enc[l] : nullptr;
      Mat<T> n1 = norm_fwd(L.attn_norm, x, cfg.norm_epsilon, lc ? &lc->n1 : nullptr);
      Mat<T> y1 = attention_fwd<T>(L.attn, n1, AttentionMask::kAntiCausal, cfg.n_heads, cfg.head_dim, cfg.dropout, rng,
                                lc ? &lc->attn : nullptr, nullptr);
      x = gate_fwd(L.attn_gate, x, y1, lc ? &lc->g1 : nullptr);
      Mat<T> n2 = norm_fwd(L.ff_norm, x, cfg.norm_epsilon, lc ? &lc->n2 : nullptr);
      Mat<T> y2 = ff_fwd(L.ff, n2, cfg.dropout, rng, lc ? &lc->ff : nullptr);
      x = gate_fwd(L.ff_gate, x, y2, lc ? &lc->g2 : nullptr);
    }
    return norm_fwd(P.encoder_norm, x, cfg.norm_epsilon, fc ? &fc->enc_norm : nullptr);
  }

  // Positions [0, positions): position t is fed inputs[t - 1] (START at 0).
  static Mat<T> decoder_forward(const Transformer& m, std::span<const int> inputs, std::size_t positions,
                                const Mat<T>& encoded, Rng* rng, ForwardCache<T>* fc,
                                std::vector<std::vector<HeadState<T>>>* final_states) {
    const ModelConfig& cfg = m.config_;
    const ModelParams<T>& P = m.params_;
    if (encoded.cols() < static_cast<Eigen::Index>(positions)) {
      throw StructureError("encoder output shorter than decoder span");
    }
    std::vector<InputRef> refs(positions);
    for (std::size_t t = 0; t < positions; ++t) refs[t] = decoder_ref(t, t > 0 ? inputs[t - 1] : 0);
    const std::vector<double> elapsed = decoder_elapsed(inputs, positions);
    Mat<T> x = input_fwd(cfg, P.decoder_input, &P.start, refs, elapsed, fc ? &fc->dec_in : nullptr);
    const Mat<T> enc = encoded.leftCols(static_cast<Eigen::Index>(positions));
    if (fc != nullptr) fc->dec.resize(P.decoder.size());
    if (final_states != nullptr) final_states->resize(P.decoder.size());
    for (std::size_t l = 0; l < P.decoder.size(); ++l) {
      const auto& L = P.decoder[l];
      DecoderLayerCache<T>* lc = fc ? &fc->dec[l] : nullptr;
      Mat<T> n1 = norm_fwd(L.attn_norm, x, cfg.norm_epsilon, lc ? &lc->n1 : nullptr);
      Mat<T> y1 = attention_fwd(L.attn, n1, AttentionMask::kCausal, cfg.n_heads, cfg.head_dim, cfg.dropout, rng,
                                lc ? &lc->attn : nullptr, final_states ? &(*final_states)[l] : nullptr);
      x = gate_fwd(L.attn_gate, x, y1, lc ? &lc->g1 : nullptr);
      x = gate_fwd(L.cross_gate, x, linear_fwd(L.cross, enc), lc ? &lc->g2 : nullptr);
      Mat<T> n3 = norm_fwd(L.ff_norm, x, cfg.norm_epsilon, lc ? &lc->n3 : nullptr);
      Mat<T> y3 = ff_fwd(L.ff, n3, cfg.dropout, rng, lc ? &lc->ff : nullptr);
      x = gate_fwd(L.ff_gate, x, y3, lc ? &lc->g3 : nullptr);
    }
    return norm_fwd(P.decoder_norm, x, cfg.norm_epsilon, fc ? &fc->dec_norm : nullptr);
  }

  static void backward(const Transformer& m, const ForwardCache<T>& fc, const Mat<T>& d_out, ModelParams<T>& g) {
    const ModelConfig& cfg = m.config_;
    const ModelParams<T>& P = m.params_;
    Mat<T> dx = norm_bwd(P.decoder_norm, fc.dec_norm, d_out, &g.decoder_norm);
    Mat<T> d_enc = Mat<T>::Zero(fc.encoded.rows(), fc.encoded.cols());
    Mat<T> d_res, d_branch;
    for (std::size_t li = P.decoder.size(); li-- > 0;) {
      const auto& L = P.decoder[li];
      auto& G = g.decoder[li];
      const auto& lc = fc.dec[li];
      gate_bwd(L.ff_gate, lc.g3, dx, &G.ff_gate, d_res, d_branch);
      dx = d_res + norm_bwd(L.ff_norm, lc.n3, ff_bwd(L.ff, lc.ff, d_branch, &G.ff), &G.ff_norm);
      gate_bwd(L.cross_gate, lc.g2, dx, &G.cross_gate, d_res, d_branch);
      d_enc += linear_bwd(L.cross, fc.encoded, d_branch, &G.cross);
      dx = d_res;
      gate_bwd(L.attn_gate, lc.g1, dx, &G.attn_gate, d_res, d_branch);
      const Mat<T> d_n1 = attention_bwd(L.attn, lc.attn, d_branch, AttentionMask::kCausal, cfg.n_heads, cfg.head_dim,
                                        &G.attn);
      dx = d_res + norm_bwd(L.attn_norm, lc.n1, d_n1, &G.attn_norm);
    }
    input_bwd(cfg, P.decoder_input, fc.dec_in, dx, &g.decoder_input, &g.start);

    dx = norm_bwd(P.encoder_norm, fc.enc_norm, d_enc, &g.encoder_norm);
    for (std::size_t li = P.encoder.size(); li-- > 0;) {
      const auto& L = P.encoder[li];
      auto& G = g.encoder[li];
      const auto& lc = fc.enc[li];
      gate_bwd(L.ff_gate, lc.g2, dx, &G.ff_gate, d_res, d_branch);
      dx = d_res + norm_bwd(L.ff_norm, lc.n2, ff_bwd(L.ff, lc.ff, d_branch, &G.ff), &G.ff_norm);
      gate_bwd(L.attn_gate, lc.g1, dx, &G.attn_gate, d_res, d_branch);
      const Mat<T> d_n1 = attention_bwd(L.attn, lc.attn, d_branch, AttentionMask::kAntiCausal, cfg.n_heads,
                                        cfg.head_dim, &G.attn);
      dx = d_res + norm_bwd(L.attn_norm, lc.n1, d_n1, &G.attn_norm);
    }
    input_bwd<T>(cfg, P.encoder_input, fc.enc_in, dx, &g.encoder_input, nullptr);
  }
};

template <typename T>
Transformer<T>::Transformer(const ModelConfig& config, const ModelParams<T>& params)
    : config_(config), params_(params) {
  config_.validate();
  if (static_cast<int>(params_.encoder.size()) != config_.encoder_layers ||
      static_cast<int>(params_.decoder.size()) != config_.decoder_layers ||
      params_.start.rows() != config_.model_dim) {
    throw std::invalid_argument("model parameters do not match the configuration");
  }
}

template <typename T>
Mat<T> Transformer<T>::encode(const ConstraintSequence& constraints) const {
  return Impl::encoder_forward(*this, constraints, nullptr, nullptr);
}

template <typename T>
std::vector<Vec<T>> Transformer<T>::decode_parallel(std::span<const int> tokens, const Mat<T>& encoded) const {
  const Mat<T> out = Impl::decoder_forward(*this, tokens, tokens.size(), encoded, nullptr, nullptr, nullptr);
  std::vector<Vec<T>> logits(tokens.size());
  for (int ch = 0; ch < kNumChannels; ++ch) {
    std::vector<Eigen::Index> cols;
    for (std::size_t t = ch; t < tokens.size(); t += kNumChannels) cols.push_back(static_cast<Eigen::Index>(t));
    if (cols.empty()) continue;
    const Mat<T> gathered = out(Eigen::all, cols);
    const Mat<T> lg = linear_fwd(params_.heads[ch], gathered);
    for (std::size_t i = 0; i < cols.size(); ++i) logits[cols[i]] = lg.col(static_cast<Eigen::Index>(i));
  }
  return logits;
}

template <typename T>
DecoderState<T> Transformer<T>::initial_state() const {
  DecoderState<T> s;
  s.layers.assign(params_.decoder.size(),
                  std::vector<HeadState<T>>(config_.n_heads, HeadState<T>::zeros(config_.head_dim)));
  return s;
}

template <typename T>
DecoderState<T> Transformer<T>::prefix_state(std::span<const int> prefix, const Mat<T>& encoded) const {
  DecoderState<T> s;
  const std::size_t positions = prefix.size() + 1;
  Impl::decoder_forward(*this, prefix, positions, encoded, nullptr, nullptr, &s.layers);
  s.position = positions;
  s.elapsed_s = decoder_elapsed(prefix, positions).back();
  return s;
}

template <typename T>
Vec<T> Transformer<T>::step(DecoderState<T>& state, int input_token, const Eigen::Ref<const Vec<T>>& encoded_col,
                            bool with_logits) const {
  const ModelConfig& cfg = config_;
  const ModelParams<T>& P = params_;
  const std::size_t pos = state.position;
  if (pos > 0 && channel_at(pos - 1) == Channel::kTimeShift && input_token >= 0) {
    state.elapsed_s += TimeQuantizer::dequantize(input_token);
  }
  const InputRef ref = decoder_ref(pos, input_token);
  Mat<T> x = linear_fwd(P.decoder_input.position,
                        Mat<T>(positional_embedding<T>(cfg, P.decoder_input.channel_embedding, pos, state.elapsed_s)));
  x.col(0) += ref.table < 0 ? P.start.col(0) : P.decoder_input.tables[ref.table].col(ref.column);
  const Mat<T> enc = encoded_col;

  for (std::size_t l = 0; l < P.decoder.size(); ++l) {
    const auto& L = P.decoder[l];
    const Mat<T> n1 = norm_fwd<T>(L.attn_norm, x, cfg.norm_epsilon, nullptr);
    const Mat<T> q = linear_fwd(L.attn.q, n1);
    const Mat<T> k = linear_fwd(L.attn.k, n1);
    const Mat<T> v = linear_fwd(L.attn.v, n1);
    Mat<T> a(cfg.model_dim, 1);
    for (int h = 0; h < cfg.n_heads; ++h) {
      const Eigen::Index r0 = static_cast<Eigen::Index>(h) * cfg.head_dim;
      a.col(0).segment(r0, cfg.head_dim) =
          linear_attention_step<T>(state.layers[l][h], q.col(0).segment(r0, cfg.head_dim),
                                   k.col(0).segment(r0, cfg.head_dim), v.col(0).segment(r0, cfg.head_dim));
    }
    x = gate_fwd<T>(L.attn_gate, x, linear_fwd(L.attn.o, a), nullptr);
    x = gate_fwd<T>(L.cross_gate, x, linear_fwd(L.cross, enc), nullptr);
    const Mat<T> n3 = norm_fwd<T>(L.ff_norm, x, cfg.norm_epsilon, nullptr);
    x = gate_fwd<T>(L.ff_gate, x, ff_fwd<T>(L.ff, n3, 0.0, nullptr, nullptr), nullptr);
  }
  state.position = pos + 1;
  if (!with_logits) return {};
  const Mat<T> out = norm_fwd<T>(P.decoder_norm, x, cfg.norm_epsilon, nullptr);
  return linear_fwd(P.heads[channel_index(channel_at(pos))], out).col(0);
}

template <typename T>
LossResult Transformer<T>::loss(std::span<const int> targets, const ConstraintSequence& constraints,
                                ModelParams<T>* grads, T grad_scale, Rng* dropout) const {
  const std::vector<int> merged = merge_inputs(targets, constraints);
  for (std::size_t t = 0; t < targets.size(); ++t) {
    if (constraints.tokens[t] == kNoConstraint && (targets[t] < 0 || targets[t] >= alphabet_size(channel_at(t)))) {
      throw StructureError("target at free position " + std::to_string(t) + " is not an alphabet index");
    }
  }
  ForwardCache<T> fc;
  ForwardCache<T>* cache = grads ? &fc : nullptr;
  const Mat<T> encoded = Impl::encoder_forward(*this, constraints, dropout, cache);
  if (cache != nullptr) fc.encoded = encoded;
  const Mat<T> out = Impl::decoder_forward(*this, merged, merged.size(), encoded, dropout, cache, nullptr);

  LossResult result;
  Mat<T> d_out;
  if (grads != nullptr) d_out = Mat<T>::Zero(out.rows(), out.cols());
  for (int ch = 0; ch < kNumChannels; ++ch) {
    std::vector<Eigen::Index> cols;
    for (std::size_t t = ch; t < merged.size(); t += kNumChannels) {
      if (constraints.tokens[t] == kNoConstraint) cols.push_back(static_cast<Eigen::Index>(t));
    }
    if (cols.empty()) continue;
    const Mat<T> gathered = out(Eigen::all, cols);
    const Mat<T> logits = linear_fwd(params_.heads[ch], gathered);
    Mat<T> d_logits(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.cols(); ++i) {
      const T mx = logits.col(i).maxCoeff();
      const Vec<T> e = (logits.col(i).array() - mx).exp().matrix();
      const T sum = e.sum();
      const int target = targets[static_cast<std::size_t>(cols[i])];
      result.loss_sum += static_cast<double>(std::log(sum) + mx - logits(target, i));
      d_logits.col(i) = e / sum;
      d_logits(target, i) -= T(1);
    }
    result.count += cols.size();
    if (grads != nullptr) {
      d_logits *= grad_scale;
      const Mat<T> d_gathered = linear_bwd(params_.heads[ch], gathered, d_logits, &grads->heads[ch]);
      for (std::size_t i = 0; i < cols.size(); ++i) d_out.col(cols[i]) = d_gathered.col(static_cast<Eigen::Index>(i));
    }
  }
  if (grads != nullptr && result.count > 0) Impl::backward(*this, fc, d_out, *grads);
  return result;
}

template void sinusoid<float>(double, int, Eigen::Ref<Vec<float>>);
template void sinusoid<double>(double, int, Eigen::Ref<Vec<double>>);
template Vec<float> positional_embedding<float>(const ModelConfig&, const Mat<float>&, std::size_t, double);
template Vec<double> positional_embedding<double>(const ModelConfig&, const Mat<double>&, std::size_t, double);
template class Transformer<float>;
template class Transformer<double>;

}  // namespace pianofill::model
