#pragma once

// Linear attention with the positive feature map phi(x) = 1 + elu(x).
//
// Causal position t attends to s <= t, anti-causal to s >= t:
//   out_t = sum_s (phi(q_t) . phi(k_s)) v_s / sum_s phi(q_t) . phi(k_s)
// The parallel form keeps running sums S = sum phi(k) v^T and z = sum phi(k),
// so cost is O(L * d^2) and memory O(d^2) per head. Matrices are laid out
// feature-major: one column per position.

#include <Eigen/Dense>

namespace pianofill::model {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

enum class AttentionMask { kCausal, kAntiCausal };

template <typename T>
T elu_feature(T x) {
  return x > T(0) ? x + T(1) : std::exp(x);
}

template <typename T>
T elu_feature_grad(T x) {
  return x > T(0) ? T(1) : std::exp(x);
}

/// Elementwise 1 + elu(x); strictly positive.
template <typename T, typename Derived>
Mat<T> feature_map(const Eigen::MatrixBase<Derived>& x) {
  return x.unaryExpr([](T v) { return elu_feature(v); });
}

/// Recurrent state of one head: S accumulates phi(k) v^T, z accumulates phi(k).
template <typename T>
struct HeadState {
  Mat<T> S;
  Vec<T> z;

  static HeadState zeros(Eigen::Index head_dim) {
    return {Mat<T>::Zero(head_dim, head_dim), Vec<T>::Zero(head_dim)};
  }
};

/// Parallel masked attention over already-mapped queries and keys.
/// For causal masks `state` (optional) receives the sums after the last position.
template <typename T>
void linear_attention_mapped(const Eigen::Ref<const Mat<T>>& phi_q, const Eigen::Ref<const Mat<T>>& phi_k,
                             const Eigen::Ref<const Mat<T>>& v, AttentionMask mask, Eigen::Ref<Mat<T>> out,
                             HeadState<T>* state = nullptr) {
  const Eigen::Index len = phi_q.cols();
  const Eigen::Index dk = phi_k.rows();
  Mat<T> S = Mat<T>::Zero(dk, v.rows());
  Vec<T> z = Vec<T>::Zero(dk);
  for (Eigen::Index i = 0; i < len; ++i) {
    const Eigen::Index t = mask == AttentionMask::kCausal ? i : len - 1 - i;
    S.noalias() += phi_k.col(t) * v.col(t).transpose();
    z += phi_k.col(t);
    const T den = phi_q.col(t).dot(z);
    out.col(t).noalias() = S.transpose() * phi_q.col(t);
    out.col(t) /= den;
  }
  if (state != nullptr) {
    state->S = std::move(S);
    state->z = std::move(z);
  }
}

/// Gradients of linear_attention_mapped with respect to phi_q, phi_k and v.
/// `out` must be the forward output. Results are written, not accumulated.
template <typename T>
void linear_attention_mapped_backward(const Eigen::Ref<const Mat<T>>& phi_q, const Eigen::Ref<const Mat<T>>& phi_k,
                                      const Eigen::Ref<const Mat<T>>& v, const Eigen::Ref<const Mat<T>>& out,
                                      const Eigen::Ref<const Mat<T>>& d_out, AttentionMask mask,
                                      Eigen::Ref<Mat<T>> d_phi_q, Eigen::Ref<Mat<T>> d_phi_k,
                                      Eigen::Ref<Mat<T>> d_v) {
  const Eigen::Index len = phi_q.cols();
  const Eigen::Index dk = phi_k.rows();
  const Eigen::Index dv = v.rows();
  const auto order = [&](Eigen::Index i) { return mask == AttentionMask::kCausal ? i : len - 1 - i; };

  // Forward sweep: d/d phi_q needs the running sums at each position.
  Mat<T> d_num(dv, len);
  Vec<T> d_den(len);
  Mat<T> S = Mat<T>::Zero(dk, dv);
  Vec<T> z = Vec<T>::Zero(dk);
  for (Eigen::Index i = 0; i < len; ++i) {
    const Eigen::Index t = order(i);
    S.noalias() += phi_k.col(t) * v.col(t).transpose();
    z += phi_k.col(t);
    const T den = phi_q.col(t).dot(z);
    d_num.col(t) = d_out.col(t) / den;
    d_den(t) = -d_out.col(t).dot(out.col(t)) / den;
    d_phi_q.col(t).noalias() = S * d_num.col(t);
    d_phi_q.col(t) += z * d_den(t);
  }

  // Reverse sweep: keys and values see every later query.
  Mat<T> G = Mat<T>::Zero(dk, dv);
  Vec<T> g = Vec<T>::Zero(dk);
  for (Eigen::Index i = len - 1; i >= 0; --i) {
    const Eigen::Index t = order(i);
    G.noalias() += phi_q.col(t) * d_num.col(t).transpose();
    g += phi_q.col(t) * d_den(t);
    d_phi_k.col(t).noalias() = G * v.col(t);
    d_phi_k.col(t) += g;
    d_v.col(t).noalias() = G.transpose() * phi_k.col(t);
  }
}

/// Parallel masked linear attention on raw queries and keys (feature map applied here).
template <typename T>
Mat<T> linear_attention_parallel(const Mat<T>& q, const Mat<T>& k, const Mat<T>& v, AttentionMask mask) {
  Mat<T> out(v.rows(), v.cols());
  const Mat<T> phi_q = feature_map<T>(q);
  const Mat<T> phi_k = feature_map<T>(k);
  linear_attention_mapped<T>(phi_q, phi_k, v, mask, out);
  return out;
}

/// One recurrent (causal) step: S += phi(k) v^T, z += phi(k), out = S^T phi(q) / phi(q).z
template <typename T>
Vec<T> linear_attention_step(HeadState<T>& state, const Eigen::Ref<const Vec<T>>& q,
                             const Eigen::Ref<const Vec<T>>& k, const Eigen::Ref<const Vec<T>>& v) {
  const Vec<T> phi_q = feature_map<T>(q);
  const Vec<T> phi_k = feature_map<T>(k);
  state.S.noalias() += phi_k * v.transpose();
  state.z += phi_k;
  Vec<T> out = state.S.transpose() * phi_q;
  out /= phi_q.dot(state.z);
  return out;
}

}  // namespace pianofill::model
