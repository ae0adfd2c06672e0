#include "pianofill/inference/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace pianofill::inference {

std::vector<double> top_p_distribution(std::span<const float> logits, double p) {
  if (logits.empty()) throw std::invalid_argument("empty logit vector");
  if (!(p > 0.0 && p <= 1.0)) throw std::invalid_argument("top_p must lie in (0, 1]");
  double mx = -INFINITY;
  for (float l : logits) {
    if (std::isnan(l) || l == INFINITY) throw std::domain_error("non-finite logit");
    mx = std::max(mx, static_cast<double>(l));
  }
  if (mx == -INFINITY) throw std::domain_error("every symbol is excluded");
  std::vector<double> prob(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) sum += prob[i] = std::exp(static_cast<double>(logits[i]) - mx);
  for (double& q : prob) q /= sum;

  std::vector<std::size_t> order(prob.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return prob[a] > prob[b]; });
  std::vector<double> out(prob.size(), 0.0);
  double kept = 0.0;
  for (std::size_t i : order) {
    out[i] = prob[i];
    kept += prob[i];
    if (kept >= p) break;
  }
  for (double& q : out) q /= kept;
  return out;
}

int top_p_sample(std::span<const float> logits, double p, Rng& rng) {
  const auto dist = top_p_distribution(logits, p);
  const double u = rng.uniform();
  double acc = 0.0;
  int last = -1;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    if (dist[i] <= 0.0) continue;
    acc += dist[i];
    last = static_cast<int>(i);
    if (u < acc) return last;
  }
  return last;
}

int density_to_note_count(double density, double duration_s) {
  if (!(density >= 0.0) || !(duration_s >= 0.0)) throw std::invalid_argument("density and duration must be >= 0");
  return static_cast<int>(std::floor(density * duration_s + 0.5));
}

}  // namespace pianofill::inference
