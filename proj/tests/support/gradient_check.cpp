#include "gradient_check.hpp"

#include <algorithm>
#include <cmath>

#include "model_fixtures.hpp"
#include "pianofill/model/transformer.hpp"

namespace gradcheck {

using namespace pianofill;
using namespace pianofill::model;

Report run(std::uint64_t seed, int per_tensor, double step, double floor) {
  const ModelConfig cfg = ModelConfig::toy();
  Rng rng(seed);
  ModelParams<double> params = ModelParams<double>::initialize(cfg, rng);
  // Non-trivial norm and bias values so every parameter path is exercised.
  for (auto& [name, t] : tensor_list(params)) {
    if (name.ends_with(".bias") || name.ends_with(".b")) {
      for (Eigen::Index i = 0; i < t->size(); ++i) t->data()[i] += 0.1 * rng.normal();
    }
  }
  const auto targets = fixtures::random_tokens(rng, 6);
  const auto constraints = fixtures::random_constraints(rng, targets, 0.5);

  const Transformer<double> model(cfg, params);
  ModelParams<double> grads = ModelParams<double>::zeros(cfg);
  model.loss(targets, constraints, &grads);

  Report report;
  auto tensors = tensor_list(params);
  auto grad_tensors = tensor_list(grads);
  report.tensors = tensors.size();
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    Mat<double>& w = *tensors[k].second;
    const Mat<double>& g = *grad_tensors[k].second;
    std::vector<long> live, all;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      all.push_back(static_cast<long>(i));
      if (g.data()[i] != 0.0) live.push_back(static_cast<long>(i));
    }
    const auto& pool = live.empty() ? all : live;
    bool sampled = false;
    for (int s = 0; s < per_tensor && !pool.empty(); ++s) {
      const long i = pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))];
      const double keep = w.data()[i];
      w.data()[i] = keep + step;
      const double up = model.loss(targets, constraints, nullptr).loss_sum;
      w.data()[i] = keep - step;
      const double down = model.loss(targets, constraints, nullptr).loss_sum;
      w.data()[i] = keep;
      Sample smp{tensors[k].first, i, g.data()[i], (up - down) / (2 * step), 0.0};
      smp.rel_error =
          std::abs(smp.analytic - smp.numeric) / std::max({std::abs(smp.analytic), std::abs(smp.numeric), floor});
      report.worst = std::max(report.worst, smp.rel_error);
      report.samples.push_back(smp);
      sampled = true;
    }
    if (sampled) ++report.tensors_sampled;
  }
  return report;
}

}  // namespace gradcheck
