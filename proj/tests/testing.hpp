#pragma once

#include <functional>
#include <string>

#include "unetmer/nn/layers.hpp"
#include "unetmer/rng.hpp"
#include "unetmer/tensor.hpp"

namespace unetmer::test {

inline Tensor<double> randn(Rng& rng, std::vector<std::size_t> shape, double stddev = 1.0) {
  Tensor<double> t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, stddev);
  return t;
}

inline Tensor<float> randnf(Rng& rng, std::vector<std::size_t> shape, double stddev = 1.0) {
  Tensor<float> t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(rng.normal(0.0, stddev));
  return t;
}

inline Tensor<std::uint8_t> random_labels(Rng& rng, std::vector<std::size_t> shape,
                                          int num_classes) {
  Tensor<std::uint8_t> t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<std::uint8_t>(rng.uniform_int(num_classes));
  return t;
}

struct GradCheckResult {
  double max_rel = 0.0;
  std::string worst_param;
};

// Central finite differences against analytic gradients for every parameter
// scalar. `loss` runs a deterministic forward pass; `compute_grads` zeroes
// the gradients and runs forward + backward once. Entries where both the
// analytic and numeric gradient are below 1e-7 are treated as zero.
inline GradCheckResult check_gradients(const nn::ParamList<double>& params,
                                       const std::function<double()>& loss,
                                       const std::function<void()>& compute_grads) {
  compute_grads();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& [name, p] : params)
    analytic.emplace_back(p->grad.data(), p->grad.data() + p->grad.numel());

  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& value = params[pi].second->value;
    for (std::size_t j = 0; j < value.numel(); ++j) {
      const double saved = value[j];
      const double a = analytic[pi][j];
      auto rel_at = [&](double h0) {
        const double h = h0 * std::max(1.0, std::abs(saved));
        value[j] = saved + h;
        const double lp = loss();
        value[j] = saved - h;
        const double lm = loss();
        value[j] = saved;
        const double numeric = (lp - lm) / (2.0 * h);
        const double scale = std::max(std::abs(a), std::abs(numeric));
        return scale < 1e-7 ? 0.0 : std::abs(a - numeric) / scale;
      };
      // A wrong analytic gradient disagrees at every step size; finite-
      // difference artifacts (kink crossings at large h, roundoff at small h)
      // vanish at one of them, so take the best agreement.
      double rel = rel_at(1e-5);
      if (rel > 1e-6) rel = std::min(rel, rel_at(1e-6));
      if (rel > 1e-6) rel = std::min(rel, rel_at(1e-4));
      if (rel > result.max_rel) {
        result.max_rel = rel;
        result.worst_param = params[pi].first + "[" + std::to_string(j) + "]";
      }
    }
  }
  return result;
}

}  // namespace unetmer::test
