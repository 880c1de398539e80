#pragma once

#include "mpd/core/params.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>

namespace mpd {

template <typename Scalar>
struct LossAndGradient {
  Scalar loss{};
  GradientMap<Scalar> gradient;
};

template <typename Scalar>
using LossClosure = std::function<LossAndGradient<Scalar>(const ParamSet<Scalar>&)>;

/// Largest disagreement between the analytic gradient and a central
/// difference, over every coordinate of every parameter:
///   |analytic - numeric| / max(1, |analytic|, |numeric|)
template <typename Scalar>
Scalar grad_check(const LossClosure<Scalar>& model, const ParamSet<Scalar>& params, Scalar eps) {
  if (!(eps > Scalar(0) && eps <= Scalar(1e-2))) {
    throw std::invalid_argument("grad_check: step must lie in (0, 1e-2]");
  }
  const auto checked = [](Scalar v) {
    if (!std::isfinite(v)) throw std::domain_error("grad_check: non-finite loss");
    return v;
  };

  const LossAndGradient<Scalar> base = model(params);
  checked(base.loss);

  ParamSet<Scalar> probe = params.values_only();
  Scalar worst = 0;
  for (const std::string& name : params.names()) {
    auto it = base.gradient.find(name);
    if (it == base.gradient.end()) throw std::invalid_argument("grad_check: no gradient for '" + name + "'");
    const Matrix<Scalar>& analytic = it->second;
    detail::require_same_shape(analytic, params.at(name), "grad_check");
    for (Eigen::Index i = 0; i < analytic.size(); ++i) {
      Scalar& x = probe.at(name).data()[i];
      const Scalar original = x;
      x = original + eps;
      const Scalar up = checked(model(probe).loss);
      x = original - eps;
      const Scalar down = checked(model(probe).loss);
      x = original;
      const Scalar numeric = (up - down) / (Scalar(2) * eps);
      const Scalar a = analytic.data()[i];
      const Scalar denom = std::max({Scalar(1), std::abs(a), std::abs(numeric)});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace mpd
