#pragma once

#include "mpd/core/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mpd {

/// Gradients keyed by parameter name; each entry has its parameter's shape.
template <typename Scalar>
using GradientMap = std::map<std::string, Matrix<Scalar>>;

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Named trainable tensors plus Adam state.
///
/// Names iterate in lexicographic order, which fixes the order of every
/// reduction, initialization draw and serialized record.
template <typename Scalar>
class ParamSet {
 public:
  using Mat = Matrix<Scalar>;

  void add(const std::string& name, Mat value) {
    if (!values_.emplace(name, std::move(value)).second) {
      throw std::invalid_argument("ParamSet: duplicate parameter '" + name + "'");
    }
  }

  bool contains(const std::string& name) const { return values_.count(name) != 0; }

  const Mat& at(const std::string& name) const {
    auto it = values_.find(name);
    if (it == values_.end()) throw std::out_of_range("ParamSet: no parameter '" + name + "'");
    return it->second;
  }

  Mat& at(const std::string& name) {
    auto it = values_.find(name);
    if (it == values_.end()) throw std::out_of_range("ParamSet: no parameter '" + name + "'");
    return it->second;
  }

  const std::map<std::string, Mat>& values() const { return values_; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(values_.size());
    for (const auto& [name, _] : values_) out.push_back(name);
    return out;
  }

  std::size_t size() const { return values_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, v] : values_) n += static_cast<std::size_t>(v.size());
    return n;
  }

  std::uint64_t step() const { return step_; }
  bool has_moments() const { return !first_moment_.empty(); }
  const std::map<std::string, Mat>& first_moments() const { return first_moment_; }
  const std::map<std::string, Mat>& second_moments() const { return second_moment_; }

  /// Copy of the values only, with fresh optimizer state.
  ParamSet values_only() const {
    ParamSet out;
    out.values_ = values_;
    return out;
  }

  GradientMap<Scalar> zeros_like() const {
    GradientMap<Scalar> g;
    for (const auto& [name, v] : values_) g.emplace(name, Mat::Zero(v.rows(), v.cols()));
    return g;
  }

  bool operator==(const ParamSet& other) const {
    return step_ == other.step_ && values_ == other.values_ &&
           first_moment_ == other.first_moment_ && second_moment_ == other.second_moment_;
  }

  template <typename S>
  friend void adam_step(ParamSet<S>& params, const GradientMap<S>& grads,
                        const std::function<S(const std::string&)>& learning_rate,
                        const AdamOptions& options);

 private:
  std::map<std::string, Mat> values_;
  std::map<std::string, Mat> first_moment_;
  std::map<std::string, Mat> second_moment_;
  std::uint64_t step_ = 0;
};

/// One Adam update with bias correction. The learning rate may vary per
/// parameter name.
template <typename Scalar>
void adam_step(ParamSet<Scalar>& params, const GradientMap<Scalar>& grads,
               const std::function<Scalar(const std::string&)>& learning_rate,
               const AdamOptions& options) {
  for (const auto& [name, value] : params.values_) {
    auto it = grads.find(name);
    if (it == grads.end()) throw std::invalid_argument("adam_step: missing gradient for '" + name + "'");
    detail::require_same_shape(value, it->second, "adam_step");
  }
  for (const auto& [name, _] : grads) {
    if (!params.contains(name)) {
      throw std::invalid_argument("adam_step: gradient for unknown parameter '" + name + "'");
    }
  }

  if (params.first_moment_.empty()) {
    for (const auto& [name, value] : params.values_) {
      params.first_moment_.emplace(name, Matrix<Scalar>::Zero(value.rows(), value.cols()));
      params.second_moment_.emplace(name, Matrix<Scalar>::Zero(value.rows(), value.cols()));
    }
  }
  ++params.step_;

  const Scalar b1 = static_cast<Scalar>(options.beta1);
  const Scalar b2 = static_cast<Scalar>(options.beta2);
  const Scalar eps = static_cast<Scalar>(options.epsilon);
  const Scalar t = static_cast<Scalar>(params.step_);
  const Scalar correction1 = Scalar(1) - std::pow(b1, t);
  const Scalar correction2 = Scalar(1) - std::pow(b2, t);

  for (auto& [name, value] : params.values_) {
    const Matrix<Scalar>& g = grads.at(name);
    Matrix<Scalar>& m = params.first_moment_.at(name);
    Matrix<Scalar>& v = params.second_moment_.at(name);
    const Scalar lr = learning_rate(name);
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
    value.array() -= lr * (m.array() / correction1) / ((v.array() / correction2).sqrt() + eps);
  }
}

template <typename Scalar>
void adam_step(ParamSet<Scalar>& params, const GradientMap<Scalar>& grads, Scalar lr,
               const AdamOptions& options = {}) {
  adam_step<Scalar>(params, grads, [lr](const std::string&) { return lr; }, options);
}

/// Global L2 norm over every entry of a gradient map.
template <typename Scalar>
Scalar gradient_norm(const GradientMap<Scalar>& grads) {
  Scalar total = 0;
  for (const auto& [_, g] : grads) total += g.squaredNorm();
  return std::sqrt(total);
}

}  // namespace mpd
