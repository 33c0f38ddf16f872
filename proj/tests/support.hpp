#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "modir/tensor.hpp"

namespace testing_support {

using modir::Shape;
using modir::Tape;
using modir::Tensor;

inline Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = true) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(modir::shape_numel(shape));
  for (double& x : v) x = u(rng);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

struct GradCheck {
  double rel_error = 0.0;  // ||analytic - numeric|| / max(||numeric||, ||analytic||)
  double numeric_norm = 0.0;
};

/// Compares tape gradients of a scalar-valued function against central
/// differences with step h, over every entry of every input.
inline GradCheck check_gradient(const std::function<Tensor(Tape&)>& f, std::vector<Tensor> inputs, double h = 1e-5) {
  for (auto& t : inputs) t.zero_grad();
  Tape tape;
  tape.backward(f(tape));
  double diff2 = 0.0, num2 = 0.0, ana2 = 0.0;
  for (auto& t : inputs) {
    const std::vector<double> analytic = t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                                      : std::vector<double>(t.numel(), 0.0);
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double orig = t[i];
      Tape off(false);
      t.mutable_data()[i] = orig + h;
      const double fp = f(off).item();
      t.mutable_data()[i] = orig - h;
      const double fm = f(off).item();
      t.mutable_data()[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      diff2 += (numeric - analytic[i]) * (numeric - analytic[i]);
      num2 += numeric * numeric;
      ana2 += analytic[i] * analytic[i];
    }
  }
  const double denom = std::max({std::sqrt(num2), std::sqrt(ana2), 1e-300});
  return {std::sqrt(diff2) / denom, std::sqrt(num2)};
}

}  // namespace testing_support
