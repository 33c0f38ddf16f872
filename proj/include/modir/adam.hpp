#pragma once

#include <cmath>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "modir/tensor.hpp"

namespace modir {

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moment buffers for one flat parameter block.
struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::size_t step = 0;
};

/// In-place bias-corrected Adam update of one parameter block.
inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
                      const AdamOptions& opt) {
  if (grads.size() != params.size()) throw ShapeError("adam_step: gradient and parameter sizes differ");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: optimizer state does not match parameters");
  ++state.step;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = opt.beta1 * state.m[i] + (1.0 - opt.beta1) * g;
    state.v[i] = opt.beta2 * state.v[i] + (1.0 - opt.beta2) * g * g;
    params[i] -= opt.lr * (state.m[i] / c1) / (std::sqrt(state.v[i] / c2) + opt.eps);
  }
}

/// Adam over a list of tensors. A tensor without a gradient buffer is
/// stepped with a zero gradient.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions opt) : params_(std::move(params)), opt_(opt), states_(params_.size()) {}

  /// Throws NonFiniteGradient (naming the tensor index) before touching any
  /// parameter if a gradient entry is not finite.
  void step() {
    for (std::size_t t = 0; t < params_.size(); ++t)
      for (double g : params_[t].grad())
        if (!std::isfinite(g)) {
          std::ostringstream os;
          os << "non-finite gradient in parameter tensor " << t << " " << shape_str(params_[t].shape())
             << " at optimizer step " << steps() + 1;
          throw NonFiniteGradient(os.str());
        }
    for (std::size_t t = 0; t < params_.size(); ++t) {
      Tensor& p = params_[t];
      if (p.has_grad()) {
        adam_step(p.mutable_data(), p.grad(), states_[t], opt_);
      } else {
        const std::vector<double> zero(p.numel(), 0.0);
        adam_step(p.mutable_data(), zero, states_[t], opt_);
      }
    }
    ++steps_;
  }

  std::size_t steps() const { return steps_; }
  const AdamOptions& options() const { return opt_; }
  const std::vector<AdamState>& states() const { return states_; }

 private:
  std::vector<Tensor> params_;
  AdamOptions opt_;
  std::vector<AdamState> states_;
  std::size_t steps_ = 0;
};

}  // namespace modir
