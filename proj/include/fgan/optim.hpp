#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "fgan/tensor.hpp"

namespace fgan {

/// Heavy-ball SGD state: one velocity per parameter, momentum 0.99 and an
/// exponential per-epoch learning-rate decay of 0.95 by default.
template <typename S>
struct OptimizerState {
  S momentum = S(0.99);
  S base_lr = S(0.01);
  S decay = S(0.95);
  std::vector<typename Tensor<S>::Array> velocity;  // sized on first step

  void validate() const {
    if (!(momentum >= S(0) && momentum < S(1)))
      throw std::invalid_argument("optimizer: momentum must be in [0,1)");
    if (!(decay > S(0) && decay <= S(1)))
      throw std::invalid_argument("optimizer: decay must be in (0,1]");
  }
};

template <typename S>
S lr_at(const OptimizerState<S>& state, int epoch) {
  if (epoch < 0) throw std::invalid_argument("optimizer: epoch must be >= 0");
  return state.base_lr * static_cast<S>(std::pow(static_cast<double>(state.decay), epoch));
}

/// v <- momentum * v + g;  p <- p - lr(epoch) * v
template <typename S>
void sgd_step(std::vector<Tensor<S>>& params,
              const std::vector<const typename Tensor<S>::Array*>& grads, OptimizerState<S>& state,
              int epoch) {
  state.validate();
  if (params.size() != grads.size())
    throw std::invalid_argument("sgd_step: one gradient per parameter required");
  if (state.velocity.empty()) {
    state.velocity.reserve(params.size());
    for (const auto& p : params)
      state.velocity.push_back(Tensor<S>::Array::Zero(p.size()));
  }
  if (state.velocity.size() != params.size())
    throw std::invalid_argument("sgd_step: velocity count does not match parameters");
  const S lr = lr_at(state, epoch);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& v = state.velocity[i];
    const auto& g = *grads[i];
    if (g.size() != params[i].size() || v.size() != params[i].size())
      throw std::invalid_argument("sgd_step: parameter/gradient/velocity shape mismatch");
    v = state.momentum * v + g;
    params[i].values() -= lr * v;
    params[i].check_finite("sgd_step");
  }
}

/// Convenience form reading each parameter's own gradient buffer.
template <typename S>
void sgd_step(std::vector<Tensor<S>>& params, OptimizerState<S>& state, int epoch) {
  std::vector<const typename Tensor<S>::Array*> grads;
  grads.reserve(params.size());
  for (auto& p : params) grads.push_back(&p.grad());
  sgd_step(params, grads, state, epoch);
}

using OptimizerStateXd = OptimizerState<double>;

}  // namespace fgan
