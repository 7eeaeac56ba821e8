#pragma once

#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "fgan/tensor.hpp"

namespace fgan {

/// Ordered record of one forward pass. Append order is a valid topological
/// order by construction; the reverse pass may be replayed exactly once per
/// recorded forward pass.
template <typename Scalar>
class GradTape {
 public:
  void record(std::function<void()> step) { steps_.push_back(std::move(step)); }

  std::size_t size() const { return steps_.size(); }
  bool consumed() const { return consumed_; }

  /// Forget the recorded pass; the tape may record a new forward pass.
  void reset() {
    steps_.clear();
    consumed_ = false;
  }

  void run_reverse() {
    if (consumed_)
      throw std::runtime_error("tape: reverse pass already replayed; record a new forward pass");
    consumed_ = true;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> steps_;
  bool consumed_ = false;
};

/// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. Every tensor
/// with requires_grad reached by the recorded pass ends up holding
/// d(loss)/d(tensor); gradients of unreached tensors stay zero.
template <typename Scalar>
void backward(const Tensor<Scalar>& loss, GradTape<Scalar>& tape) {
  if (loss.size() != 1)
    throw std::invalid_argument("backward: loss must be a scalar tensor");
  Tensor<Scalar> seed = loss;  // shared-node handle
  auto& g = seed.grad();
  g.setZero();
  g(0) = Scalar(1);
  tape.run_reverse();
}

using TapeXd = GradTape<double>;

}  // namespace fgan
