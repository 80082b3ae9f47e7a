#pragma once

#include <functional>
#include <initializer_list>
#include <vector>

#include "swgrid/tensor.hpp"

namespace swgrid {

/// Records differentiable operations in execution order and replays them in
/// reverse to accumulate gradients.
///
/// A tape belongs to one forward pass; create a fresh one per optimizer step.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  /// True when an op over `inputs` should be recorded on `tape`.
  static bool wants(const Tape* tape, std::initializer_list<const Tensor<T>*> inputs) {
    if (tape == nullptr) return false;
    for (const Tensor<T>* t : inputs) {
      if (t != nullptr && t->requires_grad()) return true;
    }
    return false;
  }

  /// `output` must be a fresh tensor produced by the op; `backward` reads its
  /// grad and adds into the grads of the inputs that require them.
  void record(Tensor<T>& output, BackwardFn backward) {
    output.set_requires_grad(true);
    nodes_.push_back(Node{output, std::move(backward)});
  }

  /// Seeds d loss / d loss = 1 and replays every node recorded up to `loss`.
  /// Leaf gradients accumulate across calls; intermediate ones are reset.
  void backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.numel() != 1) {
      throw UsageError("backward expects a scalar loss");
    }
    std::size_t end = nodes_.size();
    while (end > 0 && !nodes_[end - 1].output.is_same(loss)) --end;
    if (end == 0) throw UsageError("backward: loss was not produced by a recorded forward pass");

    for (std::size_t i = 0; i < end; ++i) nodes_[i].output.clear_grad();
    Tensor<T> seed = loss;
    seed.grad()[0] = T{1};
    for (std::size_t i = end; i-- > 0;) {
      if (nodes_[i].output.has_grad()) nodes_[i].backward();
    }
  }

  void clear() { nodes_.clear(); }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> output;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

}  // namespace swgrid
