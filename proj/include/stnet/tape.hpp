#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include "stnet/tensor.hpp"

namespace stnet {

// Records executed differentiable ops in order; backward() replays the list
// in reverse, which is a valid topological order because ops were appended
// as they executed. Gradient accumulation order is therefore fixed by tape
// order, independent of graph shape, which keeps training bit-deterministic.
//
// One tape is active per thread at a time (RAII). Ops executed while no tape
// is active run inference-only and record nothing.
template <typename T>
class Tape {
  std::vector<std::function<void()>> nodes_;
  Tape* prev_ = nullptr;

  static Tape*& current_slot() {
    thread_local Tape* cur = nullptr;
    return cur;
  }

 public:
  Tape() {
    prev_ = current_slot();
    current_slot() = this;
  }
  ~Tape() { current_slot() = prev_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static bool active() { return current_slot() != nullptr; }

  static void record(std::function<void()> backward_fn) {
    Tape* t = current_slot();
    if (t) t->nodes_.push_back(std::move(backward_fn));
  }

  std::size_t node_count() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and replays recorded ops in reverse order.
  void backward(Tensor<T> loss) {
    if (loss.size() != 1)
      throw std::invalid_argument("backward: loss must be scalar, got " +
                                  loss.shape_str());
    loss.grad()[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }
};

}  // namespace stnet
