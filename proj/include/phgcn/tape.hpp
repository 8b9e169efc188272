#pragma once

#include <functional>
#include <vector>

#include "phgcn/tensor.hpp"

namespace phgcn {

// Reverse-mode tape. Ops append their backward closure as they execute, so
// the node list is topologically ordered by construction; backward replays it
// once, in reverse. Single-writer: one tape per training session.
class Tape {
 public:
  void record(std::function<void()> backward_fn) {
    nodes_.push_back(std::move(backward_fn));
  }

  // Seeds d(loss)/d(loss) = 1 and propagates to every requires_grad tensor
  // reachable from the loss. Grads accumulate additively across fan-out.
  void backward(Tensor loss) {
    check(loss.defined() && loss.numel() == 1, "backward: loss must be scalar");
    check(loss.requires_grad(), "backward: loss does not require grad");
    loss.grad()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

  void clear() { nodes_.clear(); }
  size_t size() const { return nodes_.size(); }

 private:
  std::vector<std::function<void()>> nodes_;
};

namespace testing {
// Fault-injection hook for the gradcheck harness: when set, one backward
// kernel is deliberately skewed so the checker must report a failure.
void set_corrupt_backward(bool on);
bool corrupt_backward();
}  // namespace testing

}  // namespace phgcn
