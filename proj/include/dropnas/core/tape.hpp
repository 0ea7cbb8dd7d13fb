#ifndef DROPNAS_CORE_TAPE_HPP
#define DROPNAS_CORE_TAPE_HPP

#include <functional>
#include <vector>

#include "dropnas/core/errors.hpp"
#include "dropnas/core/tensor.hpp"

namespace dropnas {

// Records backward closures in execution order (which is a topological order
// of the dynamic graph). backward() replays them once, in reverse. Not
// shareable across threads; one tape per model instance.
class Tape {
 public:
  void record(std::function<void()> backward_fn) {
    entries_.push_back(std::move(backward_fn));
  }

  void backward(const Tensor& loss) {
    if (backward_done_)
      throw ContractError("backward() called twice without reset()");
    if (!loss.tracked()) throw ContractError("backward() on untracked tensor");
    if (loss.numel() != 1)
      throw ContractError("backward() expects scalar loss, got shape " +
                          shape_str(loss.shape()));
    loss.impl()->g[0] = Real(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
    backward_done_ = true;
  }

  // Frees all recorded closures (and the activation storage they keep alive).
  void reset() {
    entries_.clear();
    backward_done_ = false;
  }

  size_t size() const { return entries_.size(); }
  bool backward_done() const { return backward_done_; }

 private:
  std::vector<std::function<void()>> entries_;
  bool backward_done_ = false;
};

}  // namespace dropnas

#endif
