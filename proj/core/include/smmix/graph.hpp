#pragma once

#include <functional>
#include <string>
#include <vector>

#include "smmix/error.hpp"
#include "smmix/tensor.hpp"

namespace smmix {

// Linear tape of operation records. Forward passes append nodes in execution
// order; backward walks them in exact reverse order, so two backward calls on
// the same tape produce bit-identical gradients.
template <class S>
class Tape {
 public:
  struct Node {
    std::string name;
    std::vector<Tensor<S>> grad_targets;  // tensors this node's backward writes into
    std::function<void()> backward;
  };

  // When false, ops run forward-only and record nothing (inference mode).
  bool grad_enabled = true;

  // When true, every node's gradient outputs are scanned for NaN during
  // backward and the first offending node is named. Costs a full sweep per
  // node; tests enable it, training loops leave it off.
  bool nan_check = false;

  void record(std::string name, std::vector<Tensor<S>> grad_targets,
              std::function<void()> backward) {
    nodes_.push_back({std::move(name), std::move(grad_targets), std::move(backward)});
  }

  std::size_t node_count() const { return nodes_.size(); }

  void backward(Tensor<S> loss) {
    if (loss.size() != 1)
      throw ValidationError("backward requires a scalar loss, got shape " +
                            shape_str(loss.shape()));
    if (!loss.requires_grad())
      throw ValidationError("backward: loss does not require grad");
    loss.grad()[0] += S(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      it->backward();
      if (nan_check) {
        for (const auto& t : it->grad_targets) {
          for (S g : t.grad()) {
            if (!std::isfinite(static_cast<double>(g)))
              throw NumericError("NaN gradient produced by node '" + it->name + "'");
          }
        }
      }
    }
  }

  void clear() { nodes_.clear(); }

 private:
  std::vector<Node> nodes_;
};

}  // namespace smmix
