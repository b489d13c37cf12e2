#pragma once

// Minimal reverse-mode differentiation: a Tape records one forward pass as a
// list of nodes in creation order, so reverse creation order is a valid
// topological order for backward.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "frtpad/tensor.hpp"

namespace frtpad::ad {

class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

template <typename T>
class Tape;

template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  [[nodiscard]] const BasicTensor<T>& value() const { return tape->value(id); }
  [[nodiscard]] const Shape& shape() const { return value().shape(); }
};

template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  explicit Tape(const BasicParamSet<T>* params) : params_(params) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf that never receives a gradient.
  Var<T> constant(BasicTensor<T> value);
  // Leaf whose gradient is tracked iff value.requires_grad().
  Var<T> leaf(BasicTensor<T> value);
  // Leaf bound to the named entry of the attached ParamSet; repeated calls
  // return the same node.
  Var<T> param(std::string_view name);

  // Records an op result. `fn` runs during backward only when the node is
  // reachable from the loss and at least one input requires grad.
  Var<T> record(BasicTensor<T> value, std::initializer_list<std::size_t> inputs, BackwardFn fn);
  Var<T> record(BasicTensor<T> value, const std::vector<std::size_t>& inputs, BackwardFn fn);

  void backward(Var<T> loss);

  [[nodiscard]] const BasicTensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  [[nodiscard]] bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  // Gradient of the last backward() w.r.t. node `v`; nullptr if none flowed.
  [[nodiscard]] const BasicTensor<T>* grad(Var<T> v) const;
  // Gradient buffer for node `id`, zero-allocated on first use.
  BasicTensor<T>& grad_buffer(std::size_t id);

  // d(loss)/d(param) for every trainable entry of the attached ParamSet
  // (zeros when the loss does not depend on it); frozen entries get none.
  [[nodiscard]] BasicGradientSet<T> param_grads() const;

  [[nodiscard]] std::size_t size() const { return nodes_.size(); }
  [[nodiscard]] bool consumed() const { return consumed_; }

 private:
  struct Node {
    BasicTensor<T> value;
    BasicTensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  const BasicParamSet<T>* params_ = nullptr;
  std::deque<Node> nodes_;  // deque: references to values stay valid as the tape grows
  std::unordered_map<std::size_t, std::size_t> param_nodes_;  // param index -> node id
  bool consumed_ = false;
};

using FTape = Tape<float>;
using FVar = Var<float>;

// Matrix product of rank-2 tensors [m x k] * [k x n].
template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
// Same-shape elementwise ops.
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, T factor);
template <typename T> Var<T> relu(Var<T> a);
template <typename T> Var<T> leaky_relu(Var<T> a, T alpha);
template <typename T> Var<T> exp(Var<T> a);
// Throws std::domain_error on any non-positive input.
template <typename T> Var<T> log(Var<T> a);
// Sum of all elements, shape {1}.
template <typename T> Var<T> sum(Var<T> a);

template <typename T> Var<T> reshape(Var<T> a, Shape shape);
template <typename T> Var<T> flatten(Var<T> a);
// Joins rank-1 tensors end to end (axis 0), or rank-2 tensors along `axis`.
template <typename T> Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis = 0);
// Rows [begin, end) of a rank-2 tensor.
template <typename T> Var<T> slice_rows(Var<T> a, std::size_t begin, std::size_t end);
// Column-wise mean of a rank-2 tensor [r x c] -> [c].
template <typename T> Var<T> mean_rows(Var<T> a);

// [c x h x w] -> [c x h/2 x w/2], non-overlapping 2x2 mean; h, w even.
template <typename T> Var<T> avg_pool2d(Var<T> a);
// [c x h x w] -> [c x oh x ow] with bins [floor(i*h/oh), ceil((i+1)*h/oh)).
template <typename T> Var<T> adaptive_avg_pool2d(Var<T> a, std::size_t out_h, std::size_t out_w);

// 3x3 cross-correlation, zero padding 1.
// input [c x h x w], kernels [o x c x 3 x 3], bias [o]; stride 1 or 2.
template <typename T> Var<T> conv2d(Var<T> input, Var<T> kernels, Var<T> bias, std::size_t stride);

// Softmax over the last axis restricted to entries where mask is true; other
// entries are exactly 0. Accepts [n] or [r x n] scores with a same-size mask.
template <typename T> Var<T> softmax_masked(Var<T> scores, const std::vector<bool>& mask);

// Mean over the batch of -log softmax(logits[b])[label[b]] for logits [b x 2].
template <typename T> Var<T> cross_entropy(Var<T> logits, const std::vector<int>& labels);

// x [k] (or [1 x k]) -> x W + b with W [k x m], b [m]; result [m].
template <typename T> Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias);

}  // namespace frtpad::ad
