#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace frtpad {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Dense row-major tensor. A default-constructed tensor is "empty" (no shape,
// no data); every other tensor has positive dims and numel == data.size().
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T(0), bool requires_grad = false)
      : shape_(std::move(shape)), requires_grad_(requires_grad) {
    data_.assign(checked_numel(shape_), fill);
  }

  BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : shape_(std::move(shape)), data_(std::move(data)), requires_grad_(requires_grad) {
    if (checked_numel(shape_) != data_.size()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_to_string(shape_));
    }
  }

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape), T(0)); }
  static BasicTensor ones(Shape shape) { return BasicTensor(std::move(shape), T(1)); }
  static BasicTensor scalar(T v) { return BasicTensor(Shape{1}, std::vector<T>{v}); }
  static BasicTensor vector(std::initializer_list<T> values) {
    return BasicTensor(Shape{values.size()}, std::vector<T>(values));
  }
  static BasicTensor matrix(std::initializer_list<std::initializer_list<T>> rows) {
    std::vector<T> data;
    std::size_t cols = rows.size() ? rows.begin()->size() : 0;
    for (const auto& r : rows) {
      if (r.size() != cols) throw ShapeError("ragged matrix literal");
      data.insert(data.end(), r.begin(), r.end());
    }
    return BasicTensor(Shape{rows.size(), cols}, std::move(data));
  }

  [[nodiscard]] bool empty() const { return shape_.empty(); }
  [[nodiscard]] const Shape& shape() const { return shape_; }
  [[nodiscard]] std::size_t rank() const { return shape_.size(); }
  [[nodiscard]] std::size_t dim(std::size_t i) const { return shape_.at(i); }
  [[nodiscard]] std::size_t numel() const { return data_.size(); }

  [[nodiscard]] std::span<T> data() { return data_; }
  [[nodiscard]] std::span<const T> data() const { return data_; }
  [[nodiscard]] const std::vector<T>& values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  [[nodiscard]] bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on) { requires_grad_ = on; }

  [[nodiscard]] bool all_finite() const {
    for (T v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  // Same data, new shape with equal element count.
  [[nodiscard]] BasicTensor reshaped(Shape shape) const {
    return BasicTensor(std::move(shape), data_, requires_grad_);
  }

  template <typename U>
  [[nodiscard]] BasicTensor<U> cast() const {
    if (empty()) return {};
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out), requires_grad_);
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static std::size_t checked_numel(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
    for (std::size_t d : shape) {
      if (d == 0) throw ShapeError("tensor dims must be positive, got " + shape_to_string(shape));
    }
    return shape_numel(shape);
  }

  Shape shape_;
  std::vector<T> data_;
  bool requires_grad_ = false;
};

using Tensor = BasicTensor<float>;

// Named parameter collection in insertion order. Frozen entries are carried
// along (e.g. for checkpointing) but never receive gradients or updates.
template <typename T>
class BasicParamSet {
 public:
  struct Entry {
    std::string name;
    BasicTensor<T> value;
    bool trainable = true;
  };

  void add(std::string name, BasicTensor<T> value, bool trainable = true) {
    if (index_.contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    value.set_requires_grad(trainable);
    index_.emplace(name, entries_.size());
    entries_.push_back(Entry{std::move(name), std::move(value), trainable});
  }

  [[nodiscard]] bool contains(std::string_view name) const {
    return index_.contains(std::string(name));
  }

  [[nodiscard]] std::size_t index_of(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + std::string(name));
    return it->second;
  }

  [[nodiscard]] const BasicTensor<T>& value(std::string_view name) const {
    return entries_[index_of(name)].value;
  }
  BasicTensor<T>& value(std::string_view name) { return entries_[index_of(name)].value; }

  void set_trainable(std::string_view name, bool trainable) {
    auto& e = entries_[index_of(name)];
    e.trainable = trainable;
    e.value.set_requires_grad(trainable);
  }

  [[nodiscard]] std::size_t size() const { return entries_.size(); }
  [[nodiscard]] const Entry& entry(std::size_t i) const { return entries_[i]; }
  Entry& entry(std::size_t i) { return entries_[i]; }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  [[nodiscard]] std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.numel();
    return n;
  }

  template <typename U>
  [[nodiscard]] BasicParamSet<U> cast() const {
    BasicParamSet<U> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<U>(), e.trainable);
    return out;
  }

  friend bool operator==(const BasicParamSet& a, const BasicParamSet& b) {
    if (a.entries_.size() != b.entries_.size()) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i) {
      const auto& x = a.entries_[i];
      const auto& y = b.entries_[i];
      if (x.name != y.name || x.trainable != y.trainable || !(x.value == y.value)) return false;
    }
    return true;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

using ParamSet = BasicParamSet<float>;

// Gradients aligned index-for-index with a ParamSet. Frozen parameters hold
// std::nullopt.
template <typename T>
class BasicGradientSet {
 public:
  BasicGradientSet() = default;
  explicit BasicGradientSet(std::size_t n) : grads_(n) {}

  // Zero gradients for every trainable entry, nullopt for frozen ones.
  static BasicGradientSet zeros_like(const BasicParamSet<T>& params) {
    BasicGradientSet g(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& e = params.entry(i);
      if (e.trainable) g.grads_[i] = BasicTensor<T>(e.value.shape(), T(0));
    }
    return g;
  }

  [[nodiscard]] std::size_t size() const { return grads_.size(); }
  [[nodiscard]] bool has(std::size_t i) const { return grads_[i].has_value(); }
  [[nodiscard]] const BasicTensor<T>& at(std::size_t i) const { return grads_.at(i).value(); }
  BasicTensor<T>& at(std::size_t i) { return grads_.at(i).value(); }
  void set(std::size_t i, BasicTensor<T> g) { grads_.at(i) = std::move(g); }

  // this += scale * other, elementwise in index order.
  void accumulate(const BasicGradientSet& other, T scale = T(1)) {
    if (other.size() != size()) throw ShapeError("gradient set size mismatch");
    for (std::size_t i = 0; i < grads_.size(); ++i) {
      if (!other.has(i)) continue;
      const auto& src = other.at(i);
      if (!has(i)) grads_[i] = BasicTensor<T>(src.shape(), T(0));
      auto dst = grads_[i]->data();
      auto s = src.data();
      if (dst.size() != s.size()) throw ShapeError("gradient shape mismatch");
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += scale * s[k];
    }
  }

 private:
  std::vector<std::optional<BasicTensor<T>>> grads_;
};

using GradientSet = BasicGradientSet<float>;

}  // namespace frtpad
