#include "frtpad/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace frtpad::ad {

// ---------------------------------------------------------------------------
// Tape

template <typename T>
Var<T> Tape<T>::constant(BasicTensor<T> value) {
  value.set_requires_grad(false);
  return leaf(std::move(value));
}

template <typename T>
Var<T> Tape<T>::leaf(BasicTensor<T> value) {
  if (consumed_) throw TapeError("tape already consumed by backward()");
  Node n;
  n.requires_grad = value.requires_grad();
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::param(std::string_view name) {
  if (params_ == nullptr) throw TapeError("tape has no ParamSet attached");
  const std::size_t idx = params_->index_of(name);
  if (auto it = param_nodes_.find(idx); it != param_nodes_.end()) return Var<T>{this, it->second};
  const auto& e = params_->entry(idx);
  BasicTensor<T> v = e.value;
  v.set_requires_grad(e.trainable);
  Var<T> out = leaf(std::move(v));
  param_nodes_.emplace(idx, out.id);
  return out;
}

template <typename T>
Var<T> Tape<T>::record(BasicTensor<T> value, std::initializer_list<std::size_t> inputs,
                       BackwardFn fn) {
  return record(std::move(value), std::vector<std::size_t>(inputs), std::move(fn));
}

template <typename T>
Var<T> Tape<T>::record(BasicTensor<T> value, const std::vector<std::size_t>& inputs,
                       BackwardFn fn) {
  if (consumed_) throw TapeError("tape already consumed by backward()");
  bool needs = false;
  for (std::size_t id : inputs) needs = needs || nodes_.at(id).requires_grad;
  Node n;
  n.value = std::move(value);
  n.value.set_requires_grad(needs);
  n.requires_grad = needs;
  if (needs) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
BasicTensor<T>& Tape<T>::grad_buffer(std::size_t id) {
  Node& n = nodes_.at(id);
  if (n.grad.empty()) n.grad = BasicTensor<T>(n.value.shape(), T(0));
  return n.grad;
}

template <typename T>
const BasicTensor<T>* Tape<T>::grad(Var<T> v) const {
  const Node& n = nodes_.at(v.id);
  return n.grad.empty() ? nullptr : &n.grad;
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  if (loss.tape != this) throw TapeError("loss was recorded on a different tape");
  if (consumed_) throw TapeError("backward() called twice on the same tape");
  if (value(loss.id).numel() != 1) {
    throw TapeError("backward() needs a scalar loss, got shape " +
                    shape_to_string(value(loss.id).shape()));
  }
  consumed_ = true;
  grad_buffer(loss.id)[0] = T(1);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward && !n.grad.empty()) n.backward(*this, i);
  }
}

template <typename T>
BasicGradientSet<T> Tape<T>::param_grads() const {
  if (params_ == nullptr) throw TapeError("tape has no ParamSet attached");
  BasicGradientSet<T> out(params_->size());
  for (std::size_t i = 0; i < params_->size(); ++i) {
    const auto& e = params_->entry(i);
    if (!e.trainable) continue;
    auto it = param_nodes_.find(i);
    if (it != param_nodes_.end() && !nodes_[it->second].grad.empty()) {
      BasicTensor<T> g = nodes_[it->second].grad;
      g.set_requires_grad(false);
      out.set(i, std::move(g));
    } else {
      out.set(i, BasicTensor<T>(e.value.shape(), T(0)));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Helpers

namespace {

template <typename T>
Tape<T>& same_tape(Var<T> a, Var<T> b) {
  if (a.tape == nullptr || a.tape != b.tape) throw TapeError("operands live on different tapes");
  return *a.tape;
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a) + " vs " +
                     shape_to_string(b));
  }
}

void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_to_string(s));
  }
}

// Unary elementwise op whose derivative is a function of (input, output).
template <typename T, typename F, typename D>
Var<T> unary(Var<T> a, F f, D dfdx) {
  Tape<T>& t = *a.tape;
  const auto& x = a.value();
  BasicTensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = f(x[i]);
  const std::size_t ai = a.id;
  return t.record(std::move(y), {ai}, [ai, dfdx](Tape<T>& tp, std::size_t self) {
    const auto& g = tp.grad_buffer(self);
    const auto& xv = tp.value(ai);
    const auto& yv = tp.value(self);
    auto& ga = tp.grad_buffer(ai);
    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * dfdx(xv[i], yv[i]);
  });
}

}  // namespace

// ---------------------------------------------------------------------------
// Ops

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>& t = same_tape(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  require_rank(A.shape(), 2, "matmul");
  require_rank(B.shape(), 2, "matmul");
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  if (B.dim(0) != k) {
    throw ShapeError("matmul: inner dims differ " + shape_to_string(A.shape()) + " x " +
                     shape_to_string(B.shape()));
  }
  BasicTensor<T> C(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = &C[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const T av = A[i * k + p];
      const T* brow = &B[p * n];
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  const std::size_t ai = a.id, bi = b.id;
  return t.record(std::move(C), {ai, bi}, [ai, bi, m, k, n](Tape<T>& tp, std::size_t self) {
    const auto& G = tp.grad_buffer(self);
    const auto& Av = tp.value(ai);
    const auto& Bv = tp.value(bi);
    if (tp.requires_grad(ai)) {
      auto& GA = tp.grad_buffer(ai);  // G B^T
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          T acc = 0;
          for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * Bv[p * n + j];
          GA[i * k + p] += acc;
        }
      }
    }
    if (tp.requires_grad(bi)) {
      auto& GB = tp.grad_buffer(bi);  // A^T G
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const T av = Av[i * k + p];
          for (std::size_t j = 0; j < n; ++j) GB[p * n + j] += av * G[i * n + j];
        }
      }
    }
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  Tape<T>& t = same_tape(a, b);
  require_same_shape(a.shape(), b.shape(), "add");
  BasicTensor<T> y = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] += bv[i];
  const std::size_t ai = a.id, bi = b.id;
  return t.record(std::move(y), {ai, bi}, [ai, bi](Tape<T>& tp, std::size_t self) {
    const auto& g = tp.grad_buffer(self);
    for (std::size_t id : {ai, bi}) {
      if (!tp.requires_grad(id)) continue;
      auto& gi = tp.grad_buffer(id);
      for (std::size_t i = 0; i < g.numel(); ++i) gi[i] += g[i];
    }
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  return add(a, scale(b, T(-1)));
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  Tape<T>& t = same_tape(a, b);
  require_same_shape(a.shape(), b.shape(), "mul");
  BasicTensor<T> y = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] *= bv[i];
  const std::size_t ai = a.id, bi = b.id;
  return t.record(std::move(y), {ai, bi}, [ai, bi](Tape<T>& tp, std::size_t self) {
    const auto& g = tp.grad_buffer(self);
    const auto& av = tp.value(ai);
    const auto& bv2 = tp.value(bi);
    if (tp.requires_grad(ai)) {
      auto& ga = tp.grad_buffer(ai);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * bv2[i];
    }
    if (tp.requires_grad(bi)) {
      auto& gb = tp.grad_buffer(bi);
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  return unary<T>(a, [factor](T x) { return x * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Var<T> relu(Var<T> a) {
  return unary<T>(
      a, [](T x) { return x < T(0) ? T(0) : x; }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> leaky_relu(Var<T> a, T alpha) {
  return unary<T>(
      a, [alpha](T x) { return x > T(0) ? x : alpha * x; },
      [alpha](T x, T) { return x > T(0) ? T(1) : alpha; });
}

template <typename T>
Var<T> exp(Var<T> a) {
  return unary<T>(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> log(Var<T> a) {
  for (T v : a.value().data()) {
    if (!(v > T(0))) throw std::domain_error("log: non-positive input");
  }
  return unary<T>(a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Var<T> sum(Var<T> a) {
  T s = 0;
  for (T v : a.value().data()) s += v;
  const std::size_t ai = a.id;
  return a.tape->record(BasicTensor<T>::scalar(s), {ai}, [ai](Tape<T>& tp, std::size_t self) {
    const T g = tp.grad_buffer(self)[0];
    auto& ga = tp.grad_buffer(ai);
    for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g;
  });
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  if (shape_numel(shape) != a.value().numel()) {
    throw ShapeError("reshape: " + shape_to_string(a.shape()) + " -> " + shape_to_string(shape));
  }
  BasicTensor<T> y = a.value().reshaped(std::move(shape));
  const std::size_t ai = a.id;
  return a.tape->record(std::move(y), {ai}, [ai](Tape<T>& tp, std::size_t self) {
    const auto& g = tp.grad_buffer(self);
    auto& ga = tp.grad_buffer(ai);
    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
  });
}

template <typename T>
Var<T> flatten(Var<T> a) {
  return reshape(a, Shape{a.value().numel()});
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  Tape<T>& t = *parts.front().tape;
  const Shape& first = parts.front().shape();
  const std::size_t rank = first.size();
  if (rank == 0 || rank > 2 || axis >= rank) throw ShapeError("concat: unsupported rank/axis");

  // Treat every operand as [outer x inner_k] blocks joined along the inner axis.
  const std::size_t outer = (rank == 2 && axis == 1) ? first[0] : 1;
  std::vector<std::size_t> widths;
  std::vector<std::size_t> ids;
  std::size_t total = 0;
  std::size_t rows_axis0 = 0;
  for (const auto& p : parts) {
    if (p.tape != &t) throw TapeError("concat: operands live on different tapes");
    const Shape& s = p.shape();
    if (s.size() != rank) throw ShapeError("concat: rank mismatch");
    if (rank == 2 && axis == 0 && s[1] != first[1]) throw ShapeError("concat: column mismatch");
    if (rank == 2 && axis == 1 && s[0] != first[0]) throw ShapeError("concat: row mismatch");
    widths.push_back(p.value().numel() / outer);
    total += widths.back();
    rows_axis0 += s[0];
    ids.push_back(p.id);
  }
  Shape out_shape;
  if (rank == 1) out_shape = {total};
  else if (axis == 0) out_shape = {rows_axis0, first[1]};
  else out_shape = {outer, total};

  BasicTensor<T> y(out_shape);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    for (std::size_t r = 0; r < outer; ++r) {
      std::copy_n(&v[r * widths[k]], widths[k], &y[r * total + offset]);
    }
    offset += widths[k];
  }
  return t.record(std::move(y), ids, [ids, widths, outer, total](Tape<T>& tp, std::size_t self) {
    const auto& g = tp.grad_buffer(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (tp.requires_grad(ids[k])) {
        auto& gk = tp.grad_buffer(ids[k]);
        for (std::size_t r = 0; r < outer; ++r) {
          for (std::size_t j = 0; j < widths[k]; ++j) gk[r * widths[k] + j] += g[r * total + off + j];
        }
      }
      off += widths[k];
    }
  });
}

template <typename T>
Var<T> slice_rows(Var<T> a, std::size_t begin, std::size_t end) {
  const auto& x = a.value();
  require_rank(x.shape(), 2, "slice_rows");
  if (begin >= end || end > x.dim(0)) throw ShapeError("slice_rows: bad range");
  const std::size_t cols = x.dim(1);
  std::vector<T> data(x.data().begin() + begin * cols, x.data().begin() + end * cols);
  const std::size_t ai = a.id;
  return a.tape->record(BasicTensor<T>(Shape{end - begin, cols}, std::move(data)), {ai},
                        [ai, begin, cols](Tape<T>& tp, std::size_t self) {
                          const auto& g = tp.grad_buffer(self);
                          auto& ga = tp.grad_buffer(ai);
                          for (std::size_t i = 0; i < g.numel(); ++i) ga[begin * cols + i] += g[i];
                        });
}

template <typename T>
Var<T> mean_rows(Var<T> a) {
  const auto& x = a.value();
  require_rank(x.shape(), 2, "mean_rows");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  BasicTensor<T> y(Shape{cols});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) y[c] += x[r * cols + c];
  }
  const T inv = T(1) / static_cast<T>(rows);
  for (std::size_t c = 0; c < cols; ++c) y[c] *= inv;
  const std::size_t ai = a.id;
  return a.tape->record(std::move(y), {ai}, [ai, rows, cols, inv](Tape<T>& tp, std::size_t self) {
    const auto& g = tp.grad_buffer(self);
    auto& ga = tp.grad_buffer(ai);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += g[c] * inv;
    }
  });
}

template <typename T>
Var<T> avg_pool2d(Var<T> a) {
  const auto& x = a.value();
  require_rank(x.shape(), 3, "avg_pool2d");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h % 2 || w % 2) throw ShapeError("avg_pool2d: spatial dims must be even, got " +
                                       shape_to_string(x.shape()));
  const std::size_t oh = h / 2, ow = w / 2;
  BasicTensor<T> y(Shape{c, oh, ow});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* in = &x[ch * h * w];
    T* out = &y[ch * oh * ow];
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        out[i * ow + j] = T(0.25) * (in[(2 * i) * w + 2 * j] + in[(2 * i) * w + 2 * j + 1] +
                                     in[(2 * i + 1) * w + 2 * j] + in[(2 * i + 1) * w + 2 * j + 1]);
      }
    }
  }
  const std::size_t ai = a.id;
  return a.tape->record(std::move(y), {ai}, [ai, c, h, w, oh, ow](Tape<T>& tp, std::size_t self) {
    const auto& g = tp.grad_buffer(self);
    auto& ga = tp.grad_buffer(ai);
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t i = 0; i < oh; ++i) {
        for (std::size_t j = 0; j < ow; ++j) {
          const T q = T(0.25) * g[(ch * oh + i) * ow + j];
          T* gin = &ga[ch * h * w];
          gin[(2 * i) * w + 2 * j] += q;
          gin[(2 * i) * w + 2 * j + 1] += q;
          gin[(2 * i + 1) * w + 2 * j] += q;
          gin[(2 * i + 1) * w + 2 * j + 1] += q;
        }
      }
    }
  });
}

template <typename T>
Var<T> adaptive_avg_pool2d(Var<T> a, std::size_t out_h, std::size_t out_w) {
  const auto& x = a.value();
  require_rank(x.shape(), 3, "adaptive_avg_pool2d");
  if (out_h == 0 || out_w == 0) throw ShapeError("adaptive_avg_pool2d: zero target");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  auto bin = [](std::size_t i, std::size_t in, std::size_t out) {
    return std::pair<std::size_t, std::size_t>{(i * in) / out, ((i + 1) * in + out - 1) / out};
  };
  BasicTensor<T> y(Shape{c, out_h, out_w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < out_h; ++i) {
      auto [y0, y1] = bin(i, h, out_h);
      for (std::size_t j = 0; j < out_w; ++j) {
        auto [x0, x1] = bin(j, w, out_w);
        T acc = 0;
        for (std::size_t yy = y0; yy < y1; ++yy) {
          for (std::size_t xx = x0; xx < x1; ++xx) acc += x[(ch * h + yy) * w + xx];
        }
        y[(ch * out_h + i) * out_w + j] = acc / static_cast<T>((y1 - y0) * (x1 - x0));
      }
    }
  }
  const std::size_t ai = a.id;
  return a.tape->record(
      std::move(y), {ai}, [ai, c, h, w, out_h, out_w, bin](Tape<T>& tp, std::size_t self) {
        const auto& g = tp.grad_buffer(self);
        auto& ga = tp.grad_buffer(ai);
        for (std::size_t ch = 0; ch < c; ++ch) {
          for (std::size_t i = 0; i < out_h; ++i) {
            auto [y0, y1] = bin(i, h, out_h);
            for (std::size_t j = 0; j < out_w; ++j) {
              auto [x0, x1] = bin(j, w, out_w);
              const T q = g[(ch * out_h + i) * out_w + j] / static_cast<T>((y1 - y0) * (x1 - x0));
              for (std::size_t yy = y0; yy < y1; ++yy) {
                for (std::size_t xx = x0; xx < x1; ++xx) ga[(ch * h + yy) * w + xx] += q;
              }
            }
          }
        }
      });
}

namespace {

// Output index range [lo, hi) whose tap k (0..2) lands inside [0, in) for
// padding 1 and the given stride.
struct TapRange {
  std::size_t lo;
  std::size_t hi;
};

TapRange tap_range(std::size_t k, std::size_t in, std::size_t out, std::size_t stride) {
  const std::size_t lo = (k == 0) ? 1 : 0;
  const std::size_t hi = std::min(out, (in - k) / stride + 1);
  return {lo, std::max(lo, hi)};
}

}  // namespace

template <typename T>
Var<T> conv2d(Var<T> input, Var<T> kernels, Var<T> bias, std::size_t stride) {
  Tape<T>& t = same_tape(input, kernels);
  same_tape(input, bias);
  const auto& x = input.value();
  const auto& K = kernels.value();
  const auto& b = bias.value();
  require_rank(x.shape(), 3, "conv2d");
  require_rank(K.shape(), 4, "conv2d");
  if (stride != 1 && stride != 2) throw ShapeError("conv2d: stride must be 1 or 2");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t o = K.dim(0);
  if (K.dim(1) != c || K.dim(2) != 3 || K.dim(3) != 3) {
    throw ShapeError("conv2d: kernels " + shape_to_string(K.shape()) + " do not fit input " +
                     shape_to_string(x.shape()));
  }
  if (b.shape() != Shape{o}) throw ShapeError("conv2d: bias must be [" + std::to_string(o) + "]");
  if (h < 3 || w < 3) throw ShapeError("conv2d: spatial dims must be >= 3");
  const std::size_t oh = (h + stride - 1) / stride, ow = (w + stride - 1) / stride;

  BasicTensor<T> y(Shape{o, oh, ow});
  for (std::size_t oc = 0; oc < o; ++oc) {
    T* out = &y[oc * oh * ow];
    std::fill_n(out, oh * ow, b[oc]);
    for (std::size_t ic = 0; ic < c; ++ic) {
      const T* in = &x[ic * h * w];
      const T* kern = &K[(oc * c + ic) * 9];
      for (std::size_t ky = 0; ky < 3; ++ky) {
        const TapRange ry = tap_range(ky, h, oh, stride);
        for (std::size_t kx = 0; kx < 3; ++kx) {
          const TapRange rx = tap_range(kx, w, ow, stride);
          const T kv = kern[ky * 3 + kx];
          for (std::size_t yy = ry.lo; yy < ry.hi; ++yy) {
            const T* irow = in + (yy * stride + ky - 1) * w;
            T* orow = out + yy * ow;
            if (stride == 1) {
              for (std::size_t xx = rx.lo; xx < rx.hi; ++xx) orow[xx] += kv * irow[xx + kx - 1];
            } else {
              for (std::size_t xx = rx.lo; xx < rx.hi; ++xx) orow[xx] += kv * irow[xx * 2 + kx - 1];
            }
          }
        }
      }
    }
  }

  const std::size_t xi = input.id, ki = kernels.id, bi = bias.id;
  return t.record(std::move(y), {xi, ki, bi},
                  [xi, ki, bi, c, h, w, o, oh, ow, stride](Tape<T>& tp, std::size_t self) {
                    const auto& g = tp.grad_buffer(self);
                    const auto& xv = tp.value(xi);
                    const auto& Kv = tp.value(ki);
                    if (tp.requires_grad(bi)) {
                      auto& gb = tp.grad_buffer(bi);
                      for (std::size_t oc = 0; oc < o; ++oc) {
                        T acc = 0;
                        for (std::size_t p = 0; p < oh * ow; ++p) acc += g[oc * oh * ow + p];
                        gb[oc] += acc;
                      }
                    }
                    const bool want_k = tp.requires_grad(ki);
                    const bool want_x = tp.requires_grad(xi);
                    BasicTensor<T>* gk = want_k ? &tp.grad_buffer(ki) : nullptr;
                    BasicTensor<T>* gx = want_x ? &tp.grad_buffer(xi) : nullptr;
                    if (!want_k && !want_x) return;
                    for (std::size_t oc = 0; oc < o; ++oc) {
                      const T* gout = &g[oc * oh * ow];
                      for (std::size_t ic = 0; ic < c; ++ic) {
                        const T* in = &xv[ic * h * w];
                        const std::size_t kbase = (oc * c + ic) * 9;
                        for (std::size_t ky = 0; ky < 3; ++ky) {
                          const TapRange ry = tap_range(ky, h, oh, stride);
                          for (std::size_t kx = 0; kx < 3; ++kx) {
                            const TapRange rx = tap_range(kx, w, ow, stride);
                            const T kv = Kv[kbase + ky * 3 + kx];
                            T acc = 0;
                            for (std::size_t yy = ry.lo; yy < ry.hi; ++yy) {
                              const std::size_t ioff = (yy * stride + ky - 1) * w;
                              const T* grow = gout + yy * ow;
                              if (want_k) {
                                const T* irow = in + ioff;
                                for (std::size_t xx = rx.lo; xx < rx.hi; ++xx) {
                                  acc += grow[xx] * irow[xx * stride + kx - 1];
                                }
                              }
                              if (want_x) {
                                T* girow = &(*gx)[ic * h * w] + ioff;
                                for (std::size_t xx = rx.lo; xx < rx.hi; ++xx) {
                                  girow[xx * stride + kx - 1] += kv * grow[xx];
                                }
                              }
                            }
                            if (want_k) (*gk)[kbase + ky * 3 + kx] += acc;
                          }
                        }
                      }
                    }
                  });
}

template <typename T>
Var<T> softmax_masked(Var<T> scores, const std::vector<bool>& mask) {
  const auto& s = scores.value();
  if (s.rank() != 1 && s.rank() != 2) throw ShapeError("softmax_masked: rank must be 1 or 2");
  if (mask.size() != s.numel()) throw ShapeError("softmax_masked: mask size mismatch");
  const std::size_t cols = s.shape().back();
  const std::size_t rows = s.numel() / cols;
  BasicTensor<T> p(s.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    T mx = -std::numeric_limits<T>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < cols; ++j) {
      if (mask[r * cols + j]) {
        mx = std::max(mx, s[r * cols + j]);
        any = true;
      }
    }
    if (!any) throw std::invalid_argument("softmax_masked: row " + std::to_string(r) +
                                          " has an empty mask");
    T z = 0;
    for (std::size_t j = 0; j < cols; ++j) {
      if (mask[r * cols + j]) {
        p[r * cols + j] = std::exp(s[r * cols + j] - mx);
        z += p[r * cols + j];
      }
    }
    for (std::size_t j = 0; j < cols; ++j) p[r * cols + j] /= z;
  }
  const std::size_t si = scores.id;
  return scores.tape->record(std::move(p), {si}, [si, rows, cols](Tape<T>& tp, std::size_t self) {
    const auto& g = tp.grad_buffer(self);
    const auto& pv = tp.value(self);
    auto& gs = tp.grad_buffer(si);
    for (std::size_t r = 0; r < rows; ++r) {
      T dot = 0;
      for (std::size_t j = 0; j < cols; ++j) dot += pv[r * cols + j] * g[r * cols + j];
      for (std::size_t j = 0; j < cols; ++j) {
        gs[r * cols + j] += pv[r * cols + j] * (g[r * cols + j] - dot);
      }
    }
  });
}

template <typename T>
Var<T> cross_entropy(Var<T> logits, const std::vector<int>& labels) {
  const auto& z = logits.value();
  require_rank(z.shape(), 2, "cross_entropy");
  const std::size_t b = z.dim(0), k = z.dim(1);
  if (labels.size() != b) throw ShapeError("cross_entropy: label count != batch size");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(y) + " out of range");
    }
  }
  std::vector<T> probs(b * k);
  T total = 0;
  for (std::size_t i = 0; i < b; ++i) {
    T mx = z[i * k];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, z[i * k + j]);
    T sum_exp = 0;
    for (std::size_t j = 0; j < k; ++j) {
      probs[i * k + j] = std::exp(z[i * k + j] - mx);
      sum_exp += probs[i * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] /= sum_exp;
    total += mx + std::log(sum_exp) - z[i * k + static_cast<std::size_t>(labels[i])];
  }
  const std::size_t zi = logits.id;
  return logits.tape->record(
      BasicTensor<T>::scalar(total / static_cast<T>(b)), {zi},
      [zi, b, k, labels, probs = std::move(probs)](Tape<T>& tp, std::size_t self) {
        const T g = tp.grad_buffer(self)[0] / static_cast<T>(b);
        auto& gz = tp.grad_buffer(zi);
        for (std::size_t i = 0; i < b; ++i) {
          for (std::size_t j = 0; j < k; ++j) {
            const T onehot = (static_cast<std::size_t>(labels[i]) == j) ? T(1) : T(0);
            gz[i * k + j] += g * (probs[i * k + j] - onehot);
          }
        }
      });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias) {
  require_rank(weight.shape(), 2, "linear");
  const std::size_t out_dim = weight.value().dim(1);
  const Var<T> row = reshape(x, Shape{1, x.value().numel()});
  const Var<T> out = reshape(matmul(row, weight), Shape{out_dim});
  return add(out, bias);
}

// ---------------------------------------------------------------------------

#define FRTPAD_INSTANTIATE_AD(T)                                                      \
  template class Tape<T>;                                                             \
  template Var<T> matmul(Var<T>, Var<T>);                                             \
  template Var<T> add(Var<T>, Var<T>);                                                \
  template Var<T> sub(Var<T>, Var<T>);                                                \
  template Var<T> mul(Var<T>, Var<T>);                                                \
  template Var<T> scale(Var<T>, T);                                                   \
  template Var<T> relu(Var<T>);                                                       \
  template Var<T> leaky_relu(Var<T>, T);                                              \
  template Var<T> exp(Var<T>);                                                        \
  template Var<T> log(Var<T>);                                                        \
  template Var<T> sum(Var<T>);                                                        \
  template Var<T> reshape(Var<T>, Shape);                                             \
  template Var<T> flatten(Var<T>);                                                    \
  template Var<T> concat(const std::vector<Var<T>>&, std::size_t);                    \
  template Var<T> slice_rows(Var<T>, std::size_t, std::size_t);                       \
  template Var<T> mean_rows(Var<T>);                                                  \
  template Var<T> avg_pool2d(Var<T>);                                                 \
  template Var<T> adaptive_avg_pool2d(Var<T>, std::size_t, std::size_t);              \
  template Var<T> conv2d(Var<T>, Var<T>, Var<T>, std::size_t);                        \
  template Var<T> softmax_masked(Var<T>, const std::vector<bool>&);                   \
  template Var<T> cross_entropy(Var<T>, const std::vector<int>&);                     \
  template Var<T> linear(Var<T>, Var<T>, Var<T>);

FRTPAD_INSTANTIATE_AD(float)
FRTPAD_INSTANTIATE_AD(double)

}  // namespace frtpad::ad
