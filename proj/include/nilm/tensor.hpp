#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "nilm/errors.hpp"

// Reverse-mode automatic differentiation over dense row-major tensors.
//
// A Tensor is a cheap shared handle onto a node (shape, values, gradient,
// parent links, backward function).  Operations eagerly compute values and,
// while autograd is enabled and some input requires gradients, record how to
// push gradients back to their inputs.  backward(loss) walks the recorded
// graph once in reverse topological order.
//
// Gradient contract: leaf gradients accumulate across backward() calls until
// zero_grad() is called; the training loop zeroes them between steps.

namespace nilm {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (const std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

// Thread-local autograd switch; graph recording is skipped while false.
inline bool& autograd_enabled() {
  thread_local bool enabled = true;
  return enabled;
}

// RAII scope that disables graph recording (inference / finite differences).
struct NoGradGuard {
  bool previous;
  NoGradGuard() : previous(autograd_enabled()) { autograd_enabled() = false; }
  ~NoGradGuard() { autograd_enabled() = previous; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <typename S>
class Tensor;

template <typename S>
struct TensorImpl {
  Shape shape;
  std::vector<S> values;
  std::vector<S> grad;  // empty until first needed, then same extent as values
  bool requires_grad = false;
  std::vector<Tensor<S>> parents;
  std::function<void(TensorImpl<S>&)> backward_fn;

  std::vector<S>& ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), S(0));
    return grad;
  }
};

template <typename S>
class Tensor {
 public:
  using Scalar = S;

  Tensor() = default;  // null handle

  static Tensor zeros(Shape shape) {
    return build(std::move(shape), {}, S(0));
  }

  static Tensor full(Shape shape, S value) {
    return build(std::move(shape), {}, value);
  }

  static Tensor from(Shape shape, std::vector<S> values) {
    if (shape_numel(shape) != values.size()) {
      throw ShapeError("tensor: " + shape_str(shape) + " cannot hold " +
                       std::to_string(values.size()) + " values");
    }
    return build(std::move(shape), std::move(values), S(0));
  }

  static Tensor scalar(S value) { return from({1}, {value}); }

  bool valid() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t ndim() const { return impl_->shape.size(); }
  std::size_t extent(std::size_t axis) const { return impl_->shape[axis]; }
  std::size_t size() const { return impl_->values.size(); }

  std::vector<S>& values() { return impl_->values; }
  const std::vector<S>& values() const { return impl_->values; }
  S* data() { return impl_->values.data(); }
  const S* data() const { return impl_->values.data(); }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool b) { impl_->requires_grad = b; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::vector<S>& grad() { return impl_->ensure_grad(); }
  const std::vector<S>& grad() const { return impl_->grad; }

  // Zeroes the gradient buffer if it exists; keeps allocation.
  void zero_grad() {
    std::fill(impl_->grad.begin(), impl_->grad.end(), S(0));
  }

  S item() const {
    if (size() != 1) {
      throw ShapeError("item: tensor " + shape_str(shape()) +
                       " is not a scalar");
    }
    return impl_->values[0];
  }

  S at(std::size_t i) const { return impl_->values[i]; }
  S at(std::size_t i, std::size_t j) const {
    return impl_->values[i * extent(1) + j];
  }
  S at(std::size_t i, std::size_t j, std::size_t k) const {
    return impl_->values[(i * extent(1) + j) * extent(2) + k];
  }

  TensorImpl<S>* impl() const { return impl_.get(); }

 private:
  static Tensor build(Shape shape, std::vector<S> values, S fill) {
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl<S>>();
    t.impl_->shape = std::move(shape);
    if (values.empty()) {
      t.impl_->values.assign(shape_numel(t.impl_->shape), fill);
    } else {
      t.impl_->values = std::move(values);
    }
    return t;
  }

  std::shared_ptr<TensorImpl<S>> impl_;
};

namespace detail {

// Attaches a backward function to `out` when recording is on and at least one
// parent participates in differentiation.
template <typename S>
void record(Tensor<S>& out, std::vector<Tensor<S>> parents,
            std::function<void(TensorImpl<S>&)> fn) {
  if (!autograd_enabled()) return;
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (!any) return;
  out.impl()->requires_grad = true;
  out.impl()->parents = std::move(parents);
  out.impl()->backward_fn = std::move(fn);
}

enum class Broadcast { none, left_scalar, right_scalar };

template <typename S>
Broadcast broadcast_kind(const Tensor<S>& a, const Tensor<S>& b,
                         const char* op) {
  if (a.shape() == b.shape()) return Broadcast::none;
  if (a.size() == 1) return Broadcast::left_scalar;
  if (b.size() == 1) return Broadcast::right_scalar;
  throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) +
                   " and " + shape_str(b.shape()) +
                   " are neither equal nor scalar-broadcastable");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// binary elementwise operations (equal shapes, or one side a 1-element tensor)

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  const auto kind = detail::broadcast_kind(a, b, "add");
  const Tensor<S>& big = (kind == detail::Broadcast::left_scalar) ? b : a;
  Tensor<S> out = Tensor<S>::zeros(big.shape());
  const std::size_t n = out.size();
  const S* pa = a.data();
  const S* pb = b.data();
  S* po = out.data();
  switch (kind) {
    case detail::Broadcast::none:
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
      break;
    case detail::Broadcast::left_scalar:
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[0] + pb[i];
      break;
    case detail::Broadcast::right_scalar:
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[0];
      break;
  }
  detail::record<S>(out, {a, b}, [kind](TensorImpl<S>& self) {
    const Tensor<S>& a = self.parents[0];
    const Tensor<S>& b = self.parents[1];
    const S* g = self.grad.data();
    const std::size_t n = self.values.size();
    if (a.requires_grad()) {
      S* ga = a.impl()->ensure_grad().data();
      if (kind == detail::Broadcast::left_scalar) {
        S acc = S(0);
        for (std::size_t i = 0; i < n; ++i) acc += g[i];
        ga[0] += acc;
      } else {
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
      }
    }
    if (b.requires_grad()) {
      S* gb = b.impl()->ensure_grad().data();
      if (kind == detail::Broadcast::right_scalar) {
        S acc = S(0);
        for (std::size_t i = 0; i < n; ++i) acc += g[i];
        gb[0] += acc;
      } else {
        for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
      }
    }
  });
  return out;
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  const auto kind = detail::broadcast_kind(a, b, "sub");
  const Tensor<S>& big = (kind == detail::Broadcast::left_scalar) ? b : a;
  Tensor<S> out = Tensor<S>::zeros(big.shape());
  const std::size_t n = out.size();
  const S* pa = a.data();
  const S* pb = b.data();
  S* po = out.data();
  switch (kind) {
    case detail::Broadcast::none:
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
      break;
    case detail::Broadcast::left_scalar:
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[0] - pb[i];
      break;
    case detail::Broadcast::right_scalar:
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[0];
      break;
  }
  detail::record<S>(out, {a, b}, [kind](TensorImpl<S>& self) {
    const Tensor<S>& a = self.parents[0];
    const Tensor<S>& b = self.parents[1];
    const S* g = self.grad.data();
    const std::size_t n = self.values.size();
    if (a.requires_grad()) {
      S* ga = a.impl()->ensure_grad().data();
      if (kind == detail::Broadcast::left_scalar) {
        S acc = S(0);
        for (std::size_t i = 0; i < n; ++i) acc += g[i];
        ga[0] += acc;
      } else {
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
      }
    }
    if (b.requires_grad()) {
      S* gb = b.impl()->ensure_grad().data();
      if (kind == detail::Broadcast::right_scalar) {
        S acc = S(0);
        for (std::size_t i = 0; i < n; ++i) acc += g[i];
        gb[0] -= acc;
      } else {
        for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i];
      }
    }
  });
  return out;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  const auto kind = detail::broadcast_kind(a, b, "mul");
  const Tensor<S>& big = (kind == detail::Broadcast::left_scalar) ? b : a;
  Tensor<S> out = Tensor<S>::zeros(big.shape());
  const std::size_t n = out.size();
  const S* pa = a.data();
  const S* pb = b.data();
  S* po = out.data();
  switch (kind) {
    case detail::Broadcast::none:
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
      break;
    case detail::Broadcast::left_scalar:
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[0] * pb[i];
      break;
    case detail::Broadcast::right_scalar:
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[0];
      break;
  }
  detail::record<S>(out, {a, b}, [kind](TensorImpl<S>& self) {
    const Tensor<S>& a = self.parents[0];
    const Tensor<S>& b = self.parents[1];
    const S* g = self.grad.data();
    const S* pa = a.data();
    const S* pb = b.data();
    const std::size_t n = self.values.size();
    if (a.requires_grad()) {
      S* ga = a.impl()->ensure_grad().data();
      if (kind == detail::Broadcast::left_scalar) {
        S acc = S(0);
        for (std::size_t i = 0; i < n; ++i) acc += g[i] * pb[i];
        ga[0] += acc;
      } else if (kind == detail::Broadcast::right_scalar) {
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * pb[0];
      } else {
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * pb[i];
      }
    }
    if (b.requires_grad()) {
      S* gb = b.impl()->ensure_grad().data();
      if (kind == detail::Broadcast::right_scalar) {
        S acc = S(0);
        for (std::size_t i = 0; i < n; ++i) acc += g[i] * pa[i];
        gb[0] += acc;
      } else if (kind == detail::Broadcast::left_scalar) {
        for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * pa[0];
      } else {
        for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * pa[i];
      }
    }
  });
  return out;
}

// scalar-constant conveniences (the constant is not a graph node)
template <typename S>
Tensor<S> add(const Tensor<S>& a, S c) {
  return add(a, Tensor<S>::scalar(c));
}
template <typename S>
Tensor<S> mul(const Tensor<S>& a, S c) {
  return mul(a, Tensor<S>::scalar(c));
}
template <typename S>
Tensor<S> sub(S c, const Tensor<S>& a) {
  return sub(Tensor<S>::scalar(c), a);
}
template <typename S>
Tensor<S> sub(const Tensor<S>& a, S c) {
  return sub(a, Tensor<S>::scalar(c));
}

template <typename S>
Tensor<S> neg(const Tensor<S>& a) {
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  const std::size_t n = out.size();
  const S* pa = a.data();
  S* po = out.data();
  for (std::size_t i = 0; i < n; ++i) po[i] = -pa[i];
  detail::record<S>(out, {a}, [](TensorImpl<S>& self) {
    const Tensor<S>& a = self.parents[0];
    if (!a.requires_grad()) return;
    S* ga = a.impl()->ensure_grad().data();
    const S* g = self.grad.data();
    for (std::size_t i = 0; i < self.values.size(); ++i) ga[i] -= g[i];
  });
  return out;
}

// ---------------------------------------------------------------------------
// matmul (2-D only)

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.extent(1) != b.extent(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  Tensor<S> out = Tensor<S>::zeros({m, n});
  const S* pa = a.data();
  const S* pb = b.data();
  S* po = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t l = 0; l < k; ++l) {
      const S av = pa[i * k + l];
      const S* brow = pb + l * n;
      S* orow = po + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  detail::record<S>(out, {a, b}, [m, k, n](TensorImpl<S>& self) {
    const Tensor<S>& a = self.parents[0];
    const Tensor<S>& b = self.parents[1];
    const S* g = self.grad.data();
    if (a.requires_grad()) {
      S* ga = a.impl()->ensure_grad().data();
      const S* pb = b.data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t l = 0; l < k; ++l) {
          S acc = S(0);
          const S* grow = g + i * n;
          const S* brow = pb + l * n;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          ga[i * k + l] += acc;
        }
      }
    }
    if (b.requires_grad()) {
      S* gb = b.impl()->ensure_grad().data();
      const S* pa = a.data();
      for (std::size_t l = 0; l < k; ++l) {
        for (std::size_t i = 0; i < m; ++i) {
          const S av = pa[i * k + l];
          const S* grow = g + i * n;
          S* gbrow = gb + l * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
        }
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// unary elementwise operations

template <typename S>
Tensor<S> relu(const Tensor<S>& a) {
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  const std::size_t n = out.size();
  const S* pa = a.data();
  S* po = out.data();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] > S(0) ? pa[i] : S(0);
  detail::record<S>(out, {a}, [](TensorImpl<S>& self) {
    const Tensor<S>& a = self.parents[0];
    if (!a.requires_grad()) return;
    S* ga = a.impl()->ensure_grad().data();
    const S* g = self.grad.data();
    const S* pa = a.data();
    // subgradient at exactly zero is taken as zero
    for (std::size_t i = 0; i < self.values.size(); ++i) {
      if (pa[i] > S(0)) ga[i] += g[i];
    }
  });
  return out;
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& a) {
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  const std::size_t n = out.size();
  const S* pa = a.data();
  S* po = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    const S x = pa[i];
    // evaluate on the non-overflowing branch for either sign
    if (x >= S(0)) {
      const S e = std::exp(-x);
      po[i] = S(1) / (S(1) + e);
    } else {
      const S e = std::exp(x);
      po[i] = e / (S(1) + e);
    }
  }
  detail::record<S>(out, {a}, [](TensorImpl<S>& self) {
    const Tensor<S>& a = self.parents[0];
    if (!a.requires_grad()) return;
    S* ga = a.impl()->ensure_grad().data();
    const S* g = self.grad.data();
    const S* y = self.values.data();
    for (std::size_t i = 0; i < self.values.size(); ++i) {
      ga[i] += g[i] * y[i] * (S(1) - y[i]);
    }
  });
  return out;
}

template <typename S>
Tensor<S> log(const Tensor<S>& a) {
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  const std::size_t n = out.size();
  const S* pa = a.data();
  S* po = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    if (!(pa[i] > S(0))) {
      throw DomainError("log: input element " + std::to_string(i) + " is " +
                        std::to_string(static_cast<double>(pa[i])) +
                        " (must be positive; clamp before taking logs)");
    }
    po[i] = std::log(pa[i]);
  }
  detail::record<S>(out, {a}, [](TensorImpl<S>& self) {
    const Tensor<S>& a = self.parents[0];
    if (!a.requires_grad()) return;
    S* ga = a.impl()->ensure_grad().data();
    const S* g = self.grad.data();
    const S* pa = a.data();
    for (std::size_t i = 0; i < self.values.size(); ++i) {
      ga[i] += g[i] / pa[i];
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// reductions

template <typename S>
Tensor<S> sum(const Tensor<S>& a) {
  S acc = S(0);
  const S* pa = a.data();
  for (std::size_t i = 0; i < a.size(); ++i) acc += pa[i];
  Tensor<S> out = Tensor<S>::scalar(acc);
  detail::record<S>(out, {a}, [](TensorImpl<S>& self) {
    const Tensor<S>& a = self.parents[0];
    if (!a.requires_grad()) return;
    S* ga = a.impl()->ensure_grad().data();
    const S g = self.grad[0];
    for (std::size_t i = 0; i < a.size(); ++i) ga[i] += g;
  });
  return out;
}

template <typename S>
Tensor<S> mean(const Tensor<S>& a) {
  if (a.size() == 0) throw ShapeError("mean: tensor is empty");
  S acc = S(0);
  const S* pa = a.data();
  for (std::size_t i = 0; i < a.size(); ++i) acc += pa[i];
  const S inv = S(1) / static_cast<S>(a.size());
  Tensor<S> out = Tensor<S>::scalar(acc * inv);
  detail::record<S>(out, {a}, [inv](TensorImpl<S>& self) {
    const Tensor<S>& a = self.parents[0];
    if (!a.requires_grad()) return;
    S* ga = a.impl()->ensure_grad().data();
    const S g = self.grad[0] * inv;
    for (std::size_t i = 0; i < a.size(); ++i) ga[i] += g;
  });
  return out;
}

// Extracts one element as a scalar node (used by probing tests and tools).
template <typename S>
Tensor<S> pick(const Tensor<S>& a, std::size_t flat_index) {
  if (flat_index >= a.size()) {
    throw ShapeError("pick: index " + std::to_string(flat_index) +
                     " out of range for " + shape_str(a.shape()));
  }
  Tensor<S> out = Tensor<S>::scalar(a.data()[flat_index]);
  detail::record<S>(out, {a}, [flat_index](TensorImpl<S>& self) {
    const Tensor<S>& a = self.parents[0];
    if (!a.requires_grad()) return;
    a.impl()->ensure_grad()[flat_index] += self.grad[0];
  });
  return out;
}

// ---------------------------------------------------------------------------
// channel concatenation for [batch, channels, time] tensors

template <typename S>
Tensor<S> concat_channels(const std::vector<Tensor<S>>& xs) {
  if (xs.empty()) throw ShapeError("concat_channels: no inputs");
  const std::size_t B = xs[0].extent(0);
  const std::size_t T = xs[0].ndim() == 3 ? xs[0].extent(2) : 0;
  std::size_t total_c = 0;
  for (const auto& x : xs) {
    if (x.ndim() != 3 || x.extent(0) != B || x.extent(2) != T) {
      throw ShapeError(
          "concat_channels: expected [batch x channels x time] with common "
          "batch/time, got " +
          shape_str(x.shape()) + " vs " + shape_str(xs[0].shape()));
    }
    total_c += x.extent(1);
  }
  Tensor<S> out = Tensor<S>::zeros({B, total_c, T});
  S* po = out.data();
  std::size_t c_off = 0;
  for (const auto& x : xs) {
    const std::size_t c = x.extent(1);
    const S* px = x.data();
    for (std::size_t b = 0; b < B; ++b) {
      std::copy(px + b * c * T, px + (b + 1) * c * T,
                po + (b * total_c + c_off) * T);
    }
    c_off += c;
  }
  detail::record<S>(out, xs, [B, T, total_c](TensorImpl<S>& self) {
    const S* g = self.grad.data();
    std::size_t c_off = 0;
    for (const auto& x : self.parents) {
      const std::size_t c = x.extent(1);
      if (x.requires_grad()) {
        S* gx = x.impl()->ensure_grad().data();
        for (std::size_t b = 0; b < B; ++b) {
          const S* gsrc = g + (b * total_c + c_off) * T;
          S* gdst = gx + b * c * T;
          for (std::size_t i = 0; i < c * T; ++i) gdst[i] += gsrc[i];
        }
      }
      c_off += c;
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// backward pass

// Runs reverse-mode accumulation from a scalar loss.  Interior gradients are
// reset per call; leaf gradients accumulate until explicitly zeroed.
template <typename S>
void backward(const Tensor<S>& loss) {
  if (!loss.valid() || loss.size() != 1) {
    throw ShapeError("backward: loss must be a scalar tensor, got " +
                     (loss.valid() ? shape_str(loss.shape()) : "null"));
  }
  // iterative post-order DFS: parents land before their consumers
  std::vector<TensorImpl<S>*> order;
  std::unordered_set<TensorImpl<S>*> seen;
  struct Frame {
    TensorImpl<S>* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({loss.impl(), 0});
  seen.insert(loss.impl());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      TensorImpl<S>* p = f.node->parents[f.next_parent++].impl();
      if (p && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }
  // interior nodes restart from zero so repeated backward() calls add exactly
  // one more unit of gradient to the leaves
  for (TensorImpl<S>* node : order) {
    if (node->backward_fn) node->grad.assign(node->values.size(), S(0));
  }
  loss.impl()->ensure_grad()[0] += S(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

}  // namespace nilm
