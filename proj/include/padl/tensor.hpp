#pragma once

// Dense float32 tensors with reverse-mode automatic differentiation.
// Tensors are cheap handles onto shared storage; every differentiable op
// records a node so that backward() can replay the chain rule over a
// topologically ordered tape. Single-threaded and deterministic: identical
// inputs and seeds give bitwise-identical results on one platform.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace padl {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

struct TensorImpl;
using TensorImplPtr = std::shared_ptr<TensorImpl>;

// One recorded operation. parents are the op inputs; backward pushes the
// output gradient into the parents' gradient buffers (accumulating).
struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  bool requires_grad = false;
  std::vector<float> grad;

  std::vector<TensorImplPtr> parents;
  std::function<void(TensorImpl&)> backward_fn;
  std::uint64_t node_id = 0;

  std::size_t numel() const { return data.size(); }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
  }
  void zero_grad() { grad.assign(data.size(), 0.0f); }
};

namespace detail {
inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}
inline std::uint64_t& op_counter() {
  thread_local std::uint64_t count = 0;
  return count;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

// Number of autodiff nodes recorded so far in this thread. Used by tests to
// verify that pipelines share forward computation instead of repeating it.
inline std::uint64_t op_count() { return detail::op_counter(); }

struct NoGradGuard {
  bool previous;
  NoGradGuard() : previous(detail::grad_enabled_flag()) {
    detail::grad_enabled_flag() = false;
  }
  ~NoGradGuard() { detail::grad_enabled_flag() = previous; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

class Tensor {
 public:
  Tensor() : impl_(std::make_shared<TensorImpl>()) {}

  explicit Tensor(TensorImplPtr impl) : impl_(std::move(impl)) {}

  Tensor(const Shape& shape, float fill = 0.0f, bool requires_grad = false) {
    impl_ = std::make_shared<TensorImpl>();
    impl_->shape = shape;
    impl_->data.assign(shape_numel(shape), fill);
    impl_->requires_grad = requires_grad;
  }

  Tensor(const Shape& shape, std::vector<float> values, bool requires_grad = false) {
    if (values.size() != shape_numel(shape))
      throw std::invalid_argument("tensor: " + std::to_string(values.size()) +
                                  " values do not fill shape " + shape_str(shape));
    impl_ = std::make_shared<TensorImpl>();
    impl_->shape = shape;
    impl_->data = std::move(values);
    impl_->requires_grad = requires_grad;
  }

  static Tensor scalar(float v, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<float>{v}, requires_grad);
  }

  const Shape& shape() const { return impl_->shape; }
  int dim(int i) const {
    int nd = static_cast<int>(impl_->shape.size());
    if (i < 0) i += nd;
    return impl_->shape[static_cast<std::size_t>(i)];
  }
  int ndim() const { return static_cast<int>(impl_->shape.size()); }
  std::size_t numel() const { return impl_->data.size(); }

  float* data() { return impl_->data.data(); }
  const float* data() const { return impl_->data.data(); }
  std::vector<float>& vec() { return impl_->data; }
  const std::vector<float>& vec() const { return impl_->data; }

  float item() const {
    if (numel() != 1)
      throw std::logic_error("item: tensor has " + std::to_string(numel()) + " elements");
    return impl_->data[0];
  }
  float at(std::size_t i) const { return impl_->data[i]; }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    impl_->requires_grad = v;
    if (v) impl_->ensure_grad();
    return *this;
  }
  bool has_grad() const { return impl_->grad.size() == impl_->data.size(); }
  const std::vector<float>& grad() const { return impl_->grad; }
  std::vector<float>& grad() { return impl_->grad; }
  void zero_grad() { impl_->zero_grad(); }

  TensorImplPtr impl() const { return impl_; }

  // Leaf copy that shares no graph history (the generative-model boundary:
  // gradients never cross a detach).
  Tensor detach() const {
    Tensor out(impl_->shape);
    out.impl_->data = impl_->data;
    return out;
  }

  Tensor clone_data() const { return detach(); }

 private:
  TensorImplPtr impl_;
};

// Records the output of an op. Inputs become parents; the node only joins the
// graph when grad mode is on and at least one input needs gradients.
inline Tensor make_op(const Shape& shape, std::vector<float> values,
                      std::vector<Tensor> inputs,
                      std::function<void(TensorImpl&)> backward) {
  Tensor out(shape, std::move(values));
  bool track = grad_enabled();
  bool any = false;
  if (track) {
    for (const Tensor& t : inputs)
      if (t.impl()->requires_grad || t.impl()->backward_fn) any = true;
  }
  if (track && any) {
    auto impl = out.impl();
    impl->requires_grad = true;
    impl->parents.reserve(inputs.size());
    for (const Tensor& t : inputs) impl->parents.push_back(t.impl());
    impl->backward_fn = std::move(backward);
    impl->node_id = ++detail::op_counter();
  }
  return out;
}

// The tape: every reachable recorded node, parents before consumers. Built by
// depth-first traversal from the backward root; each node is visited exactly
// once on the reverse sweep.
struct Tape {
  std::vector<TensorImpl*> nodes;

  static Tape from(const Tensor& root) {
    Tape tape;
    std::unordered_set<TensorImpl*> seen;
    std::vector<std::pair<TensorImpl*, std::size_t>> stack;
    TensorImpl* r = root.impl().get();
    if (seen.insert(r).second) stack.emplace_back(r, 0);
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        TensorImpl* p = node->parents[next++].get();
        if ((p->backward_fn || p->requires_grad) && seen.insert(p).second)
          stack.emplace_back(p, 0);
      } else {
        tape.nodes.push_back(node);
        stack.pop_back();
      }
    }
    return tape;
  }
};

// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate, so
// repeated calls without zeroing add up; intermediate buffers are scratch
// for the current sweep only.
inline void backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw std::logic_error("backward: loss must be scalar, got " + shape_str(loss.shape()));
  Tape tape = Tape::from(loss);
  for (TensorImpl* n : tape.nodes) {
    n->ensure_grad();
    if (n->backward_fn) n->zero_grad();
  }
  TensorImpl* root = loss.impl().get();
  root->grad[0] += 1.0f;
  for (auto it = tape.nodes.rbegin(); it != tape.nodes.rend(); ++it) {
    TensorImpl* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

// Deterministic RNG shared by init, data generation and training. All draws
// go through one engine so a run is reproducible from a single seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : gen_(seed) {}

  float uniform(float lo = 0.0f, float hi = 1.0f) {
    std::uniform_real_distribution<float> d(lo, hi);
    return d(gen_);
  }
  float normal(float mean = 0.0f, float stddev = 1.0f) {
    std::normal_distribution<float> d(mean, stddev);
    return d(gen_);
  }
  int uniform_int(int lo, int hi) {  // inclusive bounds
    std::uniform_int_distribution<int> d(lo, hi);
    return d(gen_);
  }
  std::uint64_t next_seed() { return gen_(); }
  std::mt19937_64& engine() { return gen_; }

  Tensor normal_tensor(const Shape& shape, float mean = 0.0f, float stddev = 1.0f,
                       bool requires_grad = false) {
    Tensor t(shape, 0.0f, requires_grad);
    for (auto& v : t.vec()) v = normal(mean, stddev);
    return t;
  }
  Tensor uniform_tensor(const Shape& shape, float lo, float hi,
                        bool requires_grad = false) {
    Tensor t(shape, 0.0f, requires_grad);
    for (auto& v : t.vec()) v = uniform(lo, hi);
    return t;
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace padl
