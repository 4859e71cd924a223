#include "dta/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace dta {

int64_t numel_of(const Shape& dims) {
  int64_t n = 1;
  for (int64_t d : dims) n *= d;
  return n;
}

std::string shape_str(const Shape& dims) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < dims.size(); ++i) {
    if (i) os << "x";
    os << dims[i];
  }
  os << "]";
  return os.str();
}

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_MAX, 0);
  mallopt(M_TRIM_THRESHOLD, -1);
#endif
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool on) { g_grad_enabled = on; }

NoGradGuard::NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set_enabled(false); }
NoGradGuard::~NoGradGuard() { GradMode::set_enabled(prev_); }

template <typename T>
Tensor<T>::Tensor(Shape dims, T fill) : n_(std::make_shared<Node<T>>()) {
  int64_t n = numel_of(dims);
  if (n < 0) throw std::invalid_argument("tensor: negative extent in " + shape_str(dims));
  n_->dims = std::move(dims);
  n_->value.assign(static_cast<size_t>(n), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape dims, std::vector<T> values) : n_(std::make_shared<Node<T>>()) {
  if (numel_of(dims) != static_cast<int64_t>(values.size()))
    throw std::invalid_argument("tensor: " + shape_str(dims) + " does not hold " +
                                std::to_string(values.size()) + " values");
  n_->dims = std::move(dims);
  n_->value = std::move(values);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T v) {
  return Tensor({1}, std::vector<T>{v});
}

template <typename T>
T Tensor<T>::item() const {
  if (!n_ || n_->numel() != 1)
    throw std::invalid_argument("item: tensor is not a scalar");
  return n_->value[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool rg) {
  if (rg && !n_->parents.empty())
    throw std::invalid_argument("set_requires_grad: only leaf tensors may be toggled");
  n_->requires_grad = rg;
  return *this;
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (n_->grad.empty())
    throw std::runtime_error("grad: no gradient accumulated yet");
  return {n_->grad.data(), n_->grad.size()};
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
  if (n_->grad.empty()) n_->grad.assign(n_->value.size(), T(0));
  return {n_->grad.data(), n_->grad.size()};
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (!n_->grad.empty()) n_->grad.assign(n_->value.size(), T(0));
}

template <typename T>
bool Tensor<T>::all_finite() const {
  for (const T& v : n_->value)
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

template <typename T>
Tensor<T> make_op_output(Shape dims, std::vector<T> value,
                         std::vector<std::shared_ptr<Node<T>>> parents,
                         std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  if (numel_of(dims) != static_cast<int64_t>(value.size()))
    throw std::invalid_argument("make_op_output: shape/value mismatch");
  node->dims = std::move(dims);
  node->value = std::move(value);
  bool track = GradMode::enabled();
  if (track) {
    bool any = false;
    for (const auto& p : parents) any = any || (p && p->requires_grad);
    track = any;
  }
  if (track) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  Tensor<T> out;
  out.node() = node;
  return out;
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be a scalar tensor");
  Node<T>* root = loss.node().get();
  if (!root->requires_grad)
    throw std::invalid_argument("backward: no graph recorded for loss");

  // Post-order DFS: parents precede children, root last.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> done;
  struct Frame {
    Node<T>* n;
    size_t next;
  };
  std::vector<Frame> stack{{root, 0}};
  std::unordered_set<Node<T>*> on_stack{root};
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.n->parents.size()) {
      Node<T>* p = f.n->parents[f.next++].get();
      if (p && !done.count(p) && !on_stack.count(p)) {
        stack.push_back({p, 0});
        on_stack.insert(p);
      }
    } else {
      done.insert(f.n);
      on_stack.erase(f.n);
      order.push_back(f.n);
      stack.pop_back();
    }
  }

  for (Node<T>* n : order) n->gpass.assign(n->value.size(), T(0));
  root->gpass[0] = T(1);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
    // only leaves keep a persistent accumulator; interior activations are
    // visited once per pass and their gpass is all any consumer needed
    if (n->requires_grad && n->parents.empty()) {
      if (n->grad.empty()) n->grad.assign(n->value.size(), T(0));
      for (size_t i = 0; i < n->gpass.size(); ++i) n->grad[i] += n->gpass[i];
    }
    n->gpass.clear();
    n->gpass.shrink_to_fit();
  }
}

IntMask::IntMask(Shape d, std::vector<int32_t> values) : dims(std::move(d)), v(std::move(values)) {
  if (numel_of(dims) != static_cast<int64_t>(v.size()))
    throw std::invalid_argument("mask: shape/value mismatch");
}

IntMask::IntMask(Shape d, int32_t fill)
    : dims(std::move(d)), v(static_cast<size_t>(numel_of(dims)), fill) {}

template class Tensor<float>;
template class Tensor<double>;
template Tensor<float> make_op_output<float>(Shape, std::vector<float>,
                                             std::vector<std::shared_ptr<Node<float>>>,
                                             std::function<void(Node<float>&)>);
template Tensor<double> make_op_output<double>(Shape, std::vector<double>,
                                               std::vector<std::shared_ptr<Node<double>>>,
                                               std::function<void(Node<double>&)>);
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

}  // namespace dta
