#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dta {

using Shape = std::vector<int64_t>;

int64_t numel_of(const Shape& dims);
std::string shape_str(const Shape& dims);

/// Keeps large freed buffers inside the process heap instead of returning
/// them to the kernel. Training rebuilds the autograd graph every step, so
/// without this the allocator re-faults hundreds of megabytes per step.
/// No-op off glibc. Call once at startup of long-running entry points.
void tune_allocator();

/// Thread-local autograd switch. While disabled, ops compute values only and
/// record no graph; use NoGradGuard around inference passes.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool on);
};

struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
struct Node {
  Shape dims;
  std::vector<T> value;
  std::vector<T> grad;   // persistent accumulator, sized on first backward
  std::vector<T> gpass;  // scratch gradient of the in-flight backward pass
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void(Node<T>&)> backward_fn;

  int64_t numel() const { return static_cast<int64_t>(value.size()); }
};

/// Dense row-major tensor handle. Copies share the underlying node, so a
/// Tensor behaves like a reference to one value in the autograd graph.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape dims, T fill = T(0));
  Tensor(Shape dims, std::vector<T> values);
  static Tensor scalar(T v);

  bool defined() const { return n_ != nullptr; }
  const Shape& dims() const { return n_->dims; }
  int ndim() const { return static_cast<int>(n_->dims.size()); }
  int64_t dim(int i) const { return n_->dims[static_cast<size_t>(i)]; }
  int64_t numel() const { return n_->numel(); }

  std::span<const T> data() const { return {n_->value.data(), n_->value.size()}; }
  std::span<T> mutable_data() { return {n_->value.data(), n_->value.size()}; }
  T item() const;

  bool requires_grad() const { return n_->requires_grad; }
  Tensor& set_requires_grad(bool rg);

  bool has_grad() const { return n_ && !n_->grad.empty(); }
  std::span<const T> grad() const;
  std::span<T> mutable_grad();
  void zero_grad();

  bool all_finite() const;

  std::shared_ptr<Node<T>>& node() { return n_; }
  const std::shared_ptr<Node<T>>& node() const { return n_; }

 private:
  explicit Tensor(std::shared_ptr<Node<T>> n) : n_(std::move(n)) {}
  std::shared_ptr<Node<T>> n_;

  template <typename U>
  friend Tensor<U> make_op_output(Shape, std::vector<U>,
                                  std::vector<std::shared_ptr<Node<U>>>,
                                  std::function<void(Node<U>&)>);
};

/// Extension point for defining ops: wraps a computed value as a graph node.
/// `backward_fn` is invoked with the node's gpass holding dL/doutput and must
/// accumulate into each parent's gpass. Ignored while GradMode is disabled or
/// when no parent requires grad.
template <typename T>
Tensor<T> make_op_output(Shape dims, std::vector<T> value,
                         std::vector<std::shared_ptr<Node<T>>> parents,
                         std::function<void(Node<T>&)> backward_fn);

/// Reverse-mode sweep from a scalar loss. Gradients are accumulated (summed)
/// into every reachable requires_grad node; the graph stays intact, so a
/// second call adds the same contributions again.
template <typename T>
void backward(const Tensor<T>& loss);

/// Class-index mask (segmentation targets). Plain data, never differentiated.
struct IntMask {
  Shape dims;
  std::vector<int32_t> v;

  IntMask() = default;
  IntMask(Shape d, std::vector<int32_t> values);
  explicit IntMask(Shape d, int32_t fill = 0);
  int64_t numel() const { return static_cast<int64_t>(v.size()); }
  int64_t dim(int i) const { return dims[static_cast<size_t>(i)]; }
};

}  // namespace dta
