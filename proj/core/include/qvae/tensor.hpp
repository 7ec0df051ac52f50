#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "qvae/error.hpp"

namespace qvae {

/// Extents of an n-dimensional array, outermost first.
using Shape = std::vector<int>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Storage;

// One record of the computation graph: the inputs that produced a tensor and
// a closure that pushes the output gradient back into them.
struct Node {
  std::vector<std::shared_ptr<Storage>> inputs;
  std::function<void()> backprop;
};

struct Storage {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // allocated iff requires_grad
  bool requires_grad = false;
  std::shared_ptr<Node> node;  // present iff produced by a differentiable op
};

// Number of graph nodes processed by the most recent backward() call.
// Exposed for tests of the traversal contract.
extern int64_t last_backward_node_count;

}  // namespace detail

// Dense row-major float tensor with an optional gradient buffer and
// computation-graph linkage. Copies are shallow: tensors are handles to
// shared storage. Data is immutable by convention once a tensor has been
// consumed by an op; grad buffers and optimizer state are the only things
// mutated in place.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from_vector(Shape shape, std::vector<float> values,
                            bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const;
  int dim(int i) const { return shape().at(static_cast<size_t>(i)); }
  int rank() const { return static_cast<int>(shape().size()); }
  int64_t size() const;

  std::span<float> data();
  std::span<const float> data() const;
  bool requires_grad() const;
  /// Gradient buffer; throws if the tensor does not carry one.
  std::span<float> grad();
  std::span<const float> grad() const;
  void zero_grad();

  /// Value of a single-element tensor.
  float item() const;

  /// Deep copy of values only (no graph, no grad).
  Tensor clone_detached(bool requires_grad = false) const;

  // Internal handle used by ops; not part of the stable surface.
  const std::shared_ptr<detail::Storage>& storage() const { return s_; }
  explicit Tensor(std::shared_ptr<detail::Storage> s) : s_(std::move(s)) {}

 private:
  std::shared_ptr<detail::Storage> s_;
};

/// True while gradient graphs are being recorded (default). Evaluation code
/// uses NoGradGuard to skip graph construction.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Reverse-mode sweep from a scalar loss. Populates the grad buffer of every
/// reachable requires-grad tensor, visiting each graph node exactly once in
/// reverse topological order. Gradients accumulate additively, so calling
/// backward twice without zeroing doubles leaf gradients.
void backward(const Tensor& loss);

}  // namespace qvae
