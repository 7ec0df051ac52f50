#include "qvae/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace qvae {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int e : shape) {
    if (e <= 0) throw ShapeError("non-positive extent in shape " + shape_str(shape));
    n *= e;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {
int64_t last_backward_node_count = 0;
}

namespace {

std::shared_ptr<detail::Storage> make_storage(Shape shape, bool requires_grad) {
  auto s = std::make_shared<detail::Storage>();
  const int64_t n = shape_numel(shape);
  s->shape = std::move(shape);
  s->data.assign(static_cast<size_t>(n), 0.0f);
  s->requires_grad = requires_grad;
  if (requires_grad) s->grad.assign(static_cast<size_t>(n), 0.0f);
  return s;
}

thread_local bool g_grad_enabled = true;

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return Tensor(make_storage(std::move(shape), requires_grad));
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  auto s = make_storage(std::move(shape), requires_grad);
  std::fill(s->data.begin(), s->data.end(), value);
  return Tensor(std::move(s));
}

Tensor Tensor::from_vector(Shape shape, std::vector<float> values, bool requires_grad) {
  const int64_t n = shape_numel(shape);
  if (n != static_cast<int64_t>(values.size())) {
    throw ShapeError("value count " + std::to_string(values.size()) +
                     " does not fill shape " + shape_str(shape));
  }
  auto s = std::make_shared<detail::Storage>();
  s->shape = std::move(shape);
  s->data = std::move(values);
  s->requires_grad = requires_grad;
  if (requires_grad) s->grad.assign(static_cast<size_t>(n), 0.0f);
  return Tensor(std::move(s));
}

Tensor Tensor::scalar(float value, bool requires_grad) {
  return from_vector({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
  if (!s_) throw Error("use of undefined tensor");
  return s_->shape;
}

int64_t Tensor::size() const { return static_cast<int64_t>(data().size()); }

std::span<float> Tensor::data() {
  if (!s_) throw Error("use of undefined tensor");
  return s_->data;
}

std::span<const float> Tensor::data() const {
  if (!s_) throw Error("use of undefined tensor");
  return s_->data;
}

bool Tensor::requires_grad() const { return s_ && s_->requires_grad; }

std::span<float> Tensor::grad() {
  if (!requires_grad()) throw Error("tensor has no gradient buffer");
  return s_->grad;
}

std::span<const float> Tensor::grad() const {
  if (!requires_grad()) throw Error("tensor has no gradient buffer");
  return s_->grad;
}

void Tensor::zero_grad() {
  if (requires_grad()) std::fill(s_->grad.begin(), s_->grad.end(), 0.0f);
}

float Tensor::item() const {
  if (size() != 1) {
    throw ShapeError("item() requires a single-element tensor, got " + shape_str(shape()));
  }
  return data()[0];
}

Tensor Tensor::clone_detached(bool requires_grad) const {
  return from_vector(shape(), std::vector<float>(data().begin(), data().end()),
                     requires_grad);
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Tensor& loss) {
  if (!loss.defined()) throw Error("backward on undefined tensor");
  if (loss.size() != 1) {
    throw ShapeError("backward requires a scalar loss, got " + shape_str(loss.shape()));
  }
  auto root = loss.storage();
  if (!root->requires_grad) {
    throw Error("backward on a tensor that does not require grad");
  }

  // Iterative post-order DFS. `order` ends up topologically sorted with
  // producers before consumers; the sweep walks it in reverse.
  std::vector<detail::Storage*> order;
  std::unordered_set<detail::Storage*> seen;
  struct Frame {
    detail::Storage* s;
    size_t next_input;
  };
  std::vector<Frame> stack;
  if (root->node) {
    stack.push_back({root.get(), 0});
    seen.insert(root.get());
  }
  while (!stack.empty()) {
    Frame& f = stack.back();
    auto& node = f.s->node;
    if (f.next_input < node->inputs.size()) {
      detail::Storage* in = node->inputs[f.next_input++].get();
      if (in->node && !seen.count(in)) {
        seen.insert(in);
        stack.push_back({in, 0});
      }
    } else {
      order.push_back(f.s);
      stack.pop_back();
    }
  }

  // Interior grad buffers are scratch for one sweep: cleared here and then
  // re-accumulated, so each backward call pushes exactly d(loss)/d(leaf) into
  // the leaves and repeated calls accumulate additively there.
  for (detail::Storage* s : order) std::fill(s->grad.begin(), s->grad.end(), 0.0f);
  if (root->node) {
    root->grad[0] = 1.0f;
  } else {
    root->grad[0] += 1.0f;  // a bare leaf loss keeps the leaf convention
  }

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    (*it)->node->backprop();
  }
  detail::last_backward_node_count = static_cast<int64_t>(order.size());
}

}  // namespace qvae
