#include "fast/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <unordered_set>

namespace fast {

namespace detail {

std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

}  // namespace detail

namespace {

thread_local bool g_grad_enabled = true;

std::shared_ptr<detail::Node> make_node(std::size_t rows, std::size_t cols, std::vector<double> values,
                                        bool requires_grad) {
  auto node = std::make_shared<detail::Node>();
  node->rows = rows;
  node->cols = cols;
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  node->id = detail::next_node_id();
  return node;
}

}  // namespace

Tensor Tensor::zeros(std::size_t rows, std::size_t cols, bool requires_grad) {
  return Tensor(make_node(rows, cols, std::vector<double>(rows * cols, 0.0), requires_grad));
}

Tensor Tensor::full(std::size_t rows, std::size_t cols, double value) {
  return Tensor(make_node(rows, cols, std::vector<double>(rows * cols, value), false));
}

Tensor Tensor::from(std::size_t rows, std::size_t cols, std::vector<double> values, bool requires_grad) {
  if (values.size() != rows * cols) {
    throw DimensionError("Tensor::from: " + std::to_string(values.size()) + " values for shape " +
                         std::to_string(rows) + "x" + std::to_string(cols));
  }
  return Tensor(make_node(rows, cols, std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(make_node(1, 1, {value}, requires_grad));
}

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item() on a tensor with " + std::to_string(size()) + " elements");
  return node_->data[0];
}

Tensor Tensor::detach() const {
  return Tensor(make_node(rows(), cols(), node_->data, false));
}

Tensor Tensor::clone() const {
  return Tensor(make_node(rows(), cols(), node_->data, node_->requires_grad));
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward: loss must be a scalar tensor");
  }
  auto* root = loss.node();
  if (!root->requires_grad) return;

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<detail::Node*> stack{root};
  seen.insert(root);
  while (!stack.empty()) {
    auto* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->id > b->id; });

  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto* n : order) {
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  // Interior gradients are scratch space; only leaves keep theirs.
  for (auto* n : order) {
    if (n->backward_fn) n->grad.clear();
  }
}

}  // namespace fast
