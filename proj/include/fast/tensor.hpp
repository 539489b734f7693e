#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fast {

/// Violated precondition of a public operation.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Shape mismatch between operands.
class DimensionError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// Index outside its valid range (targets, token ids, positions).
class IndexError : public ContractError {
 public:
  using ContractError::ContractError;
};

namespace detail {

struct Node {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
};

std::uint64_t next_node_id();

}  // namespace detail

/// Dense row-major 2-D tensor of doubles with an optional place on the
/// autodiff graph. Scalars are 1x1, vectors are 1xn or nx1.
///
/// Copies share the underlying node; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::size_t rows, std::size_t cols, bool requires_grad = false);
  static Tensor full(std::size_t rows, std::size_t cols, double value);
  static Tensor from(std::size_t rows, std::size_t cols, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  std::size_t rows() const { return node_->rows; }
  std::size_t cols() const { return node_->cols; }
  std::size_t size() const { return node_->data.size(); }
  std::vector<std::size_t> shape() const { return {node_->rows, node_->cols}; }

  std::span<const double> data() const { return node_->data; }
  std::span<double> mutable_data() { return node_->data; }
  double at(std::size_t r, std::size_t c) const { return node_->data[r * node_->cols + c]; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void clear_grad() { node_->grad.clear(); }

  /// Same values, cut from the graph.
  Tensor detach() const;
  /// Deep copy of values (and the requires_grad flag), cut from the graph.
  Tensor clone() const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& shared() const { return node_; }

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// True while ops record backward closures on this thread.
bool grad_enabled();

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Reverse-mode sweep from a scalar loss. Nodes are replayed in reverse
/// creation order, so each node's backward runs exactly once after all of
/// its consumers.
void backward(const Tensor& loss);

}  // namespace fast
