#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <unordered_set>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace deform {

using Shape = std::vector<int64_t>;

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

class Tensor;

// One node of the recorded computation graph. Creation order is a valid
// topological order, so the tape is just the set of nodes reachable from the
// loss, visited by descending id.
struct TensorNode {
  uint64_t id = 0;
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Accumulates this node's cotangent (grad) into its parents' grad buffers.
  std::function<void()> vjp;
  std::vector<double> grad;

  static uint64_t next_id();
};

inline uint64_t TensorNode::next_id() {
  static uint64_t counter = 0;  // single logical training thread owns the tape
  return ++counter;
}

// Dense N-d array of doubles, row-major, with optional gradient tracking.
// Value-semantic handle; the underlying buffer is shared and treated as
// immutable once it participates in a graph (parameters are mutated only
// between backward passes, by the optimizer).
class Tensor {
 public:
  Tensor() = default;

  static Tensor from_data(Shape shape, std::vector<double> data) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
      throw ShapeError("from_data: shape " + shape_str(shape) + " does not match data length " +
                       std::to_string(data.size()));
    for (int64_t d : shape)
      if (d < 1) throw ShapeError("from_data: dimension < 1 in " + shape_str(shape));
    Tensor t;
    t.node_ = std::make_shared<TensorNode>();
    t.node_->id = TensorNode::next_id();
    t.node_->shape = std::move(shape);
    t.node_->data = std::move(data);
    return t;
  }

  static Tensor zeros(Shape shape) { return full(std::move(shape), 0.0); }

  static Tensor full(Shape shape, double v) {
    const int64_t n = shape_numel(shape);
    return from_data(std::move(shape), std::vector<double>(static_cast<size_t>(n), v));
  }

  static Tensor scalar(double v) { return from_data({1}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t size() const { return static_cast<int64_t>(node_->data.size()); }
  int64_t dim(size_t i) const { return node_->shape.at(i); }
  size_t rank() const { return node_->shape.size(); }

  const std::vector<double>& data() const { return node_->data; }
  std::vector<double>& mutable_data() { return node_->data; }
  double item() const {
    if (size() != 1) throw ShapeError("item: tensor has " + std::to_string(size()) + " elements");
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    node_->requires_grad = v;
    return *this;
  }

  // Valid after backward() for leaves that required grad.
  const std::vector<double>& grad() const { return node_->grad; }
  std::vector<double>& mutable_grad() { return node_->grad; }

  // Same values, detached from the graph.
  Tensor detach() const { return from_data(node_->shape, node_->data); }

  std::shared_ptr<TensorNode> node() const { return node_; }

  static Tensor wrap(std::shared_ptr<TensorNode> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  std::shared_ptr<TensorNode> node_;
};

// Builds a recorded op node. `vjp` receives (out_node, parent_nodes) bound by
// the caller; it must add into parents' grad buffers.
inline Tensor make_op_node(Shape shape, std::vector<double> data,
                           std::vector<Tensor> inputs,
                           std::function<void(TensorNode&)> vjp) {
  Tensor out = Tensor::from_data(std::move(shape), std::move(data));
  bool track = false;
  for (const Tensor& in : inputs) track = track || in.requires_grad();
  if (track) {
    out.node()->requires_grad = true;
    for (const Tensor& in : inputs) out.node()->parents.push_back(in.node());
    auto n = out.node().get();
    out.node()->vjp = [n, vjp = std::move(vjp)]() { vjp(*n); };
  }
  return out;
}

inline void ensure_grad_buffer(TensorNode& n) {
  if (n.grad.size() != n.data.size()) n.grad.assign(n.data.size(), 0.0);
}

// Reverse-mode sweep from a scalar loss. Visits reachable recorded ops in
// exact reverse execution order (descending id); multiple uses of a tensor
// sum their contributions.
void backward(const Tensor& loss);

inline void backward(const Tensor& loss) {
  if (loss.size() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  // Collect reachable grad-requiring nodes.
  std::vector<TensorNode*> nodes;
  {
    std::vector<TensorNode*> stack{loss.node().get()};
    std::unordered_set<uint64_t> seen;
    auto mark = [&](uint64_t id) { return seen.insert(id).second; };
    while (!stack.empty()) {
      TensorNode* n = stack.back();
      stack.pop_back();
      if (!n->requires_grad || !mark(n->id)) continue;
      nodes.push_back(n);
      for (auto& p : n->parents) stack.push_back(p.get());
    }
  }
  for (TensorNode* n : nodes) n->grad.assign(n->data.size(), 0.0);
  if (!loss.requires_grad()) return;  // nothing on tape: all grads stay zero
  loss.node()->grad.assign(1, 1.0);
  std::sort(nodes.begin(), nodes.end(),
            [](const TensorNode* a, const TensorNode* b) { return a->id > b->id; });
  for (TensorNode* n : nodes) {
    if (n->vjp) {
      for (auto& p : n->parents)
        if (p->requires_grad) ensure_grad_buffer(*p);
      n->vjp();
    }
  }
}

}  // namespace deform
