#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "layerslim/tensor.hpp"

namespace layerslim {

// A trainable tensor. grad always has value's shape and starts at zero;
// backward() accumulates into it until zero_grad() is called.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Tensor value);

  std::string name;
  Tensor value;
  Tensor grad;

  void zero_grad() { grad.fill(0.0f); }
  int64_t numel() const { return value.numel(); }
};

class Graph;

// Handle to a node recorded on a Graph. Cheap to copy; only valid while the
// graph that produced it is alive.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Graph* graph() const { return graph_; }
  size_t index() const { return index_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* graph, size_t index) : graph_(graph), index_(index) {}

  Graph* graph_ = nullptr;
  size_t index_ = 0;
};

// Tape of operations for one forward pass. Nodes are appended in execution
// order, which is a topological order; backward() walks it in reverse.
//
// With recording disabled the graph only evaluates values: no backward rules
// or saved intermediates are kept, and backward() is rejected.
class Graph {
 public:
  using BackwardFn = std::function<void(const Tensor& out_grad)>;

  explicit Graph(bool recording = true) : recording_(recording) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return recording_; }
  bool consumed() const { return consumed_; }
  size_t size() const { return nodes_.size(); }

  Var constant(Tensor value);
  Var param(Parameter& parameter);
  // Read-only use of a parameter's value; never receives a gradient.
  Var param(const Parameter& parameter);

  // Appends an op result. `backward` receives dLoss/dOutput and must push
  // input gradients through grad_sink(). Dropped when not recording or when
  // no input needs a gradient.
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);

  // Gradient buffer of `v` for accumulation, or nullptr when `v` needs none.
  Tensor* grad_sink(Var v);

  const Tensor& value(Var v) const;
  bool needs_grad(Var v) const;

  void backward(Var loss);

  // Node indices visited by the last backward(), in visit order.
  const std::vector<size_t>& backward_order() const { return backward_order_; }

 private:
  struct Node {
    Tensor owned_value;
    const Tensor* value = nullptr;
    Tensor owned_grad;
    Tensor* grad = nullptr;
    Parameter* parameter = nullptr;
    bool needs_grad = false;
    BackwardFn backward;
  };

  Node& node(Var v);
  const Node& node(Var v) const;

  std::deque<Node> nodes_;
  std::vector<size_t> backward_order_;
  bool recording_ = true;
  bool consumed_ = false;
};

// Differentiable operations. Rank-2 operands are [rows x cols] row-major.
Var matmul(Var a, Var b);             // [m,k] x [k,n] -> [m,n]
Var matmul_nt(Var a, Var b);          // [m,k] x [n,k]^T -> [m,n]
Var add(Var a, Var b);                // same shape
Var add_bias(Var x, Var bias);        // [m,n] + [n] broadcast over rows
Var scale(Var x, float factor);
Var sum(Var x);                       // -> {1}
Var reshape(Var x, Shape shape);
Var gelu(Var x);                      // tanh approximation
Var softmax(Var x, int64_t axis);     // rank 1 (axis 0) or rank 2 (axis 0/1)
Var layer_norm(Var x, Var gain, Var bias, float eps = 1e-5f);
Var embedding(Var table, std::span<const int32_t> ids);
Var select_rows(Var x, std::span<const int64_t> rows);
Var causal_self_attention(Var q, Var k, Var v, int64_t n_heads);
Var cross_entropy(Var logits, int64_t target);  // -log softmax(logits)[target]
// Sum over rows of -log softmax(row r)[targets[r]]; logits is [rows x classes].
Var cross_entropy_rows(Var logits, std::span<const int64_t> targets);

// Scalar helpers on plain tensors, shared by inference paths.
float gelu_value(float x);
std::vector<double> log_softmax(std::span<const float> logits);

}  // namespace layerslim
