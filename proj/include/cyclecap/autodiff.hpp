#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "cyclecap/tensor.hpp"

namespace cyclecap {

class Graph;

// Handle to a node on a Graph's tape. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, int id) : graph_(graph), id_(id) {}

  Graph* graph() const { return graph_; }
  int id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Scalar scalar() const;

 private:
  Graph* graph_ = nullptr;
  int id_ = -1;
};

// Reverse-mode tape. Nodes are appended in evaluation order, so the node
// vector is already topologically sorted. With recording off, ops evaluate
// eagerly and keep no backward rules (inference mode).
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int)>;

  explicit Graph(bool recording = true) : recording_(recording) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return recording_; }

  Var constant(Matrix value);
  Var constant_scalar(Scalar v);
  // Differentiable leaf whose gradient is read back with grad().
  Var leaf(Matrix value);
  // Leaf bound to a Parameter; backward() accumulates into param.grad.
  // Repeated calls for the same parameter return the same node.
  Var param(Parameter& p);

  // Populates grads for every node reachable from loss. Call once per tape.
  void backward(Var loss, Scalar seed = 1.0);
  bool backward_done() const { return backward_done_; }

  const Matrix& value(int id) const { return nodes_[id].value; }
  // Gradient of a node after backward(); zero if unreachable.
  Matrix grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }

  // Used by op implementations.
  Var push(Matrix value, std::vector<int> inputs, BackwardFn backward, const char* op);
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }
  Matrix& grad_ref(int id);
  const Matrix& out_grad(int id) const { return nodes_[id].grad; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::vector<int> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };

  bool recording_;
  bool backward_done_ = false;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_nodes_;
};

// ---- primitives -----------------------------------------------------------
// Each checks operand shapes (DimensionError names the op and both shapes)
// and rejects non-finite results with NumericError.

Var matmul(Var a, Var b);
Var transpose(Var a);
// Elementwise; b may also be a 1xC row or Rx1 column broadcast over a.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, Scalar s);
Var one_minus(Var a);
// axis 0 stacks vertically, axis 1 horizontally.
Var concat(const std::vector<Var>& parts, int axis = 0);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
// axis 0: each column normalized over its rows; axis 1: each row normalized.
Var softmax(Var a, int axis);
Var log_softmax(Var a, int axis);
Var tanh(Var a);
Var sigmoid(Var a);
// Row `index` of table (V x E), returned as an E x 1 column.
Var embedding(Var table, Eigen::Index index);
// Inverted dropout; identity when !training or rate == 0.
Var dropout(Var a, double rate, Rng& rng, bool training);
Var sum(Var a);
// Column-wise mean of a K x D matrix as a D x 1 column.
Var mean_rows(Var a);
Var pick(Var a, Eigen::Index row, Eigen::Index col = 0);
// T columns of length n -> T x n matrix whose row t is columns[t]^T.
Var stack_rows(const std::vector<Var>& columns);
// Subgradient 0 at the origin.
Var frobenius_norm(Var a);
Var squared_norm(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }

}  // namespace cyclecap
