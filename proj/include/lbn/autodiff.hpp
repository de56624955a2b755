#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include "lbn/tensor.hpp"

namespace lbn::ad {

using NodeId = std::size_t;

enum class OpKind {
  Constant,
  Leaf,
  MatMul,
  Add,
  Sub,
  Mul,
  AddRow,
  SubRow,
  MulRow,
  Scale,
  ScaleConst,
  Mix,
  Leaky,
  Relu,
  RsqrtEps,
  MeanRows,
  VarRows,
  Reshape,
  SoftmaxRows,
  EntropySum,
  RangeSum,
  NllSum,
  Sum,
  QuerySelect,
};

const char* op_name(OpKind op);

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid as long as the tape is.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  NodeId id() const { return id_; }
  Tape& tape() const;
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  NodeId id_ = 0;
};

// Passed to a node's backward function; routes input gradients to the right
// slots and tells the function which inputs need one at all.
class GradSink {
 public:
  GradSink(std::span<const NodeId> inputs, std::vector<Tensor>& grads, std::vector<bool>& present,
           const std::vector<bool>& requires_grad)
      : inputs_(inputs), grads_(grads), present_(present), requires_grad_(requires_grad) {}

  bool needs(std::size_t k) const { return requires_grad_[inputs_[k]]; }
  void add(std::size_t k, const Tensor& g);

 private:
  std::span<const NodeId> inputs_;
  std::vector<Tensor>& grads_;
  std::vector<bool>& present_;
  const std::vector<bool>& requires_grad_;
};

using BackwardFn = std::function<void(const Tensor& grad_out, GradSink& sink)>;

class Gradients {
 public:
  const Tensor& of(const Var& leaf) const;
  const Tensor& of(NodeId leaf) const;
  bool all_finite() const;
  const std::map<NodeId, Tensor>& by_leaf() const { return grads_; }

 private:
  friend class Tape;
  std::map<NodeId, Tensor> grads_;
};

/// Append-only record of a computation. Node inputs always precede the node,
/// so reverse insertion order is a valid topological order for backward().
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = delete;
  Tape& operator=(Tape&&) = delete;

  Var constant(Tensor value);
  Var leaf(Tensor value);

  // Used by primitives. backward may be empty when no input requires a grad.
  Var record(OpKind op, std::vector<NodeId> inputs, Tensor value, BackwardFn backward);

  const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
  OpKind op(NodeId id) const { return nodes_.at(id).op; }
  const std::vector<NodeId>& inputs(NodeId id) const { return nodes_.at(id).inputs; }
  bool requires_grad(NodeId id) const { return requires_grad_.at(id); }
  bool is_leaf(NodeId id) const { return nodes_.at(id).op == OpKind::Leaf; }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<NodeId>& leaves() const { return leaves_; }

  /// Reverse pass from a single-element loss node. Every leaf gets an entry;
  /// leaves the loss does not depend on get zeros.
  Gradients backward(const Var& loss) const;

 private:
  struct Node {
    OpKind op;
    std::vector<NodeId> inputs;
    Tensor value;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::vector<bool> requires_grad_;
  std::vector<NodeId> leaves_;
};

// Differentiable primitives. All operands must live on the same tape.

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add_row(const Var& x, const Var& row);  // x[n x c] + row[c], broadcast over rows
Var sub_row(const Var& x, const Var& row);
Var mul_row(const Var& x, const Var& row);
Var scale(const Var& x, const Var& s);  // s has one element
Var scale_const(const Var& x, double k);
/// (1 - w) * a + w * b with scalar weight w, evaluated in exactly that form.
Var mix(const Var& a, const Var& b, const Var& w);
/// x for x > 0, negative_slope * x otherwise.
Var leaky(const Var& x, double negative_slope);
Var relu(const Var& x);
Var rsqrt_eps(const Var& x, double eps);  // 1 / sqrt(x + eps)
Var mean_rows(const Var& x);              // [n x c] -> [c]
Var var_rows(const Var& x);               // population variance, [n x c] -> [c]
Var reshape(const Var& x, Shape shape);
Var softmax_rows(const Var& x);
/// sum over all entries of -p ln(max(p, clamp)).
Var entropy_sum(const Var& p, double clamp);
/// sum over rows of (max - min); ties resolve to the first index.
Var range_sum(const Var& p);
/// sum over rows of -ln(max(p[i, labels[i]], clamp)).
Var nll_sum(const Var& p, std::vector<std::size_t> labels, double clamp);
Var sum(const Var& x);
/// x is [batch*Q x Q*C]; row r keeps column block (r mod Q), giving [batch*Q x C].
Var query_select(const Var& x, std::size_t queries, std::size_t classes);

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every element of x.
Tensor finite_diff(const std::function<double(const Tensor&)>& f, const Tensor& x, double h);

}  // namespace lbn::ad
