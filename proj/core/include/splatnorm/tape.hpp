#pragma once

#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "splatnorm/tensor.hpp"

namespace splatnorm {

class Tape;

// Handle into a tape node. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  bool defined() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  const Tensor& value() const;
  // Populated for reachable nodes after Tape::backward.
  const Tensor& grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Accumulates d(root)/d(parents) given d(root)/d(output). Called once per
// node, in reverse creation order.
using BackwardFn = std::function<void(Tape&, const std::vector<int>& parents, const Tensor& out_grad)>;

// Reverse-mode tape over dense tensors. One tape owns one optimization step;
// replaying identical inputs through the same op sequence is bit-identical.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value);      // differentiable input
  Var constant(Tensor value);  // no gradient tracking
  // Generic node; requires_grad is inherited from parents. The backward
  // callback may be empty for pure constants.
  Var node(Tensor value, const std::vector<Var>& parents, BackwardFn backward,
           const char* op_name);

  void backward(Var root);  // root must be scalar

  size_t size() const { return nodes_.size(); }
  const Tensor& value_of(int id) const;
  bool requires_grad(int id) const;
  bool has_grad(int id) const;
  const Tensor& grad_of(int id) const;
  // Lazily allocated zero gradient buffer for accumulation.
  Tensor& grad_buffer(int id);

 private:
  struct NodeRec {
    Tensor value;
    Tensor grad;
    std::vector<int> parents;
    BackwardFn back;
    bool requires_grad = false;
    bool grad_live = false;
  };
  // deque: appends must not move existing records — value()/grad() hand out
  // references that stay valid while the tape lives.
  std::deque<NodeRec> nodes_;
};

// ---- elementwise ops (trailing-dimension broadcasting) ----
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }

Var add_const(Var a, double c);
Var scale(Var a, double c);
Var neg(Var a);
Var exp(Var a);
Var log(Var a);   // requires positive input
Var sqrt(Var a);  // requires non-negative input
Var sigmoid(Var a);
Var relu(Var a);
Var abs(Var a);
Var cos(Var a);
Var sin(Var a);
Var tanh(Var a);
Var pow_const(Var a, double p);
Var square(Var a);

// ---- reductions ----
Var sum_all(Var a);
Var mean_all(Var a);
Var min_all(Var a);  // gradient routes to the first minimizer
Var sum_axis(Var a, int axis, bool keepdim = false);
Var mean_axis(Var a, int axis, bool keepdim = false);
Var min_axis(Var a, int axis, bool keepdim = false);  // ties: first index
Var max_axis(Var a, int axis, bool keepdim = false);  // ties: first index

// ---- structural ----
Var reshape(Var a, Shape shape);
Var slice(Var a, int axis, int64_t start, int64_t len);
Var concat(const std::vector<Var>& parts, int axis);
// Removes the axis after selecting one index along it.
Var select(Var a, int axis, int64_t index);
// Stacks equally shaped parts along a new trailing axis.
Var stack_last(const std::vector<Var>& parts);
Var transpose2d(Var a);
// Gathers rows of a (first axis) at fixed indices; backward scatters.
Var gather_rows(Var a, std::vector<int64_t> indices);

// ---- linear algebra / nn ----
Var matmul(Var a, Var b);

enum class Pad { kSame, kValid };
// input [Cin,H,W], kernel [Cout,Cin,kh,kw], odd kernels only.
Var conv2d(Var input, Var kernel, Pad pad, int stride = 1);

enum class PoolKind { kAvg, kMax };
// window must divide the spatial extents; window 0 pools globally.
Var pool2d(Var input, PoolKind kind, int window);
Var upsample_nearest2(Var input);  // [C,H,W] -> [C,2H,2W]

// Scalar convenience (numel-1 var).
double scalar_of(Var v);

}  // namespace splatnorm
