#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "dpc/matrix.hpp"

// Minimal reverse-mode differentiation over dense matrices.
//
// A Tape records values in creation order; every recorded op stores a closure
// that pushes its output gradient into its parents. Because parents always
// precede children, walking the tape backwards is a valid topological order.
// One tape serves one loss evaluation and is owned by a single thread.

namespace dpc::ad {

class Tape;

/// Value plus accumulated gradient of one tape node.
struct Dual {
  Matrix value;
  Matrix grad;
};

/// Lightweight handle to a node on a Tape.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  const Matrix& grad() const;
  Tape& tape() const { return *tape_; }
  std::size_t index() const noexcept { return index_; }
  bool valid() const noexcept { return tape_ != nullptr; }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

class Tape {
 public:
  /// Pushes d(loss)/d(output) of node `self` into its parents.
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var parameter(Matrix value);

  /// Records an op output. The node requires a gradient iff any parent does.
  Var record(Matrix value, std::initializer_list<Var> parents, BackwardFn backward);

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded closure in reverse.
  /// Intermediate gradients are reset first; parameter gradients accumulate
  /// across calls until zero_grad(). Throws TapeEmpty if no op was recorded.
  void backward(Var loss);
  void zero_grad();

  const Matrix& value(std::size_t i) const { return nodes_[i].dual.value; }
  const Matrix& grad(std::size_t i) const { return nodes_[i].dual.grad; }
  Matrix& grad(std::size_t i) { return nodes_[i].dual.grad; }
  bool requires_grad(std::size_t i) const { return nodes_[i].requires_grad; }

  std::size_t size() const noexcept { return nodes_.size(); }
  std::size_t op_count() const noexcept { return op_count_; }

 private:
  struct Node {
    Dual dual;
    bool requires_grad = false;
    bool is_leaf = true;
    BackwardFn backward;
  };

  Var push(Node node);

  std::vector<Node> nodes_;
  std::size_t op_count_ = 0;
};

// Differentiable ops. All operands must live on the same tape.

Var matmul(Var a, Var b);
/// a * transpose(b).
Var matmul_nt(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product.
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// Adds the 1 x k row `row` to every row of `m`.
Var add_row(Var m, Var row);
Var tanh(Var a);
/// Column sums, 1 x k.
Var sum_rows(Var a);
/// Column means, 1 x k.
Var mean_rows(Var a);
Var concat_rows(Var top, Var bottom);
/// Sum of all entries, 1 x 1.
Var sum(Var a);
Var l2_normalize_rows(Var a);
Var gather_rows(Var a, std::span<const std::size_t> indices);
Var log_softmax_rows(Var a);
/// -(1/n) sum_i log_probs(i, labels[i]), 1 x 1.
Var nll_mean(Var log_probs, std::span<const std::size_t> labels);

}  // namespace dpc::ad
