#pragma once

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// A Tape records every operation of one forward pass. Values live in the
// tape's node list; a Var is a cheap handle (tape pointer + node index).
// Calling backward() on a 1x1 node replays the recorded closures in reverse
// creation order and accumulates into Parameter::grad for every trainable
// leaf. Frozen parameters still propagate gradients to their inputs but never
// receive one themselves.

#include <Eigen/Dense>

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace bustr::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Parameter {
 public:
  Parameter() = default;
  Parameter(std::string name, Matrix value);

  std::string name;
  Matrix value;
  Matrix grad;
  bool frozen = false;

  void zero_grad();
  Eigen::Index size() const { return value.size(); }
};

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  /// With grad disabled no closures are recorded (inference mode).
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var scalar(double value);
  Var leaf(Parameter& param);

  const Matrix& value(int id) const;
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }
  bool grad_enabled() const { return grad_enabled_; }

  /// Accumulates d(loss)/d(node) into node gradients and into the
  /// grad of every non-frozen parameter leaf. `seed` scales the result.
  void backward(const Var& loss, double seed = 1.0);

  // Used by op implementations.
  Var push(Matrix value, bool needs_grad, std::function<void(Tape&, int)> backward);
  Matrix& grad(int id);
  bool any_needs_grad(std::initializer_list<Var> vars) const;
  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    const Matrix* ref = nullptr;
    Matrix grad;
    Parameter* param = nullptr;
    bool needs_grad = false;
    std::function<void(Tape&, int)> backward;
  };

  std::vector<Node> nodes_;
  bool grad_enabled_;
};

// ---------------------------------------------------------------------------
// Operations. Shapes follow the row-major "tokens x features" convention.

Var matmul(const Var& a, const Var& b);
/// a * b^T
Var matmul_bt(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
/// Adds a 1xC row to every row of a.
Var add_row(const Var& a, const Var& row);
/// Adds a fixed matrix (masks, constant biases).
Var add_const(const Var& a, const Matrix& c);
Var scale(const Var& a, double s);
/// Elementwise product.
Var cmul(const Var& a, const Var& b);
/// Tanh approximation of the Gaussian error linear unit.
Var gelu(const Var& a);
Var sigmoid(const Var& a);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var softmax_rows(const Var& a, bool causal = false);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
/// out.row(i) = a.row(index[i]); gradients scatter-add back.
Var gather_rows(const Var& a, std::span<const int> index);
/// out(i, j) = a.data()[flat(i, j)] over the row-major storage of a.
Var gather_elements(const Var& a, const Eigen::MatrixXi& flat);
/// 1xC mean over rows.
Var mean_rows(const Var& a);
/// Sum of 1x1 vars.
Var sum(std::span<const Var> scalars);
/// max of two 1x1 vars; the gradient goes to the larger (first on ties).
Var max(const Var& a, const Var& b);

enum class Reduction { mean, sum };

/// Softmax cross-entropy of each row of `logits` against `targets`.
Var cross_entropy(const Var& logits, std::span<const int> targets, Reduction reduction = Reduction::mean);
/// |a - target| for a 1x1 var.
Var l1(const Var& a, double target);
/// 1 - mean_i cos(H_i, Z_i); each norm is floored at eps.
Var cosine_alignment(const Var& h, const Var& z, double eps = 1e-8);

}  // namespace bustr::nn
