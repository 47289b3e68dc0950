#pragma once

// Reverse-mode automatic differentiation over dense double matrices.
//
// A Tape records every operation of one forward pass. Vectors are row
// vectors (1 x d) throughout, so an affine map is `x * W + b` with W stored
// as (in x out). Parameters live outside the tape and receive accumulated
// gradients when Tape::backward runs.

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace tegke {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

enum class ParamGroup { main, student, critic };

const char* to_string(ParamGroup group);

struct Parameter {
  std::string name;
  ParamGroup group = ParamGroup::main;
  Matrix value;
  Matrix grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

namespace ad {

class Tape;

// Lightweight handle to a node on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  double scalar() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool requires_grad() const;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var scalar_constant(double value);
  // Differentiable leaf that is not a parameter; its gradient is readable
  // after backward via grad().
  Var leaf(Matrix value);
  // Parameters are cached per tape, so repeated use shares one leaf.
  // Parameters whose group is frozen enter as constants.
  Var param(Parameter& p);

  void freeze(ParamGroup group);
  void set_no_grad(bool no_grad) { no_grad_ = no_grad; }
  bool no_grad() const { return no_grad_; }

  // Seeds d(root)/d(root) = 1 for a 1x1 root (or `seed` for other shapes),
  // propagates to every recorded node, then adds leaf gradients into
  // Parameter::grad.
  void backward(Var root);
  void backward(Var root, const Matrix& seed);

  const Matrix& grad(Var v) const;

  // Used by op implementations.
  Var push(Matrix value, std::initializer_list<Var> inputs, BackwardFn backward);
  Node& node(std::size_t id) { return nodes_[id]; }
  const Node& node(std::size_t id) const { return nodes_[id]; }
  Matrix& grad_ref(std::size_t id);
  std::size_t size() const { return nodes_.size(); }

 private:
  std::deque<Node> nodes_;
  std::unordered_map<Parameter*, std::size_t> param_ids_;
  bool frozen_[3] = {false, false, false};
  bool no_grad_ = false;
};

// Elementwise / linear algebra.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
// a (n x d) plus row vector b (1 x d) on every row.
Var add_bias(Var a, Var b);
// a (n x d) times row vector b (1 x d), elementwise on every row.
Var mul_rows(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var neg(Var a);
Var transpose(Var a);

Var tanh(Var a);
Var sigmoid(Var a);
Var relu(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
Var sqrt(Var a);

// Shape.
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index len);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index len);
Var gather_rows(Var table, std::span<const int> ids);
// out[t] = mean of src rows i with target[i] == t; zero row if none.
Var scatter_mean_rows(Var src, std::span<const int> target, Eigen::Index n_out);
// Row t of the result is concat(a[t], ..., a[t+width-1]).
Var unfold_rows(Var a, Eigen::Index width);
// Adjoint of unfold_rows: scatters window rows back into an (n_rows x d) matrix.
Var fold_rows(Var a, Eigen::Index width, Eigen::Index n_rows);
Var pad_rows(Var a, Eigen::Index n_rows);

// Reductions.
Var sum(Var a);
Var mean_rows(Var a);
// Columnwise max over rows (1 x d); gradient goes to the first maximal row.
Var max_rows(Var a);
Var pick(Var a, Eigen::Index r, Eigen::Index c);
// result[i] = a(i, cols[i]) as an (n x 1) column.
Var pick_per_row(Var a, std::span<const int> cols);

Var softmax_rows(Var a);
Var log_softmax_rows(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, double c) { return scale(a, c); }

}  // namespace ad
}  // namespace tegke
