#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace fgdcc {

/// Dense row-major matrix of 64-bit reals.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  void fill(double v);
  bool same_shape(const Matrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  std::string shape_str() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// x · wᵀ, x is n×in and w is out×in.
Matrix matmul_transposed(const Matrix& x, const Matrix& w);

double squared_distance(std::span<const double> a, std::span<const double> b);
bool all_finite(std::span<const double> values);

/// Trainable tensor with a same-shaped gradient accumulator.
struct ParamTensor {
  ParamTensor() = default;
  ParamTensor(std::string name, Matrix init);

  void zero_grad();

  std::string name;
  Matrix value;
  Matrix grad;
};

/// Handle to a node recorded on a Tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

/// Records primitive ops in execution order and replays them backwards.
///
/// Parameters bound with param() receive accumulated gradients (+=) when
/// backward() reaches them; constants and anything derived only from
/// constants are skipped during the reverse sweep.
class Tape {
 public:
  Var constant(Matrix m);
  Var param(ParamTensor& p);

  // X·Wᵀ + b, b broadcast per row (b is 1×out).
  Var linear(Var x, Var w, Var b);
  // Exact-erf GELU: x·Φ(x).
  Var gelu(Var x);
  Var add(Var a, Var b);
  Var scale(Var a, double s);
  // Selects rows of x in the given order.
  Var gather_rows(Var x, std::span<const std::size_t> rows);

  // Mean over rows of -log softmax(logits)[target].
  Var softmax_cross_entropy(Var logits, std::span<const std::size_t> targets);
  // Elementwise smooth-L1 averaged over all elements.
  Var smooth_l1(Var pred, Var target, double beta);
  // Elementwise squared error averaged over all elements.
  Var mean_squared_error(Var pred, Var target);
  // Sum of squared differences between x and a constant of the same shape.
  Var l2_penalty(Var x, const Matrix& c);
  // Sum of all elements as a 1×1 node.
  Var sum(Var x);

  void backward(Var loss);

  const Matrix& value(Var v) const;
  const Matrix& grad(Var v) const;
  double scalar(Var v) const;
  bool requires_grad(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }
  void clear();

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    ParamTensor* param = nullptr;
    std::function<void(Tape&, const Node&)> backprop;
  };

  Var push(Matrix value, bool requires_grad, std::function<void(Tape&, const Node&)> backprop);
  const Node& node(Var v) const;
  Matrix& grad_of(std::size_t id) { return nodes_[id].grad; }

  std::vector<Node> nodes_;
};

}  // namespace fgdcc
