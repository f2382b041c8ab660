#include "fgdcc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/core.h>

#include "fgdcc/errors.hpp"

namespace fgdcc {

namespace {

[[noreturn]] void shape_mismatch(const char* op, const Matrix& a, const Matrix& b) {
  throw DimensionError(fmt::format("{}: shape mismatch {} vs {}", op, a.shape_str(), b.shape_str()));
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw DimensionError(fmt::format("Matrix: {} values for shape {}x{}", data_.size(), rows, cols));
  }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("Matrix::from_rows: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(data));
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

std::string Matrix::shape_str() const { return fmt::format("{}x{}", rows_, cols_); }

Matrix matmul_transposed(const Matrix& x, const Matrix& w) {
  if (x.cols() != w.cols()) shape_mismatch("matmul_transposed", x, w);
  Matrix out(x.rows(), w.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto xi = x.row(i);
    for (std::size_t o = 0; o < w.rows(); ++o) {
      const auto wo = w.row(o);
      double acc = 0.0;
      for (std::size_t j = 0; j < xi.size(); ++j) acc += xi[j] * wo[j];
      out(i, o) = acc;
    }
  }
  return out;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

ParamTensor::ParamTensor(std::string n, Matrix init)
    : name(std::move(n)), value(std::move(init)), grad(value.rows(), value.cols()) {}

void ParamTensor::zero_grad() { grad = Matrix(value.rows(), value.cols()); }

// ---------------------------------------------------------------------------
// Tape

Var Tape::push(Matrix value, bool requires_grad, std::function<void(Tape&, const Node&)> backprop) {
  Node n;
  n.grad = Matrix(value.rows(), value.cols());
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

const Tape::Node& Tape::node(Var v) const {
  if (v.id >= nodes_.size()) {
    throw StateError(fmt::format("tape: node {} not recorded (tape holds {})", v.id, nodes_.size()));
  }
  return nodes_[v.id];
}

const Matrix& Tape::value(Var v) const { return node(v).value; }
const Matrix& Tape::grad(Var v) const { return node(v).grad; }
bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

double Tape::scalar(Var v) const {
  const Matrix& m = value(v);
  if (m.size() != 1) throw DimensionError("tape: scalar() on " + m.shape_str());
  return m.data()[0];
}

void Tape::clear() { nodes_.clear(); }

Var Tape::constant(Matrix m) { return push(std::move(m), false, nullptr); }

Var Tape::param(ParamTensor& p) {
  Var v = push(p.value, true, nullptr);
  nodes_[v.id].param = &p;
  return v;
}

Var Tape::linear(Var x, Var w, Var b) {
  const Matrix& X = value(x);
  const Matrix& W = value(w);
  const Matrix& B = value(b);
  if (X.cols() != W.cols()) shape_mismatch("linear (input vs weight)", X, W);
  if (B.rows() != 1 || B.cols() != W.rows()) shape_mismatch("linear (bias vs weight)", B, W);
  Matrix out = matmul_transposed(X, W);
  for (std::size_t i = 0; i < out.rows(); ++i) {
    for (std::size_t o = 0; o < out.cols(); ++o) out(i, o) += B(0, o);
  }
  const bool rg = requires_grad(x) || requires_grad(w) || requires_grad(b);
  return push(std::move(out), rg, [x, w, b](Tape& t, const Node& self) {
    const Matrix& dY = self.grad;
    const Matrix& Xv = t.nodes_[x.id].value;
    const Matrix& Wv = t.nodes_[w.id].value;
    if (t.nodes_[x.id].requires_grad) {
      Matrix& dX = t.grad_of(x.id);
      for (std::size_t i = 0; i < dY.rows(); ++i) {
        for (std::size_t o = 0; o < dY.cols(); ++o) {
          const double g = dY(i, o);
          if (g == 0.0) continue;
          for (std::size_t j = 0; j < Wv.cols(); ++j) dX(i, j) += g * Wv(o, j);
        }
      }
    }
    if (t.nodes_[w.id].requires_grad) {
      Matrix& dW = t.grad_of(w.id);
      for (std::size_t i = 0; i < dY.rows(); ++i) {
        for (std::size_t o = 0; o < dY.cols(); ++o) {
          const double g = dY(i, o);
          if (g == 0.0) continue;
          for (std::size_t j = 0; j < Xv.cols(); ++j) dW(o, j) += g * Xv(i, j);
        }
      }
    }
    if (t.nodes_[b.id].requires_grad) {
      Matrix& dB = t.grad_of(b.id);
      for (std::size_t i = 0; i < dY.rows(); ++i) {
        for (std::size_t o = 0; o < dY.cols(); ++o) dB(0, o) += dY(i, o);
      }
    }
  });
}

Var Tape::gelu(Var x) {
  Matrix out = value(x);
  for (double& v : out.data()) v = v * normal_cdf(v);
  return push(std::move(out), requires_grad(x), [x](Tape& t, const Node& self) {
    const auto in = t.nodes_[x.id].value.data();
    auto dX = t.grad_of(x.id).data();
    const auto dY = self.grad.data();
    for (std::size_t i = 0; i < in.size(); ++i) {
      dX[i] += dY[i] * (normal_cdf(in[i]) + in[i] * normal_pdf(in[i]));
    }
  });
}

Var Tape::add(Var a, Var b) {
  const Matrix& A = value(a);
  const Matrix& B = value(b);
  if (!A.same_shape(B)) shape_mismatch("add", A, B);
  Matrix out = A;
  auto o = out.data();
  const auto bv = B.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  return push(std::move(out), requires_grad(a) || requires_grad(b), [a, b](Tape& t, const Node& self) {
    const auto dY = self.grad.data();
    for (Var in : {a, b}) {
      if (!t.nodes_[in.id].requires_grad) continue;
      auto d = t.grad_of(in.id).data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dY[i];
    }
  });
}

Var Tape::scale(Var a, double s) {
  Matrix out = value(a);
  for (double& v : out.data()) v *= s;
  return push(std::move(out), requires_grad(a), [a, s](Tape& t, const Node& self) {
    const auto dY = self.grad.data();
    auto d = t.grad_of(a.id).data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s * dY[i];
  });
}

Var Tape::gather_rows(Var x, std::span<const std::size_t> rows) {
  const Matrix& X = value(x);
  Matrix out(rows.size(), X.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= X.rows()) {
      throw IndexError(fmt::format("gather_rows: row {} out of range for {}", rows[i], X.shape_str()));
    }
    std::copy_n(X.row(rows[i]).begin(), X.cols(), out.row(i).begin());
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return push(std::move(out), requires_grad(x), [x, idx = std::move(idx)](Tape& t, const Node& self) {
    Matrix& dX = t.grad_of(x.id);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto g = self.grad.row(i);
      auto d = dX.row(idx[i]);
      for (std::size_t j = 0; j < g.size(); ++j) d[j] += g[j];
    }
  });
}

Var Tape::softmax_cross_entropy(Var logits, std::span<const std::size_t> targets) {
  const Matrix& L = value(logits);
  if (targets.size() != L.rows()) {
    throw DimensionError(fmt::format("softmax_cross_entropy: {} targets for logits {}", targets.size(),
                                     L.shape_str()));
  }
  if (L.rows() == 0) throw DimensionError("softmax_cross_entropy: empty batch");
  Matrix probs(L.rows(), L.cols());
  double total = 0.0;
  for (std::size_t i = 0; i < L.rows(); ++i) {
    if (targets[i] >= L.cols()) {
      throw IndexError(fmt::format("softmax_cross_entropy: target {} at row {} >= {} classes", targets[i], i,
                                   L.cols()));
    }
    const auto row = L.row(i);
    const double shift = *std::max_element(row.begin(), row.end());
    double denom = 0.0;
    for (double v : row) denom += std::exp(v - shift);
    const double log_denom = std::log(denom);
    for (std::size_t c = 0; c < row.size(); ++c) probs(i, c) = std::exp(row[c] - shift) / denom;
    total += log_denom - (row[targets[i]] - shift);
  }
  const double n = static_cast<double>(L.rows());
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  return push(Matrix(1, 1, total / n), requires_grad(logits),
              [logits, probs = std::move(probs), tgt = std::move(tgt), n](Tape& t, const Node& self) {
                const double g = self.grad(0, 0) / n;
                Matrix& dL = t.grad_of(logits.id);
                for (std::size_t i = 0; i < probs.rows(); ++i) {
                  for (std::size_t c = 0; c < probs.cols(); ++c) {
                    const double onehot = c == tgt[i] ? 1.0 : 0.0;
                    dL(i, c) += g * (probs(i, c) - onehot);
                  }
                }
              });
}

Var Tape::smooth_l1(Var pred, Var target, double beta) {
  if (!(beta > 0.0)) throw std::invalid_argument("smooth_l1: beta must be positive");
  const Matrix& P = value(pred);
  const Matrix& T = value(target);
  if (!P.same_shape(T)) shape_mismatch("smooth_l1", P, T);
  const auto p = P.data();
  const auto q = T.data();
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = p[i] - q[i];
    const double a = std::abs(d);
    total += a < beta ? 0.5 * d * d / beta : a - 0.5 * beta;
  }
  const double n = static_cast<double>(p.size());
  return push(Matrix(1, 1, total / n), requires_grad(pred) || requires_grad(target),
              [pred, target, beta, n](Tape& t, const Node& self) {
                const double g = self.grad(0, 0) / n;
                const auto pv = t.nodes_[pred.id].value.data();
                const auto tv = t.nodes_[target.id].value.data();
                const bool gp = t.nodes_[pred.id].requires_grad;
                const bool gt = t.nodes_[target.id].requires_grad;
                for (std::size_t i = 0; i < pv.size(); ++i) {
                  const double d = pv[i] - tv[i];
                  double dd = 0.0;
                  if (std::abs(d) < beta) {
                    dd = d / beta;
                  } else {
                    dd = d > 0.0 ? 1.0 : -1.0;
                  }
                  if (gp) t.grad_of(pred.id).data()[i] += g * dd;
                  if (gt) t.grad_of(target.id).data()[i] -= g * dd;
                }
              });
}

Var Tape::mean_squared_error(Var pred, Var target) {
  const Matrix& P = value(pred);
  const Matrix& T = value(target);
  if (!P.same_shape(T)) shape_mismatch("mean_squared_error", P, T);
  const double n = static_cast<double>(P.size());
  const double total = squared_distance(P.data(), T.data());
  return push(Matrix(1, 1, total / n), requires_grad(pred) || requires_grad(target),
              [pred, target, n](Tape& t, const Node& self) {
                const double g = self.grad(0, 0) / n;
                const auto pv = t.nodes_[pred.id].value.data();
                const auto tv = t.nodes_[target.id].value.data();
                const bool gp = t.nodes_[pred.id].requires_grad;
                const bool gt = t.nodes_[target.id].requires_grad;
                for (std::size_t i = 0; i < pv.size(); ++i) {
                  const double dd = 2.0 * (pv[i] - tv[i]);
                  if (gp) t.grad_of(pred.id).data()[i] += g * dd;
                  if (gt) t.grad_of(target.id).data()[i] -= g * dd;
                }
              });
}

Var Tape::l2_penalty(Var x, const Matrix& c) {
  const Matrix& X = value(x);
  if (!X.same_shape(c)) shape_mismatch("l2_penalty", X, c);
  const double total = squared_distance(X.data(), c.data());
  return push(Matrix(1, 1, total), requires_grad(x), [x, c](Tape& t, const Node& self) {
    const double g = self.grad(0, 0);
    const auto xv = t.nodes_[x.id].value.data();
    const auto cv = c.data();
    auto d = t.grad_of(x.id).data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g * 2.0 * (xv[i] - cv[i]);
  });
}

Var Tape::sum(Var x) {
  double total = 0.0;
  for (double v : value(x).data()) total += v;
  return push(Matrix(1, 1, total), requires_grad(x), [x](Tape& t, const Node& self) {
    const double g = self.grad(0, 0);
    for (double& d : t.grad_of(x.id).data()) d += g;
  });
}

void Tape::backward(Var loss) {
  if (loss.id >= nodes_.size()) {
    throw StateError("backward: loss node has not been produced by a forward pass on this tape");
  }
  if (nodes_[loss.id].value.size() != 1) {
    throw StateError("backward: loss must be scalar, got " + nodes_[loss.id].value.shape_str());
  }
  for (std::size_t i = 0; i <= loss.id; ++i) nodes_[i].grad.fill(0.0);
  nodes_[loss.id].grad(0, 0) = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad) continue;
    if (n.param != nullptr) {
      auto dst = n.param->grad.data();
      const auto src = n.grad.data();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
    if (n.backprop) n.backprop(*this, n);
  }
}

}  // namespace fgdcc
